import numpy as np
import pytest

from vgt import roi
from vgt.gradcheck import finite_difference_check
from vgt.params import ParamStore
from vgt.tensor import Tensor


def bilinear_point(data, y, x):
    """Zero-padded bilinear interpolation at a single feature-space point."""
    h, w, _ = data.shape
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    out = 0.0
    for dy in (0, 1):
        for dx in (0, 1):
            yy, xx = y0 + dy, x0 + dx
            wgt = (1 - abs(y - yy)) * (1 - abs(x - xx))
            if 0 <= yy < h and 0 <= xx < w and wgt > 0:
                out = out + wgt * data[yy, xx]
    return out


def dense_oracle(data, box, stride, bins, samples=80):
    """Midpoint-rule average of the interpolated surface over each bin."""
    x0, y0, x1, y1 = (v / stride for v in box)
    out = np.zeros((bins, bins, data.shape[2]))
    for by in range(bins):
        for bx in range(bins):
            lo_y = y0 + (y1 - y0) * by / bins
            hi_y = y0 + (y1 - y0) * (by + 1) / bins
            lo_x = x0 + (x1 - x0) * bx / bins
            hi_x = x0 + (x1 - x0) * (bx + 1) / bins
            ys = lo_y + (hi_y - lo_y) * (np.arange(samples) + 0.5) / samples
            xs = lo_x + (hi_x - lo_x) * (np.arange(samples) + 0.5) / samples
            acc = np.zeros(data.shape[2])
            for y in ys:
                for x in xs:
                    acc += bilinear_point(data, y - 0.5, x - 0.5)
            out[by, bx] = acc / samples ** 2
    return out


def test_constant_map_returns_constant(f64):
    data = np.full((8, 8, 2), 3.25)
    out = roi.roi_align(Tensor(data), (4.0, 4.0, 20.0, 24.0), stride=4, bins=3)
    np.testing.assert_allclose(out.data, 3.25, atol=1e-12)


def test_matches_dense_sampling_oracle(f64):
    rng = np.random.default_rng(0)
    for trial in range(6):
        data = rng.standard_normal((8, 8, 2))
        x0, y0 = rng.uniform(0, 16, size=2)
        bw, bh = rng.uniform(4, 14, size=2)
        box = (x0, y0, x0 + bw, y0 + bh)
        got = roi.roi_align(Tensor(data), box, stride=4, bins=3).data
        want = dense_oracle(data, box, stride=4, bins=3)
        np.testing.assert_allclose(got, want, atol=1e-3)


def test_linearity_in_feature_map(f64):
    rng = np.random.default_rng(1)
    a = rng.standard_normal((6, 6, 3))
    b = rng.standard_normal((6, 6, 3))
    box = (3.0, 5.0, 17.0, 21.0)
    ra = roi.roi_align(Tensor(a), box, 4, 3).data
    rb = roi.roi_align(Tensor(b), box, 4, 3).data
    rab = roi.roi_align(Tensor(2.0 * a + b), box, 4, 3).data
    np.testing.assert_allclose(rab, 2.0 * ra + rb, atol=1e-10)


def test_integer_translation_equivariance(f64):
    rng = np.random.default_rng(2)
    data = rng.standard_normal((10, 10, 2))
    shifted = np.roll(data, (2, 1), axis=(0, 1))
    box = (6.0, 7.0, 18.0, 17.0)            # interior in both versions
    sbox = (box[0] + 4, box[1] + 8, box[2] + 4, box[3] + 8)   # +1/+2 cells * stride 4
    a = roi.roi_align(Tensor(data), box, 4, 3).data
    b = roi.roi_align(Tensor(shifted), sbox, 4, 3).data
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_zero_padding_outside_map(f64):
    data = np.ones((4, 4, 1))
    # box entirely beyond the feature extent reads the zero padding
    out = roi.roi_align(Tensor(data), (40.0, 40.0, 60.0, 60.0), stride=4, bins=2)
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_rejects_degenerate_box(f64):
    with pytest.raises(ValueError, match="degenerate"):
        roi.roi_align(Tensor(np.zeros((4, 4, 1))), (8.0, 2.0, 8.0, 6.0), 4, 2)


def test_gradient_matches_finite_differences(f64):
    rng = np.random.default_rng(3)
    store = ParamStore()
    store.add("fm", Tensor(rng.standard_normal((5, 5, 2))))
    w = rng.standard_normal((3, 3, 2))

    def f(s):
        pooled = roi.roi_align(s["fm"], (2.5, 1.0, 14.0, 17.5), stride=4, bins=3)
        return (pooled * Tensor(w)).sum()

    assert finite_difference_check(f, store, seed=0) < 1e-6


def test_level_assignment_boundaries():
    size = 128
    # sqrt-area of a quarter image sits exactly on level 4
    assert roi.assign_fpn_level((0, 0, 32, 32), size) == 4
    assert roi.assign_fpn_level((0, 0, 16, 16), size) == 3
    assert roi.assign_fpn_level((0, 0, 8, 8), size) == 2
    # below the bottom boundary clamps to 2
    assert roi.assign_fpn_level((0, 0, 4, 4), size) == 2
    assert roi.assign_fpn_level((0, 0, 1, 1), size) == 2
    # whole image overshoots and clamps to 5
    assert roi.assign_fpn_level((0, 0, 128, 128), size) == 5
    assert roi.assign_fpn_level((0, 0, 64, 64), size) == 5
    assert roi.assign_fpn_level((10, 10, 10, 20), size) == 2   # zero area


def test_level_assignment_scales_with_image():
    # halving the image halves the boundaries
    assert roi.assign_fpn_level((0, 0, 16, 16), 64) == 4
    assert roi.assign_fpn_level((0, 0, 8, 8), 64) == 3
