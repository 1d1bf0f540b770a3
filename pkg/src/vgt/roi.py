"""RoIAlign over pyramid levels and box-to-level assignment.

Boxes arrive in input-image pixels and are scaled by 1/stride into feature
coordinates (pixel centers at integer coordinates after a -0.5 shift).
Each output bin holds the exact average of the bilinearly interpolated
feature surface over the bin rectangle, with zero padding outside the map.
Exact integration instead of a fixed point-sample grid keeps bin values
within dense-sampling tolerance regardless of box size, and the operator
stays linear and differentiable in the feature map.

The interpolated surface is a tensor product of hat functions, so the bin
integral separates into per-axis pixel weights:

    W(p) = H(hi - p) - H(lo - p),   H(t) = int_{-inf}^{t} max(0, 1-|s|) ds
"""

from __future__ import annotations

import math

import numpy as np

from vgt.tensor import Tensor

# output bin grids per consumer
BINS_TOKEN = 3
BINS_SEGMENT = 3
BINS_DETECT = 7


def _hat_cdf(t: np.ndarray) -> np.ndarray:
    """Integral of the unit hat function from -inf to t."""
    t = np.clip(t, -1.0, 1.0)
    return np.where(t <= 0.0, 0.5 * (t + 1.0) ** 2, 1.0 - 0.5 * (1.0 - t) ** 2)


def _axis_weights(lo: float, hi: float, bins: int, n: int, dt) -> np.ndarray:
    """(bins, n) integral weight of each pixel center over each bin interval."""
    edges = lo + (hi - lo) * np.arange(bins + 1, dtype=dt) / bins
    centers = np.arange(n, dtype=dt)
    cdf = _hat_cdf(edges[:, None] - centers[None, :])
    return cdf[1:] - cdf[:-1]


def roi_align(featmap: Tensor, box, stride: float, bins: int) -> Tensor:
    """(h, w, C) map + image-space box -> (bins, bins, C) pooled feature."""
    x0, y0, x1, y1 = (float(v) / stride for v in box)
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate box {box}")
    h, w, C = featmap.shape
    dt = featmap.data.dtype
    # -0.5: pixel centers sit at integer coordinates
    wy = _axis_weights(y0 - 0.5, y1 - 0.5, bins, h, dt)
    wx = _axis_weights(x0 - 0.5, x1 - 0.5, bins, w, dt)
    bin_area = ((y1 - y0) / bins) * ((x1 - x0) / bins)
    scale = 1.0 / bin_area

    data = featmap.data
    out = np.einsum("bh,cw,hwk->bck", wy, wx, data) * scale

    def vjp(g):
        return (np.einsum("bh,cw,bck->hwk", wy, wx, g) * scale,)

    return Tensor._result(out, (featmap,), vjp)


def assign_fpn_level(box, image_size: int) -> int:
    """Scale-based level pick: a box whose sqrt-area is a quarter of the
    image lands on level 4; clamped to [2, 5]."""
    x0, y0, x1, y1 = box
    area = max(0.0, x1 - x0) * max(0.0, y1 - y0)
    if area <= 0:
        return 2
    k = math.floor(4 + math.log2(math.sqrt(area) / (image_size / 4)))
    return min(5, max(2, k))
