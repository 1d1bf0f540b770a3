import numpy as np
import pytest

from vgt import tensor as T
from vgt.tensor import Tensor


def matmul_oracle(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n), dtype=a.dtype)
    for i in range(m):
        for j in range(n):
            for l in range(k):
                out[i, j] += a[i, l] * b[l, j]
    return out


def conv_oracle(x, w, stride, padding):
    H, W, Cin = x.shape
    kh, kw, _, Cout = w.shape
    xp = np.pad(x, ((padding, padding), (padding, padding), (0, 0)))
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    out = np.zeros((Ho, Wo, Cout), dtype=x.dtype)
    for i in range(Ho):
        for j in range(Wo):
            for di in range(kh):
                for dj in range(kw):
                    for ci in range(Cin):
                        for co in range(Cout):
                            out[i, j, co] += xp[i * stride + di, j * stride + dj, ci] * w[di, dj, ci, co]
    return out


class TestMatmul:
    def test_identity_right(self):
        out = T.matmul(Tensor([[1, 2], [3, 4]]), Tensor(np.eye(2)))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_identity_left(self):
        out = T.matmul(Tensor([[1, 0], [0, 1]]), Tensor([[5], [7]]))
        np.testing.assert_array_equal(out.data, [[5], [7]])

    def test_against_loop_oracle(self, f64):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((4, 2))
        out = T.matmul(Tensor(a), Tensor(b))
        np.testing.assert_allclose(out.data, matmul_oracle(a, b), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 2\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))

    @pytest.mark.parametrize("seed", range(5))
    def test_loop_oracle_random(self, f64, seed):
        rng = np.random.default_rng(seed)
        m, k, n = rng.integers(1, 6, size=3)
        a = rng.standard_normal((m, k))
        b = rng.standard_normal((k, n))
        np.testing.assert_allclose(
            T.matmul(Tensor(a), Tensor(b)).data, matmul_oracle(a, b), atol=1e-10)


class TestSoftmax:
    def test_symmetry(self):
        out = T.softmax(Tensor([0.0, 0.0]))
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_stabilized(self):
        out = T.softmax(Tensor([1000.0, 0.0]))
        assert np.all(np.isfinite(out.data))
        assert out.data[0] > 0.999 and out.data[1] < 1e-6

    def test_formula_oracle(self, f64):
        x = np.array([1.0, 2.0, 3.0])
        expected = np.exp(x) / np.exp(x).sum()
        np.testing.assert_allclose(T.softmax(Tensor(x)).data, expected, atol=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_rows_sum_to_one(self, f64, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((4, 7)) * 10
        out = T.softmax(Tensor(x), axis=-1)
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-9)
        assert np.all(out.data > 0) and np.all(out.data < 1)

    def test_bad_axis(self):
        with pytest.raises(ValueError, match="axis"):
            T.softmax(Tensor([1.0, 2.0]), axis=3)


class TestLayerNorm:
    def test_constant_row_zero(self):
        x = Tensor(np.full((1, 4), 3.0))
        out = T.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)), eps=1e-5)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-6)

    def test_two_point(self, f64):
        out = T.layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)
        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-12)

    def test_mean_var_oracle(self, f64):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 8))
        gamma = rng.standard_normal(8)
        beta = rng.standard_normal(8)
        eps = 1e-6
        mu = x.mean(-1, keepdims=True)
        var = x.var(-1, keepdims=True)
        expected = (x - mu) / np.sqrt(var + eps) * gamma + beta
        out = T.layer_norm(Tensor(x), Tensor(gamma), Tensor(beta), eps=eps)
        np.testing.assert_allclose(out.data, expected, atol=1e-10)

    @pytest.mark.parametrize("seed", range(20))
    def test_zero_mean_property(self, f64, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((3, 6))
        out = T.layer_norm(Tensor(x), Tensor(np.ones(6)), Tensor(np.zeros(6)), eps=1e-8)
        assert np.abs(out.data.mean(axis=-1)).max() < 1e-7


class TestConv:
    def test_one_by_one_identity(self):
        x = np.arange(12, dtype=np.float64).reshape(3, 4, 1)
        w = np.ones((1, 1, 1, 1))
        out = T.conv2d(Tensor(x), Tensor(w), stride=1, padding=0)
        np.testing.assert_allclose(out.data, x)

    def test_max_pool_of_four(self):
        out = T.max_pool2d(Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1)), 2)
        np.testing.assert_array_equal(out.data, [[[4.0]]])

    def test_loop_oracle(self, f64):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((8, 8, 1))
        w = rng.standard_normal((3, 3, 1, 2))
        out = T.conv2d(Tensor(x), Tensor(w), stride=1, padding=0)
        np.testing.assert_allclose(out.data, conv_oracle(x, w, 1, 0), atol=1e-10)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 0), (2, 1)])
    def test_loop_oracle_configs(self, f64, stride, padding):
        rng = np.random.default_rng(stride * 10 + padding)
        x = rng.standard_normal((6, 7, 3))
        w = rng.standard_normal((3, 3, 3, 2))
        out = T.conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding)
        np.testing.assert_allclose(out.data, conv_oracle(x, w, stride, padding), atol=1e-10)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            T.conv2d(Tensor(np.zeros((4, 4, 2))), Tensor(np.zeros((3, 3, 3, 1))))

    def test_conv_transpose_doubles(self, f64):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((3, 3, 2))
        w = rng.standard_normal((2, 2, 2, 4))
        out = T.conv_transpose2d(Tensor(x), Tensor(w), stride=2)
        assert out.data.shape == (6, 6, 4)
        # each output 2x2 block is x[i,j] @ w[di,dj]
        expected = np.einsum("hwc,ijcd->hiwjd", x, w).reshape(6, 6, 4)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)


class TestBackward:
    def test_sum_of_squares_grad(self, f64):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = (x * x).sum()
        loss.backward()
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_unreachable_param_no_grad(self, f64):
        x = Tensor([1.0, 2.0], requires_grad=True)
        p = Tensor([5.0], requires_grad=True)
        loss = (x * x).sum()
        loss.backward()
        assert p.grad is None  # treated as zero downstream

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            (x * x).backward()

    def test_grad_accumulates_over_reuse(self, f64):
        x = Tensor([3.0], requires_grad=True)
        loss = (x * x + x).sum()
        loss.backward()
        np.testing.assert_allclose(x.grad, [7.0])

    def test_nan_detection(self):
        with pytest.raises(FloatingPointError):
            T.log(Tensor([-1.0]))


class TestMisc:
    def test_embedding_grad_counts(self, f64):
        table = Tensor(np.random.default_rng(0).standard_normal((5, 3)), requires_grad=True)
        ids = np.array([[1, 1], [4, 0]])
        out = T.embedding(table, ids)
        out.sum().backward()
        np.testing.assert_allclose(table.grad[:, 0], [1, 2, 0, 0, 1])

    def test_embedding_out_of_range(self):
        with pytest.raises(ValueError, match="range"):
            T.embedding(Tensor(np.zeros((3, 2))), np.array([3]))

    def test_upsample_nearest(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1))
        out = T.upsample_nearest2x(x)
        np.testing.assert_array_equal(out.data[:, :, 0],
                                      [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])

    def test_concat_split_grad(self, f64):
        a = Tensor([1.0, 2.0], requires_grad=True)
        b = Tensor([3.0], requires_grad=True)
        out = T.concat([a, b])
        (out * Tensor([1.0, 2.0, 3.0])).sum().backward()
        np.testing.assert_allclose(a.grad, [1.0, 2.0])
        np.testing.assert_allclose(b.grad, [3.0])

    def test_logsumexp_matches_naive(self, f64):
        x = np.array([[1.0, 2.0, 3.0]])
        out = T.logsumexp(Tensor(x), axis=-1)
        np.testing.assert_allclose(out.data, np.log(np.exp(x).sum(-1)), atol=1e-12)
