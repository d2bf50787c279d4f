"""Kernel contracts: oracles via finite differences, plus backend parity."""

import numpy as np
import pytest

from icclab import kernels
from icclab.kernels import reference

try:
    from icclab import _core as compiled
except ImportError:
    compiled = None

BACKENDS = [reference] if compiled is None else [reference, compiled]
IDS = ["python"] if compiled is None else ["python", "compiled"]


def rand(shape, dtype, seed):
    return np.random.default_rng(seed).standard_normal(shape).astype(dtype)


@pytest.fixture(params=BACKENDS, ids=IDS)
def backend(request):
    return request.param


class TestCausalSoftmax:
    def test_matches_per_row_softmax(self, backend):
        s = rand((2, 3, 6, 6), np.float64, 0)
        p = backend.causal_softmax(s.copy())
        for b in range(2):
            for h in range(3):
                for t in range(6):
                    row = s[b, h, t, : t + 1]
                    e = np.exp(row - row.max())
                    assert np.allclose(p[b, h, t, : t + 1], e / e.sum(), atol=1e-12)
                    assert np.all(p[b, h, t, t + 1 :] == 0.0)

    def test_rows_sum_to_one(self, backend):
        p = backend.causal_softmax(rand((4, 2, 33, 33), np.float32, 1))
        assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-5)
        assert np.all(p >= 0)

    def test_in_place(self, backend):
        s = rand((1, 1, 5, 5), np.float32, 2)
        assert backend.causal_softmax(s) is s

    def test_backward_matches_finite_differences(self, backend):
        # Scalar probe f(S) = sum(W * softmax(S)); dS checked entrywise.
        rng = np.random.default_rng(3)
        t = 7
        s0 = rng.standard_normal((1, 1, t, t))
        w = rng.standard_normal((1, 1, t, t))

        def f(s):
            return float(np.sum(w * reference.causal_softmax(s.copy())))

        p = backend.causal_softmax(s0.copy())
        ds = backend.causal_softmax_backward(p.copy(), w.copy().astype(np.float64))
        eps = 1e-6
        for i in range(t):
            for j in range(i + 1):
                bump = np.zeros_like(s0)
                bump[0, 0, i, j] = eps
                fd = (f(s0 + bump) - f(s0 - bump)) / (2 * eps)
                assert ds[0, 0, i, j] == pytest.approx(fd, abs=1e-7)
        assert np.all(ds[0, 0][np.triu_indices(t, k=1)] == 0.0)

    def test_backward_in_place(self, backend):
        p = backend.causal_softmax(rand((1, 2, 4, 4), np.float32, 4))
        dp = rand((1, 2, 4, 4), np.float32, 5)
        assert backend.causal_softmax_backward(p, dp) is dp


class TestLayerNorm:
    def test_forward_formula(self, backend):
        x = rand((5, 16), np.float64, 10)
        gamma = rand((16,), np.float64, 11)
        beta = rand((16,), np.float64, 12)
        y, mean, rstd = backend.layernorm_forward(x, gamma, beta)
        mu = x.mean(axis=1, keepdims=True)
        sd = np.sqrt(x.var(axis=1, keepdims=True) + 1e-5)
        assert np.allclose(y, (x - mu) / sd * gamma + beta, atol=1e-12)
        assert np.allclose(mean, mu[:, 0], atol=1e-12)
        assert np.allclose(rstd, 1 / sd[:, 0], atol=1e-12)

    def test_normalized_stats(self, backend):
        x = rand((3, 4, 64), np.float32, 13)
        ones = np.ones(64, dtype=np.float32)
        zeros = np.zeros(64, dtype=np.float32)
        y, _, _ = backend.layernorm_forward(x, ones, zeros)
        assert np.allclose(y.mean(axis=-1), 0.0, atol=1e-5)
        assert np.allclose(y.std(axis=-1), 1.0, atol=1e-3)

    def test_backward_matches_finite_differences(self, backend):
        rng = np.random.default_rng(14)
        x = rng.standard_normal((4, 12))
        gamma = rng.standard_normal(12)
        beta = rng.standard_normal(12)
        w = rng.standard_normal((4, 12))

        def f(xx, gg, bb):
            y, _, _ = reference.layernorm_forward(xx, gg, bb)
            return float(np.sum(w * y))

        y, mean, rstd = backend.layernorm_forward(x, gamma, beta)
        dx, dgamma, dbeta = backend.layernorm_backward(w.copy(), x, gamma, mean, rstd)
        eps = 1e-6
        for arr, grad, args in ((x, dx, 0), (gamma, dgamma, 1), (beta, dbeta, 2)):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                bump = np.zeros_like(arr)
                bump[idx] = eps
                inputs = [x, gamma, beta]
                plus = list(inputs)
                plus[args] = inputs[args] + bump
                minus = list(inputs)
                minus[args] = inputs[args] - bump
                fd = (f(*plus) - f(*minus)) / (2 * eps)
                assert grad[idx] == pytest.approx(fd, abs=1e-6)


class TestGelu:
    # Golden values from a 40-digit evaluation of the tanh approximation.
    GOLDEN = {
        1.0: (0.8411919906082767, 1.0829640838457826),
        -2.0: (-0.045402305912224981, -0.086099256623618382),
        0.5: (0.34571400982514392, 0.86736990353464231),
        3.0: (2.996362607918227, 1.0115841666309697),
    }

    def test_golden_values(self, backend):
        xs = np.array(list(self.GOLDEN), dtype=np.float64)
        y = backend.gelu_forward(xs)
        dy = backend.gelu_backward(xs, np.ones_like(xs))
        for i, x in enumerate(self.GOLDEN):
            assert y[i] == pytest.approx(self.GOLDEN[x][0], rel=1e-14)
            assert dy[i] == pytest.approx(self.GOLDEN[x][1], rel=1e-14)

    def test_limits(self, backend):
        x = np.array([0.0, 8.0, -8.0], dtype=np.float64)
        y = backend.gelu_forward(x)
        assert y[0] == 0.0
        assert y[1] == pytest.approx(8.0, abs=1e-9)
        assert y[2] == pytest.approx(0.0, abs=1e-9)

    def test_backward_matches_finite_differences(self, backend):
        x = rand((50,), np.float64, 20)
        dy = rand((50,), np.float64, 21)
        eps = 1e-6
        fd = (reference.gelu_forward(x + eps) - reference.gelu_forward(x - eps)) / (2 * eps)
        dx = backend.gelu_backward(x, dy)
        assert np.allclose(dx, dy * fd, atol=1e-8)


@pytest.mark.skipif(compiled is None, reason="compiled extension not built")
class TestBackendParity:
    @pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-5), (np.float64, 1e-12)])
    def test_softmax_and_backward(self, dtype, tol):
        s = rand((3, 4, 21, 21), dtype, 30)
        dp = rand((3, 4, 21, 21), dtype, 31)
        p_ref = reference.causal_softmax(s.copy())
        p_ext = compiled.causal_softmax(s.copy())
        assert np.allclose(p_ref, p_ext, atol=tol)
        d_ref = reference.causal_softmax_backward(p_ref.copy(), dp.copy())
        d_ext = compiled.causal_softmax_backward(p_ext.copy(), dp.copy())
        assert np.allclose(d_ref, d_ext, atol=tol)

    @pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-4), (np.float64, 1e-11)])
    def test_layernorm(self, dtype, tol):
        x = rand((64, 96), dtype, 32)
        gamma = rand((96,), dtype, 33)
        beta = rand((96,), dtype, 34)
        dy = rand((64, 96), dtype, 35)
        y_r, m_r, r_r = reference.layernorm_forward(x, gamma, beta)
        y_e, m_e, r_e = compiled.layernorm_forward(x, gamma, beta)
        assert np.allclose(y_r, y_e, atol=tol)
        assert np.allclose(m_r, m_e, atol=tol) and np.allclose(r_r, r_e, atol=tol)
        out_r = reference.layernorm_backward(dy, x, gamma, m_r, r_r)
        out_e = compiled.layernorm_backward(dy, x, gamma, m_e, r_e)
        for a, b in zip(out_r, out_e):
            assert np.allclose(a, b, atol=tol * 40)  # reduction-order slack

    @pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-6), (np.float64, 1e-14)])
    def test_gelu(self, dtype, tol):
        x = rand((1000,), dtype, 36)
        dy = rand((1000,), dtype, 37)
        assert np.allclose(reference.gelu_forward(x), compiled.gelu_forward(x), atol=tol)
        assert np.allclose(
            reference.gelu_backward(x, dy), compiled.gelu_backward(x, dy), atol=tol
        )


class TestBackendSelection:
    def test_use_backend_rebinds(self):
        before = kernels.active_backend()
        try:
            kernels.use_backend("python")
            assert kernels.active_backend() == "python"
            assert kernels.causal_softmax is reference.causal_softmax
            if compiled is not None:
                kernels.use_backend("compiled")
                assert kernels.causal_softmax is compiled.causal_softmax
        finally:
            kernels.use_backend(before)

    def test_unknown_backend_rejected(self):
        with pytest.raises(ValueError):
            kernels.use_backend("gpu")
