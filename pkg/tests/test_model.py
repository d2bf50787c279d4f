"""Transformer core: causality, attention invariants, loss, grad checks."""

import numpy as np
import pytest

from icclab.model import (
    EmptyMask,
    ModelConfig,
    SequenceTooLong,
    Transformer,
    grad_check,
    ntp_loss,
    ntp_loss_and_grad,
    tiny_config,
)
from icclab.model.gradcheck import (
    analytic_grads,
    default_mask,
    finite_diff_entries,
    max_relative_error,
    relative_error,
    sample_entries,
)


@pytest.fixture(scope="module")
def model():
    return Transformer(tiny_config(seed=1))


def tokens_for(cfg, n, seed=0, batch=1):
    rng = np.random.default_rng(seed)
    return rng.integers(0, cfg.vocab_size, size=(batch, n))


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(d_model=30, heads=4)
        with pytest.raises(ValueError):
            ModelConfig(layers=0)
        with pytest.raises(ValueError):
            ModelConfig(seed=-1)

    def test_round_trip(self):
        cfg = tiny_config(seed=9)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestForward:
    def test_shapes(self, model):
        cfg = model.config
        toks = tokens_for(cfg, 10, batch=3)
        logits, cache = model.forward_batch(toks)
        assert logits.shape == (3, 10, cfg.vocab_size)
        assert len(cache["blocks"]) == cfg.layers

    def test_determinism(self):
        cfg = tiny_config(seed=5)
        a = Transformer(cfg)
        b = Transformer(cfg)
        toks = tokens_for(cfg, 14)
        la, _ = a.forward_batch(toks)
        lb, _ = b.forward_batch(toks)
        assert np.array_equal(la, lb)

    def test_causality_bitwise(self, model):
        # Changing token p must leave logits at positions < p bit-unchanged.
        cfg = model.config
        toks = tokens_for(cfg, 16, seed=3)
        base, _ = model.forward_batch(toks)
        for p in (5, 10, 15):
            mod = toks.copy()
            mod[0, p] = (mod[0, p] + 1) % cfg.vocab_size
            pert, _ = model.forward_batch(mod)
            assert np.array_equal(base[0, :p], pert[0, :p])
            assert not np.array_equal(base[0, p:], pert[0, p:])

    def test_attention_invariants(self, model):
        toks = tokens_for(model.config, 20, seed=4)
        _, attn = model.forward(toks[0])
        cfg = model.config
        assert attn.probs.shape == (cfg.layers, cfg.heads, 20, 20)
        assert np.all(attn.probs >= 0)
        assert np.allclose(attn.probs.sum(axis=-1), 1.0, atol=1e-5)
        upper = np.triu_indices(20, k=1)
        assert np.all(attn.probs[:, :, upper[0], upper[1]] == 0.0)

    def test_sequence_too_long(self, model):
        toks = tokens_for(model.config, model.config.max_seq + 1)
        with pytest.raises(SequenceTooLong):
            model.forward_batch(toks)
        with pytest.raises(SequenceTooLong):
            model.forward(toks[0])

    def test_param_names_start_and_end(self, model):
        names = model.param_names()
        assert names[0] == "tok_emb" and names[1] == "pos_emb"
        assert names[-2:] == ["ln_f.gamma", "ln_f.beta"]
        assert len(names) == 2 + 16 * model.config.layers + 2

    def test_astype_is_independent(self, model):
        m64 = model.astype(np.float64)
        m64.params["tok_emb"][0, 0] += 1.0
        assert model.params["tok_emb"][0, 0] != m64.params["tok_emb"][0, 0]


class TestNtpLoss:
    def test_uniform_logits_log_vocab(self):
        v = 36
        logits = np.zeros((1, 8, v))
        targets = np.ones((1, 8), dtype=np.int64)
        mask = np.zeros((1, 8), dtype=bool)
        mask[0, 1:] = True
        assert ntp_loss(logits, targets, mask) == pytest.approx(np.log(v), rel=1e-12)

    def test_margin_drives_loss_to_zero(self):
        rng = np.random.default_rng(0)
        targets = rng.integers(0, 6, size=(1, 7))
        mask = np.zeros((1, 7), dtype=bool)
        mask[0, 1:] = True
        prev = None
        for margin in (1.0, 10.0, 100.0):
            logits = np.zeros((1, 7, 6))
            for p in range(1, 7):
                logits[0, p - 1, targets[0, p]] = margin
            cur = ntp_loss(logits, targets, mask)
            if prev is not None:
                assert cur < prev
            prev = cur
        assert prev < 1e-40

    def test_high_precision_oracle(self):
        # 50-digit mpmath evaluation of the same masked cross-entropy.
        logits = np.array([
            [0.00369, 0.896237, -0.822414, -2.671776, -1.364012, -2.97494],
            [0.180431, 4.020646, -1.47662, -1.861425, 1.469526, 1.070661],
            [0.316243, -2.791404, -0.087755, 2.08591, -4.032644, -1.372847],
            [-5.703668, -3.868613, -5.525205, -0.705273, -3.802339, 0.813793],
            [0.470253, -0.560793, -7.550279, -1.616079, -0.145503, 0.339927],
        ])
        targets = np.array([1, 2, 2, 1, 5])
        mask = np.array([False, True, False, True, True])
        assert ntp_loss(logits, targets, mask) == pytest.approx(
            2.5496909169394945689, abs=1e-6
        )

    def test_shift_semantics(self):
        # Target at position p must be read from logits[p-1], not logits[p].
        v = 5
        logits = np.full((1, 2, v), -10.0)
        logits[0, 0, 3] = 10.0  # row 0 predicts position 1
        targets = np.array([[0, 3]])
        mask = np.array([[False, True]])
        assert ntp_loss(logits, targets, mask) < 1e-8

    def test_empty_mask(self):
        with pytest.raises(EmptyMask):
            ntp_loss(np.zeros((1, 4, 6)), np.zeros((1, 4), dtype=int),
                     np.zeros((1, 4), dtype=bool))

    def test_position_zero_rejected(self):
        mask = np.array([[True, False, False]])
        with pytest.raises(ValueError):
            ntp_loss(np.zeros((1, 3, 6)), np.zeros((1, 3), dtype=int), mask)

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        logits = rng.standard_normal((2, 6, 9))
        targets = rng.integers(0, 9, size=(2, 6))
        mask = rng.random((2, 6)) < 0.5
        mask[:, 0] = False
        mask[0, 3] = True  # ensure nonempty
        loss, dlogits = ntp_loss_and_grad(logits, targets, mask)
        eps = 1e-6
        for _ in range(30):
            b = rng.integers(0, 2)
            p = rng.integers(0, 6)
            k = rng.integers(0, 9)
            bump = np.zeros_like(logits)
            bump[b, p, k] = eps
            fd = (ntp_loss(logits + bump, targets, mask)
                  - ntp_loss(logits - bump, targets, mask)) / (2 * eps)
            assert dlogits[b, p, k] == pytest.approx(fd, abs=1e-8)

    def test_sum_reduction_scales(self):
        rng = np.random.default_rng(12)
        logits = rng.standard_normal((1, 5, 4))
        targets = rng.integers(0, 4, size=(1, 5))
        mask = np.array([[False, True, True, False, True]])
        lm, gm = ntp_loss_and_grad(logits, targets, mask, reduction="mean")
        ls, gs = ntp_loss_and_grad(logits, targets, mask, reduction="sum")
        assert ls == pytest.approx(3 * lm, rel=1e-12)
        assert np.allclose(gs, 3 * gm, atol=1e-12)


class TestGradCheck:
    def test_full_model_under_threshold(self):
        cfg = tiny_config(seed=2)
        m = Transformer(cfg)
        toks = tokens_for(cfg, 24, seed=42)
        assert grad_check(m, toks, fraction=0.02, seed=7) < 1e-4

    def test_linear_head_nearly_exact(self):
        # Gradient of CE(x @ W) is exact for linear maps: the checker itself
        # must resolve it to ~1e-6. Verified against the same FD helper via
        # a 1-parameter wrapper around the analytic formula.
        rng = np.random.default_rng(3)
        n, d, v = 6, 4, 5
        x = rng.standard_normal((n, d))
        w = rng.standard_normal((d, v))
        y = rng.integers(0, v, size=n)

        def loss_of(wm):
            z = x @ wm
            z = z - z.max(axis=1, keepdims=True)
            lse = np.log(np.exp(z).sum(axis=1))
            return float(np.mean(lse - z[np.arange(n), y]))

        soft = np.exp(x @ w)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[np.arange(n), y] -= 1.0
        analytic = x.T @ soft / n
        eps = 1e-3
        worst = 0.0
        for i in range(d):
            for j in range(v):
                bump = np.zeros_like(w)
                bump[i, j] = eps
                fd = (loss_of(w + bump) - loss_of(w - bump)) / (2 * eps)
                worst = max(worst, relative_error(analytic[i, j], fd))
        assert worst < 1e-6

    def test_negative_control_detects_corruption(self):
        cfg = tiny_config(seed=4)
        m = Transformer(cfg).astype(np.float64)
        toks = tokens_for(cfg, 16, seed=5)
        mask = default_mask(toks)
        _, grads = analytic_grads(m, toks, mask)
        rng = np.random.default_rng(0)
        entries = sample_entries(m, 0.01, rng)
        numeric = finite_diff_entries(m, toks, mask, entries, eps=1e-3)
        assert max_relative_error(grads, numeric) < 1e-4
        name, flat = entries[0]
        grads[name].flat[flat] += 1.0
        assert max_relative_error(grads, numeric) > 1e-2

    def test_batched_input(self):
        cfg = tiny_config(seed=6)
        m = Transformer(cfg)
        toks = tokens_for(cfg, 12, seed=8, batch=2)
        assert grad_check(m, toks, fraction=0.01, seed=1) < 1e-4
