"""Constrained and free-running greedy generation."""

import numpy as np
import pytest

from icclab import episodes as epi
from icclab.codec import VOCAB, decode_labels, encode_prompt
from icclab.model import ModelConfig, TrainConfig, Transformer, generate, train


def episodes_for(c, d, n, seed, length_range=(4, 8)):
    spec = epi.EpisodeSpec(num_clusters=c, dim=d, distribution=epi.GAUSSIAN,
                           length_range=length_range, seed=seed)
    return [epi.sample_episode(spec, epi.episode_rng(spec, i)) for i in range(n)]


@pytest.fixture(scope="module")
def untrained():
    return Transformer(ModelConfig(layers=2, heads=2, d_model=32, d_ff=64,
                                   max_seq=256, seed=0))


class TestConstrained:
    def test_always_decodable_even_untrained(self, untrained):
        for ep in episodes_for(3, 2, 5, seed=11):
            out = generate(untrained, encode_prompt(ep))
            labels = decode_labels(out, ep.num_points)
            assert len(labels) == ep.num_points
            assert all(0 <= l < ep.spec.num_clusters for l in labels)

    def test_structure_tokens_forced(self, untrained):
        ep = episodes_for(2, 1, 1, seed=12)[0]
        prompt = encode_prompt(ep)
        out = generate(untrained, prompt)
        tail = out[len(prompt.tokens):]
        m = ep.num_points
        assert tail[0] == VOCAB.lbracket
        assert tail[-1] == VOCAB.eos
        assert tail[-2] == VOCAB.rbracket
        assert len(tail) == 2 * m + 2
        for j, tok in enumerate(tail[1:-2]):
            if j % 2 == 0:
                assert VOCAB.is_label(tok)
            else:
                assert tok == VOCAB.comma

    def test_labels_below_instruction_count(self, untrained):
        for seed in range(5):
            ep = episodes_for(2, 2, 1, seed=20 + seed)[0]
            out = generate(untrained, encode_prompt(ep))
            labels = decode_labels(out, ep.num_points)
            assert max(labels) < 2

    def test_deterministic(self, untrained):
        ep = episodes_for(3, 1, 1, seed=13)[0]
        a = generate(untrained, encode_prompt(ep))
        b = generate(untrained, encode_prompt(ep))
        assert np.array_equal(a, b)

    def test_prompt_must_end_at_sep(self, untrained):
        ep = episodes_for(2, 1, 1, seed=14)[0]
        bad = encode_prompt(ep)
        bad.tokens = bad.tokens[:-1]
        with pytest.raises(ValueError):
            generate(untrained, bad)

    def test_output_prefix_is_prompt(self, untrained):
        ep = episodes_for(2, 1, 1, seed=15)[0]
        prompt = encode_prompt(ep)
        out = generate(untrained, prompt)
        assert np.array_equal(out[: len(prompt.tokens)], prompt.tokens)


class TestUnconstrained:
    def test_cap_respected(self, untrained):
        ep = episodes_for(2, 2, 1, seed=16)[0]
        prompt = encode_prompt(ep)
        out = generate(untrained, prompt, constrain=False)
        assert len(out) - len(prompt.tokens) <= 3 * ep.num_points + 4

    def test_stops_at_eos(self, untrained):
        ep = episodes_for(2, 1, 1, seed=17)[0]
        prompt = encode_prompt(ep)
        out = generate(untrained, prompt, constrain=False)
        inner = out[len(prompt.tokens):-1]
        assert VOCAB.eos not in inner


class TestSingleClusterOracle:
    def test_trained_model_emits_only_label_zero(self):
        # After converging on c=1 episodes the only credible label is LBL(0),
        # in both free-running and constrained decoding.
        data = episodes_for(1, 1, 300, seed=18, length_range=(4, 8))
        model = Transformer(ModelConfig(layers=2, heads=2, d_model=32, d_ff=64,
                                        max_seq=128, seed=1))
        cfg = TrainConfig(lr=3e-3, effective_batch=16, micro_batch=16,
                          epochs=25, warmup_steps=20, seed=0)
        res = train(model, data, cfg, log_every=100)
        assert res.final_loss < 0.05

        held_out = episodes_for(1, 1, 20, seed=19, length_range=(4, 8))
        parsed = 0
        for ep in held_out:
            prompt = encode_prompt(ep)
            free = generate(model, prompt, constrain=False)
            tail = free[len(prompt.tokens):]
            emitted = [VOCAB.label_value(t) for t in tail if VOCAB.is_label(t)]
            assert emitted, "no label tokens generated"
            assert all(v == 0 for v in emitted)
            try:
                labels = decode_labels(free, ep.num_points)
            except Exception:
                continue  # free-running may miscount points; values still checked
            parsed += 1
            assert labels == [0] * ep.num_points
        assert parsed >= 15

        for ep in held_out[:5]:
            out = generate(model, encode_prompt(ep))
            assert decode_labels(out, ep.num_points) == [0] * ep.num_points
