"""Compare the numpy reference kernels against the compiled extension.

Times each hot kernel on training-realistic shapes plus one end-to-end
forward/backward pass of the default model, for every available backend.

Usage: python3 benchmarks/bench_kernels.py [--repeats 20] [--seq 512]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from icclab import kernels
from icclab.model.config import ModelConfig
from icclab.model.loss import ntp_loss_and_grad
from icclab.model.network import Transformer


def timeit(fn, repeats: int) -> float:
    fn()  # warm up caches and lazy allocations
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(seq: int, rng: np.random.Generator) -> dict:
    heads, d_model = 4, 128
    scores = rng.standard_normal((1, heads, seq, seq)).astype(np.float32)
    probs = kernels.causal_softmax(scores.copy())
    dprobs = rng.standard_normal(probs.shape).astype(np.float32)
    x = rng.standard_normal((1, seq, d_model)).astype(np.float32)
    gamma = np.ones(d_model, dtype=np.float32)
    beta = np.zeros(d_model, dtype=np.float32)
    _, mean, rstd = kernels.layernorm_forward(x, gamma, beta)
    dy = rng.standard_normal(x.shape).astype(np.float32)
    h = rng.standard_normal((1, seq, 4 * d_model)).astype(np.float32)
    dh = rng.standard_normal(h.shape).astype(np.float32)
    return {
        "causal_softmax": lambda: kernels.causal_softmax(scores.copy()),
        "causal_softmax_backward": lambda: kernels.causal_softmax_backward(
            probs, dprobs.copy()
        ),
        "layernorm_forward": lambda: kernels.layernorm_forward(x, gamma, beta),
        "layernorm_backward": lambda: kernels.layernorm_backward(
            dy, x, gamma, mean, rstd
        ),
        "gelu_forward": lambda: kernels.gelu_forward(h),
        "gelu_backward": lambda: kernels.gelu_backward(h, dh),
    }


def model_step_case(seq: int, rng: np.random.Generator):
    model = Transformer(ModelConfig(max_seq=max(seq, 64)))
    tokens = rng.integers(1, model.config.vocab_size, size=(2, seq), dtype=np.int64)
    mask = np.ones_like(tokens, dtype=bool)
    mask[:, 0] = False  # position 0 has no preceding context to predict from

    def step():
        logits, cache = model.forward_batch(tokens)
        _, dlogits = ntp_loss_and_grad(logits, tokens, mask, reduction="sum")
        model.backward(cache, dlogits)

    return step


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--seq", type=int, default=512)
    args = ap.parse_args()

    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)} (seq={args.seq}, best of {args.repeats})")
    if "compiled" not in backends:
        print("note: compiled extension not built; timing reference only")

    rng = np.random.default_rng(0)
    rows: dict[str, dict[str, float]] = {}
    for backend in backends:
        kernels.use_backend(backend)
        for name, fn in kernel_cases(args.seq, rng).items():
            rows.setdefault(name, {})[backend] = timeit(fn, args.repeats)
        rows.setdefault("model fwd+bwd", {})[backend] = timeit(
            model_step_case(args.seq, rng), max(3, args.repeats // 4)
        )
    kernels.use_backend(
        "compiled" if "compiled" in backends else "python"
    )

    width = max(len(n) for n in rows) + 2
    header = f"{'kernel':<{width}}" + "".join(f"{b:>14}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for name, times in rows.items():
        line = f"{name:<{width}}"
        for b in backends:
            line += f"{times[b] * 1e3:>12.3f}ms"
        if len(times) == 2:
            line += f"{times['python'] / times['compiled']:>9.2f}x"
        print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
