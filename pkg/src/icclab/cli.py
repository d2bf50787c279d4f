"""Command-line pipeline: generate episodes, train, evaluate, inspect attention.

One binary with four subcommands (gen, train, eval, attn). Global flags
--seed/--out-dir/--threads resolve as flags > ICC_SEED/ICC_OUT_DIR/ICC_THREADS
environment variables > defaults, and every subcommand is deterministic under
a fixed --seed (live endpoint calls excepted). Exit codes: 0 success, 2 bad
flags, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attention import aggregate, layer_sweep
from .baselines import kmeans_labeler, oracle_labeler
from .codec import MalformedOutput, encode_prompt, encode_supervised
from .episodes import (
    DISTRIBUTIONS,
    STUDENT_T,
    EpisodeSpec,
    load_episodes,
    make_dataset,
    paper_test_grid,
    paper_train_grid,
    save_episodes,
)
from .evaluation import EvalReport, evaluate, permutation_sensitivity
from .model.checkpoint import load_checkpoint, save_checkpoint
from .model.config import ModelConfig
from .model.generate import generate
from .model.network import SequenceTooLong, Transformer
from .model.train import TrainConfig, train
from .reports import emit_report, heatmap_svg
from .spectral import DegenerateAffinity, attention_clusterer

DEFAULT_SEED = 0
DEFAULT_OUT_DIR = "runs"


class FlagError(ValueError):
    """Bad flag combination detected after parsing; maps to exit code 2."""


def _resolve(flag, env_var: str, default, cast):
    if flag is not None:
        return flag
    raw = os.environ.get(env_var)
    if raw is not None and raw != "":
        return cast(raw)
    return default


@dataclass(frozen=True)
class RunConfig:
    """Resolved global flags shared by every subcommand."""

    seed: int
    out_dir: Path
    threads: int

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        seed = _resolve(args.seed, "ICC_SEED", DEFAULT_SEED, int)
        out_dir = Path(_resolve(args.out_dir, "ICC_OUT_DIR", DEFAULT_OUT_DIR, str))
        threads = _resolve(args.threads, "ICC_THREADS", os.cpu_count() or 1, int)
        if seed < 0:
            raise FlagError("--seed must be nonnegative")
        if threads < 1:
            raise FlagError("--threads must be >= 1")
        out_dir.mkdir(parents=True, exist_ok=True)
        return cls(seed=seed, out_dir=out_dir, threads=threads)


def _globals(args) -> tuple[int, Path, int]:
    run = RunConfig.from_args(args)
    return run.seed, run.out_dir, run.threads


def generation_labeler(model):
    """Constrained decoding as an episode labeler; too-long prompts and
    malformed output count as episode failures rather than aborting."""
    from .codec import decode_labels

    def method(ep):
        tok = encode_prompt(ep)
        try:
            seq = generate(model, tok, constrain=True)
        except SequenceTooLong as exc:
            raise MalformedOutput(str(exc))
        return np.asarray(decode_labels(seq, ep.num_points))

    return method


def attention_labeler(model, layer: int, mode: str = "multiply", seed: int = 0):
    """Spectral clustering of one layer's aggregated point-point attention."""
    cluster = attention_clusterer(mode)

    def method(ep):
        tok = encode_prompt(ep)
        try:
            _, attn = model.forward(tok.tokens)
            agg = aggregate(attn, tok, layer)
            return cluster(agg.a_ii, ep.spec.num_clusters, seed)
        except (SequenceTooLong, DegenerateAffinity) as exc:
            raise MalformedOutput(str(exc))

    return method


def cmd_gen(args) -> int:
    seed, out_dir, _ = _globals(args)
    if args.grid:
        specs = paper_test_grid(seed) if args.grid == "test" else paper_train_grid(seed)
        default_name = f"episodes-{args.grid}.jsonl"
    else:
        if args.df is None and args.dist == STUDENT_T:
            raise FlagError("single-cell gen needs --df (or --grid)")
        specs = [
            EpisodeSpec(
                num_clusters=args.c,
                dim=args.dim,
                distribution=args.dist,
                df=args.df,
                seed=seed,
            )
        ]
        default_name = "episodes.jsonl"
    path = Path(args.out) if args.out else out_dir / default_name
    path.parent.mkdir(parents=True, exist_ok=True)
    n = save_episodes(path, make_dataset(specs, args.count, args.augment))
    print(f"wrote {n} episodes ({len(specs)} specs x {args.count}) -> {path}")
    return 0


def cmd_train(args) -> int:
    seed, out_dir, _ = _globals(args)
    episodes = load_episodes(args.data)
    if args.limit:
        episodes = episodes[: args.limit]
    if args.resume:
        model, meta = load_checkpoint(args.resume)
        print(f"resumed from {args.resume} at step {meta['step']}")
    else:
        model = Transformer(
            ModelConfig(
                layers=args.layers,
                heads=args.heads,
                d_model=args.d_model,
                d_ff=args.d_ff,
                max_seq=args.max_seq,
                seed=seed,
            )
        )
    cfg = TrainConfig(
        lr=args.lr,
        effective_batch=args.batch,
        micro_batch=args.micro_batch,
        epochs=args.epochs,
        warmup_steps=args.warmup,
        weight_decay=args.weight_decay,
        seed=seed,
    )
    result = train(model, episodes, cfg, log_every=args.log_every)
    ckpt = Path(args.out) if args.out else out_dir / "model.ckpt"
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, model, step=result.steps,
                    extra={"final_loss": result.final_loss})
    loss_csv = Path(args.loss_csv) if args.loss_csv else ckpt.with_name(
        ckpt.stem + "-loss.csv")
    fields = ["step", "epoch", "loss", "format_loss", "label_loss",
              "grad_norm", "lr", "tokens"]
    with open(loss_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(result.curve)
    print(
        f"trained {result.steps} steps on {len(episodes)} episodes "
        f"(skipped {result.skipped_too_long} too long); "
        f"final loss {result.final_loss:.4f}"
    )
    print(f"checkpoint -> {ckpt}")
    print(f"loss curve -> {loss_csv}")
    return 0


def _pick_layer(model, episodes, mode: str, seed: int) -> tuple[int, dict]:
    probe = episodes[: min(16, len(episodes))]
    sweep = layer_sweep(model, probe, attention_clusterer(mode))
    return sweep["best_layer"], sweep


def cmd_eval(args) -> int:
    seed, out_dir, threads = _globals(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    known = {"kmeans", "oracle", "model", "attn", "llm"}
    unknown = set(methods) - known
    if unknown:
        raise FlagError(f"unknown methods: {sorted(unknown)} (choose from {sorted(known)})")
    if not methods:
        raise FlagError("--methods is empty")
    needs_ckpt = {"model", "attn"} & set(methods)
    if needs_ckpt and not args.checkpoint:
        raise FlagError(f"methods {sorted(needs_ckpt)} require --checkpoint")
    if "llm" in methods and not args.base_url:
        raise FlagError("method llm requires --base-url")

    episodes = load_episodes(args.data)
    model = None
    if needs_ckpt:
        model, _ = load_checkpoint(args.checkpoint)

    report = EvalReport()
    labelers = {}
    for name in methods:
        if name == "kmeans":
            labelers[name] = kmeans_labeler(seed=seed, restarts=args.restarts)
        elif name == "oracle":
            labelers[name] = oracle_labeler()
        elif name == "model":
            labelers[name] = generation_labeler(model)
        elif name == "attn":
            layer = args.layer
            if layer is None:
                layer, sweep = _pick_layer(model, episodes, args.mode, seed)
                print(f"attn: best layer {layer} "
                      f"(layer means {['%.3f' % v for v in sweep['layer_means']]})")
            labelers[name] = attention_labeler(model, layer, args.mode, seed)

    for name, labeler in labelers.items():
        part = evaluate(labeler, episodes, name=name)
        if args.perms:
            part.permutation_stats[name] = permutation_sensitivity(
                labeler, episodes, n_perms=args.perms, seed=seed
            )
        report = report.merge(part)

    if "llm" in methods:
        from .llm import EndpointConfig, zero_shot_eval

        cfg = EndpointConfig(
            base_url=args.base_url,
            model_name=args.model_name,
            temperature=args.temperature,
            timeout=args.timeout,
            max_retries=args.max_retries,
        )
        report = report.merge(
            zero_shot_eval(cfg, episodes, name=args.model_name,
                           out_dir=out_dir, threads=threads)
        )

    written = emit_report(report, out_dir, stem=args.stem)
    for cell in report.rows():
        print(
            f"{cell.method} df={cell.df} c={cell.c} d={cell.dim}: "
            f"{100 * cell.mean_acc:.2f} (se {100 * cell.stderr:.2f}, "
            f"n={cell.n}, fail {cell.n_failures})"
        )
    for name, stats in report.permutation_stats.items():
        print(f"{name} permutation: mean {stats['mean_acc']:.4f} "
              f"std {stats['mean_std']:.4f}")
    for p in written:
        print(f"report -> {p}")
    return 0


def cmd_attn(args) -> int:
    seed, out_dir, _ = _globals(args)
    model, _ = load_checkpoint(args.checkpoint)
    episodes = load_episodes(args.data)[: args.episodes]
    if not episodes:
        raise FlagError("--data contains no episodes")
    sweep = layer_sweep(model, episodes, attention_clusterer(args.mode))
    layer = args.layer if args.layer is not None else sweep["best_layer"]
    if not 0 <= layer < model.config.layers:
        raise FlagError(f"--layer {layer} out of range for {model.config.layers} layers")

    sweep_csv = out_dir / "layer-sweep.csv"
    with open(sweep_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "mean_acc", "best"])
        for i, acc in enumerate(sweep["layer_means"]):
            writer.writerow([i, f"{acc:.6f}", int(i == sweep["best_layer"])])

    dumps = out_dir / "attn-dumps.jsonl"
    with open(dumps, "w") as fh:
        for i, ep in enumerate(episodes):
            # supervised encoding keeps label positions, so dumps carry the
            # output-input and output-output blocks as well
            tok = encode_supervised(ep)
            _, attn = model.forward(tok.tokens)
            agg = aggregate(attn, tok, layer)
            fh.write(agg.to_json(labels=ep.labels) + "\n")
            heatmap_svg(
                agg.a_ii,
                out_dir / f"attn-{i:03d}.svg",
                title=f"episode {i} layer {layer}",
                log_scale=args.log_scale,
            )
    print(f"layer sweep ({model.config.layers} layers) -> {sweep_csv}")
    print(f"best layer {sweep['best_layer']} "
          f"(mean acc {sweep['layer_means'][sweep['best_layer']]:.4f}, "
          f"{sweep['n_used']} episodes, {sweep['n_failed']} failed)")
    print(f"aggregated dumps -> {dumps}")
    print(f"heatmaps -> {out_dir}/attn-*.svg (layer {layer})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, default=None,
                        help=f"RNG seed (env ICC_SEED, default {DEFAULT_SEED})")
    shared.add_argument("--out-dir", default=None,
                        help=f"output directory (env ICC_OUT_DIR, default {DEFAULT_OUT_DIR!r})")
    shared.add_argument("--threads", type=int, default=None,
                        help="parallelism bound (env ICC_THREADS, default: cores)")

    parser = argparse.ArgumentParser(
        prog="icclab",
        description="In-context clustering lab: data generation, training, "
                    "evaluation, attention analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[shared], help="generate episode JSONL files")
    gen.add_argument("--grid", choices=["test", "train"],
                     help="full evaluation or fine-tuning grid")
    gen.add_argument("--c", type=int, default=2, help="clusters (single-cell mode)")
    gen.add_argument("--dim", type=int, default=2, help="dimensions (single-cell mode)")
    gen.add_argument("--df", type=float, default=None,
                     help="Student-t degrees of freedom (single-cell mode)")
    gen.add_argument("--dist", choices=list(DISTRIBUTIONS), default=STUDENT_T)
    gen.add_argument("--count", type=int, default=100, help="episodes per spec")
    gen.add_argument("--augment", type=int, default=0,
                     help="permuted copies per episode")
    gen.add_argument("--out", default=None, help="output JSONL path")
    gen.set_defaults(func=cmd_gen)

    tr = sub.add_parser("train", parents=[shared], help="train the transformer")
    tr.add_argument("--data", required=True, help="episode JSONL file")
    tr.add_argument("--epochs", type=int, default=1)
    tr.add_argument("--lr", type=float, default=5e-4)
    tr.add_argument("--batch", type=int, default=32, help="effective batch size")
    tr.add_argument("--micro-batch", type=int, default=8)
    tr.add_argument("--warmup", type=int, default=200)
    tr.add_argument("--weight-decay", type=float, default=0.01)
    tr.add_argument("--layers", type=int, default=4)
    tr.add_argument("--heads", type=int, default=4)
    tr.add_argument("--d-model", type=int, default=128)
    tr.add_argument("--d-ff", type=int, default=512)
    tr.add_argument("--max-seq", type=int, default=1024)
    tr.add_argument("--limit", type=int, default=0, help="cap episode count")
    tr.add_argument("--resume", default=None, help="checkpoint to continue from")
    tr.add_argument("--out", default=None, help="checkpoint path")
    tr.add_argument("--loss-csv", default=None, help="loss curve CSV path")
    tr.add_argument("--log-every", type=int, default=1)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", parents=[shared], help="evaluate clustering methods")
    ev.add_argument("--data", required=True, help="episode JSONL file")
    ev.add_argument("--methods", default="kmeans",
                    help="comma list: kmeans,oracle,model,attn,llm")
    ev.add_argument("--checkpoint", default=None, help="model checkpoint (model/attn)")
    ev.add_argument("--restarts", type=int, default=10, help="k-means restarts")
    ev.add_argument("--layer", type=int, default=None,
                    help="attention layer (default: best via sweep)")
    ev.add_argument("--mode", choices=["multiply", "divide"], default="multiply",
                    help="attention affinity preprocessing")
    ev.add_argument("--perms", type=int, default=0,
                    help="permutation-sensitivity runs per episode (0 = off)")
    ev.add_argument("--base-url", default=None, help="chat endpoint (llm)")
    ev.add_argument("--model-name", default="gpt-4o", help="endpoint model (llm)")
    ev.add_argument("--temperature", type=float, default=0.0)
    ev.add_argument("--timeout", type=float, default=30.0)
    ev.add_argument("--max-retries", type=int, default=3)
    ev.add_argument("--stem", default="eval", help="report file stem")
    ev.set_defaults(func=cmd_eval)

    at = sub.add_parser("attn", parents=[shared],
                        help="aggregate attention, sweep layers, render heatmaps")
    at.add_argument("--checkpoint", required=True)
    at.add_argument("--data", required=True, help="episode JSONL file")
    at.add_argument("--episodes", type=int, default=8, help="episodes to sample")
    at.add_argument("--layer", type=int, default=None,
                    help="layer to dump (default: sweep argmax)")
    at.add_argument("--mode", choices=["multiply", "divide"], default="multiply")
    at.add_argument("--log-scale", action="store_true",
                    help="log-scale heatmap colors")
    at.set_defaults(func=cmd_attn)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FlagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 3
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
