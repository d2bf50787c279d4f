"""Report emission: CSV/JSON serializations of evaluation results and
hand-rolled SVG 1.1 renderings (accuracy-vs-df curves, attention heatmaps).

CSV follows the fixed schema method,df,c,dim,n,mean_acc,stderr,n_failures
with accuracies as percentages at 2 decimals; JSON mirrors EvalReport at full
float precision.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .evaluation import CellStats, EvalReport

CSV_FIELDS = ["method", "df", "c", "dim", "n", "mean_acc", "stderr", "n_failures"]

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _df_sort_key(label: str) -> tuple:
    try:
        return (0, float(label), "")
    except ValueError:
        return (1, 0.0, label)


def emit_csv(report: EvalReport, path: str | Path) -> Path:
    """One row per nonempty cell, accuracies in percent at 2 decimals."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for cell in report.rows():
            if cell.n == 0:
                continue
            writer.writerow(
                [
                    cell.method,
                    cell.df,
                    cell.c,
                    cell.dim,
                    cell.n,
                    f"{100 * cell.mean_acc:.2f}",
                    f"{100 * cell.stderr:.2f}",
                    cell.n_failures,
                ]
            )
    return path


def parse_report_csv(path: str | Path) -> EvalReport:
    """Inverse of emit_csv up to the 2-decimal percent quantization; the CSV
    does not carry valid_mean, so parsed cells leave it None."""
    report = EvalReport()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_FIELDS:
            raise ValueError(f"unexpected CSV header: {reader.fieldnames}")
        for row in reader:
            cell = CellStats(
                method=row["method"],
                df=row["df"],
                c=int(row["c"]),
                dim=int(row["dim"]),
                n=int(row["n"]),
                n_failures=int(row["n_failures"]),
                mean_acc=float(row["mean_acc"]) / 100,
                stderr=float(row["stderr"]) / 100,
                valid_mean=None,
            )
            report.cells[(cell.method, cell.df, cell.c, cell.dim)] = cell
    return report


def emit_json(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "cells": [c.to_dict() for c in report.rows() if c.n > 0],
        "permutation_stats": report.permutation_stats,
    }
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path


def parse_report_json(path: str | Path) -> EvalReport:
    payload = json.loads(Path(path).read_text())
    report = EvalReport(permutation_stats=dict(payload.get("permutation_stats", {})))
    for d in payload["cells"]:
        cell = CellStats(**d)
        report.cells[(cell.method, cell.df, cell.c, cell.dim)] = cell
    return report


def _svg_header(width: int, height: int, title: str) -> list[str]:
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        lines.append(
            f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" '
            f'font-family="sans-serif" font-size="14">{escape(title)}</text>'
        )
    return lines


def accuracy_curve_svg(
    report: EvalReport, path: str | Path, title: str = "accuracy vs df"
) -> Path:
    """Line chart with df categories on x, accuracy (%) on y, one polyline per
    (method, c, dim) series, plus one-stderr whiskers at each point."""
    cells = [c for c in report.rows() if c.n > 0]
    if not cells:
        raise ValueError("report has no nonempty cells to plot")
    dfs = sorted({c.df for c in cells}, key=_df_sort_key)
    series: dict[tuple, dict[str, CellStats]] = {}
    for cell in cells:
        series.setdefault((cell.method, cell.c, cell.dim), {})[cell.df] = cell
    multi = len({(c, d) for _, c, d in series}) > 1

    width, height = 640, 420
    left, right, top, bottom = 60, 170, 30, 50
    pw, ph = width - left - right, height - top - bottom

    def x_at(i: int) -> float:
        if len(dfs) == 1:
            return left + pw / 2
        return left + i * pw / (len(dfs) - 1)

    def y_at(pct: float) -> float:
        return top + ph * (1 - pct / 100)

    out = _svg_header(width, height, title)
    axis = 'stroke="#333" stroke-width="1"'
    out.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" {axis}/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" {axis}/>')
    for pct in range(0, 101, 20):
        y = y_at(pct)
        out.append(f'<line x1="{left - 4}" y1="{y:.1f}" x2="{left}" y2="{y:.1f}" {axis}/>')
        out.append(
            f'<text x="{left - 8}" y="{y + 4:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{pct}</text>'
        )
    for i, df in enumerate(dfs):
        x = x_at(i)
        out.append(
            f'<text x="{x:.1f}" y="{top + ph + 16}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{escape(df)}</text>'
        )
    out.append(
        f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">df</text>'
    )

    for si, key in enumerate(sorted(series)):
        method, c, d = key
        color = _PALETTE[si % len(_PALETTE)]
        pts = []
        for i, df in enumerate(dfs):
            cell = series[key].get(df)
            if cell is None:
                continue
            x, y = x_at(i), y_at(100 * cell.mean_acc)
            pts.append(f"{x:.1f},{y:.1f}")
            if cell.stderr > 0:
                y0 = y_at(100 * (cell.mean_acc + cell.stderr))
                y1 = y_at(100 * (cell.mean_acc - cell.stderr))
                out.append(
                    f'<line x1="{x:.1f}" y1="{y0:.1f}" x2="{x:.1f}" y2="{y1:.1f}" '
                    f'stroke="{color}" stroke-width="1"/>'
                )
        out.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="2" '
            f'points="{" ".join(pts)}"/>'
        )
        label = f"{method} c={c} d={d}" if multi else method
        ly = top + 14 + 16 * si
        out.append(
            f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" '
            f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>'
        )
        out.append(
            f'<text x="{left + pw + 36}" y="{ly}" font-family="sans-serif" '
            f'font-size="11">{escape(label)}</text>'
        )
    out.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n")
    return path


def _viridis(t: float) -> str:
    stops = [(68, 1, 84), (33, 145, 140), (253, 231, 37)]
    t = min(max(t, 0.0), 1.0)
    pos = t * (len(stops) - 1)
    i = min(int(pos), len(stops) - 2)
    frac = pos - i
    rgb = [round(a + frac * (b - a)) for a, b in zip(stops[i], stops[i + 1])]
    return f"rgb({rgb[0]},{rgb[1]},{rgb[2]})"


def heatmap_svg(
    matrix: np.ndarray,
    path: str | Path,
    title: str = "",
    log_scale: bool = False,
    cell_px: int = 12,
) -> Path:
    """Matrix heatmap as an SVG grid of rects, min-max normalized (optionally
    on log values, useful for attention scores spanning decades)."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"need a nonempty 2-d matrix, got shape {m.shape}")
    vals = np.log(m + 1e-12) if log_scale else m
    lo, hi = float(vals.min()), float(vals.max())
    span = hi - lo if hi > lo else 1.0
    rows, cols = m.shape
    top = 24 if title else 4
    width, height = cols * cell_px + 8, rows * cell_px + top + 4
    out = _svg_header(width, height, title)
    for i in range(rows):
        for j in range(cols):
            t = (float(vals[i, j]) - lo) / span
            out.append(
                f'<rect x="{4 + j * cell_px}" y="{top + i * cell_px}" '
                f'width="{cell_px}" height="{cell_px}" fill="{_viridis(t)}"/>'
            )
    out.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n")
    return path


def emit_report(
    report: EvalReport,
    out_dir: str | Path,
    stem: str = "report",
    formats: tuple[str, ...] = ("csv", "json", "svg"),
) -> list[Path]:
    """Write the selected renderings of one report into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        if fmt == "csv":
            written.append(emit_csv(report, out_dir / f"{stem}.csv"))
        elif fmt == "json":
            written.append(emit_json(report, out_dir / f"{stem}.json"))
        elif fmt == "svg":
            written.append(accuracy_curve_svg(report, out_dir / f"{stem}.svg"))
        else:
            raise ValueError(f"unknown report format {fmt!r}")
    return written
