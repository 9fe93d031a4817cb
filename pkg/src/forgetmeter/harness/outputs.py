"""CSV, JSON and SVG artefacts for a set of run records.

Plots are plain SVG written by hand so that no plotting library is needed;
each file embeds its data as a comment.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from ..errors import PreconditionError

CSV_COLUMNS = ("run_id", "seed", "step", "metric", "value")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
           "#7f7f7f", "#bcbd22")


def _fmt(v: float) -> str:
    return repr(float(v))


def write_metrics_csv(records, path: Path) -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            for name in sorted(r.metrics):
                for step, value in r.metrics[name]:
                    w.writerow((r.run_id, r.seed, step, name, _fmt(value)))
                    n += 1
    return n


def read_metrics_csv(path) -> dict:
    """{run_id: {metric: [(step, value)]}} plus seeds, from ``metrics.csv``."""
    runs: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            runs.setdefault(row["run_id"], {}).setdefault(row["metric"], []).append(
                (int(row["step"]), float(row["value"])))
    return runs


def _json_safe(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else str(obj)
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return _json_safe(obj.item())
    return obj


def summarize(records, config=None, sweep=None, verdicts=None, extra=None) -> dict:
    runs = []
    for r in records:
        g = r.gammas()
        runs.append({
            "run_id": r.run_id, "seed": r.seed, "setting": r.setting, "config_hash": r.config_hash,
            "complete": r.complete, "error": r.error, "params": r.params, "boundary": r.boundary,
            "efficiency": r.efficiency, "efficiency_infinite": r.efficiency_infinite,
            "gamma_bar": float(np.mean(g)) if len(g) else None,
            "gamma_cv": float(np.std(g) / np.mean(g)) if len(g) and np.mean(g) > 0 else None,
            "measurements": len(g),
        })
    out = {"config": config.to_dict() if config is not None else None, "runs": runs}
    if sweep is not None:
        out["sweep"] = {"axis": sweep.axis, "table": sweep.table}
    if verdicts is not None:
        out["verdicts"] = verdicts
    if extra:
        out.update(extra)
    return _json_safe(out)


# -- SVG ---------------------------------------------------------------------------


class _Axes:
    def __init__(self, x0, y0, w, h, xlim, ylim, log_y=False):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.log_y = log_y
        self.xlim = xlim if xlim[1] > xlim[0] else (xlim[0] - 0.5, xlim[0] + 0.5)
        ylim = (math.log10(ylim[0]), math.log10(ylim[1])) if log_y else ylim
        self.ylim = ylim if ylim[1] > ylim[0] else (ylim[0] - 0.5, ylim[0] + 0.5)

    def px(self, x):
        return self.x0 + (x - self.xlim[0]) / (self.xlim[1] - self.xlim[0]) * self.w

    def py(self, y):
        if self.log_y:
            y = math.log10(y)
        return self.y0 + self.h - (y - self.ylim[0]) / (self.ylim[1] - self.ylim[0]) * self.h


def _ticks(lo, hi, n=5):
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def line_plot(series: dict, title: str, xlabel: str, ylabel: str, log_y: bool = False, width=640, height=400) -> str:
    """``series``: label -> (xs, ys). Non-finite points are skipped."""
    clean = {}
    for label, (xs, ys) in series.items():
        pts = [(float(x), float(y)) for x, y in zip(xs, ys) if math.isfinite(y) and (not log_y or y > 0)]
        if pts:
            clean[label] = pts
    allx = [p[0] for pts in clean.values() for p in pts] or [0.0, 1.0]
    ally = [p[1] for pts in clean.values() for p in pts] or [0.0, 1.0]
    ylo = min(ally) if log_y else min(0.0, min(ally))
    ax = _Axes(70, 40, width - 230, height - 100, (min(allx), max(allx)), (ylo, max(ally)), log_y)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
           f"<!-- data: {escape(json.dumps({k: v for k, v in clean.items()}))} -->",
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2 - 100}" y="22" font-size="14">{escape(title)}</text>',
           f'<rect x="{ax.x0}" y="{ax.y0}" width="{ax.w}" height="{ax.h}" fill="none" stroke="#444"/>']
    for xv in _ticks(*ax.xlim):
        out.append(f'<text x="{ax.px(xv):.1f}" y="{ax.y0 + ax.h + 16}" text-anchor="middle">{xv:.3g}</text>')
    for yv in _ticks(*ax.ylim):
        label = 10**yv if log_y else yv
        ypx = ax.y0 + ax.h - (yv - ax.ylim[0]) / (ax.ylim[1] - ax.ylim[0]) * ax.h
        out.append(f'<text x="{ax.x0 - 6}" y="{ypx + 4:.1f}" text-anchor="end">{label:.3g}</text>')
    out.append(f'<text x="{ax.x0 + ax.w / 2}" y="{height - 18}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text transform="translate(16,{ax.y0 + ax.h / 2}) rotate(-90)" text-anchor="middle">{escape(ylabel)}</text>')
    for i, (label, pts) in enumerate(clean.items()):
        colour = PALETTE[i % len(PALETTE)]
        path = " ".join(f"{ax.px(x):.1f},{ax.py(y):.1f}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{path}"/>')
        for x, y in pts:
            out.append(f'<circle cx="{ax.px(x):.1f}" cy="{ax.py(y):.1f}" r="2" fill="{colour}"/>')
        ly = ax.y0 + 14 * i + 8
        out.append(f'<rect x="{ax.x0 + ax.w + 12}" y="{ly - 8}" width="10" height="10" fill="{colour}"/>')
        out.append(f'<text x="{ax.x0 + ax.w + 26}" y="{ly + 1}">{escape(str(label))[:24]}</text>')
    out.append("</svg>")
    return "\n".join(out)


def _diverging(p: float) -> str:
    """Red (0) through white (0.5) to blue (1)."""
    p = min(max(p, 0.0), 1.0)
    if p < 0.5:
        a = p / 0.5
        r, g, b = 214 + int(a * 41), int(39 + a * 216), int(40 + a * 215)
    else:
        a = (p - 0.5) / 0.5
        r, g, b = int(255 - a * 224), int(255 - a * 136), int(255 - a * 75)
    return f"#{r:02x}{g:02x}{b:02x}"


def grid_panels(panels: dict, title: str, cell: int = 8) -> str:
    """Two side-by-side heat maps: live predictive and futures mixture."""
    ref = np.asarray(panels["reference"])
    fut = np.asarray(panels["futures"])
    n = ref.shape[0]
    size = n * cell
    width, height = 2 * size + 90, size + 70
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
           f"<!-- data: {escape(json.dumps({'t': panels['t'], 'k': panels['k']}))} -->",
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="30" y="20" font-size="14">{escape(title)}</text>']
    for j, (grid, label) in enumerate(((ref, "reference"), (fut, f"{panels['k']}-update futures"))):
        ox = 30 + j * (size + 30)
        oy = 40
        for r in range(n):
            for c in range(n):
                y = oy + (n - 1 - r) * cell
                out.append(f'<rect x="{ox + c * cell}" y="{y}" width="{cell}" height="{cell}" fill="{_diverging(grid[r, c])}"/>')
        out.append(f'<rect x="{ox}" y="{oy}" width="{size}" height="{size}" fill="none" stroke="#444"/>')
        out.append(f'<text x="{ox + size / 2}" y="{oy + size + 18}" text-anchor="middle">{label}</text>')
    out.append("</svg>")
    return "\n".join(out)


def emit_outputs(records, out_dir, *, config=None, sweep=None, verdicts=None, extra=None) -> dict:
    """Write ``metrics.csv``, ``summary.json`` and the SVG plots; returns the paths."""
    records = list(records)
    if not records:
        raise PreconditionError("no records to write")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PreconditionError(f"cannot create output directory {out}: {exc}") from exc
    paths = {"metrics": out / "metrics.csv", "summary": out / "summary.json"}
    write_metrics_csv(records, paths["metrics"])
    summary = summarize(records, config, sweep, verdicts, extra)
    paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True))
    paths.update(render_plots(records, out, sweep))
    return paths


def render_plots(records, out: Path, sweep=None) -> dict:
    paths = {}
    series = {}
    for r in records:
        g = r.gammas()
        if len(g):
            total = max(s for s, _ in r.metrics.get("train_loss", [(1, 0)])) or 1
            series[r.run_id] = (r.gamma_times() / max(total, 1), g)
    if series:
        p = out / "gamma_vs_step.svg"
        p.write_text(line_plot(series, "Propensity to forget over training", "normalised training step", "gamma"))
        paths["gamma_vs_step"] = p
    by_k = {}
    for r in records:
        ks = sorted({g["k"] for g in r.gamma_trace})
        if len(ks) > 1:
            by_k[r.run_id] = (ks, [float(np.mean(r.gammas(k))) for k in ks])
    if by_k:
        p = out / "gamma_vs_k.svg"
        p.write_text(line_plot(by_k, "Mean gamma against update count", "k", "mean gamma"))
        paths["gamma_vs_k"] = p
    if sweep is not None:
        xs = [float(v) for v in sweep.values]
        p = out / f"efficiency_vs_{sweep.axis.replace('.', '_')}.svg"
        p.write_text(line_plot({"efficiency": (xs, sweep.column("efficiency"))}, "Training efficiency",
                               sweep.axis, "1 / normalised loss area"))
        paths["efficiency"] = p
        p = out / f"gamma_vs_{sweep.axis.replace('.', '_')}.svg"
        p.write_text(line_plot({"mean gamma": (xs, sweep.column("gamma_bar"))}, "Mean forgetting", sweep.axis,
                               "mean gamma"))
        paths["gamma_sweep"] = p
    for r in records:
        if r.panels:
            p = out / f"panels_{r.run_id}.svg"
            p.write_text(grid_panels(r.panels, f"{r.run_id} at t={r.panels['t']}"))
            paths[f"panels_{r.run_id}"] = p
    return paths


def replot(src_dir) -> dict:
    """Redraw the per-run plots of an output directory from its ``metrics.csv``."""
    src = Path(src_dir)
    if not (src / "metrics.csv").exists():
        raise PreconditionError(f"{src} has no metrics.csv")
    runs = read_metrics_csv(src / "metrics.csv")
    series = {}
    for run_id, metrics in runs.items():
        gk = sorted((m for m in metrics if m.startswith("gamma_k")), key=lambda m: int(m[7:]))
        if not gk:
            continue
        pts = metrics[gk[-1]]
        total = max((s for s, _ in metrics.get("train_loss", [])), default=0) or max(s for s, _ in pts)
        series[run_id] = ([s / total for s, _ in pts], [v for _, v in pts])
    paths = {}
    if series:
        p = src / "gamma_vs_step.svg"
        p.write_text(line_plot(series, "Propensity to forget over training", "normalised training step", "gamma"))
        paths["gamma_vs_step"] = p
    return paths
