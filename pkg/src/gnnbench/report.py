"""Best-epoch summary tables and per-epoch training curves."""

from __future__ import annotations

import csv
import io
import math
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import AggregateReport, RunSeries, aggregate  # noqa: E402
from .models import ARCHITECTURES, DISPLAY_NAMES  # noqa: E402

CURVE_METRICS = ("loss", "bacc", "recall", "auc", "accuracy", "precision")
REPORT_HEADER = ("model", "best_epoch", "bacc_mean", "bacc_std", "summary", "best")

# tab10, fixed per architecture so colors never depend on which models ran
PALETTE = dict(zip(ARCHITECTURES, (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f",
)))
WIDTH_PX, HEIGHT_PX = 1000, 600


def fixed3(x: float) -> str:
    """Three decimals, ties rounded away from zero on the shortest decimal repr."""
    if math.isnan(x):
        return "nan"
    return str(Decimal(repr(float(x))).quantize(Decimal("0.001"), rounding=ROUND_HALF_UP))


def summary_cell(mean: float, std: float) -> str:
    return f"{fixed3(mean)} ± {fixed3(std)}"


def format_row(epoch: int, mean: float, std: float) -> str:
    return f"{epoch}, {summary_cell(mean, std)}"


def _model_order(names):
    rank = {m: k for k, m in enumerate(ARCHITECTURES)}
    return sorted(names, key=lambda m: (rank.get(m, len(rank)), m))


def report_rows(agg: AggregateReport) -> list[dict]:
    best = agg.best_model()
    rows = []
    for model in _model_order(agg.models):
        m = agg.models[model]
        rows.append({
            "model": model,
            "best_epoch": m.best_epoch,
            "bacc_mean": m.best_mean_bacc,
            "bacc_std": m.best_std_bacc,
            "summary": format_row(m.best_epoch, m.best_mean_bacc, m.best_std_bacc),
            "best": model == best,
        })
    return rows


def write_report(series: list[RunSeries], out_dir) -> AggregateReport:
    """Write ``report.csv`` and ``report.txt``; the top model is flagged."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    agg = aggregate(series)
    rows = report_rows(agg)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for r in rows:
        w.writerow([r["model"], r["best_epoch"], fixed3(r["bacc_mean"]), fixed3(r["bacc_std"]),
                    r["summary"], int(r["best"])])
    (out / "report.csv").write_text(buf.getvalue(), encoding="utf-8")

    names = [DISPLAY_NAMES.get(r["model"], r["model"]) for r in rows]
    width = max(len("model"), *(len(n) for n in names))
    lines = [f"{'model':<{width}}  epoch, mean ± std", "-" * (width + 24)]
    for name, r in zip(names, rows):
        flag = "  *" if r["best"] else ""
        lines.append(f"{name:<{width}}  {r['summary']}{flag}")
    lines.append("")
    lines.append("* highest mean balanced accuracy")
    (out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return agg


def curve_bands(agg: AggregateReport, metric: str) -> dict[str, tuple[np.ndarray, ...]]:
    """Per model: (epochs, mean, lower, upper) with the band at mean ± stderr."""
    bands = {}
    for model in _model_order(agg.models):
        track = agg.models[model].tracks[metric]
        half = np.nan_to_num(track.stderr, nan=0.0)
        epochs = np.arange(1, len(track.mean) + 1)
        bands[model] = (epochs, track.mean, track.mean - half, track.mean + half)
    return bands


def _plot_metric(agg: AggregateReport, metric: str, path: Path):
    rc = {"svg.hashsalt": "gnnbench", "svg.fonttype": "path", "path.simplify": False,
          "font.size": 12}
    with plt.rc_context(rc):
        fig, ax = plt.subplots(figsize=(WIDTH_PX / 72, HEIGHT_PX / 72), dpi=72)
        for model, (x, mean, lo, hi) in curve_bands(agg, metric).items():
            color = PALETTE.get(model, "#000000")
            band = ax.fill_between(x, lo, hi, color=color, alpha=0.2, linewidth=0)
            band.set_gid(f"band-{model}")
            (line,) = ax.plot(x, mean, color=color, linewidth=1.5,
                              label=DISPLAY_NAMES.get(model, model))
            line.set_gid(f"line-{model}")
        ax.set_xlabel("epoch")
        ax.set_ylabel(metric)
        ax.legend(loc="best", frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def write_curves(series: list[RunSeries], out_dir, agg: AggregateReport | None = None):
    """One SVG per metric under ``curves/`` plus ``curves/aggregate.csv``."""
    curves = Path(out_dir) / "curves"
    curves.mkdir(parents=True, exist_ok=True)
    agg = agg or aggregate(series)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("model", "epoch", "metric", "mean", "std", "stderr"))

    def cell(v):
        return "" if math.isnan(v) else repr(float(v))

    for model in _model_order(agg.models):
        tracks = agg.models[model].tracks
        n_epochs = len(tracks["bacc"].mean)
        for e in range(n_epochs):
            for metric in CURVE_METRICS:
                t = tracks[metric]
                w.writerow([model, e + 1, metric, cell(t.mean[e]), cell(t.std[e]), cell(t.stderr[e])])
    (curves / "aggregate.csv").write_text(buf.getvalue(), encoding="utf-8")
    for metric in CURVE_METRICS:
        _plot_metric(agg, metric, curves / f"{metric}.svg")
    return agg
