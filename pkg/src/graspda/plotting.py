"""Static SVG plots of training curves and ablation results.

Output is byte-deterministic for a given input: fixed SVG id salt, no date
metadata.  The plotted data is embedded as an XML comment.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .trainer import COMPONENTS  # noqa: E402

_RC = {"svg.hashsalt": "graspda", "svg.fonttype": "path", "path.simplify": False}


def read_table(path) -> tuple[list[str], list[dict]]:
    text = Path(path).read_text()
    reader = csv.DictReader(io.StringIO(text))
    rows = list(reader)
    if reader.fieldnames is None:
        raise ValueError("empty CSV")
    return list(reader.fieldnames), rows


def _smooth(y: np.ndarray, window: int) -> np.ndarray:
    if window <= 1 or len(y) < window:
        return y
    k = np.ones(window) / window
    return np.convolve(y, k, mode="valid")


def _curves(fig, rows: list[dict], axes) -> None:
    steps = np.array([int(r["step"]) for r in rows])
    window = max(1, len(rows) // 50)
    ax_loss, ax_acc = axes
    for name in ("L_grasp", "total") + tuple(c for c in COMPONENTS if c != "L_grasp"):
        y = np.array([float(r[name]) for r in rows])
        if not np.any(y):
            continue
        ys = _smooth(y, window)
        ax_loss.plot(steps[len(steps) - len(ys):], ys, label=name, linewidth=1)
    ax_loss.set_xlabel("step")
    ax_loss.set_ylabel("loss (moving average)")
    ax_loss.set_yscale("symlog", linthresh=1e-2)
    ax_loss.legend(fontsize=7, ncol=2)
    for name in ("domain_acc_global", "domain_acc_local"):
        y = np.array([float(r[name]) for r in rows])
        if not np.any(y):
            continue
        ys = _smooth(y, window)
        ax_acc.plot(steps[len(steps) - len(ys):], ys, label=name, linewidth=1)
    ax_acc.axhline(0.5, color="grey", linestyle=":", linewidth=0.8)
    ax_acc.set_ylim(0, 1)
    ax_acc.set_xlabel("step")
    ax_acc.set_ylabel("domain accuracy")
    if ax_acc.get_legend_handles_labels()[0]:
        ax_acc.legend(fontsize=7)


def _bars(ax, rows: list[dict]) -> None:
    names = list(dict.fromkeys(r["variant"] for r in rows))
    aps = [np.array([float(r["toy_ap"]) for r in rows if r["variant"] == n]) for n in names]
    x = np.arange(len(names))
    med = [float(np.median(a)) for a in aps]
    lo = [m - a.min() for m, a in zip(med, aps)]
    hi = [a.max() - m for m, a in zip(med, aps)]
    ax.bar(x, med, yerr=[lo, hi], capsize=3, color="#4c72b0")
    for i, a in enumerate(aps):
        ax.plot(np.full(len(a), x[i]), a, "k.", markersize=3)
    ax.set_xticks(x, names, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("target toy-AP (median, min-max)")


def _table_comment(title: str, header: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    w.writerows(rows)
    body = buf.getvalue().replace("--", "- -")
    return f"<!-- {title}\n{body}-->\n"


def render_svg(metrics: tuple[list[str], list[dict]] | None = None,
               ablation: tuple[list[str], list[dict]] | None = None) -> str:
    """SVG text for training curves, an ablation bar chart, or both."""
    panels = (2 if metrics else 0) + (1 if ablation else 0)
    if panels == 0:
        raise ValueError("nothing to plot")
    comments = []
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, panels, figsize=(4.5 * panels, 3.6))
        axes = np.atleast_1d(axes)
        if metrics:
            _curves(fig, metrics[1], axes[:2])
            comments.append(_table_comment("metrics", *metrics))
        if ablation:
            _bars(axes[-1], ablation[1])
            comments.append(_table_comment("ablation", *ablation))
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    svg = buf.getvalue()
    cut = svg.index("<svg")
    return svg[:cut] + "".join(comments) + svg[cut:]


def plot_file(metrics_csv, out_svg, ablation=None) -> Path:
    """Plot a metrics CSV (curves) or ablation results CSV (bars); optional extra ablation panel."""
    header, rows = read_table(metrics_csv)
    if "variant" in header:
        tables = {"ablation": (header, rows)}
    elif "step" in header:
        tables = {"metrics": (header, rows)}
    else:
        raise ValueError("CSV is neither a metrics log nor an ablation table")
    if ablation is not None:
        tables["ablation"] = read_table(ablation)
    out = Path(out_svg)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_svg(tables.get("metrics"), tables.get("ablation")))
    return out
