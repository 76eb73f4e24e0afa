"""Figure rendering for run reports.

CSV files are the canonical record; these helpers draw PNG companions
next to them so a run directory can be skimmed without a notebook.
All functions return the path of the image they wrote.
"""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def _read_rows(csv_path: Path) -> list[dict]:
    with open(csv_path, newline="") as fh:
        return list(csv.DictReader(fh))


def _column(rows: list[dict], name: str) -> list[float | None]:
    return [float(r[name]) if r[name] != "" else None for r in rows]


def render_training_curves(csv_path: str | Path, out_path: str | Path | None = None) -> Path:
    """Draw reward, safety events, losses, and predictor loss per episode."""
    csv_path = Path(csv_path)
    out_path = Path(out_path) if out_path else csv_path.with_suffix(".png")
    rows = _read_rows(csv_path)
    if not rows:
        raise ValueError(f"no rows in {csv_path}")
    ep = _column(rows, "episode")

    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    ax = axes[0, 0]
    ax.plot(ep, _column(rows, "reward_mean"), color="tab:blue")
    ax.set_title("mean step reward")
    ax.set_xlabel("episode")

    ax = axes[0, 1]
    ax.plot(ep, _column(rows, "collisions_total"), color="tab:red", label="collisions")
    ax.plot(ep, _column(rows, "stalls"), color="tab:orange", label="stalls")
    ax.set_title("safety events per episode")
    ax.set_xlabel("episode")
    ax.legend()

    ax = axes[1, 0]
    # loss columns are blank before the first update; matplotlib skips None
    ax.plot(ep, _column(rows, "critic_loss"), color="tab:green", label="critic")
    ax.plot(ep, _column(rows, "actor_loss"), color="tab:purple", label="actor")
    ax.set_title("sac losses")
    ax.set_xlabel("episode")
    ax.legend()

    ax = axes[1, 1]
    ax.plot(ep, _column(rows, "predictor_loss"), color="tab:brown")
    ax.set_title("risk predictor loss")
    ax.set_xlabel("episode")

    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path


def render_metrics_comparison(csv_path: str | Path, out_path: str | Path | None = None) -> Path:
    """Bar chart of per-variant mean AWT and AQL from a metrics CSV."""
    csv_path = Path(csv_path)
    out_path = Path(out_path) if out_path else csv_path.with_suffix(".png")
    rows = _read_rows(csv_path)
    if not rows:
        raise ValueError(f"no rows in {csv_path}")
    groups: dict[str, dict[str, list[float]]] = defaultdict(lambda: {"awt": [], "aql": []})
    for r in rows:
        groups[r["variant"]]["awt"].append(float(r["awt"]))
        groups[r["variant"]]["aql"].append(float(r["aql"]))
    names = list(groups)
    awt = [sum(groups[n]["awt"]) / len(groups[n]["awt"]) for n in names]
    aql = [sum(groups[n]["aql"]) / len(groups[n]["aql"]) for n in names]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.bar(names, awt, color="tab:blue")
    ax1.set_title("mean AWT (s)")
    ax2.bar(names, aql, color="tab:orange")
    ax2.set_title("mean AQL (vehicles)")
    for ax in (ax1, ax2):
        ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path


def render_attention_heatmap(
    raw: "list[list[float]]", biased: "list[list[float]]", out_path: str | Path
) -> Path:
    """Side-by-side score heatmaps for one attention head."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    for ax, mat, title in ((ax1, raw, "raw scores"), (ax2, biased, "biased scores")):
        im = ax.imshow(mat, aspect="auto", cmap="viridis")
        ax.set_title(title)
        ax.set_xlabel("key position")
        ax.set_ylabel("query position")
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return Path(out_path)
