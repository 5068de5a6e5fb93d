"""Report rendering: reads a run's JSON-lines artifacts and writes PNG
figures plus a delimited summary next to them."""
from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _read_jsonl(path) -> list[dict]:
    if not os.path.exists(path):
        return []
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _plot_trace(ax, rows: list[dict], xkey: str, title: str):
    xs = [r[xkey] for r in rows]
    ax.plot(xs, [r["loss_feat"] for r in rows], label="feature head", lw=0.8)
    ax.plot(xs, [r["loss_adj"] for r in rows], label="adjacency head", lw=0.8)
    ax.set_yscale("log")
    ax.set_xlabel(xkey)
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend(fontsize=8)


def render_report(out_dir) -> list[str]:
    """Render loss and F1 figures plus summary.csv from run artifacts."""
    written: list[str] = []
    score_rows = _read_jsonl(os.path.join(out_dir, "score_trace.jsonl"))
    guidance_rows = _read_jsonl(os.path.join(out_dir, "guidance_trace.jsonl"))
    metric_rows = _read_jsonl(os.path.join(out_dir, "metrics.jsonl"))
    if not (score_rows or guidance_rows or metric_rows):
        raise FileNotFoundError(f"no run artifacts found under {out_dir}")

    if score_rows or guidance_rows:
        ncols = (1 if score_rows else 0) + (1 if guidance_rows else 0)
        fig, axes = plt.subplots(1, ncols, figsize=(5 * ncols, 3.2))
        axes = [axes] if ncols == 1 else list(axes)
        if score_rows:
            _plot_trace(axes.pop(0), score_rows, "step", "denoising training")
        if guidance_rows:
            _plot_trace(axes.pop(0), guidance_rows, "epoch", "guidance training")
        fig.tight_layout()
        path = os.path.join(out_dir, "loss_curves.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    epoch_rows = [r for r in metric_rows if "epoch" in r]
    summary = next((r for r in metric_rows if "mi_mean" in r), None)
    if epoch_rows:
        fig, ax = plt.subplots(figsize=(5.5, 3.4))
        rounds = sorted({r["round"] for r in epoch_rows})
        for rd in rounds:
            rows = [r for r in epoch_rows if r["round"] == rd]
            ax.plot([r["epoch"] for r in rows], [r["mi_f1"] for r in rows],
                    lw=0.9, label=f"round {rd} micro")
            ax.plot([r["epoch"] for r in rows], [r["ma_f1"] for r in rows],
                    lw=0.9, ls="--", label=f"round {rd} macro")
        ax.set_xlabel("epoch")
        ax.set_ylabel("F1")
        ax.set_ylim(0.0, 1.0)
        ax.set_title("target F1 over training")
        if len(rounds) <= 3:
            ax.legend(fontsize=7)
        fig.tight_layout()
        path = os.path.join(out_dir, "f1_curves.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

        path = os.path.join(out_dir, "summary.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "best_mi_f1", "best_ma_f1",
                             "last_mi_f1", "last_ma_f1"])
            for rd in rounds:
                rows = [r for r in epoch_rows if r["round"] == rd]
                writer.writerow([rd,
                                 max(r["mi_f1"] for r in rows),
                                 max(r["ma_f1"] for r in rows),
                                 rows[-1]["mi_f1"], rows[-1]["ma_f1"]])
            if summary:
                writer.writerow(["mean", summary["mi_mean"], summary["ma_mean"],
                                 "", ""])
                writer.writerow(["std", summary["mi_std"], summary["ma_std"],
                                 "", ""])
        written.append(path)
    return written
