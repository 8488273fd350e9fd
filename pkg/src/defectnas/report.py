"""Render search/retrain logs into curve images and a summary document."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .exceptions import DataError
from .fileio import atomic_write_text, read_jsonl


def render_report(log_path, out_dir, metrics_path=None):
    """Write loss/alive-count curves plus summary.json; returns the summary."""
    records = read_jsonl(log_path)
    if not records:
        raise DataError(f"log file {log_path} holds no records")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    splits = sorted({r["split"] for r in records})
    fig, ax = plt.subplots(figsize=(7, 4))
    for split in splits:
        rows = [r for r in records if r["split"] == split]
        steps = range(1, len(rows) + 1)
        ax.plot(steps, [r["loss_out"] for r in rows], label=f"{split} loss_out")
        ax.plot(steps, [r["loss_bra"] for r in rows], linestyle="--",
                label=f"{split} loss_bra")
    for boundary in _stage_boundaries(records):
        ax.axvline(boundary, color="gray", alpha=0.3, linewidth=0.8)
    ax.set_xlabel("epoch record")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_dir / "loss_curves.png", dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 3))
    rows = [r for r in records if r["split"] == splits[0]]
    steps = range(1, len(rows) + 1)
    ax.step(steps, [r["alive_min"] for r in rows], label="alive min")
    ax.step(steps, [r["alive_max"] for r in rows], label="alive max")
    ax.set_xlabel("epoch record")
    ax.set_ylabel("alive ops per edge")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_dir / "alive_counts.png", dpi=120)
    plt.close(fig)

    last = {split: [r for r in records if r["split"] == split][-1]
            for split in splits}
    summary = {
        "records": len(records),
        "stages": sorted({r["stage"] for r in records}),
        "final": {split: {"loss_out": row["loss_out"], "loss_bra": row["loss_bra"]}
                  for split, row in last.items()},
        "curves": ["loss_curves.png", "alive_counts.png"],
    }
    if metrics_path is not None:
        summary["metrics"] = json.loads(Path(metrics_path).read_text())
    atomic_write_text(out_dir / "summary.json",
                      json.dumps(summary, indent=2) + "\n")
    return summary


def _stage_boundaries(records):
    split = records[0]["split"]
    rows = [r for r in records if r["split"] == split]
    boundaries = []
    for pos, record in enumerate(rows, start=1):
        if pos > 1 and record["stage"] != rows[pos - 2]["stage"]:
            boundaries.append(pos)
    return boundaries
