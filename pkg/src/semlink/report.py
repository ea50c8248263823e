"""Result tables and companion figures.

CSV is the reproducibility contract: comma separated, one header row, LF line
endings, '.' decimal point, floats through str() so the shortest round-trip
repr lands in the file. Figures are a convenience rendering of the same
numbers written next to each table; nothing reads them back, and they carry
no information the CSV does not.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

EVAL_COLUMNS = ("channel", "snr_db", "accuracy", "half_width",
                "mean_sum_k", "mean_bcr", "n")
ALLOC_TOKEN_COLUMNS = ("snr_db", "token", "mean_k")
ALLOC_HIST_COLUMNS = ("snr_db", "k", "count", "share")
MANIFEST_COLUMNS = ("split", "task_id", "class_id", "label", "sample_seed",
                    "candidates")


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return str(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def render_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    Path(path).write_text(render_csv(header, rows), encoding="utf-8")


def eval_rows(results: list[dict]) -> list[tuple]:
    return [(r["channel"], r["snr_db"], r["accuracy"], r["half_width"],
             r["mean_sum_k"], r["mean_bcr"], r["n"]) for r in results]


def alloc_token_rows(profile: list[dict]) -> list[tuple]:
    rows = []
    for entry in profile:
        for tok, mk in enumerate(entry["mean_k_per_token"]):
            rows.append((entry["snr_db"], tok, float(mk)))
    return rows


def alloc_hist_rows(profile: list[dict]) -> list[tuple]:
    rows = []
    for entry in profile:
        total = sum(entry["hist"].values())
        for k in sorted(entry["hist"]):
            count = entry["hist"][k]
            rows.append((entry["snr_db"], k, count, count / max(total, 1)))
    return rows


def manifest_rows(split: str, tasks) -> list[tuple]:
    # candidates are pipe-joined so the line needs no quoting and stays
    # byte-stable across csv module versions
    return [(split, t.task_id, t.class_id, t.label, t.sample_seed,
             "|".join(str(c) for c in t.candidates)) for t in tasks]


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def save_eval_figure(path, results: list[dict], chance: float | None = None) -> None:
    """Accuracy vs SNR with 95% half-width bars, one line per channel kind."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    by_channel: dict[str, list[dict]] = {}
    for r in results:
        by_channel.setdefault(r["channel"], []).append(r)
    for kind, rows in by_channel.items():
        rows = sorted(rows, key=lambda r: r["snr_db"])
        ax.errorbar([r["snr_db"] for r in rows], [r["accuracy"] for r in rows],
                    yerr=[r["half_width"] for r in rows],
                    marker="o", capsize=3, label=kind)
    if chance is not None:
        ax.axhline(chance, color="gray", ls=":", lw=1, label="chance")
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_alloc_figure(path, profile: list[dict]) -> None:
    """Per-token mean retained channels and the overall rate histogram."""
    plt = _plt()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    for entry in profile:
        mk = np.asarray(entry["mean_k_per_token"])
        ax1.plot(np.arange(len(mk)), mk, marker=".",
                 label=f"{entry['snr_db']:g} dB")
    ax1.set_xlabel("video token")
    ax1.set_ylabel("mean retained channels k")
    ax1.grid(alpha=0.3)
    ax1.legend(title="SNR")

    ks = sorted({k for e in profile for k in e["hist"]})
    width = 0.8 / max(len(profile), 1)
    for j, entry in enumerate(profile):
        total = max(sum(entry["hist"].values()), 1)
        shares = [entry["hist"].get(k, 0) / total for k in ks]
        ax2.bar(np.arange(len(ks)) + j * width, shares, width,
                label=f"{entry['snr_db']:g} dB")
    ax2.set_xticks(np.arange(len(ks)) + 0.4 - width / 2, [str(k) for k in ks])
    ax2.set_xlabel("retained channels k")
    ax2.set_ylabel("share of tokens")
    ax2.grid(alpha=0.3, axis="y")
    ax2.legend(title="SNR")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_training_figure(path, rows: list[dict]) -> None:
    """Loss and accuracy across the curriculum; stage changes marked."""
    plt = _plt()
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    xs = np.arange(len(rows))
    loss = [float(r["loss_total"]) for r in rows]
    acc = [float(r["accuracy"]) for r in rows]
    ax1.plot(xs, loss, marker=".")
    ax1.set_ylabel("training loss")
    ax1.grid(alpha=0.3)
    ax2.plot(xs, acc, marker=".", color="tab:green")
    ax2.set_ylabel("training accuracy")
    ax2.set_xlabel("epoch (all stages, in order)")
    ax2.set_ylim(0.0, 1.0)
    ax2.grid(alpha=0.3)
    prev = None
    for x, r in zip(xs, rows):
        if r["stage"] != prev:
            for ax in (ax1, ax2):
                ax.axvline(x - 0.5, color="gray", lw=0.8, ls="--")
            ax1.text(x, max(loss), str(r["stage"]), fontsize=8, color="gray")
            prev = r["stage"]
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
