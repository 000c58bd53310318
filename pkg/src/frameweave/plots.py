"""Matplotlib figures rendered alongside the CSV reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def save_curve_figure(rows, path) -> None:
    """Learning curve: paper-scale MSE per epoch for each split, log scale."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for split, color in (("train", "tab:blue"), ("val", "tab:orange")):
        epochs = [r.epoch for r in rows if r.split == split]
        values = [r.mse_paper for r in rows if r.split == split]
        if epochs:
            ax.plot(epochs, values, label=split, color=color, linewidth=1.5)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE (0-255 scale)")
    ax.set_title("Learning curve")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_eval_figure(per_triplet_mse_paper, aggregate_mse_paper, path) -> None:
    """Per-triplet paper-scale MSE with the aggregate marked."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    xs = range(len(per_triplet_mse_paper))
    ax.plot(xs, per_triplet_mse_paper, "o-", markersize=3, linewidth=0.8, label="per triplet")
    ax.axhline(aggregate_mse_paper, color="tab:red", linestyle="--", linewidth=1.2,
               label=f"aggregate = {aggregate_mse_paper:.2f}")
    ax.set_xlabel("triplet")
    ax.set_ylabel("MSE (0-255 scale)")
    ax.set_title("Evaluation MSE per triplet")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
