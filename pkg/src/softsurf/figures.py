"""Matplotlib report figures, rendered straight to files (Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_training_curves(history: list[dict], path) -> None:
    """Train/validation loss and validation error curves over epochs."""
    epochs = [h["epoch"] for h in history]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    axes[0].plot(epochs, [h["train_loss"] for h in history], label="train loss")
    axes[0].plot(epochs, [h["val_loss"] for h in history], label="val loss")
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("total loss")
    axes[0].set_yscale("log")
    axes[0].legend()
    axes[1].plot(epochs, [h["val_mean_ld"] for h in history], label="val mean $L_d$ [mm]")
    axes[1].plot(
        epochs, [h["val_force_abs_error"] for h in history], label="val |force err| [N]"
    )
    axes[1].set_xlabel("epoch")
    axes[1].set_yscale("log")
    axes[1].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_metric_histograms(records: list[dict], path) -> None:
    """Distributions of the per-sample evaluation errors."""
    fields = [
        ("mean_ld", "mean $L_d$ [mm]"),
        ("max_ld", "max $L_d$ [mm]"),
        ("force_abs_error", "|force error| [N]"),
    ]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    for ax, (key, label) in zip(axes, fields):
        vals = [r[key] for r in records]
        ax.hist(vals, bins=min(40, max(5, len(vals) // 5)), color="#4878d0")
        ax.set_xlabel(label)
        ax.set_ylabel("samples")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_bench_chart(report: dict, path) -> None:
    """Simulation vs inference wall times (log scale, error bars)."""
    labels, means, stds = [], [], []
    for key, label in [
        ("simulate_step", "MSM force step"),
        ("predict_full", f"predict N={report.get('n_points_full', '?')}"),
        ("predict_sparse", f"predict N={report.get('n_points_sparse', '?')}"),
    ]:
        if key + "_mean_s" in report:
            labels.append(label)
            means.append(report[key + "_mean_s"])
            stds.append(report[key + "_std_s"])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(labels, means, yerr=stds, color=["#d65f5f", "#4878d0", "#6acc65"][: len(labels)])
    ax.set_ylabel("wall time [s]")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_deformation_view(
    x: np.ndarray, y_pred: np.ndarray, path, y_true: np.ndarray | None = None
) -> None:
    """3-D scatter of the input cloud and the predicted (and true) surfaces."""
    fig = plt.figure(figsize=(7, 6))
    ax = fig.add_subplot(projection="3d")
    ax.scatter(*x.T, s=6, c="#999999", label="input", alpha=0.6)
    ax.scatter(*y_pred.T, s=8, c="#d65f5f", label="predicted", alpha=0.8)
    if y_true is not None:
        ax.scatter(*y_true.T, s=8, c="#4878d0", label="target", alpha=0.5)
    ax.set_xlabel("x [mm]")
    ax.set_ylabel("y [mm]")
    ax.set_zlabel("z [mm]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
