"""Static SVG plots. Every figure is derived from data already on disk
as CSV; plotting failures never carry information the CSVs do not."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STATE_LABELS = ("s [m]", "y [m]", "theta [rad]", "delta [rad]", "v [m/s]", "alpha [m/s^2]")


def plot_model_verification(times: np.ndarray, traces: dict[str, np.ndarray], path: Path) -> None:
    """State traces of the verification rollouts, one panel per state."""
    fig, axes = plt.subplots(3, 2, figsize=(10, 8), sharex=True)
    styles = {"fine": "-", "euler": "--", "ltv": "-."}
    for idx, ax in enumerate(axes.flat):
        for name, states in traces.items():
            ax.plot(times, states[:, idx], styles.get(name, "-"), label=name, lw=1.2)
        ax.set_ylabel(STATE_LABELS[idx])
        ax.grid(alpha=0.3)
    axes[0, 0].legend(loc="best", fontsize=8)
    for ax in axes[-1]:
        ax.set_xlabel("t [s]")
    fig.suptitle("model verification rollouts")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_trajectory_compare(
    ref_states: np.ndarray,
    nominal_states: np.ndarray,
    path: Path,
    true_states: np.ndarray | None = None,
) -> None:
    """Reference vs optimized path in the s-y plane plus speed profiles."""
    fig, (ax_xy, ax_v) = plt.subplots(1, 2, figsize=(11, 4.5))
    ax_xy.plot(ref_states[:, 0], ref_states[:, 1], "o-", ms=2.5, lw=1.0, label="reference")
    ax_xy.plot(nominal_states[:, 0], nominal_states[:, 1], "-", lw=1.4, label="nominal")
    if true_states is not None:
        ax_xy.plot(true_states[:, 0], true_states[:, 1], "-.", lw=1.0, label="closed loop")
    ax_xy.set_xlabel("s [m]")
    ax_xy.set_ylabel("y [m]")
    ax_xy.legend()
    ax_xy.grid(alpha=0.3)
    ax_v.plot(ref_states[:, 3], "o-", ms=2.5, lw=1.0, label="reference v")
    ax_v.plot(nominal_states[:, 4], "-", lw=1.4, label="nominal v")
    ax_v.set_xlabel("sample")
    ax_v.set_ylabel("v [m/s]")
    ax_v.legend()
    ax_v.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_inputs(series: dict[str, tuple[np.ndarray, np.ndarray]], path: Path) -> None:
    """Input traces: each entry maps a label to (times, (n, 2) inputs)."""
    fig, (ax_d, ax_a) = plt.subplots(2, 1, figsize=(9, 6), sharex=True)
    styles = ["--", "-", "-."]
    for style, (label, (times, u)) in zip(styles * 3, series.items()):
        ax_d.plot(times, u[:, 0], style, lw=1.2, label=label)
        ax_a.plot(times, u[:, 1], style, lw=1.2, label=label)
    ax_d.set_ylabel("delta_in [rad]")
    ax_a.set_ylabel("alpha_in [m/s^2]")
    ax_a.set_xlabel("t [s]")
    for ax in (ax_d, ax_a):
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_tracking_errors(times: np.ndarray, errors: np.ndarray, path: Path) -> None:
    """Tracking error vs the nominal for the s, y, theta, v channels."""
    labels = ("s error [m]", "y error [m]", "theta error [rad]", "v error [m/s]")
    fig, axes = plt.subplots(4, 1, figsize=(9, 8), sharex=True)
    for ax, label, col in zip(axes, labels, errors.T):
        ax.plot(times, col, lw=1.0)
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    axes[-1].set_xlabel("t [s]")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
