"""PNG figures for the demo and round-trip reports (headless Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import atomic_write  # noqa: E402

__all__ = ["plot_speed", "plot_ledger", "plot_density", "plot_response"]


def _save(fig, path):
    path = Path(path)
    with atomic_write(path, "wb") as fh:
        fig.savefig(fh, format="png", dpi=110)
    plt.close(fig)
    return path


def plot_speed(path, traj, reference=None, label="simulation", ref_label="reference",
               log: bool = False, title: str = ""):
    """``||v(t)||`` with an optional reference curve ``(t, values)``."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(traj.t, traj.speed(), lw=1.2, label=label)
    if reference is not None:
        ax.plot(reference[0], np.abs(reference[1]), "--", lw=1.0, label=ref_label)
    if log:
        ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("|v(t)|")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_ledger(path, traj, ledger, title: str = ""):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(traj.t, ledger.energy, label="energy")
    ax.plot(traj.t, ledger.work_ext, label="external work")
    ax.plot(traj.t, ledger.work_fric, label="friction work")
    ax.plot(traj.t, ledger.residual, ":", label="balance residual")
    ax.set_xlabel("t")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_density(path, nodes, values, reference=None, title: str = ""):
    """Scalar density samples against an optional exact curve."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(nodes, values, lw=1.2, label="recovered")
    if reference is not None:
        ax.plot(nodes, reference, "--", lw=1.0, label="exact")
    ax.set_xlabel("sigma")
    ax.set_ylabel("density")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_response(path, omega, measured, exact, title: str = ""):
    """Magnitude of a measured frequency response against the exact one."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(omega, np.abs(measured), "o", ms=3, label="from simulation")
    ax.plot(omega, np.abs(exact), "-", lw=1.0, label="closed form")
    ax.set_xlabel("omega")
    ax.set_ylabel("|response|")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)
