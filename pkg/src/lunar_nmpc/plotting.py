"""PNG renderings of a run: 3-D approach, state histories, thrust, switching function."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .pmp import RunLog  # noqa: E402


def _save(fig, path: Path) -> str:
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path.name


def render_figures(out_dir, log: RunLog) -> list[str]:
    out = Path(out_dir)
    t = log.array("t")
    rho = log.array("rho")
    vel = log.array("rho_dot")
    u = log.array("u")
    u_norm = log.array("u_norm")
    ups = log.array("upsilon")
    names = []

    fig = plt.figure(figsize=(6, 5))
    ax = fig.add_subplot(projection="3d")
    ax.plot(rho[:, 0], rho[:, 1], rho[:, 2], lw=1.2)
    ax.scatter(*rho[0], marker="o", label="start")
    ax.scatter(*rho[-1], marker="x", label="end")
    ax.scatter(0, 0, 0, marker="*", label="target")
    ax.set_xlabel("x (V-bar) [m]")
    ax.set_ylabel("y (H-bar) [m]")
    ax.set_zlabel("z (R-bar) [m]")
    ax.legend(loc="upper left")
    names.append(_save(fig, out / "trajectory_3d.png"))

    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for i, lab in enumerate("xyz"):
        axes[0].plot(t, rho[:, i], label=lab)
        axes[1].plot(t, vel[:, i], label=f"v{lab}")
    axes[0].set_ylabel("position [m]")
    axes[1].set_ylabel("velocity [m/s]")
    axes[1].set_xlabel("time [s]")
    for ax in axes:
        ax.legend()
        ax.grid(True, alpha=0.3)
    names.append(_save(fig, out / "states.png"))

    fig, axes = plt.subplots(4, 1, figsize=(7, 7), sharex=True)
    for i, lab in enumerate(("u_x", "u_y", "u_z")):
        axes[i].step(t, u[:, i], where="post")
        axes[i].set_ylabel(f"{lab} [m/s$^2$]")
    axes[3].step(t, u_norm, where="post")
    axes[3].set_ylabel("|u| [m/s$^2$]")
    axes[3].set_xlabel("time [s]")
    for ax in axes:
        ax.grid(True, alpha=0.3)
    names.append(_save(fig, out / "thrust.png"))

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(t, ups)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_yscale("symlog", linthresh=max(1e-6, float(np.min(np.abs(ups[ups != 0]))) if np.any(ups) else 1.0))
    ax.set_xlabel("time [s]")
    ax.set_ylabel("switching function")
    ax.grid(True, alpha=0.3)
    names.append(_save(fig, out / "switching.png"))
    return names
