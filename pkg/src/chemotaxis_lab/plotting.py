"""Report figures, rendered headless to PNG files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# strip the version string so identical data gives identical bytes
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_run(traj, records, path) -> Path:
    """Density and signal at every snapshot (1D) or at the final time (2D), plus diagnostics."""
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.8))
    g = traj.grid
    if g.dim == 1:
        x = g.axis_centers()
        cmap = plt.get_cmap("viridis")
        n = len(traj.times)
        for i in range(n):
            c = cmap(i / max(n - 1, 1))
            axes[0].plot(x, traj.u[i], color=c, lw=1)
            axes[1].plot(x, traj.v[i], color=c, lw=1)
        axes[0].set_xlabel("x")
        axes[1].set_xlabel("x")
    else:
        ext = (0, g.extent, 0, g.extent)
        for ax, f in ((axes[0], traj.u[-1]), (axes[1], traj.v[-1])):
            im = ax.imshow(f.T, origin="lower", extent=ext)
            fig.colorbar(im, ax=ax)
    axes[0].set_title("u")
    axes[1].set_title("v")
    t = np.array([r.t for r in records])
    mass = np.array([r.mass_u for r in records])
    axes[2].plot(t, np.array([r.cum_grad_w_sq for r in records]), label="cum |grad w|^2")
    axes[2].plot(t, np.array([r.cum_grad_um1_sq for r in records]), label="cum |grad U|^2")
    axes[2].plot(t, np.abs(mass - mass[0]) / mass[0], label="rel. mass drift")
    axes[2].set_xlabel("t")
    axes[2].legend(fontsize=8)
    axes[2].set_title("diagnostics")
    fig.tight_layout()
    return _save(fig, path)


def plot_sweep(report, path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    eps = [p["eps"] for p in report.pairs]
    for key in ("delta_u", "delta_w", "delta_v"):
        vals = np.array([p[key] for p in report.pairs])
        if np.any(vals > 0):
            ax.loglog(eps, np.where(vals > 0, vals, np.nan), "o-", label=key)
        else:
            ax.semilogx(eps, vals, "o-", label=key)
    ax.axhline(report.threshold, color="k", ls="--", lw=0.8, label="threshold")
    ax.invert_xaxis()
    ax.set_xlabel("eps_k")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_refinement(report, path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    h = 1.0 / np.array(report.cells[:-1], dtype=float)
    d = np.array(report.differences)
    if np.any(d > 0):
        ax.loglog(h, np.where(d > 0, d, np.nan), "o-", label="|u_l - u_(l+1)|_1")
        ax.loglog(h, d[0] * h / h[0], "k--", lw=0.8, label="first order")
    else:
        ax.plot(h, d, "o-", label="|u_l - u_(l+1)|_1")
    ax.set_xlabel("h / extent")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_scan(report, path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ms = [mem["m"] for mem in report["members"]]
    mx = [mem.get("max_u", np.nan) for mem in report["members"]]
    ax.plot(ms, mx, "o-")
    ax.axvline(report["threshold"], color="r", ls="--", lw=0.8, label="critical exponent")
    ax.set_xlabel("m")
    ax.set_ylabel("max_t ||u||_inf")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_audit(entries, path) -> Path:
    rows = [e for e in entries if e["phi_id"] is not None]
    fig, ax = plt.subplots(figsize=(7, 4))
    labels = [f"{e['check']}:{e['phi_id']}" for e in rows]
    ratio = [abs(e["R"]) / e["tol"] for e in rows]
    colors = ["tab:green" if e["pass"] else "tab:red" for e in rows]
    ax.bar(range(len(rows)), ratio, color=colors)
    ax.axhline(1.0, color="k", lw=0.8)
    ax.set_yscale("log")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=70, fontsize=7)
    ax.set_ylabel("|R| / tol")
    fig.tight_layout()
    return _save(fig, path)
