"""Report figures (PNG, Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from weakcorr.model import bogoliubov_omega  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)


def van_hove(vh, path, title=""):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    extent = [vh.dx[0] * 1e6, vh.dx[-1] * 1e6, vh.dt[0] * 1e3, vh.dt[-1] * 1e3]
    im = ax.imshow(vh.values, aspect="auto", origin="lower", extent=extent, cmap="RdBu_r",
                   vmin=-np.abs(vh.values).max(), vmax=np.abs(vh.values).max())
    ax.set_xlabel("dx (um)")
    ax.set_ylabel("dt (ms)")
    ax.set_title(title or "Van Hove function")
    fig.colorbar(im, ax=ax)
    _save(fig, path)


def structure_factor(s, condensate, path, k_na=None):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    pos = s.omega >= 0
    kk = s.k / (2 * np.pi) * 1e-6
    ww = s.omega[pos] / (2 * np.pi)
    ax.pcolormesh(kk, ww, s.values[pos], shading="nearest", cmap="magma")
    k = np.linspace(0, (k_na or np.abs(s.k).max()), 200)
    ax.plot(k / (2 * np.pi) * 1e-6, bogoliubov_omega(k, condensate) / (2 * np.pi), "c--", lw=1)
    ax.plot(-k / (2 * np.pi) * 1e-6, bogoliubov_omega(k, condensate) / (2 * np.pi), "c--", lw=1)
    ax.set_xlabel("k / 2pi (1/um)")
    ax.set_ylabel("omega / 2pi (Hz)")
    _save(fig, path)


def curves(dx, series: dict, path, ylabel="", title=""):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, y in series.items():
        ax.plot(dx * 1e6, y, label=label, lw=1)
    ax.set_xlabel("dx (um)")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=7)
    _save(fig, path)


def xy(x, series: dict, path, xlabel="", ylabel="", errors: dict | None = None):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, y in series.items():
        err = None if errors is None else errors.get(label)
        if err is None:
            ax.plot(x, y, label=label)
        else:
            ax.errorbar(x, y, yerr=err, fmt="o", label=label, capsize=2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7)
    _save(fig, path)
