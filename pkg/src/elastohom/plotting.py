"""Figures for convergence reports and band sweeps (non-interactive backend)."""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

GOLDEN = (math.sqrt(5) - 1) / 2
STYLE = {
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _figure(width: float = 6.0, ncols: int = 1):
    return plt.subplots(1, ncols, figsize=(width, width * GOLDEN / max(1, ncols - 0.6)), squeeze=False)


def _reference_line(ax, eps, anchor_err, slope, color):
    lo, hi = min(eps), max(eps)
    ax.loglog([lo, hi], [anchor_err * (lo / hi) ** slope, anchor_err], ls=":", color=color, lw=0.9)


def convergence_figure(rows: list, slopes: dict, path: str | Path, truncation: str) -> Path:
    """Log-log error against eps, one curve per cycle count; dotted lines show the expected slopes."""
    path = Path(path)
    sel = [r for r in rows if r["truncation"] == truncation]
    ns = sorted({r["n"] for r in sel})
    with plt.rc_context(STYLE):
        fig, axes = _figure(8.0, 2)
        for ax, norm, label in ((axes[0, 0], "l2", "L2 error"), (axes[0, 0 + 1], "h1", "H1 error")):
            for i, n in enumerate(ns):
                pts = sorted((r["eps"], r[f"{norm}_error"]) for r in sel if r["n"] == n)
                eps = [p[0] for p in pts]
                err = [p[1] for p in pts]
                color = f"C{i}"
                fit = slopes.get(truncation, {}).get(str(n), {}).get(norm)
                tag = f"n={n}" + (f" (slope {fit:.2f})" if fit is not None else "")
                ax.loglog(eps, err, "o-", color=color, ms=3.5, label=tag)
                want = slopes.get(truncation, {}).get(str(n), {}).get(f"expected_{norm}")
                if want:
                    _reference_line(ax, eps, err[-1], want, color)
            ax.set_xlabel("eps")
            ax.set_ylabel(label)
            ax.legend(loc="lower right")
        fig.suptitle(f"truncation: {truncation}")
        fig.savefig(path)
        plt.close(fig)
    return path


def bands_figure(points: list, path: str | Path, contour: dict | None = None) -> Path:
    """Rescaled low eigenvalues and homogenized eigenvalues against |chi|, with the contour's real extent."""
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, axes = _figure(6.0)
        ax = axes[0, 0]
        r = [math.sqrt(sum(c * c for c in p.chi)) for p in points]
        for i in range(4):
            ax.plot(r, [p.low[i] for p in points], "o", ms=3, color=f"C{i}", label=f"lambda_{i + 1}/|chi|^2")
        for i in range(3):
            ax.plot(r, [p.hom[i] for p in points], "x", ms=4, color="k", alpha=0.6,
                    label="homogenized" if i == 0 else None)
        if contour is not None:
            lo = contour["center"] - contour["radius"]
            hi = contour["center"] + contour["radius"]
            ax.axhspan(lo, hi, color="C2", alpha=0.12, label="contour (real extent)")
        ax.set_yscale("log")
        ax.set_xlabel("|chi|")
        ax.set_ylabel("rescaled eigenvalue")
        ax.legend(loc="upper right", ncol=2)
        fig.savefig(path)
        plt.close(fig)
    return path
