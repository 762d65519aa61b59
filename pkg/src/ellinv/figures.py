"""Matplotlib renderers used by the command line report path.

Every function saves one PNG to the given path and returns the path.  The
Agg backend is forced so rendering works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 120


def _component_labels(m, labels):
    if labels is not None:
        return list(labels)
    return [f"component {p + 1}" for p in range(m)]


def save_component_heatmaps(path, axes_xy, values, title, labels=None):
    """Per-component heatmaps of a field sampled on a 2-D grid.

    ``axes_xy`` is the pair of 1-D coordinate arrays; ``values`` has shape
    (len(x), len(y), m).
    """
    values = np.asarray(values, dtype=float)
    m = values.shape[-1]
    labels = _component_labels(m, labels)
    fig, axs = plt.subplots(1, m, figsize=(4.2 * m, 3.6), squeeze=False)
    x, y = axes_xy
    for p in range(m):
        ax = axs[0, p]
        mesh = ax.pcolormesh(x, y, values[:, :, p].T, shading="auto")
        fig.colorbar(mesh, ax=ax)
        ax.set_title(labels[p])
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_line_profiles(path, x, curves, title, labels=None, xlabel="tangential coordinate"):
    """Overlaid per-component curves; ``curves`` has shape (len(x), m)."""
    curves = np.asarray(curves, dtype=float)
    labels = _component_labels(curves.shape[-1], labels)
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for p in range(curves.shape[-1]):
        ax.plot(x, curves[:, p], label=labels[p])
    ax.set_xlabel(xlabel)
    ax.set_ylabel("value")
    ax.legend()
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_margin_histogram(path, margins, tol, title):
    """Histogram of violation margins with the audit tolerance marked."""
    margins = np.asarray(margins, dtype=float).ravel()
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.hist(margins, bins=40, color="#4878d0")
    ax.axvline(tol, color="#d65f5f", linestyle="--", label=f"tolerance {tol:g}")
    ax.axvline(0.0, color="black", linewidth=0.8)
    ax.set_xlabel("violation margin")
    ax.set_ylabel("count")
    ax.legend()
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_convergence(path, spacings, errors, title):
    """Log-log error curve with a second-order guide line."""
    spacings = np.asarray(spacings, dtype=float)
    errors = np.asarray(errors, dtype=float)
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    ax.loglog(spacings, errors, "o-", label="measured error")
    guide = errors[0] * (spacings / spacings[0]) ** 2
    ax.loglog(spacings, guide, "--", color="gray", label="order 2 guide")
    ax.set_xlabel("grid spacing")
    ax.set_ylabel("max error")
    ax.legend()
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_witness_scatter(path, values, anchor, normal, title, coords=(0, 1)):
    """Scatter of witness values in two chosen components.

    Draws the boundary point, the outward normal, and the trace of the
    supporting hyperplane through the boundary point.
    """
    values = np.asarray(values, dtype=float)
    anchor = np.asarray(anchor, dtype=float)
    normal = np.asarray(normal, dtype=float)
    i, j = coords
    fig, ax = plt.subplots(figsize=(5.4, 5.0))
    if values.ndim == 1:
        values = values[None, :]
    ax.scatter(values[:, i], values[:, j], s=18, label="witness values")
    ax.scatter([anchor[i]], [anchor[j]], marker="*", s=140, color="#d65f5f",
               label="boundary point")
    span = max(np.ptp(values[:, i]), np.ptp(values[:, j]), 1.0)
    ax.annotate("", xy=(anchor[i] + 0.35 * span * normal[i],
                        anchor[j] + 0.35 * span * normal[j]),
                xytext=(anchor[i], anchor[j]),
                arrowprops=dict(arrowstyle="->", color="#d65f5f"))
    tang = np.array([-normal[j], normal[i]])
    if np.linalg.norm(tang) > 0:
        tang = tang / np.linalg.norm(tang)
        line = anchor[[i, j]][:, None] + tang[:, None] * np.linspace(-span, span, 2)
        ax.plot(line[0], line[1], "--", color="gray", linewidth=0.9,
                label="supporting hyperplane")
    ax.set_xlabel(f"component {i + 1}")
    ax.set_ylabel(f"component {j + 1}")
    ax.legend()
    ax.set_title(title)
    ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_scalar_table(path, rows, title):
    """Bar chart of kernel or coefficient scalars keyed by row labels.

    ``rows`` is a list of (label, value) pairs.
    """
    labels = [str(r[0]) for r in rows]
    vals = np.array([float(r[1]) for r in rows])
    fig, ax = plt.subplots(figsize=(max(5.0, 0.5 * len(rows) + 2.0), 4.0))
    colors = np.where(vals < 0, "#d65f5f", "#4878d0")
    ax.bar(np.arange(len(rows)), vals, color=colors)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xticks(np.arange(len(rows)))
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("scalar")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path
