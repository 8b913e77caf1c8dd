"""Figures (matplotlib, Agg backend) and 8-bit grayscale image export."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

from .arrays import ElementSet, intrinsic_apodization  # noqa: E402
from .beampattern import BeamPattern  # noqa: E402
from .metrics import BModeImage  # noqa: E402


def to_uint8(db_values, dynamic_range_db) -> np.ndarray:
    """Map ``[-dynamic_range_db, 0]`` dB linearly onto ``0..255``."""
    db = np.clip(np.asarray(db_values, dtype=float), -dynamic_range_db, 0.0)
    return np.rint((db + dynamic_range_db) / dynamic_range_db * 255.0).astype(np.uint8)


def save_gray(pixels: np.ndarray, path):
    """Write a 2D uint8 array; the format (PGM or PNG) follows the suffix."""
    path = Path(path)
    fmt = {".pgm": "PPM", ".png": "PNG"}.get(path.suffix.lower())
    if fmt is None:
        raise ValueError(f"unsupported image suffix {path.suffix!r}; use .pgm or .png")
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8), mode="L").save(path, format=fmt)


def render_bmode(img: BModeImage, path):
    """Depth runs down the rows, the lateral axis across the columns."""
    save_gray(to_uint8(img.db_values.T, img.dynamic_range_db), path)


def render_pattern(bp: BeamPattern, path, dynamic_range_db=60.0):
    save_gray(to_uint8(bp.magnitude_db().T, dynamic_range_db), path)


def plot_bmode(img: BModeImage, lateral_mm, depth_mm, path, title=""):
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    extent = (lateral_mm[0], lateral_mm[-1], depth_mm[-1], depth_mm[0])
    im = ax.imshow(img.db_values.T, cmap="gray", vmin=-img.dynamic_range_db, vmax=0, extent=extent, aspect="equal")
    ax.set_xlabel("lateral [mm]")
    ax.set_ylabel("depth [mm]")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="dB")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_pattern_cuts(patterns: dict, path, floor_db=-80.0):
    """Overlay theta cuts of several patterns, one panel per phi slice."""
    first = next(iter(patterns.values()))
    phis = np.rad2deg(first.grid.phis)
    fig, axes = plt.subplots(1, len(phis), figsize=(4 * len(phis), 3.2), squeeze=False)
    th = np.rad2deg(first.grid.thetas)
    for j, ax in enumerate(axes[0]):
        for name, bp in patterns.items():
            ax.plot(th, np.maximum(bp.magnitude_db()[:, j], floor_db), label=name, lw=1)
        ax.set_title(f"phi = {phis[j]:g} deg")
        ax.set_xlabel("theta [deg]")
        ax.set_ylim(floor_db, 3)
    axes[0][0].set_ylabel("|H| [dB]")
    axes[0][0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_array(elements: ElementSet, path, title=""):
    """Element layout next to its intrinsic apodization."""
    apod = intrinsic_apodization(elements)
    ind, (n0, m0) = elements.indicator()
    cnt, (c0, d0) = apod.support(elements.pitch_x, elements.pitch_y).indicator()
    cnt = cnt.astype(float)
    cnt[cnt > 0] = apod.values
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 4))
    a1.imshow(ind.T, origin="lower", cmap="Greys", extent=(n0 - 0.5, n0 + ind.shape[0] - 0.5, m0 - 0.5, m0 + ind.shape[1] - 0.5))
    a1.set_title(title or f"{len(elements)} elements")
    im = a2.imshow(cnt.T, origin="lower", cmap="viridis", extent=(c0 - 0.5, c0 + cnt.shape[0] - 0.5, d0 - 0.5, d0 + cnt.shape[1] - 0.5))
    a2.set_title(f"co-array ({len(apod)} positions)")
    fig.colorbar(im, ax=a2, label="pair count")
    for ax in (a1, a2):
        ax.set_xlabel("n")
        ax.set_ylabel("m")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_profiles(profiles: dict, path, xlabel="lateral [mm]"):
    """``profiles`` maps a label to ``(coord_mm, envelope)``; curves are peak-normalized."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for name, (coord, env) in profiles.items():
        env = np.asarray(env, dtype=float)
        ax.plot(coord, env / env.max(), label=name, lw=1)
    ax.axhline(0.5, color="k", lw=0.5, ls=":")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("normalized envelope")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_bench(rows, path):
    """``rows`` of ``(size, direct_s, fourier_s)``."""
    rows = np.asarray(rows, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.loglog(rows[:, 0], rows[:, 1], "o-", label="direct")
    ax.loglog(rows[:, 0], rows[:, 2], "s-", label="fourier")
    ax.set_xlabel("aperture side [elements]")
    ax.set_ylabel("time per call [s]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
