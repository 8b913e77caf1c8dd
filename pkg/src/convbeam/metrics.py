"""Envelope display, contrast ratio and FWHM resolution on beamformed volumes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .beamform import ImagingGrid, Volume


@dataclass(frozen=True)
class SliceSpec:
    """A 2D plane of the volume: ``xz`` fixes the y-steering index, ``yz`` the x-steering index."""

    plane: str = "xz"
    index: int | None = None

    def take(self, values: np.ndarray) -> np.ndarray:
        if self.plane == "xz":
            idx = values.shape[1] // 2 if self.index is None else self.index
            return values[:, idx, :]
        if self.plane == "yz":
            idx = values.shape[0] // 2 if self.index is None else self.index
            return values[idx, :, :]
        raise ValueError(f"unknown plane {self.plane!r}")


@dataclass(frozen=True, eq=False)
class BModeImage:
    db_values: np.ndarray  # (lateral, depth), <= 0
    dynamic_range_db: float
    slice_spec: SliceSpec


def envelope_logcompress(vol: Volume, dynamic_range_db=60.0, slice_spec: SliceSpec | None = None) -> BModeImage:
    """Log-compressed envelope of one plane, normalized to the plane's peak."""
    spec = slice_spec or SliceSpec()
    env = np.abs(spec.take(vol.values))
    peak = env.max()
    if peak == 0:
        raise ValueError("cannot log-compress an all-zero volume")
    with np.errstate(divide="ignore"):
        db = 20 * np.log10(env / peak)
    db = np.maximum(db, -float(dynamic_range_db))
    return BModeImage(db, float(dynamic_range_db), spec)


def sphere_mask(grid: ImagingGrid, center, radius) -> np.ndarray:
    """Grid points within ``radius`` meters of ``center``."""
    pts = grid.points()
    return np.linalg.norm(pts - np.asarray(center, dtype=float), axis=-1) <= radius


def default_cr_regions(grid: ImagingGrid, cyst_center, cyst_radius, inner_fraction=0.6, offset=None):
    """Cyst and background masks.

    The cyst region is a sphere of ``inner_fraction * cyst_radius`` around the
    cyst center; the background is a sphere of the same radius at the same
    depth, shifted laterally along x by ``offset`` (default two cyst radii).
    """
    rad = inner_fraction * cyst_radius
    center = np.asarray(cyst_center, dtype=float)
    shift = 2.0 * cyst_radius if offset is None else offset
    bck_center = center + np.array([shift, 0.0, 0.0])
    return sphere_mask(grid, center, rad), sphere_mask(grid, bck_center, rad)


def contrast_ratio(vol: Volume, cyst_region, background_region) -> float:
    """``20 log10(mean|v| in cyst / mean|v| in background)`` in dB."""
    cyst = np.asarray(cyst_region, dtype=bool)
    bck = np.asarray(background_region, dtype=bool)
    if not cyst.any() or not bck.any():
        raise ValueError("regions must be non-empty")
    if np.any(cyst & bck):
        raise ValueError("regions must be disjoint")
    env = np.abs(vol.values)
    mu_bck = env[bck].mean()
    if mu_bck == 0:
        raise ValueError("background mean is zero")
    mu_cyst = env[cyst].mean()
    with np.errstate(divide="ignore"):
        return float(20 * np.log10(mu_cyst / mu_bck))


_AXES = {"lateral_x": 0, "lateral_y": 1, "axial": 2}


def profile(vol: Volume, axis: str, through_point):
    """Envelope profile through ``through_point`` (index triple) and its arc-length axis in meters."""
    ax = _AXES[axis]
    idx = list(through_point)
    sl = list(idx)
    sl[ax] = slice(None)
    env = np.abs(vol.values[tuple(sl)])
    pts = vol.grid.points()[tuple(sl)]
    steps = np.linalg.norm(np.diff(pts, axis=0), axis=-1)
    coord = np.concatenate([[0.0], np.cumsum(steps)])
    return coord, env


def profile_width(coord, env, center, refine=10, level=0.5):
    """Width of ``env`` at ``level`` times its value at index ``center``.

    The profile is resampled ``refine`` times finer (linear interpolation)
    before the crossings are located.
    """
    n = len(env)
    fine_idx = np.linspace(0, n - 1, (n - 1) * refine + 1)
    fine_env = np.interp(fine_idx, np.arange(n), env)
    fine_coord = np.interp(fine_idx, np.arange(n), coord)
    c = center * refine
    thr = level * fine_env[c]
    if not thr > 0:
        raise ValueError("unresolved: envelope is zero at the profile center")

    def edge(step):
        i = c
        while 0 <= i + step < len(fine_env) and fine_env[i + step] > thr:
            i += step
        j = i + step
        if not 0 <= j < len(fine_env):
            raise ValueError("unresolved: profile never falls below half maximum")
        f = (fine_env[i] - thr) / (fine_env[i] - fine_env[j])
        return fine_coord[i] + f * (fine_coord[j] - fine_coord[i])

    return float(edge(+1) - edge(-1))


def fwhm(vol: Volume, axis: str, through_point) -> float:
    """Full width at half maximum (meters) along ``axis`` through a local envelope maximum."""
    if axis not in _AXES:
        raise ValueError(f"unknown axis {axis!r}")
    coord, env = profile(vol, axis, through_point)
    i = through_point[_AXES[axis]]
    if (i > 0 and env[i - 1] > env[i]) or (i < len(env) - 1 and env[i + 1] > env[i]):
        raise ValueError("through_point is not a local maximum along the axis")
    return profile_width(coord, env, i)


def peak_index(vol: Volume):
    return tuple(int(v) for v in np.unravel_index(np.argmax(np.abs(vol.values)), vol.values.shape))
