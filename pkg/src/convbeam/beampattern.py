"""Far-field narrow-band beam patterns of DAS and convolutional beamformers.

The pattern of a weight function ``w[n, m]`` is its 2D spatial DTFT evaluated
at the spatial frequencies of each look direction ``(theta, phi)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrays import ApodizationMap, ElementSet, intrinsic_apodization

SOUND_SPEED = 1540.0


@dataclass(frozen=True)
class AngleGrid:
    """Azimuth ``thetas`` and elevation ``phis`` in radians (outer product grid)."""

    thetas: np.ndarray
    phis: np.ndarray

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.thetas, dtype=float))
        ph = np.atleast_1d(np.asarray(self.phis, dtype=float))
        if th.size == 0 or ph.size == 0:
            raise ValueError("angle grid must be non-empty")
        if np.any(np.abs(th) > np.pi / 2):
            raise ValueError("theta must lie within [-pi/2, pi/2]")
        object.__setattr__(self, "thetas", th)
        object.__setattr__(self, "phis", ph)

    @property
    def shape(self):
        return (self.thetas.size, self.phis.size)

    @classmethod
    def default(cls, step_deg=0.5, phis_deg=(0.0, 45.0, 90.0)):
        """Theta from -90 to 90 degrees, a few phi slices."""
        n = int(round(180.0 / step_deg)) + 1
        return cls(np.deg2rad(np.linspace(-90.0, 90.0, n)), np.deg2rad(np.asarray(phis_deg)))

    def __eq__(self, other):
        if not isinstance(other, AngleGrid):
            return NotImplemented
        return np.array_equal(self.thetas, other.thetas) and np.array_equal(self.phis, other.phis)


@dataclass(frozen=True, eq=False)
class BeamPattern:
    values: np.ndarray
    grid: AngleGrid
    wavelength: float

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError("pattern values do not match the grid")

    def magnitude_db(self, floor_db=-300.0):
        mag = np.abs(self.values)
        peak = mag.max()
        if peak == 0:
            return np.full(mag.shape, floor_db)
        with np.errstate(divide="ignore"):
            db = 20 * np.log10(mag / peak)
        return np.maximum(db, floor_db)


def wavelength_for(f0, c=SOUND_SPEED):
    return c / f0


def spatial_frequencies(theta, phi, wavelength, pitch_x, pitch_y):
    """Spatial frequencies ``(s_x, s_y)`` in radians per element."""
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    k = 2 * np.pi / wavelength
    st = np.sin(theta)
    return k * pitch_x * st * np.cos(phi), k * pitch_y * st * np.sin(phi)


def array_factor(weights: ApodizationMap, sx, sy):
    """``sum w[n,m] exp(-j (sx n + sy m))`` at arbitrary spatial frequencies."""
    sx = np.asarray(sx, dtype=float)
    sy = np.asarray(sy, dtype=float)
    n = weights.positions[:, 0].astype(float)
    m = weights.positions[:, 1].astype(float)
    phase = np.multiply.outer(sx, n) + np.multiply.outer(sy, m)
    return np.exp(-1j * phase) @ weights.values


def receive_beam_pattern(weights: ApodizationMap, grid: AngleGrid, wavelength, pitch_x, pitch_y):
    if len(weights) == 0:
        raise ValueError("weights must be non-empty")
    th, ph = np.meshgrid(grid.thetas, grid.phis, indexing="ij")
    sx, sy = spatial_frequencies(th, ph, wavelength, pitch_x, pitch_y)
    return BeamPattern(array_factor(weights, sx, sy), grid, wavelength)


def coba_weights(array: ElementSet, acting_weights: ApodizationMap) -> ApodizationMap:
    """Effective aperture ``w_R = w~_R * a_E`` produced by convolutional beamforming.

    ``acting_weights`` are the weights applied to the convolution signal.
    """
    apod = intrinsic_apodization(array)
    counts = apod.as_dict()
    outside = [tuple(p) for p, v in zip(acting_weights.positions.tolist(), acting_weights.values) if v != 0 and tuple(p) not in counts]
    if outside:
        raise ValueError(f"weights supported outside the sum co-array, e.g. {outside[0]}")
    w = acting_weights.lookup(apod.positions)
    return ApodizationMap(apod.positions, w * apod.values)


def coba_receive_beam_pattern(array: ElementSet, acting_weights: ApodizationMap, grid: AngleGrid, wavelength, pitch_x, pitch_y):
    """Receive pattern of COBA/SCOBA on ``array`` with convolution weights ``acting_weights``."""
    return receive_beam_pattern(coba_weights(array, acting_weights), grid, wavelength, pitch_x, pitch_y)


def two_way_pattern(tx: BeamPattern, rx: BeamPattern) -> BeamPattern:
    if tx.grid != rx.grid or tx.wavelength != rx.wavelength:
        raise ValueError("transmit and receive patterns use different grids")
    return BeamPattern(tx.values * rx.values, tx.grid, tx.wavelength)


@dataclass(frozen=True)
class PatternMetrics:
    mainlobe_width_deg: float
    peak_sidelobe_db: float
    width_3db_deg: float
    no_sidelobes: bool = False


def _first_minimum(mag, start, step):
    i = start
    while 0 <= i + step < len(mag) and mag[i + step] <= mag[i]:
        i += step
    return i


def pattern_metrics(bp: BeamPattern) -> PatternMetrics:
    """Main-lobe width and peak side lobe along theta, at the phi of the peak.

    The main lobe is bounded by the first local minima on either side of the
    peak. A pattern that never decreases away from its peak (e.g. a single
    element) reports the full theta span and ``no_sidelobes=True``.
    """
    mag = np.abs(bp.values)
    i_peak, j_peak = np.unravel_index(np.argmax(mag), mag.shape)
    cut = mag[:, j_peak]
    peak = cut[i_peak]
    thetas = np.rad2deg(bp.grid.thetas)
    span = float(thetas[-1] - thetas[0])
    if peak == 0 or np.allclose(cut, peak, rtol=1e-9, atol=0):
        return PatternMetrics(span, -np.inf, span, no_sidelobes=True)
    lo = _first_minimum(cut, i_peak, -1)
    hi = _first_minimum(cut, i_peak, +1)
    outside = np.concatenate([cut[:lo], cut[hi + 1 :]])
    no_sl = outside.size == 0 or outside.max() == 0
    psl = -np.inf if no_sl else float(20 * np.log10(outside.max() / peak))

    half = peak / np.sqrt(2.0)

    def crossing(step):
        i = i_peak
        while 0 <= i + step < len(cut) and cut[i + step] >= half:
            i += step
        j = i + step
        if not 0 <= j < len(cut):
            return thetas[i]
        f = (cut[i] - half) / (cut[i] - cut[j])
        return thetas[i] + f * (thetas[j] - thetas[i])

    w3 = float(crossing(+1) - crossing(-1))
    return PatternMetrics(float(thetas[hi] - thetas[lo]), psl, w3, no_sidelobes=no_sl)
