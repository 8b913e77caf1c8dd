"""DAS, COBA-3D and SCOBA-3D reconstruction of IQ cubes.

All three beamformers share the compounding stage: every element trace is
delayed to each grid point, phase-rotated back to the carrier and summed over
the transmit events. DAS then sums over elements; the convolutional
beamformers take a signed square root of each element value, self-convolve
the resulting aperture matrix and sum the convolution with weights that
compensate the intrinsic apodization of the (possibly sparse) array.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.fft
from scipy import sparse

from .arrays import (
    ApodizationKind,
    ApodizationMap,
    ElementSet,
    intrinsic_apodization,
    is_upa,
)
from .simulation import IQCube, rx_delay, tx_delay

logger = logging.getLogger(__name__)


class Method(str, Enum):
    DAS = "DAS"
    COBA3D = "COBA3D"
    SCOBA3D = "SCOBA3D"


def direction_vectors(thetas, phis):
    """Unit look vectors ``(sin t cos p, sin t sin p, cos t)``."""
    thetas = np.asarray(thetas, dtype=float)
    phis = np.asarray(phis, dtype=float)
    st = np.sin(thetas)
    return np.stack([st * np.cos(phis), st * np.sin(phis), np.cos(thetas)], axis=-1)


def steering_to_angles(x_angle, y_angle):
    """Map a pair of plane steering angles (xz tilt, yz tilt) to signed ``(theta, phi)``.

    The look vector is along ``(tan x_angle, tan y_angle, 1)``; theta carries
    the sign of the x component so that the xz plane is ``phi = 0``.
    """
    x_angle = np.asarray(x_angle, dtype=float)
    y_angle = np.asarray(y_angle, dtype=float)
    ux, uy = np.tan(x_angle), np.tan(y_angle)
    polar = np.arctan(np.hypot(ux, uy))
    on_x = ux != 0
    phi = np.where(on_x, np.arctan(np.divide(uy, ux, out=np.zeros_like(uy), where=on_x)), np.pi / 2)
    sign = np.where(on_x, np.sign(ux), np.sign(uy))
    sign = np.where(sign == 0, 1.0, sign)
    return sign * polar, phi


@dataclass(frozen=True, eq=False)
class ImagingGrid:
    """Look directions ``(thetas, phis)`` of shape ``(A, B)`` and ranges ``depths``.

    Grid point ``(a, b, d)`` sits at ``depths[d] * u(thetas[a, b], phis[a, b])``;
    ``depths`` are ranges along each scan line (``z = c t / 2`` on axis).
    """

    thetas: np.ndarray
    phis: np.ndarray
    depths: np.ndarray

    def __post_init__(self):
        th = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        ph = np.atleast_2d(np.asarray(self.phis, dtype=float))
        d = np.atleast_1d(np.asarray(self.depths, dtype=float))
        if th.shape != ph.shape:
            raise ValueError("theta and phi tables differ in shape")
        if d.size == 0 or np.any(d <= 0) or np.any(np.diff(d) <= 0):
            raise ValueError("depths must be positive and strictly increasing")
        object.__setattr__(self, "thetas", th)
        object.__setattr__(self, "phis", ph)
        object.__setattr__(self, "depths", d)

    @classmethod
    def sector(cls, x_angles, y_angles, depths):
        """Grid over pairs of plane steering angles (radians)."""
        xa, ya = np.meshgrid(np.asarray(x_angles, float), np.asarray(y_angles, float), indexing="ij")
        th, ph = steering_to_angles(xa, ya)
        return cls(th, ph, depths)

    @property
    def shape(self):
        return self.thetas.shape + (self.depths.size,)

    @property
    def size(self):
        return int(np.prod(self.shape))

    def points(self) -> np.ndarray:
        """Cartesian coordinates of every grid point, shape ``(A, B, D, 3)``."""
        u = direction_vectors(self.thetas, self.phis)
        return u[:, :, None, :] * self.depths[None, None, :, None]

    def __eq__(self, other):
        if not isinstance(other, ImagingGrid):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("thetas", "phis", "depths"))


@dataclass(eq=False)
class CompoundField:
    """Compounded element signals ``y[e, a, b, d]`` for every receive element."""

    y: np.ndarray
    rx_array: ElementSet
    grid: ImagingGrid
    n_out_of_range: int = 0

    def __post_init__(self):
        if self.y.shape != (len(self.rx_array),) + self.grid.shape:
            raise ValueError("field shape does not match the array and grid")

    def restrict(self, elements: ElementSet) -> "CompoundField":
        if elements == self.rx_array:
            return self
        idx = self.rx_array.index_of(elements.positions)
        if np.any(idx < 0):
            raise ValueError("requested elements are not part of the field")
        return CompoundField(self.y[idx], elements, self.grid, self.n_out_of_range)

    def flat(self) -> np.ndarray:
        """``(G, E)`` view used by the per-point beamformers."""
        return self.y.reshape(len(self.rx_array), -1).T


@dataclass(eq=False)
class Volume:
    values: np.ndarray
    grid: ImagingGrid
    beamformer: Method
    provenance: str = ""
    n_elements: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError("volume shape does not match the grid")
        self.beamformer = Method(self.beamformer)


def _interp_event(trace_flat, n_t, tau, t0, fs):
    """Linear interpolation of ``(E, T)`` traces at delays ``tau`` of shape ``(G, E)``."""
    s = (tau - t0) * fs
    i0 = np.floor(s).astype(np.int64)
    frac = s - i0
    ok = (i0 >= 0) & (i0 < n_t - 1)
    i0 = np.where(ok, i0, 0)
    flat = i0 + (np.arange(tau.shape[1]) * n_t)[None, :]
    x0 = trace_flat[flat]
    x1 = trace_flat[flat + 1]
    v = x0 + frac * (x1 - x0)
    v[~ok] = 0
    return v, int(np.count_nonzero(~ok))


def _focused_event_map(cube: IQCube, grid: ImagingGrid):
    """Index of the transmit event whose steering best matches each look direction."""
    u = direction_vectors(grid.thetas, grid.phis).reshape(-1, 3)
    ev = cube.scheme.directions()
    return np.argmax(u @ ev.T, axis=1).reshape(grid.thetas.shape)


def compound(cube: IQCube, grid: ImagingGrid, chunk=512, workers=1) -> CompoundField:
    """Coherently compound all transmit events at every grid point.

    For each element and grid point the trace of event ``k`` is read at the
    two-way delay (transmit + exact receive path), linearly interpolated and
    rotated by ``exp(+2j*pi*f0*tau)``. Diverging waves are summed over all
    events; focused transmissions use only the event aimed along the line.
    Samples falling outside the record are zero-filled and counted.
    """
    c, fs, f0, t0 = cube.sound_speed, cube.sample_rate, cube.center_freq, cube.start_time
    K, E, n_t = cube.samples.shape
    pts = grid.points().reshape(-1, 3)
    G = len(pts)
    out = np.zeros((G, E), dtype=complex)
    focused = cube.scheme.mode == "focused"
    event_of = _focused_event_map(cube, grid).repeat(grid.depths.size) if focused else None
    traces = [np.ascontiguousarray(cube.samples[k]).ravel() for k in range(K)]

    def work(g0):
        sl = slice(g0, min(G, g0 + chunk))
        p = pts[sl]
        t_rx = rx_delay(cube.rx_array, p, c=c)  # (g, E)
        missing = 0
        acc = np.zeros(t_rx.shape, dtype=complex)
        if focused:
            ks = event_of[sl]
            for k in np.unique(ks):
                rows = np.nonzero(ks == k)[0]
                t_tx = tx_delay(cube.scheme, p[rows], events=[k], c=c)[0]
                tau = t_tx[:, None] + t_rx[rows]
                v, bad = _interp_event(traces[k], n_t, tau, t0, fs)
                acc[rows] = v * np.exp(2j * np.pi * f0 * tau)
                missing += bad
        else:
            t_tx = tx_delay(cube.scheme, p, c=c)  # (K, g)
            rx_phase = np.exp(2j * np.pi * f0 * t_rx)
            tx_phase = np.exp(2j * np.pi * f0 * t_tx)
            for k in range(K):
                v, bad = _interp_event(traces[k], n_t, t_tx[k][:, None] + t_rx, t0, fs)
                acc += v * tx_phase[k][:, None]
                missing += bad
            acc *= rx_phase
        out[sl] = acc
        return missing

    starts = range(0, G, chunk)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            missing = sum(pool.map(work, starts))
    else:
        missing = sum(map(work, starts))
    if missing:
        logger.warning("compounding zero-filled %d samples outside the record", missing)
    y = out.T.reshape((E,) + grid.shape)
    return CompoundField(y, cube.rx_array, grid, missing)


def _grid_weights(weights: ApodizationMap, elements: ElementSet):
    return weights.lookup(elements.positions)


def das(field: CompoundField, weights: ApodizationMap | None = None) -> Volume:
    """Weighted sum of the compounded element signals."""
    if weights is None:
        weights = ApodizationMap.uniform(field.rx_array)
    rx = field.rx_array.as_set()
    extra = [p for p, v in weights.as_dict().items() if v != 0 and p not in rx]
    if extra:
        raise ValueError(f"weights supported outside the receive array, e.g. {extra[0]}")
    w = _grid_weights(weights, field.rx_array)
    values = np.tensordot(w, field.y, axes=(0, 0))
    return Volume(values, field.grid, Method.DAS, n_elements=int(np.count_nonzero(w)))


def sqrt_transform(field):
    """Signed square root ``sqrt(|y|) exp(j arg y)``; accepts a field or an array."""
    y = field.y if isinstance(field, CompoundField) else np.asarray(field)
    r = np.sqrt(np.abs(y)) * np.exp(1j * np.angle(y))
    if isinstance(field, CompoundField):
        return CompoundField(r, field.rx_array, field.grid, field.n_out_of_range)
    return r


def conv2d_self(r, method="fourier"):
    """Full 2D self-convolution over the last two axes.

    An ``(..., P, Q)`` input gives an ``(..., 2P-1, 2Q-1)`` output; for an
    aperture of ``(2N+1) x (2M+1)`` elements that is ``(4N+1) x (4M+1)``.
    """
    r = np.asarray(r, dtype=complex)
    if r.shape[-1] == 0 or r.shape[-2] == 0:
        raise ValueError("empty matrix")
    P, Q = r.shape[-2:]
    out_shape = (2 * P - 1, 2 * Q - 1)
    if method == "direct":
        out = np.zeros(r.shape[:-2] + out_shape, dtype=complex)
        for i in range(P):
            for j in range(Q):
                out[..., i : i + P, j : j + Q] += r[..., i : i + 1, j : j + 1] * r
        return out
    if method != "fourier":
        raise ValueError(f"unknown convolution method {method!r}")
    fshape = tuple(scipy.fft.next_fast_len(n) for n in out_shape)
    spec = scipy.fft.fft2(r, s=fshape, axes=(-2, -1))
    full = scipy.fft.ifft2(spec * spec, axes=(-2, -1))
    return full[..., : out_shape[0], : out_shape[1]]


def effective_weights(user_weights: ApodizationMap, array: ElementSet) -> ApodizationMap:
    """Weights on the convolution signal giving the effective aperture ``user_weights``.

    Every co-array position gets ``w / a`` where ``a`` is the intrinsic
    apodization; positions of the sum co-array absent from ``user_weights``
    get zero. Asking for a non-zero weight on a co-array hole is an error.
    """
    apod = intrinsic_apodization(array)
    counts = apod.as_dict()
    for p, v in user_weights.as_dict().items():
        if v != 0 and p not in counts:
            raise ValueError(f"co-array hole at {p}: weight cannot be realized")
    w = user_weights.lookup(apod.positions)
    return ApodizationMap(apod.positions, w / apod.values, ApodizationKind.EFFECTIVE)


def default_weights(array: ElementSet, mode="unity-effective") -> ApodizationMap:
    """Convolution weights for "no apodization".

    ``unity-effective`` divides out the intrinsic apodization (flat effective
    aperture over the sum co-array); ``raw`` applies 1 to every convolution
    term and so keeps the intrinsic apodization as the effective aperture.
    """
    apod = intrinsic_apodization(array)
    if mode == "unity-effective":
        return ApodizationMap(apod.positions, 1.0 / apod.values, ApodizationKind.EFFECTIVE)
    if mode == "raw":
        return ApodizationMap(apod.positions, np.ones(len(apod)), ApodizationKind.EFFECTIVE)
    raise ValueError(f"unknown weight mode {mode!r}")


def _acting_weights(user_weights, array, weight_mode):
    if user_weights is None:
        return default_weights(array, weight_mode)
    if user_weights.kind is ApodizationKind.EFFECTIVE:
        return user_weights
    return effective_weights(user_weights, array)


def _zero_fill(r_flat, elements: ElementSet):
    """Scatter ``(G, E)`` element values onto the dense bounding-box matrix."""
    n0, n1, m0, m1 = elements.bounding_box()
    dense = np.zeros((r_flat.shape[0], n1 - n0 + 1, m1 - m0 + 1), dtype=complex)
    dense[:, elements.positions[:, 0] - n0, elements.positions[:, 1] - m0] = r_flat
    return dense, (n0, m0)


def _weights_matrix(acting: ApodizationMap, elements: ElementSet):
    """Dense weight matrix aligned with the zero-filled self-convolution output."""
    n0, n1, m0, m1 = elements.bounding_box()
    W = np.zeros((2 * (n1 - n0) + 1, 2 * (m1 - m0) + 1))
    counts = intrinsic_apodization(elements).as_dict()
    for (n, m), v in acting.as_dict().items():
        if v == 0:
            continue
        if (n, m) not in counts:
            raise ValueError(f"co-array hole at {(n, m)}: weight cannot be realized")
        W[n - 2 * n0, m - 2 * m0] = v
    return W


def coarray_signals(r_flat, elements: ElementSet, method="zerofill", chunk=256):
    """Convolution signals ``c[g, s]`` on the sum co-array positions.

    ``zerofill`` embeds the element values in a dense matrix and self-convolves
    it with FFTs; ``pairwise`` sums ``r_u * r_k`` over all ordered element pairs
    landing on each co-array position. Returns ``(c, coarray_positions)``.
    """
    apod = intrinsic_apodization(elements)
    co = apod.positions
    if method == "zerofill":
        n0, _, m0, _ = elements.bounding_box()
        out = np.empty((r_flat.shape[0], len(co)), dtype=complex)
        for g0 in range(0, r_flat.shape[0], chunk):
            dense, _ = _zero_fill(r_flat[g0 : g0 + chunk], elements)
            c = conv2d_self(dense)
            out[g0 : g0 + chunk] = c[:, co[:, 0] - 2 * n0, co[:, 1] - 2 * m0]
        return out, co
    if method == "pairwise":
        E = len(elements)
        iu, ik = np.meshgrid(np.arange(E), np.arange(E), indexing="ij")
        iu, ik = iu.ravel(), ik.ravel()
        sums = elements.positions[iu] + elements.positions[ik]
        lookup = {(int(n), int(m)): i for i, (n, m) in enumerate(co)}
        col = np.array([lookup[(int(n), int(m))] for n, m in sums])
        M = sparse.csr_matrix((np.ones(len(col)), (np.arange(len(col)), col)), shape=(len(col), len(co)))
        out = np.empty((r_flat.shape[0], len(co)), dtype=complex)
        step = max(1, (1 << 21) // len(col))
        for g0 in range(0, r_flat.shape[0], step):
            rr = r_flat[g0 : g0 + step]
            prod = rr[:, iu] * rr[:, ik]
            out[g0 : g0 + step] = (M.T @ prod.T).T
        return out, co
    raise ValueError(f"unknown co-array method {method!r}")


def weighted_self_convolution(r_flat, elements: ElementSet, acting: ApodizationMap, chunk=256) -> np.ndarray:
    """``b[g] = sum_s acting[s] * (r * r)[g, s]`` with ``r`` zero-filled on the bounding box."""
    W = _weights_matrix(acting, elements)
    b = np.empty(r_flat.shape[0], dtype=complex)
    for g0 in range(0, r_flat.shape[0], chunk):
        dense, _ = _zero_fill(r_flat[g0 : g0 + chunk], elements)
        b[g0 : g0 + chunk] = np.einsum("gij,ij->g", conv2d_self(dense), W)
    return b


def coba3d(field: CompoundField, user_weights: ApodizationMap | None = None, weight_mode="unity-effective",
           chunk=256) -> Volume:
    """Convolutional beamforming on a fully populated (UPA) receive array.

    ``user_weights`` is the desired effective apodization over the sum
    co-array (kind ``user``) or ready-made convolution weights (kind
    ``effective``). Without weights, ``weight_mode`` picks the default.
    """
    array = field.rx_array
    if not is_upa(array):
        raise ValueError("COBA-3D needs a fully populated UPA receive array; use scoba3d for sparse arrays")
    acting = _acting_weights(user_weights, array, weight_mode)
    b = weighted_self_convolution(sqrt_transform(field.flat()), array, acting, chunk)
    return Volume(b.reshape(field.grid.shape), field.grid, Method.COBA3D, n_elements=len(array))


def scoba3d(field: CompoundField, sparse_array: ElementSet | None = None, user_weights: ApodizationMap | None = None,
            weight_mode="unity-effective", method="zerofill", chunk=256) -> Volume:
    """Sparse convolutional beamforming on the receive array ``sparse_array``.

    The field may cover a larger array; it is restricted to ``sparse_array``
    first. The convolution signal is only formed on the sum co-array of the
    sparse array and weighted by ``w / a_T`` there.
    """
    T = field.rx_array if sparse_array is None else sparse_array
    field = field.restrict(T)
    acting = _acting_weights(user_weights, T, weight_mode)
    r = sqrt_transform(field.flat())
    if method == "zerofill":
        b = weighted_self_convolution(r, T, acting, chunk)
    else:
        _weights_matrix(acting, T)  # validates holes
        c, co = coarray_signals(r, T, method=method)
        b = c @ acting.lookup(co)
    return Volume(b.reshape(field.grid.shape), field.grid, Method.SCOBA3D, n_elements=len(T))
