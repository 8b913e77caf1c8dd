"""Synthetic baseband IQ echoes from point-scatterer phantoms.

Echoes are generated directly in complex baseband: a scatterer of amplitude
``a`` reached after the two-way delay ``tau`` contributes
``a * pulse(t - tau) * exp(-2j*pi*f0*tau)`` to an element trace. Transmit
delays use a virtual-source model for both focused and diverging waves.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .arrays import ElementSet, make_upa

logger = logging.getLogger(__name__)

SOUND_SPEED = 1540.0
CENTER_FREQUENCY = 3e6
SAMPLE_RATE = 12e6
N_CYCLES = 2.0

# Envelope level at which the Gaussian pulse is truncated (-120 dB).
_PULSE_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class Phantom:
    positions: np.ndarray  # (S, 3) meters
    amplitudes: np.ndarray  # (S,)
    label: str = ""

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        amp = np.asarray(self.amplitudes, dtype=float).reshape(-1)
        if len(pos) != len(amp):
            raise ValueError("positions and amplitudes differ in length")
        if np.any(pos[:, 2] <= 0):
            raise ValueError("scatterers must lie in front of the array (z > 0)")
        if not np.all(np.isfinite(amp)):
            raise ValueError("amplitudes must be finite")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "amplitudes", amp)

    def __len__(self):
        return len(self.amplitudes)

    def __add__(self, other: "Phantom") -> "Phantom":
        return Phantom(
            np.vstack([self.positions, other.positions]),
            np.concatenate([self.amplitudes, other.amplitudes]),
            self.label or other.label,
        )


def point_phantom(points, amplitudes=None, label="points") -> Phantom:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    amp = np.ones(len(pts)) if amplitudes is None else amplitudes
    return Phantom(pts, amp, label)


def steering_vector(alpha, beta):
    """Unit vector of (0, 0, 1) rotated by ``beta`` about x, then ``alpha`` about y."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    return np.stack(
        [np.cos(beta) * np.sin(alpha), -np.sin(beta), np.cos(beta) * np.cos(alpha)], axis=-1
    )


@dataclass(frozen=True, eq=False)
class TransmitScheme:
    """Focused or diverging transmit events.

    ``alphas``/``betas`` hold the per-event steering angles in radians;
    ``focal_z`` is the focal depth (> 0, focused) or virtual-source depth
    (< 0, diverging) before steering.
    """

    mode: str
    alphas: np.ndarray
    betas: np.ndarray
    focal_z: float
    aperture: ElementSet = field(default_factory=lambda: make_upa(15, 15))

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.alphas, dtype=float))
        b = np.atleast_1d(np.asarray(self.betas, dtype=float))
        if a.shape != b.shape or a.size == 0:
            raise ValueError("events must be a non-empty list of (alpha, beta) pairs")
        if self.mode == "focused" and not self.focal_z > 0:
            raise ValueError("focused transmission needs focal_z > 0")
        if self.mode == "diverging" and not self.focal_z < 0:
            raise ValueError("diverging transmission needs focal_z < 0")
        if self.mode not in ("focused", "diverging"):
            raise ValueError(f"unknown transmit mode {self.mode!r}")
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "focal_z", float(self.focal_z))

    @classmethod
    def grid(cls, mode, alphas, betas, focal_z, aperture=None):
        """All combinations of the given alpha and beta angles (alpha-major)."""
        aa, bb = np.meshgrid(np.asarray(alphas, float), np.asarray(betas, float), indexing="ij")
        aperture = make_upa(15, 15) if aperture is None else aperture
        return cls(mode, aa.ravel(), bb.ravel(), focal_z, aperture)

    @property
    def n_events(self):
        return self.alphas.size

    def sources(self):
        """Focal points / virtual sources of every event, shape ``(K, 3)``."""
        return self.focal_z * steering_vector(self.alphas, self.betas)

    def directions(self):
        return steering_vector(self.alphas, self.betas)


def tx_delay(scheme: TransmitScheme, points, events=None, c=SOUND_SPEED):
    """Transmit delay from emission to each point, shape ``(K, P)``.

    Diverging: ``(|p - p_v| - |z_v|) / c`` so that the wavefront leaves the
    array center at t = 0. Focused: the wave converges on the focal point
    ``p_f`` at ``|p_f| / c`` and the delay grows or shrinks from there
    depending on which side of the focus the point lies.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    src = scheme.sources()
    dirs = scheme.directions()
    if events is not None:
        src, dirs = src[events], dirs[events]
    diff = pts[None, :, :] - src[:, None, :]
    dist = np.sqrt(np.einsum("kpi,kpi->kp", diff, diff))
    if scheme.mode == "diverging":
        return (dist - abs(scheme.focal_z)) / c
    side = np.where(np.einsum("kpi,ki->kp", diff, dirs) >= 0, 1.0, -1.0)
    return (abs(scheme.focal_z) + side * dist) / c


def rx_delay(elements: ElementSet, points, c=SOUND_SPEED):
    """Exact geometric receive delay from each point to each element, shape ``(P, E)``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    xyz = elements.coordinates()
    diff = pts[:, None, :] - xyz[None, :, :]
    return np.sqrt(np.einsum("pei,pei->pe", diff, diff)) / c


def pulse_sigma(f0, n_cycles):
    """Gaussian envelope sigma whose half-amplitude full width is ``n_cycles / f0``."""
    return n_cycles / f0 / (2 * math.sqrt(2 * math.log(2)))


def pulse(t, f0=CENTER_FREQUENCY, n_cycles=N_CYCLES):
    """Complex baseband envelope of the transmitted pulse, peak 1 at t = 0."""
    if f0 <= 0 or n_cycles <= 0:
        raise ValueError("f0 and n_cycles must be positive")
    sigma = pulse_sigma(f0, n_cycles)
    t = np.asarray(t, dtype=float)
    return np.exp(-0.5 * (t / sigma) ** 2).astype(complex)


def pulse_half_support(f0, n_cycles):
    return pulse_sigma(f0, n_cycles) * math.sqrt(2 * math.log(1 / _PULSE_FLOOR))


def pulse_bandwidth(f0, n_cycles):
    """Full -6 dB bandwidth of the Gaussian envelope spectrum in Hz."""
    sigma_f = 1 / (2 * math.pi * pulse_sigma(f0, n_cycles))
    return 2 * math.sqrt(2 * math.log(2)) * sigma_f


@dataclass(frozen=True)
class Acquisition:
    sample_rate: float = SAMPLE_RATE
    f0: float = CENTER_FREQUENCY
    n_cycles: float = N_CYCLES
    sound_speed: float = SOUND_SPEED
    t_max: float = 80e-6
    t_min: float = 0.0
    spreading: bool = False
    oversample: int = 8

    @property
    def n_samples(self):
        return int(math.floor((self.t_max - self.t_min) * self.sample_rate + 1e-9)) + 1


@dataclass(eq=False)
class IQCube:
    """Per-event, per-element baseband traces.

    ``samples`` has shape ``(K, E, T)``; sample ``i`` is taken at
    ``start_time + i / sample_rate``.
    """

    samples: np.ndarray
    sample_rate: float
    center_freq: float
    start_time: float
    rx_array: ElementSet
    scheme: TransmitScheme
    sound_speed: float = SOUND_SPEED

    def __post_init__(self):
        k, e, _ = self.samples.shape
        if e != len(self.rx_array):
            raise ValueError("element axis does not match the receive array")
        if k != self.scheme.n_events:
            raise ValueError("event axis does not match the transmit scheme")
        if self.start_time < 0:
            raise ValueError("start_time must be non-negative")

    @property
    def n_samples(self):
        return self.samples.shape[2]

    @property
    def times(self):
        return self.start_time + np.arange(self.n_samples) / self.sample_rate

    def restrict(self, elements: ElementSet) -> "IQCube":
        idx = self.rx_array.index_of(elements.positions)
        if np.any(idx < 0):
            raise ValueError("requested elements are not part of the receive array")
        return IQCube(self.samples[:, idx], self.sample_rate, self.center_freq, self.start_time, elements, self.scheme, self.sound_speed)


def two_way_delays(phantom: Phantom, scheme: TransmitScheme, rx_array: ElementSet, c=SOUND_SPEED):
    """``(S, K, E)`` two-way delays plus the matching transmit/receive path lengths."""
    t_tx = tx_delay(scheme, phantom.positions, c=c).T  # (S, K)
    t_rx = rx_delay(rx_array, phantom.positions, c=c)  # (S, E)
    return t_tx[:, :, None] + t_rx[:, None, :], t_tx, t_rx


def _spreading(phantom, scheme, rx_array):
    pts = phantom.positions
    if scheme.mode == "diverging":
        r_tx = np.linalg.norm(pts[:, None, :] - scheme.sources()[None], axis=-1)
    else:
        r_tx = np.repeat(np.linalg.norm(pts, axis=1)[:, None], scheme.n_events, axis=1)
    r_rx = rx_delay(rx_array, pts, c=1.0)
    return 1.0 / (r_tx[:, :, None] * r_rx[:, None, :])


def _delay_bounds(phantom: Phantom, scheme: TransmitScheme, rx_array: ElementSet, c):
    """Per-scatterer earliest and latest two-way delay (tx and rx terms separate)."""
    t_tx = tx_delay(scheme, phantom.positions, c=c)  # (K, S)
    t_rx = rx_delay(rx_array, phantom.positions, c=c)  # (S, E)
    return t_tx.min(axis=0) + t_rx.min(axis=1), t_tx.max(axis=0) + t_rx.max(axis=1)


def simulate(phantom: Phantom, scheme: TransmitScheme, rx_array: ElementSet, acq: Acquisition,
             budget=1 << 23) -> IQCube:
    """Simulate the IQ cube received by ``rx_array`` for every transmit event.

    Each arrival is deposited on a time grid ``acq.oversample`` times finer
    than the output (split linearly between the two neighbouring fine bins)
    together with its carrier phase; the grid is then convolved with the
    sampled pulse envelope and decimated. ``budget`` bounds the number of
    complex values held in intermediate buffers.
    """
    if len(phantom) == 0:
        raise ValueError("phantom has no scatterers")
    c, fs, f0 = acq.sound_speed, acq.sample_rate, acq.f0
    if fs <= 2 * pulse_bandwidth(f0, acq.n_cycles):
        raise ValueError("sample rate below twice the pulse bandwidth")
    n_t = acq.n_samples
    R = int(acq.oversample)
    n_f = n_t * R
    half = pulse_half_support(f0, acq.n_cycles)

    lo, hi = _delay_bounds(phantom, scheme, rx_array, c)
    bad = np.nonzero((hi + half > acq.t_max) | (lo - half < acq.t_min))[0]
    if bad.size:
        raise ValueError(
            f"acquisition window [{acq.t_min:.3e}, {acq.t_max:.3e}] s truncates scatterers {bad[:10].tolist()}"
            + (" ..." if bad.size > 10 else "")
        )

    K, E = scheme.n_events, len(rx_array)
    L = int(math.ceil(half * fs * R))
    kernel = pulse(np.arange(-L, L + 1) / (fs * R), f0, acq.n_cycles)
    out = np.empty((K, E, n_t), dtype=complex)
    t_rx_all = rx_delay(rx_array, phantom.positions, c=c)  # (S, E)
    t_tx_all = tx_delay(scheme, phantom.positions, c=c).T  # (S, K)

    k_chunk = max(1, budget // (E * n_f))
    for k0 in range(0, K, k_chunk):
        ks = slice(k0, min(K, k0 + k_chunk))
        nk = ks.stop - ks.start
        size = nk * E * n_f
        fine_re = np.zeros(size)
        fine_im = np.zeros(size)
        base = (np.arange(nk)[:, None] * E + np.arange(E)[None, :]) * n_f
        s_chunk = max(1, budget // (2 * nk * E))
        for s0 in range(0, len(phantom), s_chunk):
            ss = slice(s0, s0 + s_chunk)
            tau = t_tx_all[ss, ks, None] + t_rx_all[ss, None, :]
            amp = phantom.amplitudes[ss, None, None] * np.exp(-2j * np.pi * f0 * tau)
            if acq.spreading:
                sub = Phantom(phantom.positions[ss], phantom.amplitudes[ss])
                amp = amp * _spreading(sub, scheme, rx_array)[:, ks]
            pos = (tau - acq.t_min) * (fs * R)
            j0 = np.floor(pos).astype(np.int64)
            w1 = pos - j0
            idx = (base[None] + j0).ravel()
            for off, w in ((0, 1 - w1), (1, w1)):
                a = (amp * w).ravel()
                fine_re += np.bincount(idx + off, weights=a.real, minlength=size)
                fine_im += np.bincount(idx + off, weights=a.imag, minlength=size)
        fine = (fine_re + 1j * fine_im).reshape(nk * E, n_f)
        del fine_re, fine_im
        full = signal.fftconvolve(fine, kernel[None, :], axes=1)
        out[ks] = full[:, L : L + n_f : R].reshape(nk, E, n_t)
    return IQCube(out, fs, f0, acq.t_min, rx_array, scheme, c)


def acquisition_window(phantom: Phantom, scheme: TransmitScheme, rx_array: ElementSet, f0=CENTER_FREQUENCY,
                       n_cycles=N_CYCLES, c=SOUND_SPEED, margin=1e-6):
    """Smallest ``(t_min, t_max)`` covering every echo plus ``margin`` seconds."""
    half = pulse_half_support(f0, n_cycles)
    lo, hi = _delay_bounds(phantom, scheme, rx_array, c)
    return max(0.0, float(lo.min()) - half - margin), float(hi.max()) + half + margin


def make_cyst_phantom(background_density, cyst_center, cyst_radius, volume_box, seed=0, label="cyst") -> Phantom:
    """Uniform random speckle in ``volume_box`` with an anechoic spherical cyst.

    ``volume_box`` is ``((x0, x1), (y0, y1), (z0, z1))`` in meters and
    ``background_density`` is in scatterers per cubic meter. Amplitudes are
    uniform on [0, 2] (unit mean).
    """
    if cyst_radius <= 0:
        raise ValueError("cyst radius must be positive")
    box = np.asarray(volume_box, dtype=float).reshape(3, 2)
    center = np.asarray(cyst_center, dtype=float)
    if np.any(center < box[:, 0]) or np.any(center > box[:, 1]):
        raise ValueError("cyst center lies outside the phantom box")
    volume = float(np.prod(box[:, 1] - box[:, 0]))
    n = int(round(background_density * volume))
    if n <= 0:
        raise ValueError("density yields zero scatterers")
    rng = np.random.default_rng(seed)
    pos = box[:, 0] + rng.random((n, 3)) * (box[:, 1] - box[:, 0])
    amp = rng.uniform(0.0, 2.0, n)
    keep = np.linalg.norm(pos - center, axis=1) > cyst_radius
    if not np.any(keep):
        raise ValueError("phantom is empty once the cyst is carved out")
    return Phantom(pos[keep], amp[keep], label)
