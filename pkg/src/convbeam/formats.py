"""On-disk formats: array descriptors (JSON), IQ cubes (IQC1) and volumes (BVL1).

IQC1 layout, little-endian::

    b"IQC1"
    u32 n_events, u32 n_elements, u32 n_samples
    f64 sample_rate, f64 center_freq, f64 start_time, f64 sound_speed
    i32[n_elements, 2] element positions
    f32[n_events, n_elements, n_samples, 2] interleaved (real, imag)
    b"META" u32 length, UTF-8 JSON {pitch, transmit scheme}

BVL1 layout, little-endian::

    b"BVL1"
    u32 n_a, u32 n_b, u32 n_depths, u32 method code, u32 n_elements
    64 bytes provenance (ASCII, NUL padded)
    f64[n_a, n_b] thetas, f64[n_a, n_b] phis, f64[n_depths] depths
    f32[n_a, n_b, n_depths, 2] interleaved (real, imag)

Samples are stored as complex64; saving a complex128 array rounds it.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .arrays import ElementSet
from .beamform import ImagingGrid, Method, Volume
from .simulation import IQCube, TransmitScheme

IQC_MAGIC = b"IQC1"
BVL_MAGIC = b"BVL1"
META_MAGIC = b"META"
_METHOD_CODES = {Method.DAS: 0, Method.COBA3D: 1, Method.SCOBA3D: 2}
_METHODS = {v: k for k, v in _METHOD_CODES.items()}


def array_to_dict(elements: ElementSet) -> dict:
    return {
        "pitch_x_m": elements.pitch_x,
        "pitch_y_m": elements.pitch_y,
        "positions": [[int(n), int(m)] for n, m in elements.positions],
    }


def array_from_dict(doc: dict) -> ElementSet:
    try:
        return ElementSet(np.array(doc["positions"], dtype=np.int64).reshape(-1, 2), doc["pitch_x_m"], doc["pitch_y_m"])
    except KeyError as exc:
        raise ValueError(f"array descriptor is missing {exc}") from None


def save_array(elements: ElementSet, path):
    Path(path).write_text(json.dumps(array_to_dict(elements), indent=1) + "\n")


def load_array(path) -> ElementSet:
    return array_from_dict(json.loads(Path(path).read_text()))


def scheme_to_dict(scheme: TransmitScheme) -> dict:
    return {
        "mode": scheme.mode,
        "alpha_rad": scheme.alphas.tolist(),
        "beta_rad": scheme.betas.tolist(),
        "focal_z_m": scheme.focal_z,
        "aperture": array_to_dict(scheme.aperture),
    }


def scheme_from_dict(doc: dict) -> TransmitScheme:
    return TransmitScheme(doc["mode"], doc["alpha_rad"], doc["beta_rad"], doc["focal_z_m"], array_from_dict(doc["aperture"]))


def _interleave(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype="<c8").tobytes()


def write_iqcube(cube: IQCube, path):
    K, E, T = cube.samples.shape
    header = IQC_MAGIC + struct.pack("<3I4d", K, E, T, cube.sample_rate, cube.center_freq, cube.start_time, cube.sound_speed)
    positions = np.ascontiguousarray(cube.rx_array.positions, dtype="<i4").tobytes()
    meta = json.dumps(
        {"pitch_x_m": cube.rx_array.pitch_x, "pitch_y_m": cube.rx_array.pitch_y, "scheme": scheme_to_dict(cube.scheme)},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(positions)
        fh.write(_interleave(cube.samples))
        fh.write(META_MAGIC + struct.pack("<I", len(meta)) + meta)


def read_iqcube(path, pitch=None, scheme: TransmitScheme | None = None) -> IQCube:
    """Read an IQC1 file.

    Files without the trailing metadata block need ``pitch`` (a pair) and
    ``scheme`` supplied by the caller.
    """
    data = Path(path).read_bytes()
    if data[:4] != IQC_MAGIC:
        raise ValueError(f"{path}: not an IQC1 file")
    K, E, T, fs, f0, t0, c = struct.unpack_from("<3I4d", data, 4)
    off = 4 + struct.calcsize("<3I4d")
    positions = np.frombuffer(data, dtype="<i4", count=2 * E, offset=off).reshape(E, 2).astype(np.int64)
    off += 8 * E
    n = K * E * T
    samples = np.frombuffer(data, dtype="<c8", count=n, offset=off).reshape(K, E, T).astype(np.complex64)
    off += 8 * n
    meta = {}
    if data[off : off + 4] == META_MAGIC:
        (length,) = struct.unpack_from("<I", data, off + 4)
        meta = json.loads(data[off + 8 : off + 8 + length])
    if pitch is None:
        if "pitch_x_m" not in meta:
            raise ValueError(f"{path}: element pitch not stored; pass it explicitly")
        pitch = (meta["pitch_x_m"], meta["pitch_y_m"])
    if scheme is None:
        if "scheme" not in meta:
            raise ValueError(f"{path}: transmit scheme not stored; pass it explicitly")
        scheme = scheme_from_dict(meta["scheme"])
    rx = ElementSet(positions, pitch[0], pitch[1])
    if not np.array_equal(rx.positions, positions):
        order = rx.index_of(positions)
        samples = samples[:, np.argsort(order)]
    return IQCube(samples, fs, f0, t0, rx, scheme, c)


def write_volume(vol: Volume, path):
    A, B, D = vol.grid.shape
    prov = vol.provenance.encode("ascii")[:64].ljust(64, b"\0")
    with open(path, "wb") as fh:
        fh.write(BVL_MAGIC + struct.pack("<5I", A, B, D, _METHOD_CODES[vol.beamformer], vol.n_elements) + prov)
        fh.write(np.ascontiguousarray(vol.grid.thetas, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(vol.grid.phis, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(vol.grid.depths, dtype="<f8").tobytes())
        fh.write(_interleave(vol.values))


def read_volume(path) -> Volume:
    data = Path(path).read_bytes()
    if data[:4] != BVL_MAGIC:
        raise ValueError(f"{path}: not a BVL1 file")
    A, B, D, code, n_el = struct.unpack_from("<5I", data, 4)
    off = 4 + 20
    prov = data[off : off + 64].rstrip(b"\0").decode("ascii")
    off += 64
    th = np.frombuffer(data, "<f8", A * B, off).reshape(A, B).copy()
    off += 8 * A * B
    ph = np.frombuffer(data, "<f8", A * B, off).reshape(A, B).copy()
    off += 8 * A * B
    depths = np.frombuffer(data, "<f8", D, off).copy()
    off += 8 * D
    values = np.frombuffer(data, "<c8", A * B * D, off).reshape(A, B, D).astype(np.complex64)
    return Volume(values, ImagingGrid(th, ph, depths), _METHODS[code], prov, n_el)
