import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convbeam import formats
from convbeam.arrays import ElementSet, from_iterable, make_upa, named_sparse
from convbeam.beamform import ImagingGrid, Method, Volume
from convbeam.simulation import IQCube, TransmitScheme


def _cube(rng, K=2, arr=None, T=7):
    arr = arr or make_upa(1, 2)
    scheme = TransmitScheme.grid("diverging", np.linspace(-0.1, 0.1, K), [0.0], -4.8e-3, make_upa(2, 2))
    x = (rng.standard_normal((K, len(arr), T)) + 1j * rng.standard_normal((K, len(arr), T))).astype(np.complex64)
    return IQCube(x, 12e6, 3e6, 1.25e-5, arr, scheme, 1540.0)


@settings(max_examples=30, deadline=None)
@given(st.sets(st.tuples(st.integers(-20, 20), st.integers(-20, 20)), min_size=1, max_size=40),
       st.floats(1e-5, 1e-3), st.floats(1e-5, 1e-3))
def test_array_descriptor_roundtrip(points, px, py):
    arr = from_iterable(points, px, py)
    doc = formats.array_to_dict(arr)
    back = formats.array_from_dict(json.loads(json.dumps(doc)))
    assert back == arr
    assert np.array_equal(back.positions, arr.positions)


def test_array_descriptor_file_and_errors(tmp_path):
    arr = named_sparse("nested", preset="III")
    formats.save_array(arr, tmp_path / "a.json")
    assert formats.load_array(tmp_path / "a.json") == arr
    assert set(json.loads((tmp_path / "a.json").read_text())) == {"pitch_x_m", "pitch_y_m", "positions"}
    with pytest.raises(ValueError):
        formats.array_from_dict({"positions": [[0, 0]]})


def test_iqcube_roundtrip_is_bitwise(tmp_path):
    cube = _cube(np.random.default_rng(0))
    path = tmp_path / "c.iqc"
    formats.write_iqcube(cube, path)
    back = formats.read_iqcube(path)
    assert back.samples.dtype == np.complex64
    assert back.samples.tobytes() == cube.samples.tobytes()
    assert (back.sample_rate, back.center_freq, back.start_time, back.sound_speed) == (12e6, 3e6, 1.25e-5, 1540.0)
    assert back.rx_array == cube.rx_array
    assert np.array_equal(back.scheme.alphas, cube.scheme.alphas)
    assert back.scheme.aperture == cube.scheme.aperture
    formats.write_iqcube(back, tmp_path / "d.iqc")
    assert (tmp_path / "d.iqc").read_bytes() == path.read_bytes()


def test_iqcube_header_layout(tmp_path):
    cube = _cube(np.random.default_rng(1), K=3, T=5)
    path = tmp_path / "c.iqc"
    formats.write_iqcube(cube, path)
    data = path.read_bytes()
    assert data[:4] == b"IQC1"
    K, E, T, fs, f0, t0, c = struct.unpack_from("<3I4d", data, 4)
    assert (K, E, T, fs, f0, t0, c) == (3, 15, 5, 12e6, 3e6, 1.25e-5, 1540.0)
    off = 4 + 12 + 32
    pos = np.frombuffer(data, "<i4", 2 * E, off).reshape(E, 2)
    assert np.array_equal(pos, cube.rx_array.positions)
    off += 8 * E
    first = np.frombuffer(data, "<f4", 2, off)
    assert first[0] == cube.samples[0, 0, 0].real and first[1] == cube.samples[0, 0, 0].imag


def test_iqcube_without_metadata_needs_pitch_and_scheme(tmp_path):
    cube = _cube(np.random.default_rng(2))
    path = tmp_path / "c.iqc"
    formats.write_iqcube(cube, path)
    data = path.read_bytes()
    bare = data[: data.rindex(b"META")]
    (tmp_path / "bare.iqc").write_bytes(bare)
    with pytest.raises(ValueError, match="pitch"):
        formats.read_iqcube(tmp_path / "bare.iqc")
    with pytest.raises(ValueError, match="scheme"):
        formats.read_iqcube(tmp_path / "bare.iqc", pitch=(300e-6, 300e-6))
    back = formats.read_iqcube(tmp_path / "bare.iqc", pitch=(300e-6, 300e-6), scheme=cube.scheme)
    assert back.samples.tobytes() == cube.samples.tobytes()


def test_iqcube_reader_sorts_foreign_element_order(tmp_path):
    cube = _cube(np.random.default_rng(3))
    path = tmp_path / "c.iqc"
    formats.write_iqcube(cube, path)
    data = bytearray(path.read_bytes())
    E = len(cube.rx_array)
    off = 4 + 12 + 32
    perm = np.arange(E)[::-1]
    data[off : off + 8 * E] = np.ascontiguousarray(cube.rx_array.positions[perm], "<i4").tobytes()
    body = off + 8 * E
    K, _, T = cube.samples.shape
    n = K * E * T
    data[body : body + 8 * n] = np.ascontiguousarray(cube.samples[:, perm], "<c8").tobytes()
    (tmp_path / "p.iqc").write_bytes(bytes(data))
    back = formats.read_iqcube(tmp_path / "p.iqc")
    assert back.samples.tobytes() == cube.samples.tobytes()


def test_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"NOPE" + bytes(100))
    with pytest.raises(ValueError):
        formats.read_iqcube(tmp_path / "x")
    with pytest.raises(ValueError):
        formats.read_volume(tmp_path / "x")


@pytest.mark.parametrize("method", list(Method))
def test_volume_roundtrip_is_bitwise(tmp_path, method):
    rng = np.random.default_rng(4)
    grid = ImagingGrid.sector(np.deg2rad(np.linspace(-5, 5, 4)), np.deg2rad([-1, 1]), np.linspace(0.02, 0.03, 6))
    vals = (rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)).astype(np.complex64)
    vol = Volume(vals, grid, method, "abc123:label", 169)
    path = tmp_path / "v.bvol"
    formats.write_volume(vol, path)
    back = formats.read_volume(path)
    assert back.values.tobytes() == vol.values.tobytes()
    assert back.grid == grid
    assert (back.beamformer, back.provenance, back.n_elements) == (method, "abc123:label", 169)
    formats.write_volume(back, tmp_path / "w.bvol")
    assert (tmp_path / "w.bvol").read_bytes() == path.read_bytes()


def test_complex128_is_stored_as_complex64(tmp_path):
    grid = ImagingGrid.sector([0.0], [0.0], [0.02])
    vol = Volume(np.array([[[1 / 3 + 0.1j]]]), grid, Method.DAS)
    formats.write_volume(vol, tmp_path / "v.bvol")
    assert formats.read_volume(tmp_path / "v.bvol").values[0, 0, 0] == np.complex64(1 / 3 + 0.1j)


def test_element_set_default_pitch_survives():
    arr = ElementSet([[0, 0], [1, 1]])
    assert formats.array_from_dict(formats.array_to_dict(arr)).pitch_x == 300e-6
