import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convbeam.beamform import ImagingGrid, Method, Volume
from convbeam.metrics import (
    SliceSpec,
    contrast_ratio,
    default_cr_regions,
    envelope_logcompress,
    fwhm,
    peak_index,
    profile,
    profile_width,
    sphere_mask,
)

GRID = ImagingGrid.sector(np.deg2rad(np.linspace(-10, 10, 81)), np.deg2rad([-1.0, 0.0, 1.0]), np.linspace(0.035, 0.045, 101))


def _vol(values, grid=GRID):
    return Volume(np.asarray(values, dtype=complex), grid, Method.DAS)


def _gaussian_volume(sigma_m, phase=0.0, scale=1.0):
    pts = GRID.points()
    r2 = pts[..., 0] ** 2 + pts[..., 1] ** 2 + ((pts[..., 2] - 0.04) / 0.2) ** 2
    return _vol(scale * np.exp(1j * phase) * np.exp(-0.5 * r2 / sigma_m**2))


def test_logcompress_peak_is_zero_and_floor_applied():
    rng = np.random.default_rng(0)
    v = _vol(rng.standard_normal(GRID.shape) * 1e-5 + 1j * rng.standard_normal(GRID.shape))
    img = envelope_logcompress(v, 40.0)
    assert img.db_values.max() == 0.0
    assert img.db_values.min() >= -40.0
    assert img.db_values.shape == (81, 101)
    assert envelope_logcompress(v, 40.0, SliceSpec("yz")).db_values.shape == (3, 101)


def test_logcompress_zero_volume_raises():
    with pytest.raises(ValueError):
        envelope_logcompress(_vol(np.zeros(GRID.shape)))
    with pytest.raises(ValueError):
        SliceSpec("xy").take(np.zeros(GRID.shape))


def test_contrast_ratio_known_levels():
    cm, bm = default_cr_regions(GRID, [0, 0, 0.04], 3e-3)
    values = np.ones(GRID.shape)
    values[cm] = 0.1
    assert contrast_ratio(_vol(values), cm, bm) == pytest.approx(-20.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-6, 1e6), st.floats(-np.pi, np.pi))
def test_contrast_ratio_scale_and_phase_invariant(s, ph):
    rng = np.random.default_rng(1)
    vals = rng.standard_normal(GRID.shape) + 1j * rng.standard_normal(GRID.shape)
    cm, bm = default_cr_regions(GRID, [0, 0, 0.04], 3e-3)
    a = contrast_ratio(_vol(vals), cm, bm)
    b = contrast_ratio(_vol(s * np.exp(1j * ph) * vals), cm, bm)
    assert b == pytest.approx(a, abs=1e-9)


def test_contrast_ratio_region_errors():
    cm, bm = default_cr_regions(GRID, [0, 0, 0.04], 3e-3)
    v = _vol(np.ones(GRID.shape))
    with pytest.raises(ValueError):
        contrast_ratio(v, np.zeros(GRID.shape, bool), bm)
    with pytest.raises(ValueError):
        contrast_ratio(v, cm, cm)
    with pytest.raises(ValueError):
        contrast_ratio(_vol(np.zeros(GRID.shape)), cm, bm)


def test_default_regions_geometry():
    cm, bm = default_cr_regions(GRID, [0, 0, 0.04], 3e-3)
    assert cm.any() and bm.any() and not np.any(cm & bm)
    pts = GRID.points()
    assert np.all(np.linalg.norm(pts[cm] - [0, 0, 0.04], axis=1) <= 1.8e-3)
    assert np.all(np.linalg.norm(pts[bm] - [6e-3, 0, 0.04], axis=1) <= 1.8e-3)
    assert abs(int(cm.sum()) - int(bm.sum())) <= 0.15 * cm.sum()
    assert np.array_equal(sphere_mask(GRID, [0, 0, 0.04], 1.8e-3), cm)


def test_gaussian_fwhm_within_one_grid_step():
    sigma = 1e-3
    v = _gaussian_volume(sigma)
    idx = peak_index(v)
    assert idx == (40, 1, 50)
    step = 0.04 * np.deg2rad(0.25)
    assert fwhm(v, "lateral_x", idx) == pytest.approx(2 * np.sqrt(2 * np.log(2)) * sigma, abs=step)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(-np.pi, np.pi))
def test_fwhm_scale_and_phase_invariant(s, ph):
    base = _gaussian_volume(8e-4)
    idx = peak_index(base)
    w0 = fwhm(base, "lateral_x", idx)
    assert fwhm(_gaussian_volume(8e-4, ph, s), "lateral_x", idx) == pytest.approx(w0, rel=1e-9)


def test_fwhm_errors():
    v = _gaussian_volume(1e-3)
    with pytest.raises(ValueError, match="local maximum"):
        fwhm(v, "lateral_x", (30, 1, 50))
    with pytest.raises(ValueError):
        fwhm(v, "diagonal", (40, 1, 50))
    flat = _vol(np.ones(GRID.shape))
    with pytest.raises(ValueError, match="unresolved"):
        fwhm(flat, "lateral_x", (40, 1, 50))


def test_profile_width_of_triangle():
    coord = np.arange(11.0)
    env = np.maximum(0, 5 - np.abs(coord - 5))
    assert profile_width(coord, env, 5) == pytest.approx(5.0)


def test_profile_arc_length_axis():
    coord, env = profile(_gaussian_volume(1e-3), "axial", (40, 1, 50))
    assert coord[0] == 0.0
    np.testing.assert_allclose(np.diff(coord), 1e-4, rtol=1e-9)
    assert env.shape == (101,)


def test_zero_profile_is_unresolved():
    with pytest.raises(ValueError, match="unresolved"):
        profile_width(np.arange(5.0), np.zeros(5), 2)
