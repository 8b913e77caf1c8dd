import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convbeam.arrays import (
    ApodizationKind,
    ApodizationMap,
    ElementSet,
    coarray_extent,
    fractal_expand,
    from_iterable,
    intrinsic_apodization,
    is_full_coarray,
    is_sparse_wrt,
    is_symmetric,
    is_upa,
    make_upa,
    named_sparse,
    nested_1d,
    sum_coarray,
)
from oracles import pair_counts, upa_apodization

lattice_sets = st.sets(st.tuples(st.integers(-4, 4), st.integers(-4, 4)), min_size=1, max_size=20)


def test_upa_size_and_layout():
    upa = make_upa(15, 15)
    assert len(upa) == 961
    assert upa.half_extent == (15, 15)
    assert is_upa(upa)


def test_upa_coarray_is_doubled_upa():
    co = sum_coarray(make_upa(15, 15))
    assert len(co) == 3721
    assert co == make_upa(30, 30)


def test_upa_apodization_closed_form():
    N, M = 4, 6
    apod = intrinsic_apodization(make_upa(N, M)).as_dict()
    for (n, m), v in apod.items():
        assert v == upa_apodization(n, m, N, M)
    assert apod[(0, 0)] == (2 * N + 1) * (2 * M + 1)


def test_center_count_of_31x31():
    assert intrinsic_apodization(make_upa(15, 15)).as_dict()[(0, 0)] == 961


@settings(max_examples=200, deadline=None)
@given(lattice_sets)
def test_apodization_matches_pair_enumeration(points):
    arr = from_iterable(points)
    apod = intrinsic_apodization(arr)
    assert apod.kind is ApodizationKind.INTRINSIC
    assert apod.as_dict() == {k: float(v) for k, v in pair_counts(points).items()}


@settings(max_examples=100, deadline=None)
@given(lattice_sets)
def test_apodization_total_is_square_of_size(points):
    arr = from_iterable(points)
    assert intrinsic_apodization(arr).total() == len(arr) ** 2


@settings(max_examples=100, deadline=None)
@given(lattice_sets)
def test_coarray_of_symmetric_set_is_symmetric(points):
    sym = from_iterable(set(points) | {(-n, -m) for n, m in points})
    assert is_symmetric(sym)
    assert is_symmetric(sum_coarray(sym))


@settings(max_examples=100, deadline=None)
@given(lattice_sets)
def test_upa_detection_matches_bounding_box_count(points):
    arr = from_iterable(points)
    n0, n1, m0, m1 = arr.bounding_box()
    assert is_upa(arr) == (len(points) == (n1 - n0 + 1) * (m1 - m0 + 1))


def test_element_set_normalizes_order_and_duplicates():
    a = ElementSet(np.array([[1, 0], [0, 0], [1, 0]]))
    assert a.positions.tolist() == [[0, 0], [1, 0]]
    assert a == ElementSet([[0, 0], [1, 0]])
    assert hash(a) == hash(ElementSet([[1, 0], [0, 0]]))
    assert (1, 0) in a and (2, 0) not in a


def test_element_set_rejects_bad_pitch():
    with pytest.raises(ValueError):
        ElementSet([[0, 0]], pitch_x=0.0)


def test_coordinates_use_pitch():
    arr = ElementSet([[2, -1]], 1e-3, 2e-3)
    assert np.allclose(arr.coordinates(), [[2e-3, -2e-3, 0.0]])


def test_indicator_roundtrip():
    arr = from_iterable([(-1, 2), (0, 0), (3, 1)])
    ind, (n0, m0) = arr.indicator()
    ii, jj = np.nonzero(ind)
    assert sorted(zip(ii + n0, jj + m0)) == sorted(map(tuple, arr.positions.tolist()))


def test_empty_set_errors():
    empty = ElementSet(np.zeros((0, 2), dtype=int))
    with pytest.raises(ValueError):
        intrinsic_apodization(empty)
    assert not is_full_coarray(empty)


def test_apodization_map_validation():
    with pytest.raises(ValueError):
        ApodizationMap([[0, 0], [0, 0]], [1.0, 2.0])
    with pytest.raises(ValueError):
        ApodizationMap([[0, 0]], [np.nan])
    w = ApodizationMap.from_dict({(1, 0): 2.0, (0, 0): 1.0})
    assert w.lookup([[0, 0], [1, 0], [5, 5]]).tolist() == [1.0, 2.0, 0.0]


def test_sparse_definition():
    full = make_upa(1, 1)
    plus = from_iterable([(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)])
    assert is_sparse_wrt(plus, full)
    assert not is_sparse_wrt(full, full)  # not a proper subset
    line = from_iterable([(0, 0), (1, 0)])
    assert not is_sparse_wrt(line, full)  # co-array misses (0, 1)


def test_sparse_check_rejects_pitch_mismatch():
    with pytest.raises(ValueError):
        is_sparse_wrt(make_upa(1, 1, 1e-3, 1e-3), make_upa(2, 2))


def test_full_coarray_detection():
    assert is_full_coarray(make_upa(2, 3))
    assert not is_full_coarray(from_iterable([(0, 0), (3, 0)]))


def test_coarray_extent_of_upa():
    assert coarray_extent(make_upa(1, 2)) == (5, 9)


def test_named_layout_counts():
    assert len(named_sparse("plus")) == 61
    assert len(named_sparse("x")) == 61
    assert len(named_sparse("box")) == 120
    assert [len(named_sparse("nested", preset=p)) for p in ("I", "II", "III")] == [225, 169, 121]


@pytest.mark.parametrize("shape", ["plus", "box"])
def test_named_layouts_sparse_against_31x31(shape):
    assert is_sparse_wrt(named_sparse(shape), make_upa(15, 15))


@pytest.mark.parametrize("preset", ["I", "II", "III"])
def test_nested_presets_sparse_against_31x31(preset):
    assert is_sparse_wrt(named_sparse("nested", preset=preset), make_upa(15, 15))


def test_x_layout_coarray_has_single_parity():
    co = sum_coarray(named_sparse("x"))
    assert len(co) == 1021
    assert np.all((co.positions.sum(axis=1) % 2) == 0)
    assert not is_sparse_wrt(named_sparse("x"), make_upa(15, 15))


def test_nested_rejects_hole_leaving_stride():
    with pytest.raises(ValueError):
        named_sparse("nested", inner_half=1, stride=4)


def test_named_rejects_unknown():
    with pytest.raises(ValueError):
        named_sparse("ring")
    with pytest.raises(ValueError):
        named_sparse("nested", preset="IV")
    with pytest.raises(ValueError):
        named_sparse("plus", stride=3)


def test_nested_1d_covers_aperture():
    xs = nested_1d(2, 5, 15)
    sums = {a + b for a in xs for b in xs}
    assert set(range(-15, 16)) <= sums


@pytest.mark.parametrize("order", [0, 1, 2, 3])
def test_fractal_of_3x3_counts(order):
    f = fractal_expand(make_upa(1, 1), order)
    assert len(f) == 9**order
    assert len(sum_coarray(f)) == 5 ** (2 * order)
    assert f.notes == ()


def test_fractal_order_one_is_generator():
    gen = from_iterable([(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)])
    assert fractal_expand(gen, 1) == gen


def test_fractal_non_full_generator_is_flagged(caplog):
    gen = from_iterable([(0, 0), (3, 0)])
    f = fractal_expand(gen, 2)
    assert f.notes and "not full" in f.notes[0]
    assert "not full" in caplog.text


def test_fractal_rejects_negative_order():
    with pytest.raises(ValueError):
        fractal_expand(make_upa(1, 1), -1)


def _symmetric_generators():
    box = [(n, m) for n in (-1, 0, 1) for m in (-1, 0, 1)]
    pairs = [p for p in box if p > (0, 0)]
    for center in (False, True):
        for k in range(len(pairs) + 1):
            for chosen in itertools.combinations(pairs, k):
                pts = [(0, 0)] if center else []
                for n, m in chosen:
                    pts += [(n, m), (-n, -m)]
                if pts:
                    yield from_iterable(pts)


def test_fractal_preserves_symmetry_and_fullness_order_two():
    gens = [g for g in _symmetric_generators() if is_full_coarray(g)]
    assert gens
    for g in gens:
        f = fractal_expand(g, 2)
        assert is_symmetric(f) and is_full_coarray(f)
