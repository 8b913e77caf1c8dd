"""Element-set algebra for planar transducer arrays.

Arrays live on an integer lattice: the element ``(n, m)`` sits at
``(n * pitch_x, m * pitch_y, 0)``. Positions are kept as sorted coordinate
lists so that large fractal arrays stay compact; dense indicator matrices are
only built inside the convolution routines.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np
from scipy import signal

logger = logging.getLogger(__name__)

DEFAULT_PITCH = 300e-6

#: (inner half-extent, outer stride) of the nested layouts used as
#: "Array I/II/III" on a 31x31 aperture (225, 169 and 121 elements).
NESTED_PRESETS = {"I": (6, 13), "II": (4, 7), "III": (3, 7)}


def _as_positions(positions) -> np.ndarray:
    arr = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
    if arr.size == 0:
        return arr
    arr = np.unique(arr, axis=0)  # sorted lexicographically, duplicate-free
    return arr


@dataclass(frozen=True, eq=False)
class ElementSet:
    """Integer lattice positions of transducer elements plus the physical pitch.

    Attributes
    ----------
    positions : np.ndarray
        ``(K, 2)`` int64 array of ``(n, m)`` indices, sorted and unique.
    pitch_x, pitch_y : float
        Element spacing in meters.
    notes : tuple of str
        Diagnostics attached by constructors (e.g. fractal design warnings).
    """

    positions: np.ndarray
    pitch_x: float = DEFAULT_PITCH
    pitch_y: float = DEFAULT_PITCH
    notes: tuple = field(default=())

    def __post_init__(self):
        if not (self.pitch_x > 0 and self.pitch_y > 0):
            raise ValueError("pitches must be positive")
        pos = _as_positions(self.positions)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "pitch_x", float(self.pitch_x))
        object.__setattr__(self, "pitch_y", float(self.pitch_y))

    def __len__(self):
        return len(self.positions)

    def __iter__(self):
        return (tuple(int(v) for v in p) for p in self.positions)

    def __contains__(self, item):
        n, m = item
        return bool(np.any((self.positions[:, 0] == n) & (self.positions[:, 1] == m)))

    def __eq__(self, other):
        if not isinstance(other, ElementSet):
            return NotImplemented
        return (
            self.pitch_x == other.pitch_x
            and self.pitch_y == other.pitch_y
            and np.array_equal(self.positions, other.positions)
        )

    def __hash__(self):
        return hash((self.positions.tobytes(), self.pitch_x, self.pitch_y))

    def __repr__(self):
        return f"ElementSet({len(self)} elements, pitch=({self.pitch_x:g}, {self.pitch_y:g}))"

    @property
    def half_extent(self) -> tuple[int, int]:
        """``(N, M)`` recovered as the largest ``|n|`` and ``|m|``."""
        if len(self) == 0:
            return (0, 0)
        return tuple(int(v) for v in np.abs(self.positions).max(axis=0))

    def bounding_box(self) -> tuple[int, int, int, int]:
        """``(n_min, n_max, m_min, m_max)``."""
        lo = self.positions.min(axis=0)
        hi = self.positions.max(axis=0)
        return int(lo[0]), int(hi[0]), int(lo[1]), int(hi[1])

    def coordinates(self) -> np.ndarray:
        """Physical ``(K, 3)`` element coordinates in meters."""
        xyz = np.zeros((len(self), 3))
        xyz[:, 0] = self.positions[:, 0] * self.pitch_x
        xyz[:, 1] = self.positions[:, 1] * self.pitch_y
        return xyz

    def as_set(self) -> set:
        return set(self)

    def indicator(self):
        """Dense 0/1 matrix over the bounding box and the index of its origin.

        Returns ``(matrix, (n_min, m_min))``; ``matrix[i, j]`` covers lattice
        point ``(n_min + i, m_min + j)``.
        """
        n0, n1, m0, m1 = self.bounding_box()
        ind = np.zeros((n1 - n0 + 1, m1 - m0 + 1))
        ind[self.positions[:, 0] - n0, self.positions[:, 1] - m0] = 1.0
        return ind, (n0, m0)

    def index_of(self, positions) -> np.ndarray:
        """Row index in ``self.positions`` for each query position (-1 if absent)."""
        q = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
        lookup = {p: i for i, p in enumerate(self)}
        return np.array([lookup.get((int(a), int(b)), -1) for a, b in q], dtype=np.int64)

    def with_positions(self, positions, notes=()) -> "ElementSet":
        return ElementSet(positions, self.pitch_x, self.pitch_y, tuple(notes))


class ApodizationKind(str, Enum):
    INTRINSIC = "intrinsic-count"
    USER = "user"
    EFFECTIVE = "effective"


@dataclass(frozen=True, eq=False)
class ApodizationMap:
    """Real weights indexed by lattice position.

    ``positions`` is sorted like :class:`ElementSet` and ``values[i]`` is the
    weight at ``positions[i]``. Positions absent from the map have weight 0.
    """

    positions: np.ndarray
    values: np.ndarray
    kind: ApodizationKind = ApodizationKind.USER

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.int64).reshape(-1, 2)
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if len(pos) != len(vals):
            raise ValueError("positions and values differ in length")
        order = np.lexsort((pos[:, 1], pos[:, 0]))
        pos, vals = pos[order], vals[order]
        if len(pos) > 1 and np.any(np.all(np.diff(pos, axis=0) == 0, axis=1)):
            raise ValueError("duplicate positions in apodization map")
        if not np.all(np.isfinite(vals)):
            raise ValueError("apodization weights must be finite")
        pos.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "kind", ApodizationKind(self.kind))

    def __len__(self):
        return len(self.positions)

    @classmethod
    def from_dict(cls, weights: dict, kind=ApodizationKind.USER) -> "ApodizationMap":
        items = sorted(weights.items())
        pos = [k for k, _ in items]
        vals = [v for _, v in items]
        return cls(np.array(pos, dtype=np.int64).reshape(-1, 2), vals, kind)

    @classmethod
    def uniform(cls, elements: ElementSet, value=1.0, kind=ApodizationKind.USER):
        return cls(elements.positions, np.full(len(elements), float(value)), kind)

    def as_dict(self) -> dict:
        return {(int(n), int(m)): float(v) for (n, m), v in zip(self.positions, self.values)}

    def support(self, pitch_x=DEFAULT_PITCH, pitch_y=DEFAULT_PITCH) -> ElementSet:
        """Positions carrying a non-zero weight."""
        return ElementSet(self.positions[self.values != 0], pitch_x, pitch_y)

    def lookup(self, positions) -> np.ndarray:
        """Weights at the query positions, 0 where the map has no entry."""
        d = self.as_dict()
        q = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
        return np.array([d.get((int(a), int(b)), 0.0) for a, b in q])

    def total(self) -> float:
        return float(self.values.sum())


def make_upa(half_extent_x: int, half_extent_y: int, pitch_x=DEFAULT_PITCH, pitch_y=DEFAULT_PITCH):
    """Uniform planar array with indices ``-N..N`` by ``-M..M``."""
    if half_extent_x < 0 or half_extent_y < 0:
        raise ValueError("half extents must be non-negative")
    n = np.arange(-half_extent_x, half_extent_x + 1)
    m = np.arange(-half_extent_y, half_extent_y + 1)
    nn, mm = np.meshgrid(n, m, indexing="ij")
    return ElementSet(np.column_stack([nn.ravel(), mm.ravel()]), pitch_x, pitch_y)


def _require_nonempty(elements: ElementSet):
    if len(elements) == 0:
        raise ValueError("empty element set")


def intrinsic_apodization(elements: ElementSet) -> ApodizationMap:
    """Multiplicity of every sum co-array position.

    Computed as the 2D auto-convolution of the indicator matrix; counts are
    rounded back to integers, which is exact for any realistic array size.
    """
    _require_nonempty(elements)
    ind, (n0, m0) = elements.indicator()
    counts = np.rint(signal.fftconvolve(ind, ind)).astype(np.int64)
    ii, jj = np.nonzero(counts)
    pos = np.column_stack([ii + 2 * n0, jj + 2 * m0])
    return ApodizationMap(pos, counts[ii, jj].astype(float), ApodizationKind.INTRINSIC)


def sum_coarray(elements: ElementSet) -> ElementSet:
    """All pairwise sums of element positions; pitches are inherited."""
    _require_nonempty(elements)
    apod = intrinsic_apodization(elements)
    return elements.with_positions(apod.positions)


def is_sparse_wrt(sparse: ElementSet, full: ElementSet) -> bool:
    """True iff ``sparse`` is a proper subset of ``full`` and ``full`` lies in its sum co-array."""
    if sparse.pitch_x != full.pitch_x or sparse.pitch_y != full.pitch_y:
        raise ValueError("pitch mismatch between arrays")
    t, e = sparse.as_set(), full.as_set()
    if not (t < e):
        return False
    return e <= sum_coarray(sparse).as_set()


def is_symmetric(elements: ElementSet) -> bool:
    s = elements.as_set()
    return all((-n, -m) in s for n, m in s)


def is_full_coarray(elements: ElementSet) -> bool:
    """True iff the sum co-array fills its bounding box (i.e. is a UPA)."""
    if len(elements) == 0:
        return False
    co = sum_coarray(elements)
    n0, n1, m0, m1 = co.bounding_box()
    return len(co) == (n1 - n0 + 1) * (m1 - m0 + 1)


def is_upa(elements: ElementSet) -> bool:
    """True iff the elements fill their own bounding box."""
    if len(elements) == 0:
        return False
    n0, n1, m0, m1 = elements.bounding_box()
    return len(elements) == (n1 - n0 + 1) * (m1 - m0 + 1)


def coarray_extent(elements: ElementSet) -> tuple[int, int]:
    """Element counts per row and per column of the sum co-array bounding box."""
    n0, n1, m0, m1 = sum_coarray(elements).bounding_box()
    return n1 - n0 + 1, m1 - m0 + 1


def fractal_expand(generator: ElementSet, order: int) -> ElementSet:
    """Recursive fractal array built from ``generator``.

    ``F_0`` is the single origin element and ``F_{r+1}`` places one copy of
    ``F_r`` at every generator element, scaled by ``(C_x**r, C_y**r)``, where
    ``C_x``, ``C_y`` are the row/column counts of the generator's sum co-array.
    Generators without a full co-array are expanded anyway and the result
    carries a note saying so.
    """
    _require_nonempty(generator)
    if order < 0:
        raise ValueError("order must be non-negative")
    notes = []
    if not is_full_coarray(generator):
        msg = "generator sum co-array is not full; fractal properties are not guaranteed"
        logger.warning(msg)
        notes.append(msg)
    cx, cy = coarray_extent(generator)
    gen = generator.positions
    current = np.zeros((1, 2), dtype=np.int64)
    for r in range(order):
        shift = gen * np.array([cx**r, cy**r], dtype=np.int64)
        current = (shift[:, None, :] + current[None, :, :]).reshape(-1, 2)
    return generator.with_positions(current, notes)


def nested_1d(inner_half: int, stride: int, half_aperture: int) -> np.ndarray:
    """Symmetric 1D nested set: dense ``[-a, a]`` plus multiples of ``stride``."""
    if inner_half < 0 or stride < 1 or half_aperture < inner_half:
        raise ValueError("invalid nested-array parameters")
    k = np.arange(-(half_aperture // stride), half_aperture // stride + 1) * stride
    return np.union1d(np.arange(-inner_half, inner_half + 1), k)


def named_sparse(shape: str, half_extent: int = 15, pitch_x=DEFAULT_PITCH, pitch_y=DEFAULT_PITCH, **params):
    """Named sparse layouts on a ``(2H+1) x (2H+1)`` aperture.

    Parameters
    ----------
    shape : {"plus", "x", "box", "nested"}
        ``plus`` is the central row and column, ``x`` the two diagonals,
        ``box`` the perimeter ring. ``nested`` is the Cartesian product of a
        1D nested set (``inner_half`` dense half-extent, outer ``stride``,
        defaulting to ``2 * inner_half + 1``); ``preset="I"|"II"|"III"``
        selects the 225/169/121-element layouts.
    """
    h = int(half_extent)
    if h < 0:
        raise ValueError("half_extent must be non-negative")
    idx = np.arange(-h, h + 1)
    zeros = np.zeros_like(idx)
    if shape == "plus":
        pos = np.vstack([np.column_stack([idx, zeros]), np.column_stack([zeros, idx])])
    elif shape == "x":
        pos = np.vstack([np.column_stack([idx, idx]), np.column_stack([idx, -idx])])
    elif shape == "box":
        upa = make_upa(h, h).positions
        pos = upa[np.abs(upa).max(axis=1) == h]
    elif shape == "nested":
        preset = params.pop("preset", None)
        if preset is not None:
            if preset not in NESTED_PRESETS:
                raise ValueError(f"unknown nested preset {preset!r}")
            inner, stride = NESTED_PRESETS[preset]
        else:
            inner = int(params.pop("inner_half", 2))
            stride = int(params.pop("stride", 2 * inner + 1))
        if stride > 2 * inner + 1:
            raise ValueError("stride larger than 2*inner_half+1 leaves co-array holes")
        xs = nested_1d(inner, stride, h)
        nn, mm = np.meshgrid(xs, xs, indexing="ij")
        pos = np.column_stack([nn.ravel(), mm.ravel()])
    else:
        raise ValueError(f"unknown sparse shape {shape!r}")
    if params:
        raise ValueError(f"unexpected parameters for {shape!r}: {sorted(params)}")
    return ElementSet(pos, pitch_x, pitch_y)


def from_iterable(positions: Iterable, pitch_x=DEFAULT_PITCH, pitch_y=DEFAULT_PITCH) -> ElementSet:
    return ElementSet(np.array(list(positions), dtype=np.int64).reshape(-1, 2), pitch_x, pitch_y)
