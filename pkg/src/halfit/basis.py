"""Zero-order indicator basis: enumeration, evaluation and design matrices.

Each atom is a pair ``(subset, knot)`` and evaluates to
``I(knot_j <= x_j for every j in subset)``. Subsets use 0-based column
indices.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass
from math import comb
from typing import Sequence, Tuple

import numba
import numpy as np
import scipy.sparse as sp

from .core import CapacityError, Dataset, FitConfig, InvalidInputError

MAX_DIMENSION = 20

Atom = Tuple[Tuple[int, ...], Tuple[float, ...]]


@dataclass(frozen=True)
class BasisSpec:
    """Ordered, duplicate-free collection of indicator atoms."""

    dimension: int
    subsets: Tuple[Tuple[int, ...], ...]
    knots: Tuple[Tuple[float, ...], ...]
    dedup: bool = True

    def __post_init__(self):
        if len(self.subsets) != len(self.knots):
            raise InvalidInputError("subsets and knots must have equal length")
        for s, u in zip(self.subsets, self.knots):
            if len(s) != len(u) or not s:
                raise InvalidInputError("each atom needs a nonempty subset and matching knot")
            if min(s) < 0 or max(s) >= self.dimension:
                raise InvalidInputError(f"subset {s} outside dimension {self.dimension}")

    def __len__(self) -> int:
        return len(self.subsets)

    @property
    def atoms(self) -> list:
        return list(zip(self.subsets, self.knots))

    @functools.cached_property
    def flat(self):
        """(atom_ptr, atom_cols, atom_knots) arrays for the compiled kernels."""
        ptr = np.zeros(len(self) + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([len(s) for s in self.subsets])
        cols = np.fromiter(itertools.chain.from_iterable(self.subsets), np.int64, ptr[-1])
        knots = np.fromiter(itertools.chain.from_iterable(self.knots), np.float64, ptr[-1])
        return ptr, cols, knots

    def select(self, index) -> "BasisSpec":
        index = np.asarray(index, dtype=np.int64)
        return BasisSpec(
            self.dimension,
            tuple(self.subsets[i] for i in index),
            tuple(self.knots[i] for i in index),
            self.dedup,
        )


def _subsets(d: int, cap: int):
    for k in range(1, cap + 1):
        yield from itertools.combinations(range(d), k)


def enumerate_basis(data, config: FitConfig | None = None) -> BasisSpec:
    """One atom per (nonempty subset, observation), deduplicated.

    Knots are the observed covariate values projected on each subset, so the
    raw count is ``n * (2**d - 1)`` before duplicates are removed. Covariates
    must already lie in the unit cube.
    """
    x = data.covariates if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    cap = None if config is None else config.max_subset_degree
    if cap is None:
        if d > MAX_DIMENSION:
            raise CapacityError(
                f"d={d} gives 2^d - 1 subsets; set max_subset_degree to cap interactions"
            )
        cap = d
    elif not 1 <= cap <= d:
        raise InvalidInputError(f"max_subset_degree must lie in [1, {d}]")
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise InvalidInputError("covariates must be rescaled to [0, 1] before enumeration")

    subsets, knots = [], []
    for s in _subsets(d, cap):
        # np.unique over rows sorts lexicographically and drops duplicates
        uniq = np.unique(x[:, list(s)], axis=0)
        subsets.extend([s] * len(uniq))
        knots.extend(tuple(float(v) for v in row) for row in uniq)
    return BasisSpec(d, tuple(subsets), tuple(knots), dedup=True)


def max_atom_count(n: int, d: int, cap: int | None = None) -> int:
    cap = d if cap is None else cap
    return n * sum(comb(d, k) for k in range(1, cap + 1))


def evaluate_atom(atom: Atom, x: Sequence[float]) -> int:
    subset, knot = atom
    x = np.asarray(x, dtype=float).ravel()
    return int(all(knot[k] <= x[j] for k, j in enumerate(subset)))


@numba.njit(cache=True)
def _column_counts(ptr, cols, knots, x):
    n = x.shape[0]
    p = ptr.shape[0] - 1
    counts = np.zeros(p, dtype=np.int64)
    for j in range(p):
        c = 0
        for i in range(n):
            hit = True
            for k in range(ptr[j], ptr[j + 1]):
                if x[i, cols[k]] < knots[k]:
                    hit = False
                    break
            if hit:
                c += 1
        counts[j] = c
    return counts


@numba.njit(cache=True)
def _fill_columns(ptr, cols, knots, x, indptr, indices):
    n = x.shape[0]
    p = ptr.shape[0] - 1
    for j in range(p):
        pos = indptr[j]
        for i in range(n):
            hit = True
            for k in range(ptr[j], ptr[j + 1]):
                if x[i, cols[k]] < knots[k]:
                    hit = False
                    break
            if hit:
                indices[pos] = i
                pos += 1


@numba.njit(cache=True)
def _linear_predictor(ptr, cols, knots, coef, intercept, x):
    n = x.shape[0]
    p = ptr.shape[0] - 1
    out = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(p):
            hit = True
            for k in range(ptr[j], ptr[j + 1]):
                if x[i, cols[k]] < knots[k]:
                    hit = False
                    break
            if hit:
                s += coef[j]
        out[i] = intercept + s
    return out


def _as_matrix(data, d: int) -> np.ndarray:
    x = data.covariates if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] != d:
        raise InvalidInputError(f"basis has dimension {d}, data has {x.shape[1]} columns")
    return np.ascontiguousarray(x, dtype=np.float64)


def design_matrix(spec: BasisSpec, data) -> sp.csc_matrix:
    """Sparse binary n x p matrix with entry (i, j) = atom_j(x_i)."""
    x = _as_matrix(data, spec.dimension)
    ptr, cols, knots = spec.flat
    counts = _column_counts(ptr, cols, knots, x)
    indptr = np.zeros(len(spec) + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = np.empty(indptr[-1], dtype=np.int64)
    _fill_columns(ptr, cols, knots, x, indptr, indices)
    data_ = np.ones(indptr[-1], dtype=np.float64)
    return sp.csc_matrix((data_, indices, indptr), shape=(x.shape[0], len(spec)))


def linear_predictor(spec: BasisSpec, coef: np.ndarray, intercept: float, data) -> np.ndarray:
    """``intercept + sum_j coef_j * atom_j(x)`` accumulated in atom order."""
    x = _as_matrix(data, spec.dimension)
    ptr, cols, knots = spec.flat
    return _linear_predictor(ptr, cols, knots, np.asarray(coef, dtype=np.float64),
                             float(intercept), x)
