"""Positive matrices, their projective action and the norm cocycle.

Matrices act on row vectors from the right (``x M``) and on column vectors
from the left (``M y``).  All norms are L1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Sequence

import numpy as np

POSITIVE_FLOOR = 1e-300


@dataclass(frozen=True)
class PositiveMatrix:
    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 2:
            raise ValueError("expected a square matrix of dimension >= 2")
        if not np.all(a > 0):
            raise ValueError("all entries must be strictly positive")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def p(self) -> int:
        return self.entries.shape[0]

    def __matmul__(self, other: "PositiveMatrix") -> "PositiveMatrix":
        return PositiveMatrix(self.entries @ _arr(other))

    @property
    def T(self) -> "PositiveMatrix":
        return PositiveMatrix(self.entries.T)


@dataclass(frozen=True)
class SBMatrix:
    """A positive matrix whose entries are comparable within a factor ``bound``."""

    base: PositiveMatrix
    bound: float

    def __post_init__(self):
        if not isinstance(self.base, PositiveMatrix):
            object.__setattr__(self, "base", PositiveMatrix(self.base))
        if self.bound <= 1:
            raise ValueError("bound B must exceed 1")
        if comparability_ratio(self.base) > self.bound * (1 + 1e-12):
            raise ValueError(
                f"entries not comparable within B={self.bound} "
                f"(max/min = {comparability_ratio(self.base):.6g})"
            )

    @property
    def entries(self) -> np.ndarray:
        return self.base.entries

    @property
    def p(self) -> int:
        return self.base.p


@dataclass(frozen=True)
class ProjectivePoint:
    """A direction in the open positive simplex; ``flavor`` is 'row' or 'column'."""

    coords: np.ndarray
    flavor: str = "row"

    def __post_init__(self):
        c = np.array(self.coords, dtype=float)
        if c.ndim != 1 or c.size < 2:
            raise ValueError("coords must be a vector of length >= 2")
        if self.flavor not in ("row", "column"):
            raise ValueError("flavor must be 'row' or 'column'")
        if not np.all(c > 0):
            raise ValueError("coords must be strictly positive")
        c = np.maximum(c / c.sum(), POSITIVE_FLOOR)
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @classmethod
    def uniform(cls, p: int, flavor: str = "row") -> "ProjectivePoint":
        return cls(np.full(p, 1.0 / p), flavor)

    @property
    def p(self) -> int:
        return self.coords.size


@dataclass(frozen=True)
class CocyclePath:
    start: ProjectivePoint
    offset: float
    states: tuple = field(default_factory=tuple)
    sums: tuple = field(default_factory=tuple)


def _arr(m) -> np.ndarray:
    if isinstance(m, (PositiveMatrix, SBMatrix)):
        return m.entries
    return np.asarray(m, dtype=float)


def l1_norm(M) -> float:
    return float(np.abs(_arr(M)).sum())


def col_min(M) -> float:
    """v(M): the smallest column sum, so that v(M)|x| <= |Mx| for positive x."""
    return float(_arr(M).sum(axis=0).min())


def comparability_ratio(M) -> float:
    """max entry / min entry; M lies in S_B iff this is <= B."""
    a = _arr(M)
    return float(a.max() / a.min())


def product_chain(matrices: Sequence, order: str = "left-to-right"):
    """Renormalized ordered product.

    ``left-to-right`` gives M_0 M_1 ... M_n, ``right-to-left`` gives
    M_n ... M_1 M_0.  Returns ``(unit_norm_matrix, log_scale)`` with the
    product equal to ``exp(log_scale) * unit_norm_matrix``.
    """
    mats = [_arr(m) for m in matrices]
    if not mats:
        raise ValueError("empty product")
    if order not in ("left-to-right", "right-to-left"):
        raise ValueError("order must be 'left-to-right' or 'right-to-left'")
    p = mats[0].shape[0]
    if any(m.shape != (p, p) for m in mats):
        raise ValueError("dimension mismatch in product")
    acc = np.eye(p)
    log_scale = 0.0
    for m in mats:
        acc = acc @ m if order == "left-to-right" else m @ acc
        nrm = np.abs(acc).sum()
        acc = acc / nrm
        log_scale += math.log(nrm)
    return acc, log_scale


def project_act(x: ProjectivePoint, M) -> tuple[ProjectivePoint, float]:
    """Projective image and log-norm increment: (x.M, log|xM|) or (M.y, log|My|)."""
    a = _arr(M)
    y = x.coords @ a if x.flavor == "row" else a @ x.coords
    nrm = float(y.sum())
    return ProjectivePoint(y / nrm, x.flavor), math.log(nrm)


def cocycle_path(x: ProjectivePoint, a: float, matrices: Sequence) -> CocyclePath:
    """S_0 = a, S_{k+1} = S_k + log|x_k M_k| along the projective orbit."""
    states = [x]
    sums = [float(a)]
    for m in matrices:
        nxt, inc = project_act(states[-1], m)
        states.append(nxt)
        sums.append(sums[-1] + inc)
    return CocyclePath(x, float(a), tuple(states), tuple(sums))


def _m(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.min(x / y, axis=-1)


def hilbert_distance(x, y) -> float:
    """Bounded Hilbert-type distance phi(m(x,y) m(y,x)) with phi(s) = (1-s)/(1+s)."""
    if isinstance(x, ProjectivePoint) and isinstance(y, ProjectivePoint):
        if x.flavor != y.flavor:
            raise ValueError("points of different flavor")
    xa = x.coords if isinstance(x, ProjectivePoint) else np.asarray(x, float)
    ya = y.coords if isinstance(y, ProjectivePoint) else np.asarray(y, float)
    if xa.shape != ya.shape:
        raise ValueError("dimension mismatch")
    s = _m(xa, ya) * _m(ya, xa)
    d = (1.0 - s) / (1.0 + s)
    return np.clip(d, 0.0, 1.0) if np.ndim(d) else float(min(max(d, 0.0), 1.0))


def contraction_coeff(M) -> float:
    """c(M) = max |M(i,j)M(k,l) - M(i,l)M(k,j)| / (M(i,j)M(k,l) + M(i,l)M(k,j))."""
    a = _arr(M)
    p = a.shape[0]
    best = 0.0
    for i, k in product(range(p), repeat=2):
        if i >= k:
            continue
        ri, rk = a[i], a[k]
        o = np.outer(ri, rk)  # o[j, l] = M(i,j) M(k,l)
        num = np.abs(o - o.T)
        den = o + o.T
        best = max(best, float((num / den).max()))
    return best


def comparability_constants(B: float, p: int) -> tuple[float, float]:
    """delta = p^2 B^2 and Delta = log(delta) for products of S_B matrices."""
    if B <= 1:
        raise ValueError("B must exceed 1")
    if p < 2:
        raise ValueError("p must be at least 2")
    delta = float(p * p * B * B)
    return delta, math.log(delta)


def comparability_violations(matrices: Sequence, delta: float, rng=None, n_vectors: int = 4) -> int:
    """Count failures of the four norm comparisons over all sub-products.

    Checks |Mx|, |yM|, |yMx| against |M| within ``delta`` and
    |M||N|/delta <= |MN| <= |M||N| for consecutive splits of the chain.
    """
    rng = np.random.default_rng(rng)
    mats = [_arr(m) for m in matrices]
    p = mats[0].shape[0]
    count = 0
    tol = 1e-12
    for cut in range(1, len(mats)):
        left, _ = product_chain(mats[:cut])
        right, _ = product_chain(mats[cut:])
        nl, nr = l1_norm(left), l1_norm(right)
        both = l1_norm(left @ right)
        if not (nl * nr / delta <= both * (1 + tol) and both <= nl * nr * (1 + tol)):
            count += 1
    full, _ = product_chain(mats)
    nrm = l1_norm(full)
    for _ in range(n_vectors):
        x = rng.dirichlet(np.ones(p))
        y = rng.dirichlet(np.ones(p))
        for val in (np.abs(full @ x).sum(), np.abs(y @ full).sum(), float(y @ full @ x)):
            if not (nrm / delta <= val * (1 + tol) and val <= delta * nrm * (1 + tol)):
                count += 1
    return count
