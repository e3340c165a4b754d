"""Regular barycentric grid on a shrunken simplex, with piecewise-linear interpolation.

Nodes are ``eta + (1 - p*eta) * k/R`` for integer compositions ``k`` of ``R``.
Interpolation uses the Kuhn (Freudenthal) triangulation in cumulative
coordinates ``w_j = R * (z_1 + ... + z_j)``, j < p, where the grid is the
set of integer points with ``0 <= w_1 <= ... <= w_{p-1} <= R``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import sparse


def _compositions(total: int, parts: int) -> np.ndarray:
    # stars and bars: choose bar positions among total + parts - 1 slots
    rows = []
    for bars in combinations(range(total + parts - 1), parts - 1):
        prev = -1
        k = []
        for b in bars:
            k.append(b - prev - 1)
            prev = b
        k.append(total + parts - 1 - prev - 1)
        rows.append(k)
    return np.array(rows, dtype=np.int64)


@dataclass(frozen=True)
class SimplexGrid:
    p: int
    resolution: int
    margin: float

    def __post_init__(self):
        if self.p < 2 or self.resolution < 1:
            raise ValueError("need p >= 2 and resolution >= 1")
        if not 0 <= self.margin * self.p < 1:
            raise ValueError("margin must satisfy 0 <= p * margin < 1")
        comp = _compositions(self.resolution, self.p)
        cum = np.cumsum(comp, axis=1)[:, :-1]
        radix = (self.resolution + 1) ** np.arange(self.p - 1)
        lookup = np.full((self.resolution + 1) ** (self.p - 1), -1, dtype=np.int64)
        lookup[cum @ radix] = np.arange(len(comp))
        object.__setattr__(self, "_comp", comp)
        object.__setattr__(self, "_radix", radix)
        object.__setattr__(self, "_lookup", lookup)

    @classmethod
    def for_bound(cls, p: int, bound: float, resolution: int, slack: float = 0.02):
        """Grid whose hull contains every image x.G of a matrix with max/min <= bound."""
        return cls(p, resolution, 1.0 / (p * max(bound, 1.0) * (1.0 + slack)))

    @property
    def size(self) -> int:
        return len(self._comp)

    @property
    def nodes(self) -> np.ndarray:
        return self.margin + (1.0 - self.p * self.margin) * self._comp / self.resolution

    def to_reference(self, points) -> np.ndarray:
        """Map simplex points to the reference simplex; outside points are projected."""
        pts = np.atleast_2d(np.asarray(points, float))
        pts = pts / pts.sum(axis=1, keepdims=True)
        z = (pts - self.margin) / (1.0 - self.p * self.margin)
        z = np.clip(z, 0.0, None)
        return z / z.sum(axis=1, keepdims=True)

    def contains(self, points, tol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, float))
        return np.all(pts >= self.margin - tol, axis=1)

    def weights(self, points):
        """Vertex indices (n, p) and barycentric weights (n, p) for each point."""
        z = self.to_reference(points)
        R, p = self.resolution, self.p
        w = R * np.cumsum(z, axis=1)[:, :-1]
        w = np.clip(w, 0.0, R)
        base = np.clip(np.floor(w), 0, R - 1).astype(np.int64)
        base = np.maximum.accumulate(base, axis=1)
        f = np.clip(w - base, 0.0, 1.0)
        # descending fractional parts; ties resolved higher coordinate first so
        # every vertex stays in the ordered region
        rev = np.argsort(-f[:, ::-1], axis=1, kind="stable")
        order = (p - 2) - rev
        fs = np.take_along_axis(f, order, axis=1)
        n = len(z)
        lam = np.empty((n, p))
        lam[:, 0] = 1.0 - fs[:, 0]
        lam[:, 1:-1] = fs[:, :-1] - fs[:, 1:]
        lam[:, -1] = fs[:, -1]
        verts = np.empty((n, p), dtype=np.int64)
        cur = base.copy()
        verts[:, 0] = self._lookup[cur @ self._radix]
        rows = np.arange(n)
        for m in range(p - 1):
            cur[rows, order[:, m]] += 1
            verts[:, m + 1] = self._lookup[cur @ self._radix]
        bad = verts < 0
        if bad.any():
            if np.any(lam[bad] > 1e-9):
                raise RuntimeError("interpolation left the grid")
            verts[bad] = verts[:, :1].repeat(p, axis=1)[bad]
        return verts, lam

    def interpolation_matrix(self, points) -> sparse.csr_matrix:
        verts, lam = self.weights(points)
        n = len(verts)
        rows = np.repeat(np.arange(n), self.p)
        return sparse.csr_matrix((lam.ravel(), (rows, verts.ravel())), shape=(n, self.size))

    def interpolate(self, values, points) -> np.ndarray:
        if self.p == 2:
            z = self.to_reference(points)[:, 0]
            line = np.asarray(values)[self._lookup[: self.resolution + 1]]
            return np.interp(self.resolution * z, np.arange(self.resolution + 1), line)
        verts, lam = self.weights(points)
        return (np.asarray(values)[verts] * lam).sum(axis=1)
