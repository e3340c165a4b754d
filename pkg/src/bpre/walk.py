"""Tilted projective walk (X_n, S_n), first passage below zero and its fluctuations.

The tilted kernel is sampled exactly on the discretized eigenfunction: from
state x pick shape k with probability pi_k g_k(x) / Z(x), where
g_k(x) = |x G_k|^theta v(x.G_k), then draw U from the scale law tilted by
e^{theta U}.  The increment is log|x G_k| + U and the per-step log likelihood
ratio against the untilted law is theta U - log E[e^{theta U}] + log(g_k / Z).
Off the grid v is extended by v(x) = E[e^{theta U}] Z(x) / lambda, which agrees
with the grid values at the nodes and makes the discretized kernel Markov.

Every walk is simulated with a = 0 and reports the running sum T_n and the
running minimum m_n = min_{1<=k<=n} T_k.  For a start a >= 0,
S_n = a + T_n and tau > n iff a + m_n > 0, so one batch serves every a with
shared noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .cocycle import ProjectivePoint
from .environment import EnvironmentLaw
from .simplex import SimplexGrid
from .spectral import SpectralSolution, default_grid, power_iteration
from .streams import as_factory, run_blocks

DEFAULT_A_VALUES = (0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0)
DEFAULT_N_MAX = 1000
CSV_COLUMNS = ("quantity", "n", "a", "b", "ell", "estimate", "stderr", "reps", "seed")


def _coords(x, p: int) -> np.ndarray:
    if x is None:
        return np.full(p, 1.0 / p)
    c = x.coords if isinstance(x, ProjectivePoint) else np.asarray(x, float)
    return c / c.sum()


def _mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, float)
    if v.size < 2:
        return float(v.mean()) if v.size else math.nan, math.nan
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def csv_row(quantity, n, a, b, ell, estimate, stderr, reps, seed) -> dict:
    return dict(zip(CSV_COLUMNS, (quantity, n, a, b, ell, estimate, stderr, reps, seed)))


# ------------------------------------------------------------------ kernel


class TiltedKernel:
    """Exact sampler of the tilted projective kernel.

    ``side='column'`` drives y -> M.y by running the row kernel of the
    transposed law; a supplied ``spectral`` solution must then belong to
    ``law.transposed()``.
    """

    def __init__(self, law: EnvironmentLaw, theta: float, spectral: SpectralSolution | None = None,
                 side: str = "row", resolution: int | None = None):
        if side not in ("row", "column"):
            raise ValueError("side must be 'row' or 'column'")
        self.env_law = law
        self.side = side
        self.law = law if side == "row" else law.transposed()
        self.theta = float(theta)
        if spectral is None and self.theta != 0.0:
            spectral = power_iteration(default_grid(self.law, resolution), self.law, self.theta)
        if spectral is not None and abs(spectral.theta - self.theta) > 1e-12:
            raise ValueError("spectral solution was computed at a different theta")
        self.spectral = spectral
        self.log_mgf = float(self.law.scale.log_mgf(self.theta))

    @property
    def p(self) -> int:
        return self.law.p

    @property
    def lam(self) -> float:
        return 1.0 if self.spectral is None else self.spectral.lam

    @property
    def grid(self) -> SimplexGrid:
        return self.spectral.grid if self.spectral is not None else default_grid(self.law, 4)

    def _terms(self, x: np.ndarray):
        y = np.einsum("rp,kpq->krq", x, self.law.shapes)
        nrm = y.sum(axis=2)
        img = y / nrm[..., None]
        if self.theta == 0.0:
            return img, nrm, np.ones_like(nrm)
        v = np.stack([self.spectral.grid.interpolate(self.spectral.v, img[k])
                      for k in range(self.law.n_shapes)])
        return img, nrm, nrm**self.theta * v

    def v(self, x) -> np.ndarray:
        """Eigenfunction extended off the grid."""
        x = np.atleast_2d(np.asarray(x, float))
        _, _, g = self._terms(x / x.sum(axis=1, keepdims=True))
        z = self.law.weights @ g
        return math.exp(self.log_mgf) * z / self.lam

    def step(self, x: np.ndarray, rng: np.random.Generator):
        """One tilted step for a batch of directions x (R, p).

        Returns (next directions, increments log|xM|, log likelihood ratio
        tilted/untilted, shape indices, log scales).
        """
        size = len(x)
        img, nrm, g = self._terms(x)
        pw = self.law.weights[:, None] * g
        z = pw.sum(axis=0)
        if self.law.n_shapes == 1:
            k = np.zeros(size, dtype=np.int64)
        else:
            cum = np.cumsum(pw, axis=0)
            k = (rng.random(size) * z > cum).sum(axis=0)
            k = np.minimum(k, self.law.n_shapes - 1)
        u = np.asarray(self.law.scale.sample(rng, size, self.theta), float)
        rows = np.arange(size)
        inc = np.log(nrm[k, rows]) + u
        if self.theta == 0.0:
            llr = np.zeros(size)
        else:
            llr = self.theta * u - self.log_mgf + np.log(g[k, rows] / z)
        return img[k, rows], inc, llr, k, u

    def one_step_weights(self, x, size: int, rng: np.random.Generator) -> np.ndarray:
        """|xM|^theta v(x.M) / (lambda v(x)) for untilted draws of M from x."""
        x0 = np.tile(_coords(x, self.p), (size, 1))
        k, u = self.law.sample_indices(rng, size)
        y = np.einsum("rp,rpq->rq", x0, self.law.shapes[k])
        nrm = y.sum(axis=1)
        vx = self.v(x0[:1])[0]
        return (nrm * np.exp(u)) ** self.theta * self.v(y / nrm[:, None]) / (self.lam * vx)


# ------------------------------------------------------------------ single states


@dataclass(frozen=True)
class WalkState:
    x: ProjectivePoint
    s: float
    n: int = 0
    weight: float = 1.0
    alive: bool = True

    @classmethod
    def start(cls, x, a: float) -> "WalkState":
        if not isinstance(x, ProjectivePoint):
            x = ProjectivePoint(x)
        return cls(x, float(a))


@dataclass(frozen=True)
class ReversedWalkState:
    y: ProjectivePoint
    s: float
    n: int = 0
    weight: float = 1.0
    alive: bool = True

    @classmethod
    def start(cls, y, b: float) -> "ReversedWalkState":
        if not isinstance(y, ProjectivePoint):
            y = ProjectivePoint(y, "column")
        return cls(ProjectivePoint(y.coords, "column"), float(b))


def step_tilted(kernel: TiltedKernel, state, rng: np.random.Generator):
    """Advance one state; ``weight`` accumulates the tilted/untilted likelihood ratio."""
    rev = isinstance(state, ReversedWalkState)
    coords = state.y.coords if rev else state.x.coords
    nxt, inc, llr, _, _ = kernel.step(coords[None, :], rng)
    s = state.s - inc[0] if rev else state.s + inc[0]
    alive = state.alive and s > 0
    weight = state.weight * math.exp(llr[0])
    if rev:
        return ReversedWalkState(ProjectivePoint(nxt[0], "column"), s, state.n + 1, weight, alive)
    return WalkState(ProjectivePoint(nxt[0]), s, state.n + 1, weight, alive)


# ------------------------------------------------------------------ batches


@dataclass
class WalkBatch:
    """Running sums, running minima and log weights at checkpoints.

    ``sign=-1`` marks a reversed walk, where T = -sum of increments so that
    S~_n = b + T_n.  ``tau`` holds exact passage times for ``a_tau`` (-1 if
    censored).  ``env`` holds (shape index, log scale) per step when recorded.
    """

    checkpoints: tuple
    T: np.ndarray
    m: np.ndarray
    logw: np.ndarray
    x: np.ndarray
    tau: np.ndarray
    a_tau: float | None = None
    sign: float = 1.0
    env: tuple | None = field(default=None, repr=False)

    @property
    def reps(self) -> int:
        return self.T.shape[0]

    def col(self, n: int) -> int:
        return self.checkpoints.index(n)

    def alive(self, a: float, n: int) -> np.ndarray:
        return a + self.m[:, self.col(n)] > 0

    def s(self, a: float, n: int) -> np.ndarray:
        return a + self.T[:, self.col(n)]

    def untilted_weight(self, n: int) -> np.ndarray:
        return np.exp(-self.logw[:, self.col(n)])

    @staticmethod
    def concat(parts) -> "WalkBatch":
        first = parts[0]
        env = None
        if first.env is not None:
            env = (np.concatenate([p.env[0] for p in parts]), np.concatenate([p.env[1] for p in parts]))
        return WalkBatch(first.checkpoints, *(np.concatenate([getattr(p, f) for p in parts])
                                              for f in ("T", "m", "logw", "x", "tau")),
                         first.a_tau, first.sign, env)


def simulate_block(kernel: TiltedKernel, x0, n: int, size: int, rng: np.random.Generator,
                   checkpoints=None, a_tau: float | None = None, sign: float = 1.0,
                   record_env: bool = False) -> WalkBatch:
    cps = tuple(sorted(set(checkpoints if checkpoints is not None else (n,))))
    if cps and (cps[0] < 0 or cps[-1] > n):
        raise ValueError("checkpoints must lie in [0, n]")
    where = {t: j for j, t in enumerate(cps)}
    x = np.tile(_coords(x0, kernel.p), (size, 1))
    T = np.zeros(size)
    m = np.full(size, np.inf)
    L = np.zeros(size)
    tau = np.full(size, -1, dtype=np.int64)
    outT = np.empty((size, len(cps)))
    outm = np.empty((size, len(cps)))
    outL = np.empty((size, len(cps)))
    ks = np.empty((size, n), dtype=np.int64) if record_env else None
    us = np.empty((size, n)) if record_env else None
    if 0 in where:
        outT[:, where[0]], outm[:, where[0]], outL[:, where[0]] = 0.0, np.inf, 0.0
    for t in range(1, n + 1):
        x, inc, llr, k, u = kernel.step(x, rng)
        T += sign * inc
        np.minimum(m, T, out=m)
        L += llr
        if a_tau is not None:
            hit = (tau < 0) & (a_tau + T <= 0)
            tau[hit] = t
        if record_env:
            ks[:, t - 1], us[:, t - 1] = k, u
        j = where.get(t)
        if j is not None:
            outT[:, j], outm[:, j], outL[:, j] = T, m, L
    return WalkBatch(cps, outT, outm, outL, x, tau, a_tau, sign,
                     (ks, us) if record_env else None)


def simulate(kernel: TiltedKernel, x0, n: int, reps: int, rng=None, checkpoints=None,
             a_tau: float | None = None, reversed: bool = False, name: str = "walk",
             workers: int = 1) -> WalkBatch:
    """Batch of independent walks; ``rng`` is a seed, StreamFactory or Generator."""
    sign = -1.0 if reversed else 1.0

    def block(size, g):
        return simulate_block(kernel, x0, n, size, g, checkpoints, a_tau, sign)

    if isinstance(rng, np.random.Generator):
        return block(reps, rng)
    return WalkBatch.concat(run_blocks(block, reps, as_factory(rng), name, workers))


# ------------------------------------------------------------------ passage


@dataclass(frozen=True)
class PassageResult:
    tau: np.ndarray
    censored: np.ndarray
    checkpoints: tuple
    s: np.ndarray
    alive: np.ndarray
    weight: np.ndarray


def _passage(kernel, x, start, n_max, rng, checkpoints, reps, reversed):
    if start < 0:
        raise ValueError("starting level must be >= 0")
    cps = tuple(sorted(set(checkpoints or ()) | {n_max}))
    batch = simulate(kernel, x, n_max, reps, rng, cps, a_tau=start, reversed=reversed,
                     name="passage")
    s = start + batch.T
    alive = start + batch.m > 0
    return PassageResult(batch.tau, batch.tau < 0, cps, s, alive, np.exp(batch.logw))


def first_passage(kernel: TiltedKernel, x, a: float, n_max: int = DEFAULT_N_MAX, rng=None,
                  checkpoints=(), reps: int = 1) -> PassageResult:
    """tau = min{n >= 1 : S_n <= 0} per replica; -1 marks censoring at n_max."""
    return _passage(kernel, x, a, n_max, rng, checkpoints, reps, False)


def reversed_first_passage(kernel: TiltedKernel, y, b: float, n_max: int = DEFAULT_N_MAX,
                           rng=None, checkpoints=(), reps: int = 1) -> PassageResult:
    """Same contract for S~_n = b - log|M_{n-1} ... M_0 y|; needs a column-side kernel."""
    if kernel.side != "column":
        raise ValueError("reversed walk needs a column-side kernel")
    return _passage(kernel, y, b, n_max, rng, checkpoints, reps, True)


# ------------------------------------------------------------------ harmonic function


@dataclass(frozen=True)
class HarmonicEstimate:
    value: float
    stderr: float
    value_half: float
    stderr_half: float
    n: int

    @property
    def rel_change(self) -> float:
        return abs(self.value - self.value_half) / max(abs(self.value), 1e-300)


def _harmonic_from_batch(batch: WalkBatch, a: float, n: int) -> tuple[float, float]:
    return _mean_se(np.where(batch.alive(a, n), batch.s(a, n), 0.0))


def estimate_harmonic(kernel: TiltedKernel, x, a: float, n: int, reps: int, rng=None,
                      reversed: bool = False) -> HarmonicEstimate:
    """E^theta[S_n; tau > n] at n and n/2."""
    half = max(n // 2, 1)
    batch = simulate(kernel, x, n, reps, rng, (half, n), reversed=reversed, name="harmonic")
    v, se = _harmonic_from_batch(batch, a, n)
    vh, seh = _harmonic_from_batch(batch, a, half)
    return HarmonicEstimate(v, se, vh, seh, n)


@dataclass(frozen=True)
class HarmonicTable:
    """h on (grid node, a) pairs, linear in a with linear extrapolation."""

    grid: SimplexGrid
    a_values: np.ndarray
    h: np.ndarray
    stderr: np.ndarray
    n: int
    h_tilde: np.ndarray | None = None
    stderr_tilde: np.ndarray | None = None

    def _lookup(self, values, x, a) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        a = np.broadcast_to(np.asarray(a, float), (len(x),))
        cols = np.stack([self.grid.interpolate(values[:, j], x) for j in range(len(self.a_values))], 1)
        av = self.a_values
        idx = np.clip(np.searchsorted(av, a, side="right") - 1, 0, len(av) - 2)
        lo, hi = av[idx], av[idx + 1]
        r = np.arange(len(x))
        t = (a - lo) / (hi - lo)
        out = cols[r, idx] + t * (cols[r, idx + 1] - cols[r, idx])
        if np.any(out <= 0):
            raise ValueError("non-positive harmonic value retrieved (table corruption)")
        return out

    def __call__(self, x, a) -> np.ndarray:
        return self._lookup(self.h, x, a)

    def tilde(self, y, b) -> np.ndarray:
        if self.h_tilde is None:
            raise ValueError("table has no reversed-walk values")
        return self._lookup(self.h_tilde, y, b)

    def envelope(self, A: float = 1.0) -> tuple[float, float, bool]:
        """Smallest C with C^-1 max(1, a-A) <= h <= C(1+a) over the table; ok if h grows."""
        a = self.a_values[None, :]
        c_hi = float(np.max(self.h / (1 + a)))
        c_lo = float(np.max(np.maximum(1.0, a - A) / self.h))
        slack = 3 * np.sqrt(self.stderr[:, 1:] ** 2 + self.stderr[:, :-1] ** 2)
        monotone = bool(np.all(np.diff(self.h, axis=1) >= -slack))
        C = max(c_hi, c_lo, 1.0 + 1e-12)
        return C, A, monotone and math.isfinite(C)


def build_harmonic_table(kernel: TiltedKernel, n: int, reps: int, rng=None,
                         a_values=DEFAULT_A_VALUES, resolution: int = 4,
                         column_kernel: TiltedKernel | None = None) -> HarmonicTable:
    """Estimate h (and h~ with a column kernel) at every node and a from one batch per node."""
    factory = as_factory(rng)
    margin = kernel.grid.margin
    grid = SimplexGrid(kernel.p, resolution, margin)
    av = np.asarray(sorted(a_values), float)

    def fill(kern, reversed, tag):
        h = np.empty((grid.size, len(av)))
        se = np.empty_like(h)
        for i, node in enumerate(grid.nodes):
            batch = simulate(kern, node, n, reps, factory.child(f"{tag}{i}"), (n,),
                             reversed=reversed, name="harmonic")
            for j, a in enumerate(av):
                h[i, j], se[i, j] = _harmonic_from_batch(batch, a, n)
        return h, se

    h, se = fill(kernel, False, "row")
    ht = st = None
    if column_kernel is not None:
        ht, st = fill(column_kernel, True, "column")
    return HarmonicTable(grid, av, h, se, n, ht, st)


def harmonicity_residual(kernel: TiltedKernel, table: HarmonicTable, x, a: float, reps: int,
                         rng=None) -> tuple[float, float]:
    """E^theta[h(X_1, S_1); tau > 1] - h(x, a) with a stderr that includes table noise."""
    g = rng if isinstance(rng, np.random.Generator) else as_factory(rng).generator("harmonicity")
    x0 = np.tile(_coords(x, kernel.p), (reps, 1))
    x1, inc, _, _, _ = kernel.step(x0, g)
    s1 = a + inc
    alive = s1 > 0
    vals = np.zeros(reps)
    if alive.any():
        vals[alive] = table(x1[alive], s1[alive])
    mean, se = _mean_se(vals)
    h0 = float(table(x0[:1], a)[0])
    j = int(np.clip(np.searchsorted(table.a_values, a), 0, len(table.a_values) - 1))
    table_se = float(table.stderr[:, j].max())
    return mean - h0, math.sqrt(se**2 + 2 * table_se**2)


# ------------------------------------------------------------------ fluctuations


@dataclass
class SurvivalTail:
    a: float
    n: np.ndarray
    prob: np.ndarray
    stderr: np.ndarray
    compensated: np.ndarray
    h_hat: float
    h_stderr: float
    reps: int

    @property
    def ratio(self) -> np.ndarray:
        return self.compensated / self.h_hat

    def envelope_constant(self) -> float:
        """Smallest C with P(tau > n) <= C h / sqrt(n) across the table."""
        return float(np.max(self.prob * np.sqrt(self.n) / self.h_hat))

    def rows(self, seed) -> list[dict]:
        out = [csv_row("survival_tilted", int(n), self.a, "", "", float(p), float(s), self.reps, seed)
               for n, p, s in zip(self.n, self.prob, self.stderr)]
        out.append(csv_row("harmonic", int(self.n.max()), self.a, "", "", self.h_hat, self.h_stderr,
                           self.reps, seed))
        return out


def survival_tails(kernel: TiltedKernel, x, a_values, n_list, reps: int, rng=None,
                   workers: int = 1) -> list[SurvivalTail]:
    """P^theta(tau > n) and sqrt(2 pi n) P^theta(tau > n) for several a from one batch.

    h is estimated at the largest n from the same trajectories.
    """
    ns = np.array(sorted(n_list), dtype=np.int64)
    batch = simulate(kernel, x, int(ns[-1]), reps, rng, tuple(int(n) for n in ns),
                     name="survival", workers=workers)
    out = []
    for a in a_values:
        probs = np.array([batch.alive(a, int(n)).mean() for n in ns])
        se = np.sqrt(probs * (1 - probs) / reps)
        h, hse = _harmonic_from_batch(batch, a, int(ns[-1]))
        out.append(SurvivalTail(float(a), ns, probs, se, np.sqrt(2 * np.pi * ns) * probs, h, hse, reps))
    return out


def survival_tail(kernel: TiltedKernel, x, a: float, n_list, reps: int, rng=None,
                  workers: int = 1) -> SurvivalTail:
    return survival_tails(kernel, x, (a,), n_list, reps, rng, workers)[0]


@dataclass(frozen=True)
class SigmaEstimate:
    sigma: float
    sigma_half: float
    n: int

    @property
    def rel_change(self) -> float:
        return abs(self.sigma - self.sigma_half) / max(self.sigma, 1e-300)


def sigma_estimate(kernel: TiltedKernel, n: int, reps: int, rng=None, x=None) -> SigmaEstimate:
    """sqrt(Var^theta(S_m)/m) at m = n and m = n/2."""
    half = max(n // 2, 1)
    batch = simulate(kernel, x, n, reps, rng, (half, n), name="sigma")
    s_full = math.sqrt(batch.T[:, 1].var(ddof=1) / n)
    s_half = math.sqrt(batch.T[:, 0].var(ddof=1) / half)
    return SigmaEstimate(s_full, s_half, n)


def rayleigh_profile(b, n: int, ell: float, h: float, sigma: float) -> np.ndarray:
    """Limit of n P^theta(tau > n, S_n in [b, b+ell]) for a walk with step variance sigma^2."""
    t = np.asarray(b, float) / (sigma * math.sqrt(n))
    phi = np.where(t > 0, t * np.exp(-0.5 * t * t), 0.0)
    return 2 * ell * h * phi / (sigma * sigma * math.sqrt(2 * math.pi))


@dataclass
class LocalProfile:
    n: int
    ell: float
    b: np.ndarray
    scaled: np.ndarray
    reference: np.ndarray
    ks: float
    ks_pvalue: float
    survivors: int
    p_alive: float
    sigma: float

    @property
    def argmax(self) -> float:
        return float(self.b[np.argmax(self.scaled)] + 0.5 * self.ell)

    @property
    def total_mass(self) -> float:
        return float(self.scaled.sum() / self.n)

    @property
    def sup_discrepancy(self) -> float:
        return float(np.max(np.abs(self.scaled - self.reference)))


def local_limit_hist(kernel: TiltedKernel, x, a: float, n: int, ell: float, reps: int, rng=None,
                     sigma: float | None = None, h: float | None = None, batch: WalkBatch | None = None,
                     workers: int = 1) -> LocalProfile:
    """n P^theta(tau > n, S_n in [b, b+ell]) over b = 0, ell, 2 ell, ...

    The KS statistic compares S_n / (sigma sqrt n) among survivors with the
    Rayleigh law.
    """
    if batch is None:
        batch = simulate(kernel, x, n, reps, rng, (n,), name="local", workers=workers)
    if sigma is None:
        sigma = math.sqrt(batch.T[:, batch.col(n)].var(ddof=1) / n)
    alive = batch.alive(a, n)
    s = batch.s(a, n)[alive]
    if h is None:
        h = _harmonic_from_batch(batch, a, n)[0]
    top = max(float(s.max()) if s.size else ell, ell)
    edges = np.arange(0.0, top + ell, ell)
    counts, _ = np.histogram(s, edges)
    scaled = n * counts / batch.reps
    ref = rayleigh_profile(edges[:-1], n, ell, h, sigma)
    res = stats.kstest(s / (sigma * math.sqrt(n)), "rayleigh")
    return LocalProfile(n, ell, edges[:-1], scaled, ref, float(res.statistic), float(res.pvalue),
                        int(s.size), float(alive.mean()), sigma)


# ------------------------------------------------------------------ Doob transform


def doob_step(kernel: TiltedKernel, harmonic: HarmonicTable, state: WalkState,
              rng: np.random.Generator) -> WalkState:
    """Weighted step under the h-transform: weight *= h(X', S') / h(X, S) on survival."""
    if not state.alive or state.weight == 0:
        return WalkState(state.x, state.s, state.n + 1, 0.0, False)
    nxt, inc, _, _, _ = kernel.step(state.x.coords[None, :], rng)
    s = state.s + float(inc[0])
    if s <= 0:
        return WalkState(ProjectivePoint(nxt[0]), s, state.n + 1, 0.0, False)
    ratio = harmonic(nxt, s)[0] / harmonic(state.x.coords[None, :], state.s)[0]
    return WalkState(ProjectivePoint(nxt[0]), s, state.n + 1, state.weight * ratio, True)


def doob_expectation(kernel: TiltedKernel, harmonic: HarmonicTable, x, a: float, k: int,
                     reps: int, rng=None, phi=None) -> tuple[float, float]:
    """E-hat[phi(X_k, S_k)] = E^theta[phi h(X_k, S_k); tau > k] / h(x, a), batched."""
    g = rng if isinstance(rng, np.random.Generator) else as_factory(rng).generator("doob")
    batch = simulate_block(kernel, x, k, reps, g, (k,))
    alive = batch.alive(a, k)
    s = batch.s(a, k)
    w = np.zeros(reps)
    if alive.any():
        w[alive] = harmonic(batch.x[alive], s[alive])
    w /= float(harmonic(_coords(x, kernel.p)[None, :], a)[0])
    f = np.ones(reps) if phi is None else np.asarray(phi(batch.x, s), float)
    return _mean_se(w * f)


# ------------------------------------------------------------------ reversal


@dataclass(frozen=True)
class ReversalReport:
    bound: str
    lhs: float
    lhs_stderr: float
    rhs: float
    rhs_stderr: float
    window: float
    violated: bool

    @property
    def gap(self) -> float:
        return self.rhs - self.lhs


def check_reversal(row_kernel: TiltedKernel, column_kernel: TiltedKernel, x, y, a: float, b: float,
                   ell: float, n: int, reps: int, rng=None, window: float | None = None,
                   lower: bool = False, z: float = 3.0) -> ReversalReport:
    """Monte Carlo check of the time-reversal comparison.

    upper:  P(tau_a > n, S_n in [b, b+ell]) <= P(tau~_{b+ell+w} > n, S~_n in [a, a+ell+2w])
    lower:  P(tau_a > n, S_n in [b, b+ell]) >= P(tau~_{b-w} > n, S~_n in [a-ell, a-2w])
    ``window`` w defaults to the declared bound B of the law.  A violation
    is flagged only when the z-sigma intervals separate in the wrong order.
    """
    if column_kernel.side != "column":
        raise ValueError("column_kernel must be a column-side kernel")
    if a < 0 or b < 0 or ell <= 0:
        raise ValueError("need a, b >= 0 and ell > 0")
    w = float(row_kernel.env_law.bound if window is None else window)
    if lower:
        delta = math.log(row_kernel.p**2 * row_kernel.env_law.bound**2)
        if not (a >= ell > 2 * w and b >= min(delta, w)):
            raise ValueError("lower bound needs a >= ell > 2w and b >= the window constant")
    factory = as_factory(rng)
    fwd = simulate(row_kernel, x, n, reps, factory.child("forward"), (n,), name="reversal")
    bwd = simulate(column_kernel, y, n, reps, factory.child("backward"), (n,), reversed=True,
                   name="reversal")
    s = fwd.s(a, n)
    lhs_ind = fwd.alive(a, n) & (s >= b) & (s <= b + ell)
    if lower:
        b2, lo, hi = b - w, a - ell, a - 2 * w
    else:
        b2, lo, hi = b + ell + w, a, a + ell + 2 * w
    s2 = bwd.s(b2, n)
    rhs_ind = bwd.alive(b2, n) & (s2 >= lo) & (s2 <= hi)
    lhs, lse = _mean_se(lhs_ind)
    rhs, rse = _mean_se(rhs_ind)
    if lower:
        violated = lhs + z * lse < rhs - z * rse
    else:
        violated = lhs - z * lse > rhs + z * rse
    return ReversalReport("lower" if lower else "upper", lhs, lse, rhs, rse, w, bool(violated))
