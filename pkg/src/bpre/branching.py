"""Survival of the branching process: quenched, forward-simulated and annealed.

Generating functions are handled through t = 1 - s, where the composition
reads t_k = 1 - f_k(1 - t_{k+1}); this keeps tiny survival probabilities
accurate.  The identity used for the psi/eta decomposition is the exact
telescoping sum

    1/(1 - F^(i)_{0,n-1}(s)) = 1/|a M_{0,n-1}(1 - s)|
        + sum_{k=0}^{n-1} psi_{f_k, a M_{0,k-1}}(F_{k+1,n-1}(s)) / |a M_{0,k-1}|

with a = a^(i) (row i), M_{0,-1} = I and F_{n,n-1}(s) = s.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .cocycle import ProjectivePoint, cocycle_path
from .environment import EnvironmentAtom, EnvironmentLaw
from .spectral import CriticalPoint, RegimeError, SpectralSolution
from .streams import as_factory, run_blocks
from .walk import TiltedKernel, simulate_block

DEFAULT_CAP = 10**6
NAIVE_WARN_N = 80


@dataclass(frozen=True)
class AffineAtom:
    """f(s) = 1 - M(1 - s): at most one child, so every psi term vanishes."""

    mean: np.ndarray

    def __post_init__(self):
        m = np.array(self.mean, float)
        if np.any(m < 0) or np.any(m.sum(axis=1) > 1 + 1e-12):
            raise ValueError("affine pgf needs non-negative rows summing to <= 1")
        object.__setattr__(self, "mean", m)

    family = "affine"

    @property
    def p(self) -> int:
        return self.mean.shape[0]

    def one_minus_pgf(self, t) -> np.ndarray:
        return self.mean @ np.asarray(t, float)

    def hessians(self) -> np.ndarray:
        return np.zeros((self.p, self.p, self.p))


# ------------------------------------------------------------------ quenched


@dataclass(frozen=True)
class QuenchedPath:
    atoms: tuple
    backward: np.ndarray  # s_k for k = 0..n, s_n = 0
    q: np.ndarray


def quenched_survival(env_seq: Sequence, n: int | None = None) -> np.ndarray:
    """q_n = 1 - f_0(f_1(... f_{n-1}(0))) coordinatewise."""
    return quenched_path(env_seq, n).q


def quenched_path(env_seq: Sequence, n: int | None = None) -> QuenchedPath:
    atoms = tuple(env_seq)
    n = len(atoms) if n is None else int(n)
    if n < 1 or n > len(atoms):
        raise ValueError("need 1 <= n <= len(env_seq)")
    p = atoms[0].p
    t = np.ones((n + 1, p))
    for k in range(n - 1, -1, -1):
        t[k] = atoms[k].one_minus_pgf(t[k + 1])
    t = np.clip(t, 0.0, 1.0)
    return QuenchedPath(atoms[:n], 1.0 - t, t[0].copy())


# ------------------------------------------------------------------ forward


@dataclass(frozen=True)
class ForwardResult:
    z: np.ndarray  # (reps, n+1, p)
    capped: np.ndarray  # (reps,) population cap reached

    def survival(self, n: int | None = None) -> tuple[float, float]:
        n = self.z.shape[1] - 1 if n is None else n
        alive = self.z[:, n].sum(axis=1) > 0
        pr = float(alive.mean())
        return pr, math.sqrt(pr * (1 - pr) / len(alive))


def _offspring_totals(atom, z, rng):
    """Children of each type produced by parent counts z (R, p)."""
    m = atom.mean
    R, p = z.shape
    out = np.zeros((R, p), dtype=np.int64)
    fam = atom.family
    for i in range(p):
        zi = z[:, i]
        if fam == "independent-poisson":
            out += rng.poisson(zi[:, None] * m[i][None, :])
        elif fam == "independent-geometric":
            live = zi > 0
            if live.any():
                draw = rng.negative_binomial(np.repeat(zi[live, None], p, 1),
                                             1.0 / (1.0 + m[i])[None, :])
                out[live] += draw
        elif fam == "bernoulli-pair":
            out += rng.binomial(zi, m[i, 0])[:, None]
        elif fam == "affine":
            pr = np.append(m[i], max(0.0, 1.0 - m[i].sum()))
            out += rng.multinomial(zi, pr)[:, :p]
        else:
            raise ValueError(f"unknown family {fam}")
    return out


def forward_simulate(env_seq: Sequence, z0, rng=None, cap: int = DEFAULT_CAP,
                     reps: int = 1) -> ForwardResult:
    """Population trajectories Z_0..Z_n in a fixed environment.

    A replica whose total population exceeds ``cap`` is frozen and flagged.
    """
    z0 = np.asarray(z0, dtype=np.int64)
    if z0.sum() < 1 or np.any(z0 < 0):
        raise ValueError("initial population must be non-negative with |z0| >= 1")
    g = rng if isinstance(rng, np.random.Generator) else as_factory(rng).generator("forward")
    atoms = tuple(env_seq)
    n = len(atoms)
    z = np.zeros((reps, n + 1, len(z0)), dtype=np.int64)
    z[:, 0] = z0
    capped = np.zeros(reps, dtype=bool)
    for k, atom in enumerate(atoms):
        cur = z[:, k]
        nxt = np.where(capped[:, None], cur, 0)
        run = ~capped
        if run.any():
            nxt[run] = _offspring_totals(atom, cur[run], g)
        capped |= nxt.sum(axis=1) > cap
        z[:, k + 1] = nxt
    return ForwardResult(z, capped)


# ------------------------------------------------------------------ psi and eta


def psi(atom, a, s) -> float:
    """psi_{f,a}(s) = |a| / |a(1 - f(s))| - |a| / |a M (1 - s)|.

    ``a`` may be a p x p matrix or a row vector (the row selected by a^(i)).
    """
    s = np.asarray(s, float)
    if np.any(s >= 1) or np.any(s < 0):
        raise ValueError("s must lie in [0, 1)^p")
    return _psi_t(atom, a, 1.0 - s)


def _x_minus_log1p(x):
    x = np.asarray(x, float)
    small = np.abs(x) < 1e-3
    xs = np.where(small, x, 0.0)
    series = xs * xs * (0.5 - xs / 3 + xs * xs / 4 - xs**3 / 5)
    with np.errstate(invalid="ignore"):
        return np.where(small, series, x - np.log1p(np.where(small, 0.0, x)))


def _expm1_neg_plus(L):
    # e^{-L} - 1 + L without cancellation for small L
    L = np.asarray(L, float)
    small = np.abs(L) < 1e-3
    Ls = np.where(small, L, 0.0)
    series = Ls * Ls * (0.5 - Ls / 6 + Ls * Ls / 24 - Ls**3 / 120)
    return np.where(small, series, np.expm1(-L) + L)


def convexity_gap(atom, t) -> np.ndarray:
    """M t - (1 - f(1 - t)) per row, accurate when t is tiny."""
    t = np.asarray(t, float)
    m = atom.mean
    fam = atom.family
    if fam == "independent-geometric":
        x = m * t[None, :]
        L = np.log1p(x).sum(axis=1)
        return _x_minus_log1p(x).sum(axis=1) + _expm1_neg_plus(L)
    if fam == "independent-poisson":
        return _expm1_neg_plus(m @ t)
    if fam == "bernoulli-pair":
        # sum t - 1 + prod(1 - t) = sum_{k>=2} (-1)^k e_k(t)
        e = np.zeros(len(t) + 1)
        e[0] = 1.0
        for tj in t:
            e[1:] = e[1:] + tj * e[:-1]
        signs = (-1.0) ** np.arange(len(e))
        return m[:, 0] * float((signs[2:] * e[2:]).sum())
    if fam == "affine":
        return np.zeros(len(m))
    raise ValueError(f"unknown family {fam}")


def _psi_t(atom, a, t) -> float:
    # psi with its argument given as t = 1 - s:
    # |a| a.(Mt - (1 - f)) / (|a(1 - f)| |aMt|)
    a = np.atleast_2d(np.asarray(a, float))
    t = np.asarray(t, float)
    one_f = (a @ atom.one_minus_pgf(t)).sum()
    mt = (a @ (atom.mean @ t)).sum()
    return float(a.sum() * (a @ convexity_gap(atom, t)).sum() / (one_f * mt))


def _row_products(env_seq, i: int, n: int):
    """Normalized rows e_i M_{0,k-1} and their log norms for k = 0..n."""
    p = env_seq[0].p
    rows = np.empty((n + 1, p))
    logs = np.empty(n + 1)
    r = np.zeros(p)
    r[i] = 1.0
    acc = 0.0
    for k in range(n + 1):
        rows[k], logs[k] = r, acc
        if k < n:
            r = r @ env_seq[k].mean
            nr = r.sum()
            r = r / nr
            acc += math.log(nr)
    return rows, logs


def telescoping_check(env_seq: Sequence, n: int, s, i: int | None = None) -> float:
    """Largest residual of the telescoping identity over types (or type ``i``).

    The residual is relative to the left side 1/q, which reaches 1e16 and
    beyond on long subcritical paths where absolute rounding error is O(1).
    """
    atoms = tuple(env_seq)[:n]
    s = np.asarray(s, float)
    if np.any(s >= 1) or np.any(s < 0):
        raise ValueError("s must lie in [0, 1)^p")
    # left side by direct composition, right side from psi terms and row products
    p = atoms[0].p
    tk = np.empty((n + 1, p))
    tk[n] = 1.0 - s
    for k in range(n - 1, -1, -1):
        tk[k] = atoms[k].one_minus_pgf(tk[k + 1])
    worst = 0.0
    for ii in range(p) if i is None else (i,):
        rows, logs = _row_products(atoms, ii, n)
        rhs = math.exp(-logs[n]) / float(rows[n] @ tk[n])
        for k in range(n):
            rhs += math.exp(-logs[k]) * _psi_t(atoms[k], rows[k], tk[k + 1])
        worst = max(worst, abs(1.0 - rhs * tk[0, ii]))
    return worst


@dataclass(frozen=True)
class PsiDecomposition:
    n: int
    eta: np.ndarray  # (p, n): eta_{k,n-1} per starting type
    norms: np.ndarray  # (p, n+1): |a^(i) M_{0,k-1}|
    partial: np.ndarray  # (p, n): running sums of eta / norm
    bound: np.ndarray  # (n,): B p^2 sum_i |B_k^(i)| / |M_k|^2
    residual: float

    @property
    def violations(self) -> int:
        return int(np.sum(self.eta > self.bound[None, :] * (1 + 1e-9)) + np.sum(self.eta < -1e-12))

    @property
    def min_eta(self) -> float:
        return float(self.eta.min())


def eta_bound(atom, B: float) -> float:
    p = atom.p
    hess = atom.hessians().reshape(p, -1).sum(axis=1)
    return float(B * p * p * hess.sum() / atom.mean.sum() ** 2)


def eta_values(env_seq: Sequence, n: int, B: float) -> PsiDecomposition:
    """eta_{k,n-1} = psi_{f_k, a M_{0,k-1}}(F_{k+1,n-1}(0)) for every k and type."""
    if n < 2:
        raise ValueError("n must be >= 2")
    atoms = tuple(env_seq)[:n]
    p = atoms[0].p
    tk = np.ones((n + 1, p))
    for k in range(n - 1, -1, -1):
        tk[k] = atoms[k].one_minus_pgf(tk[k + 1])
    eta = np.empty((p, n))
    norms = np.empty((p, n + 1))
    partial = np.empty((p, n))
    resid = 0.0
    for i in range(p):
        rows, logs = _row_products(atoms, i, n)
        norms[i] = np.exp(logs)
        for k in range(n):
            eta[i, k] = _psi_t(atoms[k], rows[k], tk[k + 1])
        partial[i] = np.cumsum(eta[i] / norms[i, :n])
        recon = partial[i, -1] + 1.0 / (norms[i, n] * float(rows[n] @ tk[n]))
        resid = max(resid, abs(recon - 1.0 / tk[0, i]) * tk[0, i])
    bound = np.array([eta_bound(a, B) for a in atoms])
    return PsiDecomposition(n, eta, norms, partial, bound, resid)


# ------------------------------------------------------------------ A/B/C


@dataclass(frozen=True)
class ABCRecord:
    A: float
    B: float
    C: float
    m_n: float
    total: float
    q: np.ndarray

    @property
    def ratio(self) -> np.ndarray:
        """q_n^(i) (1 + A + B + C) per type."""
        return self.q * (1.0 + self.A + self.B + self.C)

    @property
    def partition_error(self) -> float:
        return abs(self.A + self.B + self.C - self.total)


def abc_decomposition(env_seq: Sequence, n: int, k: int) -> ABCRecord:
    """Split sum_{l<n} |M_{0,l}|^-1 at k and n-k; m_n = min_l |M_{0,l}|."""
    if not 0 < k < n / 2:
        raise ValueError("need 0 < k < n/2")
    atoms = tuple(env_seq)
    if len(atoms) < n:
        raise ValueError("environment shorter than n")
    acc = np.eye(atoms[0].p)
    logs = np.empty(n)
    lsum = 0.0
    for l in range(n):
        acc = acc @ atoms[l].mean
        nr = acc.sum()
        acc = acc / nr
        lsum += math.log(nr)
        logs[l] = lsum
    inv = np.exp(-logs)
    return ABCRecord(float(inv[:k].sum()), float(inv[k:n - k].sum()), float(inv[n - k:].sum()),
                     float(np.exp(logs.min())), float(inv.sum()), quenched_survival(atoms, n))


def event_identity(env_seq: Sequence, n: int, a: float) -> bool:
    """(m_n >= e^-a) <=> (tau > n) for the walk started at the all-ones row vector."""
    atoms = tuple(env_seq)[:n]
    p = atoms[0].p
    m_n = math.exp(min(_log_norms(atoms)))
    path = cocycle_path(ProjectivePoint.uniform(p), a + math.log(p), [x.mean for x in atoms])
    survive = all(s > 0 for s in path.sums[1:])
    return (m_n > math.exp(-a)) == survive


def _log_norms(atoms):
    acc = np.eye(atoms[0].p)
    out = []
    tot = 0.0
    for x in atoms:
        acc = acc @ x.mean
        nr = acc.sum()
        acc /= nr
        tot += math.log(nr)
        out.append(tot)
    return out


# ------------------------------------------------------------------ annealed


@dataclass(frozen=True)
class SurvivalEstimate:
    n: int
    estimate: np.ndarray
    stderr: np.ndarray
    method: str
    reps: int
    seed: int | None = None
    ess: float = math.nan

    def rows(self) -> list[dict]:
        return [{"quantity": f"survival_{self.method}_type{i}", "n": self.n, "a": "", "b": "",
                 "ell": "", "estimate": float(e), "stderr": float(s), "reps": self.reps,
                 "seed": self.seed} for i, (e, s) in enumerate(zip(self.estimate, self.stderr))]


def _atoms_of(law: EnvironmentLaw, k, u):
    return [law.atom(int(kk), float(uu)) for kk, uu in zip(k, u)]


def annealed_naive(law: EnvironmentLaw, n_list, reps: int, rng=None,
                   workers: int = 1) -> list[SurvivalEstimate]:
    """Mean of q_n over iid environments; one environment path serves every horizon."""
    ns = np.atleast_1d(np.asarray(n_list, dtype=np.int64))
    if ns.max() > NAIVE_WARN_N:
        warnings.warn("naive annealed estimator has large relative variance beyond n ~ 80",
                      RuntimeWarning, stacklevel=2)
    factory = as_factory(rng)
    nmax = int(ns.max())

    def block(size, g):
        k, u = law.sample_indices(g, (size, nmax))
        return kernels.quenched_survival_batch(law.family, law.shapes, k, u, ns)

    q = np.concatenate(run_blocks(block, reps, factory, "annealed_naive", workers))
    out = []
    for h, n in enumerate(ns):
        out.append(SurvivalEstimate(int(n), q[:, h].mean(axis=0),
                                    q[:, h].std(axis=0, ddof=1) / math.sqrt(reps) if reps > 1
                                    else np.full(law.p, math.nan),
                                    "naive", reps, factory.seed, float(reps)))
    return out


@dataclass
class TiltedSample:
    """Per-replica contributions q_n e^{-L_n} and the bare weights e^{-L_n}."""

    n: np.ndarray
    contrib: np.ndarray  # (R, H, p)
    weight: np.ndarray  # (R, H)


def annealed_tilted_sample(law: EnvironmentLaw, theta: float, spectral: SpectralSolution,
                           n_list, reps: int, rng=None, workers: int = 1) -> TiltedSample:
    ns = np.atleast_1d(np.asarray(sorted(set(int(n) for n in n_list)), dtype=np.int64))
    kern = TiltedKernel(law, theta, spectral)
    nmax = int(ns.max())

    def block(size, g):
        b = simulate_block(kern, None, nmax, size, g, tuple(int(n) for n in ns), record_env=True)
        q = kernels.quenched_survival_batch(law.family, law.shapes, b.env[0], b.env[1], ns)
        w = np.exp(-b.logw)
        return q * w[:, :, None], w

    parts = run_blocks(block, reps, as_factory(rng), "annealed_tilted", workers)
    return TiltedSample(ns, np.concatenate([c for c, _ in parts]), np.concatenate([w for _, w in parts]))


def annealed_tilted(law: EnvironmentLaw, critical: CriticalPoint, spectral: SpectralSolution,
                    n_list, reps: int, rng=None, workers: int = 1,
                    sample: TiltedSample | None = None) -> list[SurvivalEstimate]:
    """E[q_n] = E^theta[q_n e^{-L_n}] with L_n the tilted/untilted log likelihood ratio.

    Paths start at the uniform direction; one path of the largest horizon
    serves all horizons.  ``ess`` is (sum c)^2 / sum c^2 over contributions c.
    """
    if critical.regime != "weakly":
        raise RegimeError(critical.regime, critical.lambda_prime_at_1)
    if sample is None:
        sample = annealed_tilted_sample(law, critical.theta_star, spectral, n_list, reps, rng, workers)
    seed = as_factory(rng).seed
    out = []
    R = sample.contrib.shape[0]
    for h, n in enumerate(sample.n):
        c = sample.contrib[:, h]
        tot = c.sum(axis=1)
        ess = float(tot.sum() ** 2 / max((tot**2).sum(), 1e-300))
        out.append(SurvivalEstimate(int(n), c.mean(axis=0), c.std(axis=0, ddof=1) / math.sqrt(R),
                                    "tilted", R, seed, ess))
    return out


def tilted_unit_functional(sample: TiltedSample) -> tuple[np.ndarray, np.ndarray]:
    """Estimator applied to the functional 1: should return 1 at every horizon."""
    w = sample.weight
    return w.mean(axis=0), w.std(axis=0, ddof=1) / math.sqrt(len(w))
