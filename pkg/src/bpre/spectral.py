"""Transfer operator P_theta on the projective simplex and its dominant eigen-data.

P_theta phi(x) = E[|xM|^theta phi(x.M)].  With M = e^U G_k the expectation
splits into the scalar factor E[e^{theta U}] (closed form) and a finite sum
over shapes, discretized on a barycentric grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .environment import EnvironmentLaw
from .simplex import SimplexGrid
from .streams import as_factory, run_blocks

DEFAULT_RESOLUTION = {2: 128, 3: 32}


class SpectralConvergenceError(RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class RegimeError(ValueError):
    def __init__(self, regime: str, lambda_prime_at_1: float):
        label = f"{regime} subcritical" if regime in ("strongly", "intermediately", "weakly") else regime
        super().__init__(f"environment is {label} (Lambda'(1) = {lambda_prime_at_1:.6g})")
        self.regime = regime
        self.lambda_prime_at_1 = lambda_prime_at_1


def default_grid(law: EnvironmentLaw, resolution: int | None = None) -> SimplexGrid:
    res = resolution or DEFAULT_RESOLUTION.get(law.p, 12)
    return SimplexGrid.for_bound(law.p, law.shape_ratio, res)


@dataclass(frozen=True)
class SpectralSolution:
    theta: float
    lam: float
    v: np.ndarray
    nu: np.ndarray
    residual: float
    iterations: int
    grid: SimplexGrid = field(repr=False)

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def to_json(self) -> str:
        return json.dumps({
            "theta": self.theta, "lambda": self.lam, "residual": self.residual,
            "iterations": self.iterations,
            "grid": {"p": self.grid.p, "resolution": self.grid.resolution, "margin": self.grid.margin},
            "nodes": self.nodes.tolist(), "v": self.v.tolist(), "nu": self.nu.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "SpectralSolution":
        d = json.loads(text)
        g = d["grid"]
        grid = SimplexGrid(int(g["p"]), int(g["resolution"]), float(g["margin"]))
        return cls(float(d["theta"]), float(d["lambda"]), np.array(d["v"]), np.array(d["nu"]),
                   float(d["residual"]), int(d["iterations"]), grid)


def _shape_terms(grid: SimplexGrid, law: EnvironmentLaw, points, theta):
    """Per shape k: (|x G_k|^theta, interpolation matrix of x.G_k) for x in points."""
    out = []
    for g in law.shapes:
        y = points @ g
        nrm = y.sum(axis=1)
        out.append((nrm**theta, grid.interpolation_matrix(y / nrm[:, None])))
    return out


def transfer_matrix(grid: SimplexGrid, law: EnvironmentLaw, theta: float) -> sparse.csr_matrix:
    """Discretized P_theta acting on node values."""
    factor = math.exp(float(law.scale.log_mgf(theta)))
    K = None
    for w, (amp, W) in zip(law.weights, _shape_terms(grid, law, grid.nodes, theta)):
        term = sparse.diags(w * amp) @ W
        K = term if K is None else K + term
    return (factor * K).tocsr()


def apply_transfer(grid: SimplexGrid, law: EnvironmentLaw, theta: float, phi) -> np.ndarray:
    phi = np.asarray(phi, float)
    if np.any(phi <= 0):
        raise ValueError("phi must be strictly positive")
    return transfer_matrix(grid, law, theta) @ phi


def power_iteration(grid: SimplexGrid, law: EnvironmentLaw, theta: float,
                    tol: float = 1e-12, max_iter: int = 20000) -> SpectralSolution:
    """Dominant eigenvalue with right (v) and left (nu) eigenvectors.

    Stops when the Collatz-Wielandt bounds min/max of (Kv)/v agree to ``tol``
    relative.  nu is a probability vector and v is scaled so nu(v) = 1.
    """
    K = transfer_matrix(grid, law, theta)
    KT = K.T.tocsr()
    v = np.ones(grid.size)
    lam = float("nan")
    it = 0
    gap = math.inf
    for it in range(1, max_iter + 1):
        kv = K @ v
        ratio = kv / v
        lo, hi = ratio.min(), ratio.max()
        lam = 0.5 * (lo + hi)
        gap = (hi - lo) / lam
        v = kv / kv.max()
        if gap <= tol:
            break
    else:
        raise SpectralConvergenceError(
            f"power iteration did not converge at theta={theta}", gap, max_iter)
    nu = np.full(grid.size, 1.0 / grid.size)
    for it2 in range(1, max_iter + 1):
        nk = KT @ nu
        nk /= nk.sum()
        delta = np.abs(nk - nu).max()
        nu = nk
        if delta <= tol * max(nu.max(), 1e-300):
            break
    else:
        raise SpectralConvergenceError(
            f"adjoint iteration did not converge at theta={theta}", delta, max_iter)
    v = v / float(nu @ v)
    residual = float(np.abs(K @ v - lam * v).max() / lam / v.max())
    return SpectralSolution(float(theta), float(lam), v, nu, residual, it + it2, grid)


def classify_regime(lambda_prime_at_1: float, tol: float = 1e-6) -> str:
    if lambda_prime_at_1 < -tol:
        return "strongly"
    if lambda_prime_at_1 > tol:
        return "weakly"
    return "intermediately"


@dataclass(frozen=True)
class CriticalPoint:
    theta_star: float
    rho_star: float
    gamma_mu: float
    lambda_prime_at_1: float
    regime: str
    lambda_prime_at_star: float = 0.0

    def to_dict(self) -> dict:
        return {
            "theta_star": self.theta_star, "rho_star": self.rho_star,
            "gamma_mu": self.gamma_mu, "lambda_prime_at_1": self.lambda_prime_at_1,
            "regime": self.regime, "lambda_prime_at_star": self.lambda_prime_at_star,
        }


class SpectralSolver:
    """Caches eigen-solves of one law on one grid."""

    def __init__(self, law: EnvironmentLaw, resolution: int | None = None, tol: float = 1e-12,
                 max_iter: int = 20000, fd_step: float = 1e-3, root_tol: float = 1e-5):
        self.law = law
        self.grid = default_grid(law, resolution)
        self.tol = tol
        self.max_iter = max_iter
        self.fd_step = fd_step
        self.root_tol = root_tol
        self._cache: dict[float, SpectralSolution] = {}

    def solve(self, theta: float) -> SpectralSolution:
        key = round(float(theta), 15)
        if key not in self._cache:
            self._cache[key] = power_iteration(self.grid, self.law, theta, self.tol, self.max_iter)
        return self._cache[key]

    def lam(self, theta: float) -> float:
        return self.solve(theta).lam

    def Lambda(self, theta: float) -> float:
        return math.log(self.lam(theta))

    def Lambda_prime(self, theta: float, h: float | None = None) -> float:
        # the closed-form scalar factor is differentiated exactly
        h = h or self.fd_step
        shape = (self._shape_Lambda(theta + h) - self._shape_Lambda(theta - h)) / (2 * h)
        return float(self.law.scale.dlog_mgf(theta)) + shape

    def _shape_Lambda(self, theta: float) -> float:
        return self.Lambda(theta) - float(self.law.scale.log_mgf(theta))

    def critical_point(self, tol: float | None = None) -> CriticalPoint:
        return find_theta_star(self, tol or self.root_tol)


def Lambda(solver: SpectralSolver, theta: float) -> float:
    return solver.Lambda(theta)


def Lambda_prime(solver: SpectralSolver, theta: float, h: float = 1e-3) -> float:
    return solver.Lambda_prime(theta, h)


def find_theta_star(solver: SpectralSolver, tol: float = 1e-5, max_steps: int = 200) -> CriticalPoint:
    """Bisection for Lambda'(theta) = 0 on (0, 1); raises RegimeError otherwise."""
    g0 = solver.Lambda_prime(0.0)
    g1 = solver.Lambda_prime(1.0)
    regime = classify_regime(g1)
    if g0 >= 0:
        raise RegimeError("not subcritical (gamma_mu >= 0)", g1)
    if regime != "weakly":
        raise RegimeError(regime, g1)
    lo, hi = 0.0, 1.0
    mid, gm = 0.5, math.inf
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        gm = solver.Lambda_prime(mid)
        if abs(gm) <= 1e-3 * tol or hi - lo < 1e-10:
            break
        if gm < 0:
            lo = mid
        else:
            hi = mid
    if abs(gm) > tol:
        raise SpectralConvergenceError("bisection for theta_* did not reach tolerance", abs(gm))
    return CriticalPoint(mid, solver.lam(mid), g0, g1, regime, gm)


# ---------------------------------------------------------------- Monte Carlo


def lambda_mc(law: EnvironmentLaw, theta: float, n: int, reps: int, rng=None,
              populations: int = 8, burn_in: int | None = None,
              scale_draws: int = 2**23) -> tuple[float, float]:
    """Growth rate of E|x M_0 ... M_{n-1}|^theta by resampled population dynamics.

    The scale factor c is independent of the shape chain, so walkers are
    resampled on |xG|^theta alone and E[c^theta] is a plain sample mean over
    ``scale_draws`` draws; resampling on heavy-tailed c^theta would bias the
    per-step log-mean by about Var/(2 * population size).  ``reps`` walkers are split
    into ``populations`` independent groups.  Returns (estimate, stderr), the
    stderr from the spread of the group shape estimates and the pooled scale
    sample, combined by the delta method.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if theta == 0:
        return 1.0, 0.0
    factory = as_factory(rng)
    burn = n // 10 if burn_in is None else burn_in
    size = max(reps // populations, 2)

    def one(_, g):
        x = np.full((size, law.p), 1.0 / law.p)
        acc = 0.0
        for t in range(n):
            k, _ = law.sample_indices(g, size)
            y = np.einsum("ij,ijk->ik", x, law.shapes[k])
            nrm = y.sum(axis=1)
            logw = theta * np.log(nrm)
            m = logw.max()
            w = np.exp(logw - m)
            if t >= burn:
                acc += m + math.log(w.mean())
            x = y / nrm[:, None]
            # systematic resampling
            c = np.cumsum(w)
            pos = (g.random() + np.arange(size)) * (c[-1] / size)
            x = x[np.minimum(np.searchsorted(c, pos), size - 1)]
        return acc / (n - burn)

    logs = np.array(run_blocks(one, populations, factory, "lambda_mc", block=1))
    tu = theta * np.concatenate(run_blocks(lambda size, g: law.scale.sample(g, size), scale_draws,
                                           factory, "lambda_mc_scale"))
    top = tu.max()
    cw = np.exp(tu - top)
    log_scale = top + math.log(cw.mean())
    est = float(np.exp(logs.mean() + log_scale))
    var = cw.var(ddof=1) / len(cw) / cw.mean() ** 2
    if len(logs) > 1:
        var += logs.var(ddof=1) / len(logs)
    else:
        var = math.nan
    return est, float(est * math.sqrt(var))
