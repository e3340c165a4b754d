"""Random environments: offspring families, environment laws and presets.

An environment law draws a shape matrix ``G_k`` (finite mixture with weights
``pi_k``) and an independent scalar ``c = exp(U)``; the realized mean matrix
is ``c * G_k`` and the offspring law of a type-i parent is the chosen family
with row i of that mean matrix.  Keeping all continuous randomness in the
scalar factor lets every spectral and tilting computation over ``U`` be done
in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .cocycle import SBMatrix, col_min, comparability_ratio

FAMILIES = ("independent-geometric", "independent-poisson", "bernoulli-pair", "scalar-scaled")


class ScaleLaw:
    """Law of U = log c.  Subclasses give the mgf E[e^{tU}] in closed form."""

    kind = "abstract"

    def log_mgf(self, t):
        raise NotImplementedError

    def dlog_mgf(self, t):
        raise NotImplementedError

    def sample(self, rng, size, theta=0.0):
        """Draw U under the law tilted by e^{theta U} / E[e^{theta U}]."""
        raise NotImplementedError

    @property
    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    @property
    def finite(self) -> bool:
        return False

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class FixedScale(ScaleLaw):
    value: float = 0.0
    kind = "fixed"

    def log_mgf(self, t):
        return np.asarray(t, float) * self.value

    def dlog_mgf(self, t):
        return np.full_like(np.asarray(t, float), self.value)

    def sample(self, rng, size, theta=0.0):
        return np.full(size, self.value)

    @property
    def support(self):
        return (self.value, self.value)

    @property
    def finite(self):
        return True

    def to_dict(self):
        return {"kind": "fixed", "value": self.value}


@dataclass(frozen=True)
class DiscreteScale(ScaleLaw):
    values: tuple
    probs: tuple
    kind = "discrete"

    def __post_init__(self):
        if len(self.values) != len(self.probs) or not self.values:
            raise ValueError("values and probs must have equal nonzero length")
        if any(q < 0 for q in self.probs) or abs(sum(self.probs) - 1) > 1e-12:
            raise ValueError("probs must be a probability vector")

    def _tilted(self, t):
        u = np.asarray(self.values, float)
        w = np.log(np.asarray(self.probs, float)) + t * u
        w -= w.max()
        q = np.exp(w)
        return q / q.sum()

    def log_mgf(self, t):
        u = np.asarray(self.values, float)
        lp = np.log(np.asarray(self.probs, float))
        t = np.asarray(t, float)
        z = lp + np.multiply.outer(t, u)
        m = z.max(axis=-1, keepdims=True)
        return (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))[..., 0]

    def dlog_mgf(self, t):
        t = np.asarray(t, float)
        u = np.asarray(self.values, float)
        return np.vectorize(lambda s: float(self._tilted(s) @ u))(t)

    def sample(self, rng, size, theta=0.0):
        idx = rng.choice(len(self.values), size=size, p=self._tilted(theta))
        return np.asarray(self.values, float)[idx]

    @property
    def support(self):
        return (min(self.values), max(self.values))

    @property
    def finite(self):
        return True

    def to_dict(self):
        return {"kind": "discrete", "values": list(self.values), "probs": list(self.probs)}


@dataclass(frozen=True)
class NormalScale(ScaleLaw):
    """U ~ N(mean, sd^2); tilting by e^{tU} shifts the mean by t sd^2."""

    mean: float
    sd: float
    kind = "normal"

    def log_mgf(self, t):
        t = np.asarray(t, float)
        return t * self.mean + 0.5 * t * t * self.sd**2

    def dlog_mgf(self, t):
        return self.mean + np.asarray(t, float) * self.sd**2

    def sample(self, rng, size, theta=0.0):
        return rng.normal(self.mean + theta * self.sd**2, self.sd, size)

    @property
    def support(self):
        return (-math.inf, math.inf)

    def to_dict(self):
        return {"kind": "normal", "mean": self.mean, "sd": self.sd}


@dataclass(frozen=True)
class UniformScale(ScaleLaw):
    """U uniform on [low, high]; the tilted law is a truncated exponential."""

    low: float
    high: float
    kind = "uniform"

    def __post_init__(self):
        if not self.high > self.low:
            raise ValueError("uniform scale needs high > low")

    def log_mgf(self, t):
        t = np.asarray(t, float)
        w = self.high - self.low
        z = t * w
        # log((e^z - 1)/z) stably, = 0 at z = 0
        small = np.abs(z) < 1e-8
        zs = np.where(small, 1.0, z)
        val = np.where(z > 0, z + np.log(-np.expm1(-zs) / zs), np.log(np.expm1(zs) / zs))
        val = np.where(small, z / 2, val)
        return t * self.low + val

    def dlog_mgf(self, t):
        t = np.asarray(t, float)
        w = self.high - self.low
        z = t * w
        small = np.abs(z) < 1e-6
        zs = np.where(small, 1.0, z)
        # mean of truncated exponential on [0, w]: w (1/(1-e^{-z}) - 1/z)
        frac = np.where(small, 0.5 + z / 12, -1.0 / np.expm1(-zs) - 1.0 / zs)
        return self.low + w * frac

    def sample(self, rng, size, theta=0.0):
        v = rng.random(size)
        w = self.high - self.low
        z = theta * w
        if abs(z) < 1e-12:
            return self.low + w * v
        # inverse CDF of density proportional to e^{z s} on [0, 1]
        if z > 0:
            s = 1.0 + np.log(v + (1.0 - v) * math.exp(-z)) / z
        else:
            s = np.log1p(v * math.expm1(z)) / z
        return self.low + w * s

    @property
    def support(self):
        return (self.low, self.high)

    def to_dict(self):
        return {"kind": "uniform", "low": self.low, "high": self.high}


def scale_from_dict(d: dict) -> ScaleLaw:
    kind = d.get("kind", "fixed")
    if kind == "fixed":
        return FixedScale(float(d.get("value", 0.0)))
    if kind == "discrete":
        return DiscreteScale(tuple(map(float, d["values"])), tuple(map(float, d["probs"])))
    if kind == "normal":
        return NormalScale(float(d["mean"]), float(d["sd"]))
    if kind == "uniform":
        return UniformScale(float(d["low"]), float(d["high"]))
    raise ValueError(f"unknown scale kind {kind!r}")


# ---------------------------------------------------------------- offspring


def _canonical_family(family: str) -> str:
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    return "independent-poisson" if family == "scalar-scaled" else family


@dataclass(frozen=True)
class OffspringLaw:
    """Offspring law of one parent type: ``means[j]`` expected type-j children."""

    family: str
    parent_type: int
    means: np.ndarray

    def __post_init__(self):
        fam = _canonical_family(self.family)
        m = np.array(self.means, float)
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ValueError("means must be finite and non-negative")
        if fam == "bernoulli-pair":
            if np.ptp(m) > 1e-12 or m[0] > 1:
                raise ValueError("bernoulli-pair needs equal means <= 1 (the pair probability)")
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "means", m)

    def pgf(self, s):
        s = np.asarray(s, float)
        m = self.means
        if self.family == "independent-geometric":
            return float(np.prod(1.0 / (1.0 + m * (1.0 - s))))
        if self.family == "independent-poisson":
            return float(np.exp(-(m * (1.0 - s)).sum()))
        return float(1.0 - m[0] + m[0] * np.prod(s))

    def hessian(self) -> np.ndarray:
        m = self.means
        if self.family == "independent-geometric":
            h = np.outer(m, m)
            h[np.diag_indices_from(h)] *= 2.0
            return h
        if self.family == "independent-poisson":
            return np.outer(m, m)
        h = np.full((m.size, m.size), m[0])
        np.fill_diagonal(h, 0.0)
        return h

    def sample(self, rng, size=None) -> np.ndarray:
        m = self.means
        shape = (m.size,) if size is None else (size, m.size)
        if self.family == "independent-geometric":
            return rng.geometric(1.0 / (1.0 + np.broadcast_to(m, shape))) - 1
        if self.family == "independent-poisson":
            return rng.poisson(np.broadcast_to(m, shape))
        pair = rng.random(shape[:-1]) < m[0]
        return np.broadcast_to(pair[..., None], shape).astype(np.int64)

    # closed forms used by the P7 check
    def prob_zero(self) -> float:
        return self.pgf(np.zeros_like(self.means))

    def prob_one(self) -> float:
        m = self.means
        if self.family == "independent-geometric":
            return self.prob_zero() * float((m / (1.0 + m)).sum())
        if self.family == "independent-poisson":
            return self.prob_zero() * float(m.sum())
        return 0.0

    def second_moment_total(self) -> float:
        """E|Z|^2 for the total number of children."""
        m = self.means
        tot = float(m.sum())
        if self.family == "independent-geometric":
            return float((m * (1 + m)).sum()) + tot**2
        if self.family == "independent-poisson":
            return tot + tot**2
        return m[0] * m.size**2


@dataclass(frozen=True)
class EnvironmentAtom:
    """One realized environment f = (f^{(1)}, ..., f^{(p)})."""

    family: str
    mean: np.ndarray
    bound: float | None = None

    def __post_init__(self):
        fam = _canonical_family(self.family)
        m = np.array(self.mean, float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
            raise ValueError("mean must be a p x p matrix, p >= 2")
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "mean", m)
        if self.bound is not None:
            SBMatrix(m, self.bound)  # raises when the declared bound is violated

    @property
    def p(self) -> int:
        return self.mean.shape[0]

    @property
    def laws(self) -> tuple[OffspringLaw, ...]:
        return tuple(OffspringLaw(self.family, i, self.mean[i]) for i in range(self.p))

    def mean_matrix(self) -> SBMatrix | np.ndarray:
        if self.bound is None:
            return self.mean
        return SBMatrix(self.mean, self.bound)

    def hessian(self, i: int) -> np.ndarray:
        return self.laws[i].hessian()

    def hessians(self) -> np.ndarray:
        return np.stack([self.hessian(i) for i in range(self.p)])

    def one_minus_pgf(self, t) -> np.ndarray:
        """1 - f(1 - t), evaluated without cancellation for small t."""
        t = np.asarray(t, float)
        m = self.mean
        if self.family == "independent-geometric":
            return -np.expm1(-np.log1p(m * t).sum(axis=1))
        if self.family == "independent-poisson":
            return -np.expm1(-(m * t).sum(axis=1))
        with np.errstate(divide="ignore"):
            return m[:, 0] * -np.expm1(np.log1p(-t).sum())

    def sample_offspring(self, parent_type: int, rng, size=None) -> np.ndarray:
        return self.laws[parent_type].sample(rng, size)


def eval_pgf(atom: EnvironmentAtom, s) -> np.ndarray:
    """(f^{(1)}(s), ..., f^{(p)}(s)) for s in the unit cube."""
    s = np.asarray(s, float)
    if s.shape != (atom.p,):
        raise ValueError(f"s must have shape ({atom.p},)")
    if np.any(s < 0) or np.any(s > 1):
        raise ValueError("s must lie in [0, 1]^p")
    return 1.0 - atom.one_minus_pgf(1.0 - s)


# ---------------------------------------------------------------- laws


@dataclass(frozen=True)
class EnvironmentLaw:
    """iid environment: shape ``shapes[k]`` w.p. ``weights[k]`` times ``exp(U)``."""

    family: str
    shapes: np.ndarray
    weights: np.ndarray
    scale: ScaleLaw = field(default_factory=FixedScale)
    bound: float = 1.0 + 1e-9
    name: str = "custom"
    p2_declared: bool = True
    p6_declared: bool = True

    def __post_init__(self):
        fam = _canonical_family(self.family)
        g = np.array(self.shapes, float)
        if g.ndim == 2:
            g = g[None]
        w = np.array(self.weights, float).reshape(-1)
        if g.ndim != 3 or g.shape[1] != g.shape[2] or g.shape[1] < 2:
            raise ValueError("shapes must be a stack of p x p matrices")
        if w.size != g.shape[0] or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise ValueError("weights must be a probability vector matching shapes")
        if not np.all(g > 0):
            raise ValueError("shape matrices must have positive entries")
        if self.bound <= 1:
            raise ValueError("declared bound B must exceed 1")
        for k in range(g.shape[0]):
            if comparability_ratio(g[k]) > self.bound * (1 + 1e-12):
                raise ValueError(f"shape {k} violates the declared bound B={self.bound}")
        if fam == "bernoulli-pair":
            lo, hi = self.scale.support
            if np.any(np.ptp(g, axis=2) > 1e-12) or math.exp(hi) * g.max() > 1:
                raise ValueError("bernoulli-pair shapes need constant rows and pair probability <= 1")
        g.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "shapes", g)
        object.__setattr__(self, "weights", w)

    @property
    def p(self) -> int:
        return self.shapes.shape[1]

    @property
    def n_shapes(self) -> int:
        return self.shapes.shape[0]

    @property
    def kind(self) -> str:
        return "finite-mixture" if self.scale.finite else "continuously-parametrized"

    @property
    def shape_ratio(self) -> float:
        return max(comparability_ratio(g) for g in self.shapes)

    def transposed(self) -> "EnvironmentLaw":
        """Law of the transposed mean matrices (drives the column-side walk).

        Only mean matrices matter there, so bernoulli-pair (not closed under
        transposition) is carried as Poisson with the same means.
        """
        fam = "independent-poisson" if self.family == "bernoulli-pair" else self.family
        return EnvironmentLaw(
            fam, np.transpose(self.shapes, (0, 2, 1)).copy(), self.weights, self.scale,
            self.bound, self.name + "^T", self.p2_declared, self.p6_declared,
        )

    def atom(self, k: int, u: float) -> EnvironmentAtom:
        return EnvironmentAtom(self.family, math.exp(u) * self.shapes[k])

    def sample_indices(self, rng, size, theta: float = 0.0):
        """(shape index, log scale) arrays drawn from the (scale-tilted) law."""
        k = rng.choice(self.n_shapes, size=size, p=self.weights)
        u = self.scale.sample(rng, size, theta)
        return k, u

    def atoms(self):
        """Enumerate (probability, atom) pairs of a finite-mixture law."""
        if not self.scale.finite:
            raise ValueError("law has a continuous scale factor")
        if isinstance(self.scale, FixedScale):
            vals, probs = (self.scale.value,), (1.0,)
        else:
            vals, probs = self.scale.values, self.scale.probs
        out = []
        for k in range(self.n_shapes):
            for u, q in zip(vals, probs):
                out.append((float(self.weights[k] * q), self.atom(k, u)))
        return out

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "shapes": self.shapes.tolist(),
            "weights": self.weights.tolist(),
            "scale": self.scale.to_dict(),
            "bound": self.bound,
        }


def sample_environment(law: EnvironmentLaw, rng) -> EnvironmentAtom:
    k, u = law.sample_indices(rng, 1)
    return law.atom(int(k[0]), float(u[0]))


def sample_offspring(atom: EnvironmentAtom, parent_type: int, rng, size=None) -> np.ndarray:
    return atom.sample_offspring(parent_type, rng, size)


def mean_matrix(atom: EnvironmentAtom):
    return atom.mean_matrix()


def hessian(atom: EnvironmentAtom, i: int) -> np.ndarray:
    return atom.hessian(i)


# ---------------------------------------------------------------- presets

PRESETS: dict[str, dict] = {
    # c in {e^2, e^-1} w.p. {0.2, 0.8}, mean matrix c J/2: closed-form scalar reduction
    "scalar-two-atom": {
        "family": "scalar-scaled",
        "shapes": [[[0.5, 0.5], [0.5, 0.5]]],
        "weights": [1.0],
        "scale": {"kind": "discrete", "values": [2.0, -1.0], "probs": [0.2, 0.8]},
        "bound": 1.000000001,
        "p6_declared": False,
    },
    # log c ~ N(-1, 4): theta_* = 1/4, rho_* = e^{-1/8}, tilted step sd = 2
    "scalar-lognormal": {
        "family": "scalar-scaled",
        "shapes": [[[0.5, 0.5], [0.5, 0.5]]],
        "weights": [1.0],
        "scale": {"kind": "normal", "mean": -1.0, "sd": 2.0},
        "bound": 1.000000001,
    },
    # bounded non-lattice scalar factor, so P7 holds with finite constants
    "scalar-uniform": {
        "family": "scalar-scaled",
        "shapes": [[[0.5, 0.5], [0.5, 0.5]]],
        "weights": [1.0],
        "scale": {"kind": "uniform", "low": -2.0, "high": 1.5},
        "bound": 1.000000001,
    },
    # bounded log-scale with tilted step sd close to 2
    "scalar-uniform-wide": {
        "family": "scalar-scaled",
        "shapes": [[[0.5, 0.5], [0.5, 0.5]]],
        "weights": [1.0],
        "scale": {"kind": "uniform", "low": -4.0, "high": 3.0},
        "bound": 1.000000001,
    },
    "geometric-2type": {
        "family": "independent-geometric",
        "shapes": [
            [[0.60, 0.30], [0.25, 0.55]],
            [[0.35, 0.50], [0.45, 0.30]],
        ],
        "weights": [0.5, 0.5],
        "scale": {"kind": "uniform", "low": -1.8, "high": 1.6},
        "bound": 2.5,
    },
    "geometric-3type": {
        "family": "independent-geometric",
        "shapes": [
            [[0.40, 0.20, 0.25], [0.15, 0.35, 0.20], [0.25, 0.20, 0.30]],
            [[0.20, 0.30, 0.15], [0.30, 0.20, 0.35], [0.20, 0.35, 0.20]],
        ],
        "weights": [0.4, 0.6],
        "scale": {"kind": "uniform", "low": -1.8, "high": 1.6},
        "bound": 3.0,
    },
    "strongly-subcritical": {
        "family": "scalar-scaled",
        "shapes": [[[0.5, 0.5], [0.5, 0.5]]],
        "weights": [1.0],
        "scale": {"kind": "normal", "mean": -1.0, "sd": 0.5},
        "bound": 1.000000001,
    },
    "bernoulli-pair": {
        "family": "bernoulli-pair",
        "shapes": [[[0.5, 0.5], [0.5, 0.5]]],
        "weights": [1.0],
        "scale": {"kind": "fixed", "value": 0.0},
        "bound": 1.000000001,
        "p6_declared": False,
    },
}
PRESETS["weakly-subcritical-scalar"] = PRESETS["scalar-two-atom"]

ENVIRONMENT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["family", "shapes", "weights"],
    "properties": {
        "family": {"enum": list(FAMILIES)},
        "shapes": {"type": "array", "minItems": 1},
        "weights": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "scale": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["fixed", "discrete", "normal", "uniform"]},
                "value": {"type": "number"},
                "values": {"type": "array", "items": {"type": "number"}},
                "probs": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "mean": {"type": "number"},
                "sd": {"type": "number", "exclusiveMinimum": 0},
                "low": {"type": "number"},
                "high": {"type": "number"},
            },
        },
        "bound": {"type": "number", "exclusiveMinimum": 1},
        "p2_declared": {"type": "boolean"},
        "p6_declared": {"type": "boolean"},
        "seed": {"type": "integer", "minimum": 0},
    },
}


def law_from_dict(d: dict, name: str = "custom") -> EnvironmentLaw:
    jsonschema.validate(d, ENVIRONMENT_SCHEMA)
    return EnvironmentLaw(
        d["family"],
        np.asarray(d["shapes"], float),
        np.asarray(d["weights"], float),
        scale_from_dict(d.get("scale", {"kind": "fixed", "value": 0.0})),
        float(d.get("bound", 1.0 + 1e-9)),
        name,
        bool(d.get("p2_declared", True)),
        bool(d.get("p6_declared", True)),
    )


def preset(name: str) -> EnvironmentLaw:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    return law_from_dict(PRESETS[name], name)


# ---------------------------------------------------------------- conditions


@dataclass
class ConditionReport:
    law: str
    results: dict
    constants: dict

    def passed(self, *names) -> bool:
        names = names or tuple(self.results)
        return all(self.results[n] in (True, "declared") for n in names)

    def to_dict(self) -> dict:
        return {"law": self.law, "results": dict(self.results), "constants": dict(self.constants)}


def _extreme_atoms(law: EnvironmentLaw):
    """Atoms at the ends of the scale support (the P7 extremes are monotone in c)."""
    lo, hi = law.scale.support
    out = []
    for k in range(law.n_shapes):
        for u in (lo, hi):
            if math.isfinite(u):
                out.append(law.atom(k, u))
    return out


def check_conditions(law: EnvironmentLaw, sample_budget: int = 0, spectral=None,
                     rng=None) -> ConditionReport:
    """Numeric checks of P1-P7 for ``law``.

    P4 and the sign of Lambda'(1) come from ``spectral`` (a CriticalPoint or
    a dict with ``gamma_mu`` and ``lambda_prime_at_1``) when given.
    ``sample_budget`` > 0 adds a Monte Carlo confirmation of the P7 moments.
    """
    res: dict = {}
    const: dict = {}
    lo, hi = law.scale.support

    # P1: E|M| = E[c] * sum_k pi_k |G_k|
    emean = float(np.exp(law.scale.log_mgf(1.0)))
    const["E|M|"] = emean * float(law.weights @ law.shapes.sum(axis=(1, 2)))
    res["P1"] = bool(np.isfinite(const["E|M|"]))

    res["P2"] = "declared" if law.p2_declared else False

    const["B"] = law.shape_ratio
    res["P3"] = bool(const["B"] <= law.bound * (1 + 1e-12))

    if spectral is not None:
        g = spectral["gamma_mu"] if isinstance(spectral, dict) else spectral.gamma_mu
        lp1 = spectral["lambda_prime_at_1"] if isinstance(spectral, dict) else spectral.lambda_prime_at_1
        const["gamma_mu"] = float(g)
        const["Lambda'(1)"] = float(lp1)
        res["P4"] = bool(g < 0)
        res["Lambda'(1)>0"] = bool(lp1 > 0)
    else:
        res["P4"] = "deferred"

    # P5 via v(M) > e^eps and v(M^T) > e^eps on some atom
    eps_col = max(math.log(col_min(g)) for g in law.shapes) + hi
    eps_row = max(math.log(col_min(g.T)) for g in law.shapes) + hi
    const["P5_eps"] = min(eps_col, eps_row)
    res["P5"] = bool(const["P5_eps"] > 0)

    res["P6"] = "declared" if law.p6_declared else False

    if math.isfinite(lo) and math.isfinite(hi):
        atoms = _extreme_atoms(law)
        p_two = min(1 - lw.prob_zero() - lw.prob_one() for a in atoms for lw in a.laws)
        p_zero = min(lw.prob_zero() for a in atoms for lw in a.laws)
        k0 = max(lw.second_moment_total() for a in atoms for lw in a.laws)
        const.update({"P7a_eps0": p_two, "P7b_eps0": p_zero, "P7c_K0": k0})
        res["P7"] = bool(p_two > 0 and p_zero > 0 and np.isfinite(k0))
    else:
        const.update({"P7a_eps0": 0.0, "P7b_eps0": 0.0, "P7c_K0": math.inf})
        res["P7"] = False

    if sample_budget > 0:
        rng = np.random.default_rng(rng)
        k, u = law.sample_indices(rng, sample_budget)
        worst = 0.0
        for j in range(min(sample_budget, 64)):
            atom = law.atom(int(k[j]), float(u[j]))
            for lw in atom.laws:
                worst = max(worst, lw.second_moment_total())
        const["P7c_sampled_max"] = worst
    return ConditionReport(law.name, res, const)
