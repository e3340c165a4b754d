"""Experiment orchestration: config, pipeline, slope fit and report files."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .branching import SurvivalEstimate, annealed_naive, annealed_tilted, annealed_tilted_sample
from .environment import ENVIRONMENT_SCHEMA, PRESETS, check_conditions, law_from_dict, preset
from .spectral import SpectralSolution, SpectralSolver
from .streams import StreamFactory
from .walk import CSV_COLUMNS, TiltedKernel, csv_row, sigma_estimate, survival_tails


class ConfigError(ValueError):
    pass


CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["seed"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "preset": {"type": "string"},
        "environment": ENVIRONMENT_SCHEMA,
        "spectral": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "resolution": {"type": "integer", "minimum": 2},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "root_tol": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "walk": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "n_list": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "a_values": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "reps": {"type": "integer", "minimum": 2},
                "sigma_n": {"type": "integer", "minimum": 2},
            },
        },
        "survival": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_list": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "reps": {"type": "integer", "minimum": 2},
                "methods": {"type": "array", "items": {"enum": ["tilted", "naive"]}, "minItems": 1},
                "naive_reps": {"type": "integer", "minimum": 2},
                "naive_max_n": {"type": "integer", "minimum": 1},
            },
        },
        "fit": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "bootstrap": {"type": "integer", "minimum": 10},
                "type_index": {"type": "integer", "minimum": 0},
            },
        },
        "output": {"type": "string"},
        "workers": {"type": "integer", "minimum": 1},
    },
    "oneOf": [{"required": ["preset"]}, {"required": ["environment"]}],
}

DEFAULTS = {
    "spectral": {"tol": 1e-12, "max_iter": 20000, "root_tol": 1e-5},
    "walk": {"enabled": True, "n_list": [100, 200], "a_values": [1.0, 2.0], "reps": 10000,
             "sigma_n": 200},
    "survival": {"n_list": [100, 150, 200, 250, 300, 350, 400], "reps": 16384,
                 "methods": ["tilted"], "naive_reps": 100000, "naive_max_n": 40},
    "fit": {"bootstrap": 2000, "type_index": 0},
}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    law: object
    preset_name: str | None
    spectral: dict
    walk: dict
    survival: dict
    fit: dict
    output: str | None
    workers: int
    raw: dict = field(repr=False)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()[:16]


def load_config(source) -> ExperimentConfig:
    """Validate a config given as dict, JSON text or path."""
    if isinstance(source, (str, Path)) and Path(source).exists():
        text = Path(source).read_text()
    elif isinstance(source, str):
        text = source
    else:
        text = None
    try:
        raw = json.loads(text) if text is not None else dict(source)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from exc
    name = raw.get("preset")
    try:
        law = preset(name) if name else law_from_dict(raw["environment"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(exc.args[0] if exc.args else str(exc)) from exc
    sections = {k: {**v, **raw.get(k, {})} for k, v in DEFAULTS.items()}
    return ExperimentConfig(raw["seed"], law, name, sections["spectral"], sections["walk"],
                            sections["survival"], sections["fit"], raw.get("output"),
                            int(raw.get("workers", 1)), raw)


# ------------------------------------------------------------------ slope fit


@dataclass(frozen=True)
class PowerLawFit:
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    n_used: int

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "ci": [self.ci_low, self.ci_high],
                "n_used": self.n_used}


def _wls(x, y, w):
    X = np.column_stack([np.ones_like(x), x])
    W = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * W[:, None], y * W, rcond=None)
    return coef


def fit_power_law(table, rho_star: float, n_boot: int = 2000, rng=None,
                  type_index: int = 0, level: float = 0.95, replicas=None,
                  batches: int = 256) -> PowerLawFit:
    """Slope of log(estimate) - n log(rho_star) against log n.

    ``table`` holds SurvivalEstimate objects or (n, estimate, stderr) triples.
    Weights are inverse variances of the log estimates (uniform when every
    stderr is zero).  The CI comes from a parametric bootstrap, or, when the
    per-replica contributions ``replicas`` (R, len(table)) are given, from
    resampling batch means of replicas, which keeps the correlation between
    horizons that share paths.
    """
    ns, est, se, kept = [], [], [], []
    table = list(table)
    for j, row in enumerate(table):
        if isinstance(row, SurvivalEstimate):
            n, e, s = row.n, float(row.estimate[type_index]), float(row.stderr[type_index])
        else:
            n, e, s = row
        if not e > 0:
            warnings.warn(f"dropping non-positive estimate at n={n}", RuntimeWarning, stacklevel=2)
            continue
        kept.append(j)
        ns.append(float(n))
        est.append(float(e))
        se.append(float(s))
    ns, est, se = map(np.asarray, (ns, est, se))
    if replicas is not None:
        if np.shape(replicas)[1] != len(table):
            raise ValueError("replicas must have one column per table row")
        replicas = np.asarray(replicas, float)[:, kept]
    if len(np.unique(ns)) < 5:
        raise ValueError("need at least 5 distinct n values")
    x = np.log(ns)
    y = np.log(est) - ns * math.log(rho_star)
    rel = se / est
    w = np.ones_like(x) if np.all(rel == 0) else 1.0 / np.maximum(rel, 1e-300) ** 2
    intercept, slope = _wls(x, y, w)
    g = (rng if isinstance(rng, np.random.Generator)
         else StreamFactory(0 if rng is None else int(rng)).generator("bootstrap"))
    if np.all(rel == 0):
        lo = hi = float(slope)
    elif replicas is not None:
        nb = min(batches, len(replicas))
        means = np.array([c.mean(axis=0) for c in np.array_split(replicas, nb)])
        boots = []
        for _ in range(n_boot):
            m = means[g.integers(0, nb, nb)].mean(axis=0)
            if np.all(m > 0):
                boots.append(_wls(x, np.log(m) - ns * math.log(rho_star), w)[1])
        alpha = (1 - level) / 2
        lo, hi = np.quantile(boots, [alpha, 1 - alpha])
    else:
        boots = np.array([_wls(x, y + rel * g.standard_normal(len(y)), w)[1] for _ in range(n_boot)])
        alpha = (1 - level) / 2
        lo, hi = np.quantile(boots, [alpha, 1 - alpha])
    return PowerLawFit(float(slope), float(intercept), float(lo), float(hi), len(ns))


# ------------------------------------------------------------------ pipeline


@dataclass
class RunReport:
    critical: dict
    conditions: dict
    tables: dict
    fit: dict | None
    checks: dict
    provenance: dict
    errors: list = field(default_factory=list)

    def rows(self) -> list[dict]:
        out = []
        for name in sorted(self.tables):
            out.extend(self.tables[name])
        return out

    def to_dict(self) -> dict:
        return {"critical": self.critical, "conditions": self.conditions, "fit": self.fit,
                "checks": self.checks, "provenance": self.provenance, "errors": self.errors,
                "tables": {k: len(v) for k, v in sorted(self.tables.items())}}


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def solve_spectral(cfg: ExperimentConfig):
    solver = SpectralSolver(cfg.law, cfg.spectral.get("resolution"), cfg.spectral["tol"],
                            cfg.spectral["max_iter"], root_tol=cfg.spectral["root_tol"])
    crit = solver.critical_point()
    return solver, crit, solver.solve(crit.theta_star)


def walk_rows(cfg: ExperimentConfig, crit, solution: SpectralSolution, factory: StreamFactory):
    w = cfg.walk
    kern = TiltedKernel(cfg.law, crit.theta_star, solution)
    tails = survival_tails(kern, None, w["a_values"], w["n_list"], w["reps"], factory.child("walk"),
                           cfg.workers)
    rows = []
    for t in tails:
        rows.extend(t.rows(cfg.seed))
        for n, c, r in zip(t.n, t.compensated, t.ratio):
            rows.append(csv_row("compensated_ratio", int(n), t.a, "", "", float(r), "", t.reps, cfg.seed))
    sig = sigma_estimate(kern, w["sigma_n"], w["reps"], factory.child("sigma"))
    rows.append(csv_row("sigma", sig.n, "", "", "", sig.sigma, "", w["reps"], cfg.seed))
    rows.append(csv_row("sigma", sig.n // 2, "", "", "", sig.sigma_half, "", w["reps"], cfg.seed))
    return rows


def survival_estimates(cfg: ExperimentConfig, crit, solution, factory: StreamFactory):
    s = cfg.survival
    out = {}
    if "tilted" in s["methods"]:
        sample = annealed_tilted_sample(cfg.law, crit.theta_star, solution, s["n_list"], s["reps"],
                                        factory.child("survival"), cfg.workers)
        out["tilted"] = annealed_tilted(cfg.law, crit, solution, s["n_list"], s["reps"],
                                        factory.child("survival"), sample=sample)
        out["_replicas"] = sample.contrib[:, :, cfg.fit["type_index"]]
    if "naive" in s["methods"]:
        ns = [n for n in s["n_list"] if n <= s["naive_max_n"]]
        if ns:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                out["naive"] = annealed_naive(cfg.law, ns, s["naive_reps"], factory.child("naive"),
                                              cfg.workers)
    return out


def run(config) -> RunReport:
    """spectral solve, conditions, walk diagnostics, survival schedule, slope fit.

    Regime and convergence errors from the spectral stage propagate; later
    stages record failures and the run continues.
    """
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    factory = StreamFactory(cfg.seed)
    solver, crit, solution = solve_spectral(cfg)
    report = RunReport(crit.to_dict(), {}, {}, None, {},
                       {"config_hash": cfg.config_hash, "seed": cfg.seed, "version": __version__,
                        "preset": cfg.preset_name or cfg.law.name})
    report.conditions = check_conditions(cfg.law, spectral=crit).to_dict()
    if cfg.walk["enabled"]:
        try:
            report.tables["walk"] = walk_rows(cfg, crit, solution, factory)
        except (ValueError, RuntimeError) as exc:
            report.errors.append(f"walk: {exc}")
    try:
        surv = survival_estimates(cfg, crit, solution, factory)
    except (ValueError, RuntimeError) as exc:
        report.errors.append(f"survival: {exc}")
        surv = {}
    replicas = surv.pop("_replicas", None)
    for method, ests in surv.items():
        report.tables[f"survival_{method}"] = [r for e in ests for r in e.rows()]
    if "tilted" in surv and len({e.n for e in surv["tilted"]}) >= 5:
        fit = fit_power_law(surv["tilted"], crit.rho_star, cfg.fit["bootstrap"],
                            factory.generator("bootstrap"), cfg.fit["type_index"],
                            replicas=replicas)
        report.fit = fit.to_dict()
        report.checks["slope_in_range"] = -1.8 <= fit.slope <= -1.2
        report.checks["ci_contains_-1.5"] = fit.ci_low <= -1.5 <= fit.ci_high
        comp = [e.n**1.5 * e.estimate[cfg.fit["type_index"]] / crit.rho_star**e.n for e in surv["tilted"]]
        report.checks["compensated_spread_lt_2"] = max(comp) / min(comp) < 2
    report.checks["regime_weakly_subcritical"] = crit.regime == "weakly"
    return report


# ------------------------------------------------------------------ output


SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["critical", "conditions", "fit", "checks", "provenance", "errors", "tables"],
    "properties": {
        "critical": {"type": "object", "required": ["theta_star", "rho_star", "gamma_mu", "regime"]},
        "conditions": {"type": "object"},
        "fit": {"type": ["object", "null"]},
        "checks": {"type": "object", "additionalProperties": {"type": "boolean"}},
        "provenance": {"type": "object", "required": ["config_hash", "seed", "version"]},
        "errors": {"type": "array", "items": {"type": "string"}},
        "tables": {"type": "object"},
    },
}


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def render_markdown(report: RunReport) -> str:
    c = report.critical
    lines = [
        f"# Run report ({report.provenance.get('preset')})",
        "",
        f"- seed: {report.provenance['seed']}, config hash: `{report.provenance['config_hash']}`",
        f"- theta_star = {c['theta_star']:.6f}, rho_star = {c['rho_star']:.6f}",
        f"- gamma_mu = {c['gamma_mu']:.6f}, Lambda'(1) = {c['lambda_prime_at_1']:.6f} ({c['regime']})",
    ]
    if report.fit:
        f = report.fit
        lines.append(f"- slope = {f['slope']:.4f}, 95% CI [{f['ci'][0]:.4f}, {f['ci'][1]:.4f}]")
    lines += ["", "## Conditions", ""]
    for k, v in report.conditions["results"].items():
        lines.append(f"- {k}: {v}")
    lines += ["", "## Checks", ""]
    for k, v in report.checks.items():
        lines.append(f"- [{'x' if v else ' '}] {k}")
    if report.errors:
        lines += ["", "## Errors", ""] + [f"- {e}" for e in report.errors]
    return "\n".join(lines) + "\n"


def emit_report(report: RunReport, out_dir, formats=("csv", "json", "md")) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if "csv" in formats:
        p = out / "estimates.csv"
        p.write_bytes(rows_to_csv(report.rows()).encode())
        paths.append(p)
    if "json" in formats:
        summary = _json_safe(report.to_dict())
        jsonschema.validate(summary, SUMMARY_SCHEMA)
        p = out / "summary.json"
        p.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        paths.append(p)
    if "md" in formats:
        p = out / "report.md"
        p.write_text(render_markdown(report))
        paths.append(p)
    return paths


def preset_names() -> list[str]:
    return sorted(PRESETS)
