"""Command line entry point: ``bpre <subcommand> --config cfg.json``.

Exit codes: 0 success, 1 failed verification, 2 invalid config,
3 regime mismatch, 4 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .branching import eta_values, telescoping_check
from .cocycle import ProjectivePoint, cocycle_path, hilbert_distance
from .environment import check_conditions
from .spectral import (CriticalPoint, RegimeError, SpectralConvergenceError, SpectralSolution,
                       lambda_mc)
from .streams import StreamFactory

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_REGIME, EXIT_CONVERGENCE = 0, 1, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bpre", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("spectral", "solve for theta_star, rho_star and the eigenfunction"),
        ("conditions", "numeric checks of the standing hypotheses"),
        ("walk", "tilted-walk survival and harmonic-function diagnostics"),
        ("survival", "annealed survival schedule and slope fit"),
        ("verify", "fast identity checks on the configured law"),
        ("report", "full pipeline with CSV, JSON and markdown output"),
    ]:
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--preset", help="preset name when no config file is given")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (default: config 'output' or ./runs)")
        p.add_argument("--workers", type=int, help="worker threads")
        p.add_argument("--format", action="append", choices=["csv", "json", "md"],
                       help="report formats (repeatable; default all)")
    return parser


def _config(args) -> harness.ExperimentConfig:
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise harness.ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise harness.ConfigError(f"config is not valid JSON: {exc}") from exc
    elif args.preset:
        raw = {"preset": args.preset, "seed": 0}
    else:
        raise harness.ConfigError("either --config or --preset is required")
    if not isinstance(raw, dict):
        raise harness.ConfigError("config must be a JSON object")
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.workers is not None:
        raw["workers"] = args.workers
    return harness.load_config(raw)


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.output or "runs")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _spectral(cfg, out: Path):
    """Solve, or reuse a cached solution written by an earlier run of the same config."""
    cache = out / "spectral.json"
    meta = out / "critical.json"
    if cache.exists() and meta.exists():
        saved = json.loads(meta.read_text())
        if saved.get("config_hash") == cfg.config_hash:
            crit = CriticalPoint(**{k: saved[k] for k in ("theta_star", "rho_star", "gamma_mu",
                                                           "lambda_prime_at_1", "regime",
                                                           "lambda_prime_at_star")})
            return crit, SpectralSolution.from_json(cache.read_text())
    _, crit, sol = harness.solve_spectral(cfg)
    cache.write_text(sol.to_json())
    meta.write_text(json.dumps({**crit.to_dict(), "config_hash": cfg.config_hash}, indent=2) + "\n")
    return crit, sol


def verify_suite(cfg, n_env: int = 200) -> dict:
    law = cfg.law
    g = StreamFactory(cfg.seed).generator("verify")
    checks = {}
    worst_tel, eta_bad, add_err, metric_bad = 0.0, 0, 0.0, 0
    for _ in range(n_env):
        k, u = law.sample_indices(g, 20)
        env = [law.atom(int(a), float(b)) for a, b in zip(k, u)]
        worst_tel = max(worst_tel, telescoping_check(env, 20, np.zeros(law.p)))
        eta_bad += eta_values(env, 20, law.bound).violations
        x = ProjectivePoint(g.dirichlet(np.ones(law.p)))
        path = cocycle_path(x, 0.0, [e.mean for e in env])
        tail = cocycle_path(path.states[10], path.sums[10], [e.mean for e in env[10:]])
        add_err = max(add_err, abs(tail.sums[-1] - path.sums[-1]))
        y = ProjectivePoint(g.dirichlet(np.ones(law.p)))
        d0 = hilbert_distance(x, y)
        d1 = hilbert_distance(path.states[1], cocycle_path(y, 0, [env[0].mean]).states[1])
        metric_bad += int(d1 > d0 + 1e-10)
    checks["telescoping_residual_le_1e-9"] = worst_tel <= 1e-9
    checks["eta_bound"] = eta_bad == 0
    checks["cocycle_additivity_1e-12"] = add_err <= 1e-12
    checks["contraction"] = metric_bad == 0
    _, crit, sol = harness.solve_spectral(cfg)
    est, se = lambda_mc(law, crit.theta_star, 200, 4096, StreamFactory(cfg.seed).child("verify"))
    checks["lambda_spectral_vs_mc"] = abs(est - sol.lam) <= max(0.01 * sol.lam, 3 * se)
    return checks


def _dispatch(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    formats = tuple(args.format or ("csv", "json", "md"))
    if args.command == "spectral":
        crit, sol = _spectral(cfg, out)
        print(json.dumps({**crit.to_dict(), "lambda": sol.lam, "residual": sol.residual}, indent=2))
        return EXIT_OK
    if args.command == "conditions":
        crit_info = None
        try:
            crit_info, _ = _spectral(cfg, out)
        except RegimeError as exc:
            crit_info = {"gamma_mu": -1.0 if "strongly" in str(exc) else 0.0,
                         "lambda_prime_at_1": exc.lambda_prime_at_1}
        rep = check_conditions(cfg.law, spectral=crit_info).to_dict()
        text = json.dumps(harness._json_safe(rep), indent=2)
        (out / "conditions.json").write_text(text + "\n")
        print(text)
        return EXIT_OK
    if args.command == "walk":
        crit, sol = _spectral(cfg, out)
        rows = harness.walk_rows(cfg, crit, sol, StreamFactory(cfg.seed))
        (out / "walk.csv").write_bytes(harness.rows_to_csv(rows).encode())
        print(f"wrote {out / 'walk.csv'} ({len(rows)} rows)")
        return EXIT_OK
    if args.command == "survival":
        crit, sol = _spectral(cfg, out)
        surv = harness.survival_estimates(cfg, crit, sol, StreamFactory(cfg.seed))
        replicas = surv.pop("_replicas", None)
        rows = [r for ests in surv.values() for e in ests for r in e.rows()]
        (out / "survival.csv").write_bytes(harness.rows_to_csv(rows).encode())
        if "tilted" in surv and len(surv["tilted"]) >= 5:
            fit = harness.fit_power_law(surv["tilted"], crit.rho_star, cfg.fit["bootstrap"],
                                        StreamFactory(cfg.seed).generator("bootstrap"),
                                        cfg.fit["type_index"], replicas=replicas)
            print(json.dumps(fit.to_dict()))
        print(f"wrote {out / 'survival.csv'} ({len(rows)} rows)")
        return EXIT_OK
    if args.command == "verify":
        checks = verify_suite(cfg)
        for k, v in checks.items():
            print(f"{'PASS' if v else 'FAIL'} {k}")
        return EXIT_OK if all(checks.values()) else EXIT_VERIFY
    report = harness.run(cfg)
    for p in harness.emit_report(report, out, formats):
        print(f"wrote {p}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except harness.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RegimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REGIME
    except SpectralConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
