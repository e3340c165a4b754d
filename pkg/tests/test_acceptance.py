"""Acceptance gate: one test per criterion, each logging a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary lines
appear in the "acceptance criteria" section at the end of the output.
"""

import json
import math
import time

import numpy as np
import pytest

from bpre import harness
from bpre.branching import (abc_decomposition, annealed_naive, annealed_tilted,
                            annealed_tilted_sample, eta_values, event_identity, forward_simulate,
                            quenched_survival, telescoping_check, tilted_unit_functional)
from bpre.cocycle import ProjectivePoint, cocycle_path, contraction_coeff, hilbert_distance, project_act
from bpre.environment import PRESETS, preset
from bpre.spectral import SpectralSolver, lambda_mc
from bpre.walk import TiltedKernel, local_limit_hist, simulate

pytestmark = pytest.mark.slow

SEED = 20240601
THETAS = (0.25, 0.5, 0.75, 1.0)


def critical(name):
    solver = SpectralSolver(preset(name))
    crit = solver.critical_point()
    return solver.law, crit, solver.solve(crit.theta_star)


def spread(values):
    values = np.asarray(values, float)
    return float(values.max() / values.min())


# ---------------------------------------------------------------- 1


def test_c1_critical_point_oracle(acceptance_log):
    t0 = time.perf_counter()
    crit = SpectralSolver(preset("scalar-two-atom")).critical_point()
    elapsed = time.perf_counter() - t0
    theta = math.log(2) / 3
    rho = 0.2 * 2 ** (2 / 3) + 0.8 * 2 ** (-1 / 3)
    ok = abs(crit.theta_star - theta) <= 1e-4 and abs(crit.rho_star - rho) <= 1e-4 and elapsed < 60
    acceptance_log("C1 critical point", ok,
                   f"theta err {abs(crit.theta_star - theta):.1e}, rho err {abs(crit.rho_star - rho):.1e},"
                   f" {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 2


def test_c2_survival_exponent(acceptance_log):
    t0 = time.perf_counter()
    law, crit, sol = critical("geometric-2type")
    ns = list(range(100, 401, 50))
    reps = 2**18
    sample = annealed_tilted_sample(law, crit.theta_star, sol, ns, reps, SEED)
    ests = annealed_tilted(law, crit, sol, ns, reps, SEED, sample=sample)
    fit = harness.fit_power_law(ests, crit.rho_star, 2000, SEED, replicas=sample.contrib[:, :, 0])
    comp = [e.n**1.5 * e.estimate[0] / crit.rho_star**e.n for e in ests]
    checks = {
        "slope": -1.8 <= fit.slope <= -1.2,
        "ci": fit.ci_low <= -1.5 <= fit.ci_high,
        "spread": spread(comp) < 2,
    }
    ok = all(checks.values())
    failed = ",".join(k for k, v in checks.items() if not v) or "none"
    acceptance_log("C2 survival exponent", ok,
                   f"slope {fit.slope:.3f} CI [{fit.ci_low:.3f}, {fit.ci_high:.3f}], "
                   f"compensated spread {spread(comp):.2f}, replicas {reps}, "
                   f"min ESS {min(e.ess for e in ests):.0f}, failed: {failed}, "
                   f"{time.perf_counter() - t0:.0f}s")
    assert ok


# ---------------------------------------------------------------- 3 and 4


@pytest.fixture(scope="module")
def scalar_batch():
    law, crit, sol = critical("scalar-uniform-wide")
    kern = TiltedKernel(law, crit.theta_star, sol)
    t0 = time.perf_counter()
    batch = simulate(kern, None, 400, 10**6, SEED, (200, 300, 400), name="acceptance")
    return kern, batch, time.perf_counter() - t0


def test_c3_survival_tail(acceptance_log, scalar_batch):
    kern, batch, elapsed = scalar_batch
    sigma = math.sqrt(batch.T[:, batch.col(400)].var(ddof=1) / 400)
    ratios, corrected = [], []
    for a in (2.0, 4.0):
        s = batch.s(a, 400)
        h = np.where(batch.alive(a, 400), s, 0.0).mean()
        for n in (200, 400):
            r = math.sqrt(2 * math.pi * n) * batch.alive(a, n).mean() / h
            ratios.append(r)
            corrected.append(r * sigma / 2)
    ok = all(0.85 <= r <= 1.15 for r in ratios)
    acceptance_log("C3 survival tail", ok,
                   f"ratios {', '.join(f'{r:.3f}' for r in ratios)} (a=2,4 x n=200,400); "
                   f"sigma {sigma:.3f}, sigma/2-corrected {', '.join(f'{r:.3f}' for r in corrected)}; "
                   f"10^6 paths in {elapsed:.0f}s")
    assert ok


def test_c4_rayleigh_profile(acceptance_log, scalar_batch):
    kern, batch, _ = scalar_batch
    prof = local_limit_hist(kern, None, 4.0, 300, 1.0, batch.reps, batch=batch)
    ok = prof.ks < 0.05 and prof.survivors >= 10**5
    acceptance_log("C4 Rayleigh profile", ok,
                   f"KS {prof.ks:.4f} with {prof.survivors} survivors at n=300, a=4")
    assert ok


# ---------------------------------------------------------------- 5


def test_c5_local_envelopes(acceptance_log):
    t0 = time.perf_counter()
    law, crit, sol = critical("geometric-2type")
    theta, rho = crit.theta_star, crit.rho_star
    row = TiltedKernel(law, theta, sol)
    col = TiltedKernel(law, theta, side="column")
    reps = 200_000
    fwd = simulate(row, None, 400, reps, SEED, (200, 400), name="envelope")
    bwd = simulate(col, None, 400, reps, SEED + 1, (200, 400), reversed=True, name="envelope")
    a = 4.0
    local, tail = [], []
    for n in (200, 400):
        s = fwd.s(a, n)
        alive = fwd.alive(a, n)
        h = np.where(alive, s, 0.0).mean()
        for b in (2.0, 4.0, 8.0):
            ht = np.where(bwd.alive(b, n), bwd.s(b, n), 0.0).mean()
            for ell in (1.0, 2.0, 4.0):
                p = (alive & (s >= b) & (s <= b + ell)).mean()
                local.append(n**1.5 * p / (h * ht * ell))
        w = fwd.untilted_weight(n)
        for aa in (2.0, 4.0, 8.0):
            ha = np.where(fwd.alive(aa, n), fwd.s(aa, n), 0.0).mean()
            p = (w * fwd.alive(aa, n)).mean()
            tail.append(n**1.5 / rho**n * p / (math.exp(theta * aa) * ha))
    ok = spread(local) <= 4 and spread(tail) <= 4
    acceptance_log("C5 envelopes", ok,
                   f"tilted local spread {spread(local):.2f} over 3x3 (b, ell) x 2 n, "
                   f"untilted tail spread {spread(tail):.2f} over a=2,4,8 x 2 n, "
                   f"{time.perf_counter() - t0:.0f}s")
    assert ok


# ---------------------------------------------------------------- 6


def test_c6_identity_suite(acceptance_log):
    g = np.random.default_rng(SEED)
    tel, eta_bad, eta_neg, abc_err, events = 0.0, 0, 0, 0.0, 0
    for name in ("geometric-2type", "geometric-3type", "bernoulli-pair", "scalar-two-atom"):
        law = preset(name)
        for _ in range(1000):
            n = int(g.integers(2, 51))
            k, u = law.sample_indices(g, n)
            env = [law.atom(int(x), float(y)) for x, y in zip(k, u)]
            tel = max(tel, telescoping_check(env, n, g.uniform(0, 1, law.p) * 0.999))
            dec = eta_values(env, n, law.bound)
            eta_bad += dec.violations
            if n >= 4:
                rec = abc_decomposition(env, n, int(g.integers(1, (n - 1) // 2 + 1)))
                abc_err = max(abc_err, rec.partition_error / rec.total)
            events += sum(not event_identity(env, n, a) for a in (0.5, 2.0, 6.0))
    add_err, metric_err, contraction_bad = 0.0, 0.0, 0
    for _ in range(1000):
        p = int(g.integers(2, 5))
        mats = [np.exp(g.uniform(-1, 1, (p, p))) for _ in range(12)]
        x, y, z = (ProjectivePoint(g.dirichlet(np.ones(p))) for _ in range(3))
        a = float(g.uniform(0, 5))
        full = cocycle_path(x, a, mats)
        tail = cocycle_path(full.states[5], full.sums[5], mats[5:])
        add_err = max(add_err, abs(tail.sums[-1] - full.sums[-1]) / max(1.0, abs(full.sums[-1])))
        dxy, dyx = hilbert_distance(x, y), hilbert_distance(y, x)
        tri = hilbert_distance(x, z) + hilbert_distance(z, y)
        metric_err = max(metric_err, abs(dxy - dyx), hilbert_distance(x, x), max(0.0, dxy - tri),
                         max(0.0, -dxy), max(0.0, dxy - 1))
        c = contraction_coeff(mats[0])
        d1 = hilbert_distance(project_act(x, mats[0])[0], project_act(y, mats[0])[0])
        contraction_bad += int(d1 > c * dxy + 1e-10)
    checks = {
        "telescoping": tel <= 1e-9, "eta": eta_bad == 0, "abc": abc_err <= 1e-12,
        "event": events == 0, "additivity": add_err <= 1e-12, "metric": metric_err <= 1e-10,
        "contraction": contraction_bad == 0,
    }
    ok = all(checks.values())
    acceptance_log("C6 identity suite", ok,
                   f"telescoping {tel:.1e}, eta violations {eta_bad}, ABC {abc_err:.1e}, "
                   f"event mismatches {events}, additivity {add_err:.1e}, metric {metric_err:.1e}, "
                   f"contraction violations {contraction_bad}")
    assert ok


# ---------------------------------------------------------------- 7


def test_c7_cross_oracles(acceptance_log):
    t0 = time.perf_counter()
    lam_bad = []
    for name in sorted(PRESETS):
        law = preset(name)
        solver = SpectralSolver(law)
        for theta in THETAS:
            est, se = lambda_mc(law, theta, 200, 4096, SEED)
            lam = solver.lam(theta)
            if abs(est - lam) > max(0.01 * lam, 3 * se):
                lam_bad.append(f"{name}@{theta}")
    g = np.random.default_rng(SEED)
    fwd_bad = []
    for name in ("geometric-2type", "geometric-3type", "bernoulli-pair", "scalar-two-atom"):
        law = preset(name)
        k, u = law.sample_indices(g, 10)
        env = [law.atom(int(x), float(y)) for x, y in zip(k, u)]
        q = quenched_survival(env, 10)[0]
        pr, se = forward_simulate(env, np.eye(law.p, dtype=np.int64)[0], g, reps=100_000).survival()
        if abs(pr - q) > 3 * se:
            fwd_bad.append(name)
    law, crit, sol = critical("geometric-2type")
    naive = annealed_naive(law, [20, 40], 200_000, SEED)
    sample = annealed_tilted_sample(law, crit.theta_star, sol, [20, 40], 200_000, SEED + 1)
    tilted = annealed_tilted(law, crit, sol, [20, 40], 200_000, SEED + 1, sample=sample)
    z_overlap = [abs(a.estimate[i] - b.estimate[i]) / math.hypot(a.stderr[i], b.stderr[i])
                 for a, b in zip(naive, tilted) for i in range(law.p)]
    unit, unit_se = tilted_unit_functional(sample)
    z_unit = np.abs(unit - 1) / unit_se
    ok = not lam_bad and not fwd_bad and max(z_overlap) <= 3 and np.all(z_unit <= 3)
    acceptance_log("C7 cross-oracles", ok,
                   f"lambda mismatches {lam_bad or 'none'} ({len(PRESETS) * len(THETAS)} cases), "
                   f"forward mismatches {fwd_bad or 'none'}, naive/tilted max z {max(z_overlap):.2f}, "
                   f"unit functional max z {z_unit.max():.2f}, {time.perf_counter() - t0:.0f}s")
    assert ok


# ---------------------------------------------------------------- 8


def test_c8_determinism(acceptance_log, tmp_path):
    cfg = {
        "preset": "geometric-2type", "seed": SEED,
        "walk": {"n_list": [50, 100], "a_values": [1.0, 2.0], "reps": 20_000, "sigma_n": 100},
        "survival": {"n_list": [50, 75, 100, 125, 150], "reps": 20_000, "methods": ["tilted", "naive"],
                     "naive_reps": 20_000, "naive_max_n": 50},
        "fit": {"bootstrap": 200},
    }
    blobs = []
    for workers in (1, 2, 4, 1):
        out = tmp_path / f"w{workers}_{len(blobs)}"
        harness.emit_report(harness.run({**cfg, "workers": workers}), out, ("csv", "json"))
        summary = json.loads((out / "summary.json").read_text())
        blobs.append(((out / "estimates.csv").read_bytes(), summary["fit"]))
    ok = all(b == blobs[0] for b in blobs[1:])
    acceptance_log("C8 determinism", ok,
                   f"{len(blobs)} runs (workers 1, 2, 4, 1), CSV size {len(blobs[0][0])} bytes, "
                   f"{'identical' if ok else 'differ'}")
    assert ok
