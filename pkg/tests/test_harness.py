import json
import math

import jsonschema
import numpy as np
import pytest

from bpre import harness
from bpre.cli import EXIT_CONFIG, EXIT_OK, EXIT_REGIME, main

FAST = {
    "preset": "scalar-two-atom", "seed": 7,
    "walk": {"n_list": [20, 40], "a_values": [1.0], "reps": 2000, "sigma_n": 20},
    "survival": {"n_list": [20, 30, 40, 50, 60], "reps": 4000},
    "fit": {"bootstrap": 200},
}


def synthetic(slope, rho=0.9, ns=(100, 150, 200, 250, 300, 350, 400), rel=0.0):
    return [(n, 3.0 * n**slope * rho**n, rel * 3.0 * n**slope * rho**n) for n in ns]


@pytest.mark.parametrize("slope", [-1.5, -0.5])
def test_fit_recovers_exact_power_law(slope):
    fit = harness.fit_power_law(synthetic(slope), 0.9)
    assert fit.slope == pytest.approx(slope, abs=1e-10)
    assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-9)


def test_fit_ci_brackets_slope_with_noise():
    rng = np.random.default_rng(0)
    table = [(n, e * math.exp(0.02 * rng.standard_normal()), 0.02 * e) for n, e, _ in synthetic(-1.5)]
    fit = harness.fit_power_law(table, 0.9, 500, 1)
    assert fit.ci_low <= -1.5 <= fit.ci_high
    assert fit.ci_high - fit.ci_low < 0.5


def test_fit_batch_bootstrap():
    rng = np.random.default_rng(2)
    base = np.array([e for _, e, _ in synthetic(-1.5)])
    reps = base * rng.exponential(1.0, (4096, len(base)))
    table = [(n, reps[:, j].mean(), reps[:, j].std() / 64) for j, (n, _, _) in enumerate(synthetic(-1.5))]
    fit = harness.fit_power_law(table, 0.9, 300, 3, replicas=reps)
    assert fit.ci_low < fit.slope < fit.ci_high
    with pytest.raises(ValueError):
        harness.fit_power_law(table, 0.9, replicas=reps[:, :3])


def test_fit_needs_five_horizons():
    with pytest.raises(ValueError):
        harness.fit_power_law(synthetic(-1.5)[:4], 0.9)


def test_fit_drops_non_positive_rows():
    table = synthetic(-1.5) + [(450, 0.0, 0.0)]
    with pytest.warns(RuntimeWarning):
        fit = harness.fit_power_law(table, 0.9)
    assert fit.n_used == 7


@pytest.mark.parametrize("raw, fragment", [
    ({"preset": "scalar-two-atom"}, "seed"),
    ({"preset": "scalar-two-atom", "seed": 1, "colour": 3}, "Additional"),
    ({"preset": "no-such-preset", "seed": 1}, "no-such-preset"),
    ({"seed": 1}, "invalid"),
])
def test_config_errors(raw, fragment):
    with pytest.raises(harness.ConfigError, match=fragment):
        harness.load_config(raw)


def test_config_hash_and_defaults():
    a = harness.load_config(FAST)
    b = harness.load_config(json.dumps(FAST))
    assert a.config_hash == b.config_hash
    assert a.survival["methods"] == ["tilted"]
    assert harness.load_config({**FAST, "seed": 8}).config_hash != a.config_hash


@pytest.fixture(scope="module")
def report():
    return harness.run(FAST)


def test_run_report_contents(report):
    assert report.critical["regime"] == "weakly"
    assert report.critical["theta_star"] == pytest.approx(math.log(2) / 3, abs=1e-4)
    assert report.fit is not None and not report.errors
    assert report.checks["regime_weakly_subcritical"]
    assert {"walk", "survival_tilted"} <= set(report.tables)


def test_emit_files(report, tmp_path):
    paths = harness.emit_report(report, tmp_path)
    assert sorted(p.name for p in paths) == ["estimates.csv", "report.md", "summary.json"]
    summary = json.loads((tmp_path / "summary.json").read_text())
    jsonschema.validate(summary, harness.SUMMARY_SCHEMA)
    assert summary["provenance"]["seed"] == 7
    header = (tmp_path / "estimates.csv").read_bytes().split(b"\r\n")[0]
    assert header == b"quantity,n,a,b,ell,estimate,stderr,reps,seed"
    md = (tmp_path / "report.md").read_text()
    for key in ("slope", "rho_star", "theta_star"):
        assert key in md


def test_csv_round_trips_floats(report):
    text = harness.rows_to_csv(report.rows())
    row = text.split("\r\n")[1].split(",")
    original = report.rows()[0]
    assert float(row[5]) == original["estimate"]


def test_run_deterministic_across_workers():
    a = harness.rows_to_csv(harness.run({**FAST, "workers": 1}).rows())
    b = harness.rows_to_csv(harness.run({**FAST, "workers": 3}).rows())
    assert a == b


def test_cli_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(FAST))
    out = tmp_path / "out"
    assert main(["spectral", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "critical.json").read_text())["regime"] == "weakly"
    # second call reuses the cached solution
    assert main(["spectral", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    assert main(["spectral", "--preset", "strongly-subcritical", "--out", str(out / "s")]) == EXIT_REGIME
    assert main(["spectral", "--preset", "nope", "--out", str(out)]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["report", "--config", str(bad), "--out", str(out)]) == EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_cli_report_and_verify(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(FAST))
    out = tmp_path / "r"
    assert main(["report", "--config", str(cfg), "--out", str(out), "--format", "json"]) == EXIT_OK
    assert [p.name for p in out.iterdir()] == ["summary.json"]
    assert main(["verify", "--config", str(cfg), "--out", str(out)]) == EXIT_OK


def test_cli_conditions_on_strong_regime(tmp_path):
    out = tmp_path / "c"
    assert main(["conditions", "--preset", "strongly-subcritical", "--out", str(out)]) == EXIT_OK
    rep = json.loads((out / "conditions.json").read_text())
    assert rep["results"]["P4"] is True
    assert rep["results"]["Lambda'(1)>0"] is False
