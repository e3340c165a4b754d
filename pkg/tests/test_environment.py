import math

import numpy as np
import pytest

from bpre.environment import (PRESETS, DiscreteScale, EnvironmentAtom, EnvironmentLaw, NormalScale,
                              UniformScale, check_conditions, eval_pgf, hessian, law_from_dict,
                              mean_matrix, preset, sample_environment, sample_offspring)

N = 100_000


@pytest.fixture
def pair_atom():
    return preset("bernoulli-pair").atoms()[0][1]


def geometric_atom():
    return EnvironmentAtom("independent-geometric", [[0.6, 0.3], [0.25, 0.55]])


def test_pgf_at_one_is_one():
    for atom in (geometric_atom(), EnvironmentAtom("independent-poisson", [[0.4, 1.1], [0.2, 0.3]])):
        assert np.array_equal(eval_pgf(atom, np.ones(2)), np.ones(2))


def test_bernoulli_pair_closed_forms(pair_atom):
    assert np.allclose(eval_pgf(pair_atom, [0.0, 0.0]), [0.5, 0.5])
    assert np.allclose(eval_pgf(pair_atom, [0.5, 0.5]), [0.625, 0.625])
    assert np.allclose(mean_matrix(pair_atom), [[0.5, 0.5], [0.5, 0.5]])
    assert np.allclose(hessian(pair_atom, 0), [[0.0, 0.5], [0.5, 0.0]])


def test_eval_pgf_rejects_outside_cube(pair_atom):
    with pytest.raises(ValueError):
        eval_pgf(pair_atom, [1.2, 0.0])


def test_geometric_zero_mass_matches_truncated_series():
    atom = geometric_atom()
    m = atom.mean[0]
    q = 1.0 / (1.0 + m)  # P(0 children of type j)
    # brute force: sum P(Z_j = k) over k with tail mass below 1e-10, then read P(Z = 0)
    probs = [q_j * (1 - q_j) ** np.arange(200) for q_j in q]
    assert all(1 - pr.sum() < 1e-10 for pr in probs)
    assert eval_pgf(atom, [0.0, 0.0])[0] == pytest.approx(probs[0][0] * probs[1][0], rel=1e-12)


@pytest.mark.parametrize("family", ["independent-geometric", "independent-poisson"])
def test_moments_match_finite_differences(family):
    atom = EnvironmentAtom(family, [[0.6, 0.3], [0.25, 0.55]])
    h = 1e-6
    one = np.ones(2)
    for j in range(2):
        e = np.eye(2)[j]
        fd = (eval_pgf(atom, one) - eval_pgf(atom, one - h * e)) / h
        assert np.allclose(fd, atom.mean[:, j], rtol=1e-4)
    h2 = 1e-4
    for i in range(2):
        H = atom.hessian(i)
        for j in range(2):
            for k in range(2):
                ej, ek = np.eye(2)[j], np.eye(2)[k]
                f = lambda s: eval_pgf(atom, s)[i]
                fd = (f(one) - f(one - h2 * ej) - f(one - h2 * ek) + f(one - h2 * ej - h2 * ek)) / h2**2
                assert fd == pytest.approx(H[j, k], rel=1e-3)


def test_sample_offspring_moments_and_pgf():
    rng = np.random.default_rng(1)
    atom = geometric_atom()
    draws = sample_offspring(atom, 0, rng, N)
    se = draws.std(axis=0) / math.sqrt(N)
    assert np.all(np.abs(draws.mean(axis=0) - atom.mean[0]) < 3 * se)
    emp = 0.5 ** draws.sum(axis=1)
    assert abs(emp.mean() - eval_pgf(atom, [0.5, 0.5])[0]) < 3 * emp.std() / math.sqrt(N)


def test_bernoulli_pair_outcomes(pair_atom):
    draws = sample_offspring(pair_atom, 1, np.random.default_rng(2), N)
    assert set(map(tuple, draws)) <= {(0, 0), (1, 1)}
    assert abs(draws[:, 0].mean() - 0.5) < 3 * 0.5 / math.sqrt(N)


def test_two_atom_mixture_frequency():
    law = EnvironmentLaw("independent-geometric", [[[0.5, 0.3], [0.3, 0.5]], [[0.3, 0.5], [0.5, 0.3]]],
                         [0.2, 0.8], bound=2.0)
    k, _ = law.sample_indices(np.random.default_rng(5), N)
    assert abs((k == 0).mean() - 0.2) < 0.004


def test_sample_environment_reproducible():
    law = preset("geometric-2type")
    a = [sample_environment(law, g).mean for g in [np.random.default_rng(9)] for _ in range(5)]
    b = [sample_environment(law, g).mean for g in [np.random.default_rng(9)] for _ in range(5)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_point_mass_law_always_same_atom():
    law = preset("bernoulli-pair")
    g = np.random.default_rng(0)
    atoms = [sample_environment(law, g) for _ in range(10)]
    assert all(np.array_equal(a.mean, atoms[0].mean) for a in atoms)


@pytest.mark.parametrize("scale", [DiscreteScale((2.0, -1.0), (0.2, 0.8)), NormalScale(-1.0, 2.0),
                                   UniformScale(-1.8, 1.6)])
def test_scale_mgf_and_tilted_sampling(scale):
    g = np.random.default_rng(4)
    u = scale.sample(g, N)
    theta = 0.3
    emp = np.exp(theta * u)
    assert abs(emp.mean() - math.exp(scale.log_mgf(theta))) < 4 * emp.std() / math.sqrt(N)
    ut = scale.sample(g, N, theta)
    assert abs(ut.mean() - float(scale.dlog_mgf(theta))) < 4 * ut.std() / math.sqrt(N)
    h = 1e-5
    fd = (scale.log_mgf(theta + h) - scale.log_mgf(theta - h)) / (2 * h)
    assert float(fd) == pytest.approx(float(scale.dlog_mgf(theta)), rel=1e-6)


def test_declared_bound_enforced():
    with pytest.raises(ValueError, match="bound"):
        EnvironmentLaw("independent-geometric", [[[0.1, 0.9], [0.5, 0.5]]], [1.0], bound=2.0)
    with pytest.raises(ValueError):
        EnvironmentAtom("independent-geometric", [[0.1, 0.9], [0.5, 0.5]], bound=2.0)


def test_law_schema_rejects_unknown_fields():
    d = dict(PRESETS["geometric-2type"])
    d["colour"] = "blue"
    with pytest.raises(Exception):
        law_from_dict(d)


def test_transposed_law():
    law = preset("geometric-2type")
    assert np.array_equal(law.transposed().shapes[0], law.shapes[0].T)
    assert preset("bernoulli-pair").transposed().family == "independent-poisson"


def test_scalar_family_mean_entries():
    law = preset("scalar-two-atom")
    for prob, atom in law.atoms():
        assert np.allclose(atom.mean, atom.mean[0, 0])
    assert sum(pr for pr, _ in law.atoms()) == pytest.approx(1.0)


def test_conditions_bernoulli_pair():
    rep = check_conditions(preset("bernoulli-pair"))
    assert rep.constants["P7a_eps0"] == pytest.approx(0.5)
    assert rep.constants["P7b_eps0"] == pytest.approx(0.5)
    assert rep.constants["P7c_K0"] == pytest.approx(2.0)
    assert rep.results["P3"] is True


def test_conditions_weakly_subcritical_scalar():
    from bpre.spectral import SpectralSolver

    law = preset("weakly-subcritical-scalar")
    crit = SpectralSolver(law).critical_point()
    rep = check_conditions(law, spectral=crit)
    assert rep.constants["gamma_mu"] == pytest.approx(-0.4, abs=1e-6)
    assert rep.results["P4"] is True
    assert rep.passed("P1", "P3", "P4", "P5", "P7")


@pytest.mark.parametrize("name", ["geometric-2type", "geometric-3type", "scalar-uniform",
                                  "scalar-uniform-wide"])
def test_experiment_presets_pass_core_conditions(name):
    rep = check_conditions(preset(name))
    assert rep.passed("P1", "P3", "P5", "P7")


def test_lognormal_preset_fails_bounded_moment_condition():
    # unbounded scale factor: the one-step conditions on offspring cannot hold uniformly
    assert check_conditions(preset("scalar-lognormal")).results["P7"] is False
