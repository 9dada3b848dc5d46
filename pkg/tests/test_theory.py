import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semigen import theory
from semigen.losses import sig_loss_HM
from semigen.models import ObservationModel

OBS1 = ObservationModel("gaussian", 1.0, 1)


def test_single_atom_HM_constant_in_M():
    x = np.array([[0.3], [-1.0], [2.0]])
    atoms = np.array([[0.5]])
    direct = sig_loss_HM(OBS1, x, atoms).value
    for m in range(1, 5):
        assert theory.exact_HM(x, atoms, [1.0], OBS1, m) == pytest.approx(direct, abs=1e-12)


def test_exact_HM_matches_loss_at_M1():
    rng = np.random.default_rng(0)
    x, atoms = rng.standard_normal((4, 1)), rng.standard_normal((3, 1))
    probs = np.array([0.2, 0.5, 0.3])
    want = sum(p * sig_loss_HM(OBS1, x, atoms[j:j + 1]).value for j, p in enumerate(probs))
    assert theory.exact_HM(x, atoms, probs, OBS1, 1) == pytest.approx(want, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_HM_ordering_and_limit(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 1.5, (5, 1))
    atoms = rng.uniform(-2, 2, (3, 1))
    probs = rng.dirichlet(np.ones(3))
    H = [theory.exact_HM(x, atoms, probs, OBS1, m) for m in range(1, 5)]
    h_inf = theory.exact_cross_entropy(x, atoms, probs, OBS1)
    assert all(a >= b - 1e-12 for a, b in zip(H, H[1:]))
    gaps = [h - h_inf for h in H]
    assert all(g >= -1e-12 for g in gaps)
    assert all(a >= b - 1e-12 for a, b in zip(gaps, gaps[1:]))


def test_enumeration_bound():
    with pytest.raises(ValueError, match="Monte-Carlo"):
        theory.exact_HM(np.zeros((1, 1)), np.zeros((10, 1)), np.full(10, 0.1), OBS1, 7)


def test_check_lemma1_passes():
    verdict = theory.check_lemma1()
    assert verdict["passed"]
    assert all(c["min_gap"] > 1e-10 for c in verdict["cases"])


# ---------------------------------------------------------------- mode-assignment optimum

def test_uniform_counts_give_uniform_assignment():
    res = theory.theorem1_closed_form([25, 25, 25, 25], 100, 40, 4, 0.7, 0.2)
    np.testing.assert_allclose(res.m, 10.0, atol=1e-12)
    assert res.interior


def test_small_v_gives_proportional_assignment():
    res = theory.theorem1_closed_form([70, 30], 100, 1.0, 2, 0.9, 1e-12)
    np.testing.assert_allclose(res.m, [0.7, 0.3], atol=1e-10)


def test_closed_form_example():
    res = theory.theorem1_closed_form([75, 25], 100, 1.0, 2, 0.9, 0.1)
    np.testing.assert_allclose(res.m, [0.8125, 0.1875], atol=1e-12)
    np.testing.assert_allclose(theory.theorem1_numeric_opt([75, 25], 100, 1.0, 2, 0.9, 0.1), res.m, atol=1e-9)


def test_boundary_example_mode_vanishes():
    res = theory.theorem1_closed_form([95, 5], 100, 1.0, 2, 0.9, 0.1)
    assert not res.interior and res.m[1] < 0
    assert res.threshold == pytest.approx(10.0)
    np.testing.assert_allclose(res.constrained, [1.0, 0.0], atol=1e-12)
    assert res.nonvanishing.tolist() == [True, False]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_closed_form_sums_to_M(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(2, 11))
    n = rng.multinomial(500, rng.dirichlet(np.ones(K)))
    v = float(rng.uniform(0.01, 0.4))
    res = theory.theorem1_closed_form(n, 500, 64, K, v + float(rng.uniform(0.1, 0.5)), v)
    assert res.m.sum() == pytest.approx(64, abs=1e-12 * 64)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_numeric_opt_satisfies_kkt(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(2, 11))
    n = rng.multinomial(300, rng.dirichlet(np.ones(K) * 0.5)).astype(float)
    u, v = 0.8, float(rng.uniform(0.01, 0.3))
    m = theory.theorem1_numeric_opt(n, 300, 50, K, u, v)
    assert m.sum() == pytest.approx(50, abs=1e-9)
    assert theory.kkt_residual(m, n, 50, u, v) < 1e-8
    support = theory.iterated_threshold_support(n, 300, 50, K, u, v)
    np.testing.assert_array_equal(m > 1e-12, support)


def test_objective_convex_along_feasible_directions():
    rng = np.random.default_rng(1)
    n, M, u, v = np.array([40.0, 35.0, 25.0]), 30.0, 0.9, 0.2
    for _ in range(50):
        m = rng.dirichlet(np.ones(3)) * M
        d = rng.standard_normal(3)
        d -= d.mean()
        h = 0.2 * m.min() / np.abs(d).max()
        f = [theory.assignment_objective(m + s * h * d, n, M, u, v) for s in (-1, 0, 1)]
        assert f[0] - 2 * f[1] + f[2] >= -1e-12


def test_separation_violation_rejected():
    with pytest.raises(ValueError):
        theory.theorem1_closed_form([50, 50], 100, 10, 2, 0.2, 0.2)


def test_integer_rounding():
    counts = theory.integer_rounding([12.6, 30.3, 21.1], 64)
    assert counts.sum() == 64 and counts.tolist() == [13, 30, 21]


def test_check_theorem1_passes():
    verdict = theory.check_theorem1()
    assert verdict["passed"]
    assert verdict["max_interior_diff"] < 1e-6
    assert len(verdict["interior"]) == 100 and len(verdict["boundary"]) == 20


# ---------------------------------------------------------------- RBF separation ratio

def test_ratio_equals_one():
    assert theory.corollary1_closed_form(math.sqrt(6 * math.log(2))) == pytest.approx(1.0, abs=1e-14)


def test_ratio_at_three():
    assert theory.corollary1_closed_form(3.0) == pytest.approx(1 / (math.exp(1.5) - 1), rel=1e-14)
    assert theory.corollary1_closed_form(3.0) == pytest.approx(0.28715, abs=1e-4)


def test_ratio_zero_distance_rejected():
    with pytest.raises(ValueError):
        theory.corollary1_closed_form(0.0)


def test_mgf_closed_form():
    assert theory.rbf_mgf_closed_form(2, 0.0) == pytest.approx(1 / 3)


def test_ratio_monte_carlo_small():
    r = theory.corollary1_ratio(2.0, mc_samples=200_000, seed=3)
    assert abs(r["monte_carlo"] - r["closed_form"]) < 3 * r["stderr"]
    assert r["u"] == pytest.approx(r["u_closed"], rel=0.02)


def test_mgf_spot_check_noncentral():
    r = theory.mgf_spot_check(2, 1.5, mc_samples=200_000, seed=4)
    assert abs(r["monte_carlo"] - r["closed_form"]) < 3 * r["stderr"]
