import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from intervene.errors import ValidationError
from intervene.sem import (
    NoiseSpec,
    Sem,
    condition_a6,
    condition_a7,
    do_expected_outcome_change,
    fixing_gains,
    optimal_fixing_set,
    optimal_single_shift,
    random_sem,
    sample_sem,
    verify_do_equality,
)


def chain(b21=1.0, by2=1.0, by1=0.0):
    B = np.zeros((3, 3))
    B[1, 0], B[2, 1], B[2, 0] = b21, by2, by1
    return Sem(B, (NoiseSpec("uniform", 1.0),) * 3)


def mutilated_mc(sem, assign, n, rng):
    """Monte-Carlo E[Y] under do(X_j = c_j) by direct ancestral sampling."""
    V = np.zeros((n, sem.n_nodes))
    for j in range(sem.n_nodes):
        if j in assign:
            V[:, j] = assign[j]
        else:
            V[:, j] = V[:, :j] @ sem.weights[j, :j] + sem.noise_specs[j].sample(rng, n)
    y = V[:, -1]
    return y.mean(), y.std(ddof=1) / np.sqrt(n)


def test_validation():
    with pytest.raises(ValidationError):
        Sem(np.triu(np.ones((3, 3))), ())
    with pytest.raises(ValidationError):
        Sem(np.zeros((3, 3)), (NoiseSpec(),))
    with pytest.raises(ValidationError):
        NoiseSpec("cauchy")
    with pytest.raises(ValidationError):
        NoiseSpec("uniform", 0.0)


def test_chain_sample_variance():
    ds = sample_sem(chain(), 50_000, seed=1)
    v = ds.covariates[:, 1].var(ddof=1)
    # se of a sample variance: sqrt((m4 - s^4) / n); uniform noise sums have m4 estimated from data
    x = ds.covariates[:, 1] - ds.covariates[:, 1].mean()
    se = np.sqrt((np.mean(x ** 4) - v ** 2) / x.size)
    assert abs(v - 2.0) < 3 * se


def test_sampling_deterministic_and_independent_without_edges():
    sem = Sem(np.zeros((4, 4)), ())
    a, b = sample_sem(sem, 2000, 5), sample_sem(sem, 2000, 5)
    np.testing.assert_array_equal(a.covariates, b.covariates)
    C = np.corrcoef(np.column_stack([a.covariates, a.outcomes]).T)
    off = C[~np.eye(4, dtype=bool)]
    assert np.max(np.abs(off)) < 4 / np.sqrt(2000)
    with pytest.raises(ValidationError):
        sample_sem(sem, 0, 1)


@pytest.mark.parametrize("family", ["uniform", "laplace", "gaussian"])
def test_noise_moments(family):
    x = NoiseSpec(family, 2.0, 0.5).sample(np.random.default_rng(0), 200_000)
    assert abs(x.mean() - 0.5) < 4 * np.sqrt(2.0 / x.size)
    assert x.var() == pytest.approx(2.0, rel=0.03)


def test_do_examples():
    sem = chain()
    assert do_expected_outcome_change(sem, shift=(0, 0.7)) == pytest.approx(0.7, abs=1e-14)
    assert do_expected_outcome_change(sem, fix={1: 2.5}) == pytest.approx(2.5, abs=1e-14)
    B = np.zeros((3, 3))
    B[2, 0] = 1.0  # x2 has no path to y
    assert do_expected_outcome_change(Sem(B, ()), shift=(1, 3.0)) == 0.0
    assert do_expected_outcome_change(sem, shift=np.zeros(2)) == 0.0
    with pytest.raises(ValidationError):
        do_expected_outcome_change(sem)
    with pytest.raises(ValidationError):
        do_expected_outcome_change(sem, fix={5: 1.0})


def test_do_matches_mutilated_monte_carlo():
    rng = np.random.default_rng(2)
    for trial in range(6):
        d = int(rng.integers(2, 9))
        sem = random_sem(d, density=0.5, seed=trial, noise_family="laplace")
        mu = sem.means()
        s = int(rng.integers(0, d))
        delta = float(rng.uniform(-2, 2))
        base, se0 = mutilated_mc(sem, {}, 200_000, rng)
        moved, se1 = mutilated_mc(sem, {s: mu[s] + delta}, 200_000, rng)
        analytic = do_expected_outcome_change(sem, shift=(s, delta))
        assert abs((moved - base) - analytic) < 3 * np.hypot(se0, se1)
        # also against the analytic baseline mean
        assert abs(base - mu[-1]) < 3 * se0


def test_sample_moments_match_analytic():
    sem = random_sem(5, density=0.5, seed=3)
    ds = sample_sem(sem, 100_000, seed=9)
    V = np.column_stack([ds.covariates, ds.outcomes])
    se = V.std(axis=0, ddof=1) / np.sqrt(V.shape[0])
    assert np.all(np.abs(V.mean(0) - sem.means()) < 3 * se + 1e-12)
    np.testing.assert_allclose(np.cov(V.T), sem.covariance(), rtol=0.05, atol=0.05)


def test_optimal_single_shift_examples():
    sem = chain(b21=2.0, by2=3.0, by1=0.0)
    idx, delta, imp = optimal_single_shift(sem, 1.0)
    assert idx == 0 and delta == 1.0
    assert imp == pytest.approx(6.0 * sem.stds()[0], rel=1e-12)
    # bounds scaled by node sd: x2 has sd sqrt(5), so 3 sqrt(5) beats 6
    idx, delta, imp = optimal_single_shift(sem, sem.stds()[:2])
    assert idx == 1 and imp == pytest.approx(3.0 * np.sqrt(5.0), rel=1e-12)
    assert optimal_single_shift(Sem(np.zeros((3, 3)), ()), 1.0) == (None, 0.0, 0.0)
    B = np.zeros((3, 3))
    B[2, 0] = B[2, 1] = 1.5
    assert optimal_single_shift(Sem(B, ()), 1.0)[0] == 0
    neg = chain(by2=-2.0)
    idx, delta, imp = optimal_single_shift(neg, 1.0)
    assert delta < 0 and imp > 0


def test_verify_do_equality_examples():
    sem = chain(b21=1.3, by2=0.8, by1=0.5)
    assert verify_do_equality(sem, [], []) == (0.0, 0.0, True)
    literal, do, ok = verify_do_equality(sem, [0], [1.0])
    assert not ok and abs(literal - do) > 0.5
    literal, do, ok = verify_do_equality(sem, [0, 1], [1.0, -0.5])
    assert ok and literal == pytest.approx(do, abs=1e-12)
    B = np.zeros((4, 4))
    B[3, 0], B[3, 2], B[1, 0] = 1.0, -0.7, 0.9  # pa(Y) = {x1, x3}, no parent descends from another
    sem = Sem(B, ())
    assert condition_a7(sem)
    literal, do, ok = verify_do_equality(sem, [0, 2], [0.3, 1.2])
    assert ok and literal == pytest.approx(do, abs=1e-12)


def test_graph_helpers():
    sem = chain(by1=1.0)
    assert sem.parents(2) == {0, 1}
    assert sem.descendants([0]) == {1, 2}
    assert not condition_a7(sem)
    assert condition_a6(sem, [0, 1])
    assert not condition_a6(sem, [0])


@given(st.integers(0, 10_000), st.integers(2, 6))
def test_a6_implies_equality(seed, d):
    r = np.random.default_rng(seed)
    sem = random_sem(d, density=float(r.uniform(0.2, 0.8)), seed=seed)
    size = int(r.integers(1, d + 1))
    I = sorted(r.choice(d, size=size, replace=False).tolist())
    z = r.normal(size=size)
    literal, do, ok = verify_do_equality(sem, I, z)
    if ok:
        assert abs(literal - do) <= 1e-10 * max(1.0, abs(literal))


def test_optimal_fixing_set_is_parents_under_a7():
    B = np.zeros((4, 4))
    B[3, 0], B[3, 2], B[2, 1] = 1.0, -0.7, 0.9
    sem = Sem(B, ())
    I, z, val = optimal_fixing_set(sem, 2, np.linspace(-1, 1, 5))
    assert I == (0, 2) and z == (1.0, -1.0)
    assert val == pytest.approx(fixing_gains(sem, I, z)[0])
    assert condition_a6(sem, I)
    assert optimal_fixing_set(Sem(np.zeros((3, 3)), ()), 2, [0.0, 1.0]) == ((), (), 0.0)


def test_json_round_trip(tmp_path):
    sem = random_sem(4, density=0.6, seed=1, noise_family="laplace")
    back = Sem.from_dict(json.loads(sem.to_json()))
    np.testing.assert_array_equal(back.weights, sem.weights)
    assert back.noise_specs == sem.noise_specs and back.node_names == sem.node_names
    with pytest.raises(ValidationError):
        Sem.from_dict({"edges": []})
    with pytest.raises(ValidationError):
        Sem.from_dict({"nodes": ["a", "y"], "edges": [["y", "q", 1.0]]})


def test_random_sem_properties():
    sem = random_sem(6, density=0.3, seed=4)
    assert sem.d == 6 and sem.parents(sem.outcome)
    W = np.abs(sem.weights[sem.weights != 0])
    assert np.all((W >= 0.3) & (W <= 1.5))
    a, b = random_sem(6, seed=4), random_sem(6, seed=4)
    np.testing.assert_array_equal(a.weights, b.weights)
    with pytest.raises(ValidationError):
        random_sem(0)
