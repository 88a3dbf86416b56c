import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chainforge.uncertainty import (Deterministic, Exhaustive, MonteCarlo, Normal, Scaled, ScenarioSet, Shock,
                                    StratifiedEquiProbable, UncertaintyConfig, UncertaintyError, moments,
                                    pairwise_correlation, sample)


def test_all_deterministic_exhaustive():
    s = sample(UncertaintyConfig(), Exhaustive(), 0, ["f"], ["a", "b"])
    assert len(s) == 1 and s.weights[0] == 1.0
    sc = s.scenarios[0]
    assert sc.supply == {"f": 1.0} and sc.demand == {"a": 1.0, "b": 1.0}


def test_certain_shock():
    s = sample(UncertaintyConfig(demand={"a": Shock(1.0)}), Exhaustive(), 0, ["f"], ["a"])
    assert len(s) == 1 and s.scenarios[0].demand["a"] == 0.0


def test_two_by_two_shock():
    cfg = UncertaintyConfig(supply={"f": Shock(0.5)}, demand={"a": Shock(0.5)})
    s = sample(cfg, Exhaustive(), 0, ["f"], ["a"])
    assert len(s) == 4 and np.allclose(s.weights, 0.25)


def test_exhaustive_rejects_continuous():
    with pytest.raises(UncertaintyError):
        sample(UncertaintyConfig(demand={"a": Normal(0.1)}), Exhaustive(), 0, ["f"], ["a"])


def test_moments_examples():
    s = sample(UncertaintyConfig(), Exhaustive(), 0, ["f"], ["a"])
    assert moments(s, "demand:a") == (1.0, 0.0)
    s = sample(UncertaintyConfig(supply={"f": Shock(0.3)}), Exhaustive(), 0, ["f"], ["a"])
    m, v = moments(s, "supply:f")
    assert m == pytest.approx(0.7) and v == pytest.approx(0.21)
    s = sample(UncertaintyConfig(demand={"a": Normal(0.2)}), MonteCarlo(10_000), 3, ["f"], ["a"])
    m, v = moments(s, "demand:a")
    assert abs(m - 1) < 0.01 and abs(v - 0.04) < 0.005
    with pytest.raises(UncertaintyError):
        moments(s, "demand:zz")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 2.0))
def test_reproducible_and_nonnegative(seed, sigma):
    cfg = UncertaintyConfig(supply={"f": Normal(sigma)}, demand={"a": Normal(sigma)})
    a = sample(cfg, MonteCarlo(64), seed, ["f"], ["a"])
    b = sample(cfg, MonteCarlo(64), seed, ["f"], ["a"])
    assert a.to_csv() == b.to_csv()
    assert np.all(a.joint_supply >= 0) and np.all(a.joint_demand >= 0)
    assert a.weights.sum() == pytest.approx(1.0, abs=1e-9)


def test_monte_carlo_sizes():
    both = UncertaintyConfig(supply={"f": Normal(0.1)}, demand={"a": Normal(0.1)})
    s = sample(both, MonteCarlo(512), 0, ["f"], ["a"])
    assert (s.n_supply, s.n_demand, len(s)) == (16, 32, 512)
    s = sample(UncertaintyConfig(demand={"a": Normal(0.1)}), MonteCarlo(512), 0, ["f"], ["a"])
    assert (s.n_supply, len(s)) == (1, 512)
    assert np.allclose(s.weights, 1 / 512)


def test_split_supply_halves_variance():
    cfg = UncertaintyConfig(supply={"A": Normal(0.3), "B": Normal(0.3), "C": Normal(0.3)})
    s = sample(cfg, MonteCarlo(20_000), 11, ["A", "B", "C"], ["a"])
    single = s.column("supply:C")
    split = 0.5 * s.column("supply:A") + 0.5 * s.column("supply:B")
    assert np.var(split) / np.var(single) == pytest.approx(0.5, rel=0.1)


def test_stratified_mean():
    s = sample(UncertaintyConfig(demand={"a": Normal(0.36)}), StratifiedEquiProbable(64), 0, ["f"], ["a"])
    assert len(s) == 64 and np.allclose(s.weights, 1 / 64)
    assert abs(moments(s, "demand:a")[0] - 1.0) < 0.01


def test_stratified_is_seed_free():
    cfg = UncertaintyConfig(supply={"f": Normal(0.2)})
    assert (sample(cfg, StratifiedEquiProbable(8), 1, ["f"], ["a"]).supply_values.tolist()
            == sample(cfg, StratifiedEquiProbable(8), 2, ["f"], ["a"]).supply_values.tolist())


def test_identity_copula_independent():
    C, ids = pairwise_correlation(["a", "b"], 0.0)
    cfg = UncertaintyConfig(demand={"a": Normal(0.2), "b": Normal(0.2)}, demand_correlation=C, correlated=ids)
    s = sample(cfg, MonteCarlo(10_000), 5, ["f"], ["a", "b"])
    assert abs(np.corrcoef(s.column("demand:a"), s.column("demand:b"))[0, 1]) < 0.05


def test_copula_correlation():
    C, ids = pairwise_correlation(["a", "b"], 0.7)
    cfg = UncertaintyConfig(demand={"a": Normal(0.2), "b": Normal(0.2)}, demand_correlation=C, correlated=ids)
    s = sample(cfg, MonteCarlo(10_000), 5, ["f"], ["a", "b"])
    assert np.corrcoef(s.column("demand:a"), s.column("demand:b"))[0, 1] == pytest.approx(0.7, abs=0.03)


def test_non_psd_rejected():
    C = ((1.0, 0.9, -0.9), (0.9, 1.0, 0.9), (-0.9, 0.9, 1.0))
    cfg = UncertaintyConfig(demand={g: Normal(0.2) for g in "abc"}, demand_correlation=C, correlated=("a", "b", "c"))
    with pytest.raises(UncertaintyError):
        sample(cfg, MonteCarlo(10), 0, ["f"], ["a", "b", "c"])


def test_invalid_distributions():
    for bad in (Normal(-0.1), Shock(1.5), Deterministic(-1.0)):
        with pytest.raises(UncertaintyError):
            sample(UncertaintyConfig(demand={"a": bad}), MonteCarlo(4), 0, ["f"], ["a"])


def test_scaled_shifts_mean():
    s = sample(UncertaintyConfig(demand={"a": Scaled(Shock(0.5), 2.0)}), Exhaustive(), 0, ["f"], ["a"])
    assert moments(s, "demand:a")[0] == pytest.approx(1.0)


def test_csv_and_weights():
    s = sample(UncertaintyConfig(supply={"f": Shock(0.25)}), Exhaustive(), 0, ["f"], ["a"])
    lines = s.to_csv().splitlines()
    assert lines[0] == "index,weight,supply:f,demand:a" and len(lines) == 3
    with pytest.raises(UncertaintyError):
        ScenarioSet(("f",), np.ones((1, 1)), np.array([0.5]), ("a",), np.ones((1, 1)), np.ones(1))
