import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chainforge import market as mk
from chainforge.engine import compile_market
from chainforge.recourse import (brute_force_usage, clip_usage, optimal_usage_stage2, optimal_usage_stage3,
                                 recourse_values)


def adapt_spec():
    return mk.MarketSpec(
        produced=(mk.ProducedGood("16c", 1, 0, 1),),
        demanded=(mk.DemandedGood("16c", 1, 3, 3), mk.DemandedGood("8c", 2, 3, 3)),
        mappings=(mk.Mapping.make("id", {"16c": 1}, "16c"), mk.Mapping.make("adapt", {"16c": 1}, "8c")),
    )


def test_adaptation_example():
    U, v = optimal_usage_stage3(adapt_spec(), {"16c": 2}, {"16c": 1, "8c": 2})
    assert U == pytest.approx({"id": 1, "adapt": 1})
    assert v == pytest.approx(3 + 3 - 3)
    bU, bv = brute_force_usage(adapt_spec(), {"16c": 2}, {"16c": 1, "8c": 2})
    assert bv == pytest.approx(v)  # (0, 2) ties with (1, 1)


def test_no_mappings():
    spec = mk.MarketSpec((mk.ProducedGood("p", 1, 0, 1),), (mk.DemandedGood("d", 5, 2, 3),), ())
    U, v = optimal_usage_stage3(spec, {"p": 4}, {"d": 5})
    assert U == {} and v == pytest.approx(-15)


def test_nothing_obtained():
    U, _ = optimal_usage_stage3(adapt_spec(), {"16c": 0}, {"16c": 1, "8c": 2})
    assert all(u == 0 for u in U.values())
    bU, _ = brute_force_usage(adapt_spec(), {"16c": 0}, {"16c": 1, "8c": 2})
    assert all(u == 0 for u in bU.values())


def test_identity_newsvendor():
    spec = mk.MarketSpec((mk.ProducedGood("a", 1, 0, 1), mk.ProducedGood("b", 1, 0, 1)),
                         (mk.DemandedGood("a", 5, 2, 1), mk.DemandedGood("b", 5, 2, 1)),
                         (mk.Mapping.make("ia", {"a": 1}, "a"), mk.Mapping.make("ib", {"b": 1}, "b")))
    U, _ = brute_force_usage(spec, {"a": 3, "b": 9}, {"a": 7, "b": 4})
    assert U == {"ia": 3, "ib": 4}


def test_stage2_reduces_to_stage3():
    dem = {"16c": 1, "8c": 2}
    s3 = optimal_usage_stage3(adapt_spec(), {"16c": 2}, dem)
    assert optimal_usage_stage2(adapt_spec(), {"16c": 2}, [(dem, 1.0)])[1] == pytest.approx(s3[1])
    assert optimal_usage_stage2(adapt_spec(), {"16c": 2}, [(dem, 0.5), (dem, 0.5)])[1] == pytest.approx(s3[1])


def test_stage2_two_samples():
    B = 10.0
    spec = mk.MarketSpec((mk.ProducedGood("p", 1, 0, 1),), (mk.DemandedGood("d", B, 2, 2),),
                         (mk.Mapping.make("id", {"p": 1}, "d"),))
    U, v = optimal_usage_stage2(spec, {"p": 5 * B}, [({"d": 0}, 0.5), ({"d": 2 * B}, 0.5)])
    grid = {b: 0.5 * 0 + 0.5 * (2 * b - 2 * (2 * B - b)) for b in (0, B, 2 * B)}
    assert U["id"] == pytest.approx(2 * B)
    assert v == pytest.approx(max(grid.values()))


def test_stage2_at_most_stage3_average():
    samples = [({"16c": 2, "8c": 0}, 0.5), ({"16c": 0, "8c": 2}, 0.5)]
    _, v2 = optimal_usage_stage2(adapt_spec(), {"16c": 2}, samples)
    v3 = sum(w * optimal_usage_stage3(adapt_spec(), {"16c": 2}, d)[1] for d, w in samples)
    assert v2 <= v3 + 1e-9


def test_grid_limit():
    with pytest.raises(ValueError):
        brute_force_usage(adapt_spec(), {"16c": 1e7}, {"16c": 1, "8c": 2})


def test_dump_lp(tmp_path):
    path = tmp_path / "r.lp"
    optimal_usage_stage3(adapt_spec(), {"16c": 2}, {"16c": 1, "8c": 2}, dump_lp=str(path))
    assert "Maximize" in path.read_text()


def test_clip_usage():
    cm = compile_market(adapt_spec())
    U = clip_usage(cm, np.array([[2.0, 2.0]]), np.array([[3.0]]))
    assert (U @ cm.m_in).ravel() == pytest.approx([3.0])


def random_instance(rng, identity_only=False):
    P = int(rng.integers(1, 4))
    produced = tuple(mk.ProducedGood(f"p{i}", 1, 0, 1) for i in range(P))
    demanded = tuple(mk.DemandedGood(f"d{i}", 1, float(rng.integers(1, 21)), float(rng.integers(0, 21)))
                     for i in range(P))
    maps = [mk.Mapping.make(f"id{i}", {f"p{i}": 1}, f"d{i}", float(rng.integers(0, 3))) for i in range(P)]
    while not identity_only and len(maps) < 4 and rng.random() < 0.7:
        src, dst = rng.integers(0, P, 2)
        n = float(rng.integers(1, 3))
        maps.append(mk.Mapping.make(f"m{len(maps)}", {f"p{src}": n}, f"d{dst}", float(rng.integers(0, 3))))
    spec = mk.MarketSpec(produced, demanded, tuple(maps))
    obt = {f"p{i}": float(rng.integers(0, 7)) for i in range(P)}
    dem = {f"d{i}": float(rng.integers(0, 7)) for i in range(P)}
    return spec, obt, dem


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.booleans())
def test_lp_dominates_grid(seed, identity_only):
    spec, obt, dem = random_instance(np.random.default_rng(seed), identity_only)
    _, v = optimal_usage_stage3(spec, obt, dem)
    _, bv = brute_force_usage(spec, obt, dem)
    assert v >= bv - 1e-6
    if identity_only:
        assert v == pytest.approx(bv, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_adding_mapping_never_hurts(seed):
    rng = np.random.default_rng(seed)
    spec, obt, dem = random_instance(rng)
    fewer = mk.MarketSpec(spec.produced, spec.demanded, spec.mappings[:-1])
    assert optimal_usage_stage3(spec, obt, dem)[1] >= optimal_usage_stage3(fewer, obt, dem)[1] - 1e-9
    samples = [(dem, 0.5), ({k: 6 - v for k, v in dem.items()}, 0.5)]
    assert optimal_usage_stage2(spec, obt, samples)[1] >= optimal_usage_stage2(fewer, obt, samples)[1] - 1e-9


def test_recourse_values_zero_base():
    spec = mk.MarketSpec((mk.ProducedGood("p", 1, 0, 1),), (mk.DemandedGood("d", 0, 2, 3),),
                         (mk.Mapping.make("id", {"p": 1}, "d"),))
    cm = compile_market(spec)
    assert recourse_values(cm, np.array([[1.0]]), np.array([2.0]), np.array([4.0]))[0] == pytest.approx(2 - 9)
