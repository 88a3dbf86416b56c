"""End-to-end acceptance checks.  Each test prints one PASS/FAIL line."""

import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from chainforge import cli, config, oracles
from chainforge import closed_form as cf
from chainforge import experiments as ex
from chainforge import market as mk
from chainforge.engine import compile_market, evaluate_batch, scenario_arrays
from chainforge.orders import evaluate_orders, optimize
from chainforge.recourse import brute_force_usage, clip_usage, optimal_usage_stage2, optimal_usage_stage3
from chainforge.uncertainty import Exhaustive, MonteCarlo, Normal, sample

from test_engine import random_batch
from test_recourse import random_instance


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def plans():
    return config.plans(config.load(None))


_sweeps = {}


def sweep(plan, values=None):
    """Run (and memoize) a default plan, optionally at a subset of its values."""
    if values is not None:
        plan = replace(plan, values=tuple(values))
    key = (plan.name, plan.values)
    if key not in _sweeps:
        res = ex.run(plan)
        assert all(p.error is None for p in res.points), [p.error for p in res.points]
        _sweeps[key] = res
    return _sweeps[key]


def point(res, value):
    (p,) = [p for p in res.points if p.value == value]
    return p


def reference_accounting(cm, q, U, Zs, Zd):
    """Per-scenario accounting written out term by term, without the engine."""
    K = U.shape[0]
    o = (q > 0).astype(float)
    out = {k: np.zeros(K) for k in ("ben", "salv", "prod", "map", "short", "profit")}
    for k in range(K):
        recv = [q[i] * Zs[k, cm.supplier_of[i]] for i in range(cm.n_produced)]
        prod = sum(recv[i] * cm.u_cost[i] + o[i] * cm.nre[i] for i in range(cm.n_produced))
        built = [0.0] * cm.n_demanded
        mapc = 0.0
        for j in range(cm.n_mappings):
            built[cm.out_idx[j]] += U[k, j]
            mapc += U[k, j] * cm.gamma[j]
        ben = salv = short = 0.0
        for d in range(cm.n_demanded):
            dem = Zd[k, d] * cm.base[d]
            if np.isnan(cm.elasticity[d]):
                sold = min(dem, built[d])
                ben += sold * cm.u_ben[d]
                short += (dem - sold) * cm.u_sc[d]
            else:
                e, p0 = cm.elasticity[d], cm.base_price[d]
                ceiling = dem - p0 / e if e < 0 else dem
                sold = min(ceiling, built[d])
                ben += (e * (sold - dem) + p0) * sold
                short += max(dem - sold, 0.0) * cm.u_sc[d]
            salv += (built[d] - sold) * cm.salv[d]
        for name, v in (("ben", ben), ("salv", salv), ("prod", prod), ("map", mapc), ("short", short),
                        ("profit", ben + salv - prod - mapc - short)):
            out[name][k] = v
    return out


def test_c01_accounting_identity(verdict):
    rng = np.random.default_rng(2024)
    t = time.perf_counter()
    n, worst = 0, 0.0
    batches = []
    while n < 100_000:
        spec, cm, q, U, Zs, Zd = random_batch(rng, 100)
        r = evaluate_batch(cm, q, (q > 0).astype(float), U, Zs, Zd)
        parts = ("tc_ben", "tc_salv", "tc_prod", "tc_map", "tc_short")
        scale = np.maximum(1.0, sum(np.abs(r[p]) for p in parts))
        ident = r["tc_ben"] + r["tc_salv"] - r["tc_prod"] - r["tc_map"] - r["tc_short"]
        worst = max(worst, float(np.max(np.abs(r["profit"] - ident) / scale)))
        batches.append((cm, q, U, Zs, Zd, r, scale))
        n += len(U)
    elapsed = time.perf_counter() - t
    # independent recomputation on a subsample (the reference is a slow loop)
    ref_worst = 0.0
    for cm, q, U, Zs, Zd, r, scale in batches[::50]:
        ref = reference_accounting(cm, q, U, Zs, Zd)
        for mine, theirs in (("profit", "profit"), ("ben", "tc_ben"), ("salv", "tc_salv"), ("prod", "tc_prod"),
                             ("map", "tc_map"), ("short", "tc_short")):
            ref_worst = max(ref_worst, float(np.max(np.abs(ref[mine] - r[theirs]) / scale)))
    ok = worst <= 1e-9 and ref_worst <= 1e-9 and elapsed < 10
    verdict(1, ok, f"{n} triples in {elapsed:.2f}s, identity residual {worst:.1e}, "
                   f"vs reference {ref_worst:.1e} (tol 1e-9, < 10 s)")


def test_c02_lp_oracle(verdict):
    rng = np.random.default_rng(77)
    t = time.perf_counter()
    below, mismatch, exact_cases = 0, 0, 0
    for i in range(200):
        identity_only = i % 2 == 0
        spec, obt, dem = random_instance(rng, identity_only)
        _, v = optimal_usage_stage3(spec, obt, dem)
        _, bv = brute_force_usage(spec, obt, dem)
        below += v < bv - 1e-6
        if identity_only:
            exact_cases += 1
            mismatch += abs(v - bv) > 1e-6
    elapsed = time.perf_counter() - t
    ok = below == 0 and mismatch == 0 and elapsed < 30
    verdict(2, ok, f"200 instances: LP below brute force {below}x, identity mismatches {mismatch}/{exact_cases}, "
                   f"{elapsed:.1f}s")


def random_staging_spec(rng):
    P, D = int(rng.integers(2, 4)), int(rng.integers(1, 4))
    produced = tuple(mk.ProducedGood(f"p{i}", rng.uniform(0.2, 2), rng.uniform(0, 30), rng.uniform(0.5, 1),
                                     f"s{i % 2}") for i in range(P))
    demanded = tuple(mk.DemandedGood(f"d{d}", rng.uniform(20, 100), rng.uniform(3, 8), rng.uniform(0, 4),
                                     rng.uniform(0, 0.5)) for d in range(D))
    maps = [mk.Mapping.make(f"id{d}", {f"p{d % P}": 1}, f"d{d}", rng.uniform(0, 0.3)) for d in range(D)]
    for j in range(int(rng.integers(1, 3))):
        src = rng.choice(P, int(rng.integers(1, 3)), replace=False)
        maps.append(mk.Mapping.make(f"x{j}", {f"p{i}": float(rng.integers(1, 3)) for i in src},
                                    f"d{rng.integers(0, D)}", rng.uniform(0, 0.5)))
    spec = mk.MarketSpec(produced, demanded, tuple(maps))
    return mk.set_uncertainty(spec, Normal(rng.uniform(0.1, 0.3)), Normal(rng.uniform(0.1, 0.3)))


def test_c03_staging_monotonicity(verdict):
    rng = np.random.default_rng(5)
    t = time.perf_counter()
    worst = 0.0
    for i in range(20):
        spec = random_staging_spec(rng)
        s2 = spec.with_stage(mk.RecourseStage.MAPPING_AFTER_SUPPLY)
        s3 = spec.with_stage(mk.RecourseStage.MAPPING_AFTER_SUPPLY_AND_DEMAND)
        sc = sample(spec.uncertainty, MonteCarlo(64, 8), i, spec.suppliers, spec.demanded_ids)
        q = optimize(s2, sc).order_qty
        e2 = evaluate_orders(s2, sc, q).expected_profit
        e3 = evaluate_orders(s3, sc, q).expected_profit
        # fixed usage: the stage-2 optimum at mean supply and demand, clipped to what each scenario delivers
        cm = compile_market(spec)
        Zs, Zd = scenario_arrays(cm, sc)
        w = sc.weights
        mean_obt = {g.id: q[g.id] * g.yield_rate * float(w @ Zs[:, cm.suppliers.index(g.supplier_id)])
                    for g in spec.produced}
        mean_dem = {d.id: d.base_demand * float(w @ Zd[:, k]) for k, d in enumerate(spec.demanded)}
        u, _ = optimal_usage_stage2(spec, mean_obt, [(mean_dem, 1.0)])
        qv = np.array([q[g] for g in cm.produced_ids])
        obt = qv[None, :] * Zs[:, cm.supplier_of] * cm.yld[None, :]
        U = clip_usage(cm, np.tile([u[m] for m in cm.mapping_ids], (len(sc), 1)), obt)
        ef = float(w @ evaluate_batch(cm, qv, (qv > 0).astype(float), U, Zs, Zd)["profit"])
        for hi, lo in ((e3, e2), (e2, ef)):
            worst = min(worst, (hi - lo) / max(abs(hi), abs(lo), 1e-9))
    elapsed = time.perf_counter() - t
    ok = worst >= -0.005 and elapsed < 120
    verdict(3, ok, f"20 specs: worst relative gap {100 * worst:.3f}% (tol -0.5%), {elapsed:.1f}s")


def test_c04_zero_uncertainty(verdict, plans):
    t = time.perf_counter()
    base = point(sweep(plans["baseline_both"], [0.0]), 0.0)
    comp = point(sweep(plans["composition_demand"], [0.0]), 0.0)
    spec = ex.build_spec(plans["baseline_both"], 0.0)
    dev = max(abs(base.order_qty[g.id] / (spec.demand(g.id).base_demand / g.yield_rate) - 1) for g in spec.produced)
    only4 = comp.order_qty["4-core"] > 0 and all(v == 0 for g, v in comp.order_qty.items() if g != "4-core")
    gain = comp.report.mean / base.report.mean - 1
    elapsed = time.perf_counter() - t
    ok = dev <= 1e-3 and only4 and gain >= 0.10 and elapsed < 60
    verdict(4, ok, f"q vs b/y max deviation {100 * dev:.4f}%, composition orders "
                   f"{ {g: round(v) for g, v in comp.order_qty.items() if v} }, profit gain {100 * gain:.1f}% "
                   f"(>= 10%), {elapsed:.1f}s")


def test_c05_adaptation_supply_null(verdict, plans):
    t = time.perf_counter()
    res = sweep(plans["adaptation_supply"])
    lams = [p.lam for p in res.points]
    elapsed = time.perf_counter() - t
    ok = [p.value for p in res.points] == [0.12, 0.24, 0.36] and all(lam is not None and abs(lam) <= 2
                                                                       for lam in lams) and elapsed < 300
    verdict(5, ok, f"supply-only lambda {[None if x is None else round(x, 2) for x in lams]} (|lambda| <= 2), "
                   f"{elapsed:.1f}s")


def test_c06_adaptation_demand(verdict, plans):
    t = time.perf_counter()
    lam = point(sweep(plans["adaptation_demand"], [0.36]), 0.36).lam
    elapsed = time.perf_counter() - t
    ok = lam is not None and 10 <= lam <= 35 and elapsed < 300
    verdict(6, ok, f"demand-only sigma 0.36 lambda {lam:.2f} (in [10, 35]), {elapsed:.1f}s")


def test_c07_dispersion(verdict, plans):
    t = time.perf_counter()
    uniq_plan = plans["dispersion_unique_supply"]
    uniq = point(sweep(uniq_plan, [0.36]), 0.36)
    base = point(sweep(replace(uniq_plan, name="baseline_supply_stratified", interventions=()), [0.36]), 0.36)
    d_mean = uniq.report.mean / base.report.mean - 1
    d_std = 1 - uniq.report.std / base.report.std
    two = point(sweep(plans["dispersion_two_supply"], [0.36]), 0.36).lam
    elapsed = time.perf_counter() - t
    ok = abs(d_mean) <= 0.01 and d_std >= 0.20 and two is not None and 30 <= two <= 60 and elapsed < 600
    verdict(7, ok, f"unique-per-good mean {100 * d_mean:+.2f}% (within 1%), std -{100 * d_std:.1f}% (>= 20%); "
                   f"two-suppliers lambda {two:.2f} (in [30, 60]), {elapsed:.1f}s")


def test_c08_jit_dominance(verdict, plans):
    t = time.perf_counter()
    jit = point(sweep(plans["jit_composition_demand"], [0.36]), 0.36).lam
    st2 = point(sweep(plans["composition_demand"], [0.36]), 0.36).lam
    elapsed = time.perf_counter() - t
    ok = jit is not None and st2 is not None and jit >= st2 + 10 and elapsed < 600
    verdict(8, ok, f"JIT composition lambda {jit:.2f} vs stage-2 {st2:.2f} (gap >= 10), {elapsed:.1f}s")


def test_c09_baseline_fragility(verdict, plans):
    t = time.perf_counter()
    drops = {}
    for name, need in (("baseline_both", 0.75), ("baseline_demand", 0.40), ("baseline_supply", 0.45)):
        res = sweep(plans[name], [0.0, 0.36])
        m0, m = point(res, 0.0).report.mean, point(res, 0.36).report.mean
        drops[name] = ((m0 - m) / m0, need)
    elapsed = time.perf_counter() - t
    ok = all(d >= need for d, need in drops.values()) and elapsed < 300
    verdict(9, ok, ", ".join(f"{k} drop {100 * d:.1f}% (>= {100 * n:.0f}%)" for k, (d, n) in drops.items())
            + f", {elapsed:.1f}s")


def test_c10_cost_calibration(verdict, capsys):
    t = time.perf_counter()
    rc = cli.main(["validate-costs"])
    out = capsys.readouterr().out
    elapsed = time.perf_counter() - t
    ratio_line = [ln for ln in out.splitlines() if ln.startswith("32-core")][0]
    ok = rc == cli.EXIT_OK and elapsed < 5
    verdict(10, ok, f"validate-costs exit {rc}; {ratio_line.split('  ')[0]}, {elapsed:.2f}s")


def test_c11_closed_form_oracles(verdict):
    t = time.perf_counter()
    be = oracles.check_break_even()
    threshold = oracles.check_programmability_threshold(kmax=12)
    # direct check of the threshold by Bernoulli enumeration at h = R, where kpmR - n is exact
    flips = []
    for k in range(1, 13):
        s = cf.ProgrammabilityScenario(k, 1.0, 0.5, 1.0, 1.0, 1.0, 3.0)
        flips.append(cf.programmable_expected_profit(s, k * s.p * s.m) > 1e-12)
    k_star = cf.programmability_threshold(cf.ProgrammabilityScenario(1, 1.0, 0.5, 1.0, 1.0, 1.0, 3.0))
    enum_ok = flips == [k > k_star for k in range(1, 13)]
    proc = subprocess.run([sys.executable, "-m", "chainforge.cli", "oracle-check"], capture_output=True, text=True)
    elapsed = time.perf_counter() - t
    ok = be.status == "pass" and threshold.ok and enum_ok and proc.returncode == 0 and elapsed < 120
    verdict(11, ok, f"break-even {be.status} ({be.detail}); threshold {threshold.status}; "
                    f"enumeration k > {k_star:g} {'matches' if enum_ok else 'differs'}; "
                    f"oracle-check exit {proc.returncode}, {elapsed:.1f}s")


def test_c12_determinism(verdict, plans, tmp_path):
    t = time.perf_counter()
    plan = replace(plans["dispersion_two_supply"], seeds=(1, 2))
    texts = {}
    for threads in (1, 4):
        res = ex.run(plan, threads)
        paths = ex.write_results(res, str(tmp_path / f"t{threads}"))
        texts[threads] = [open(p, "rb").read() for p in paths]
    elapsed = time.perf_counter() - t
    ok = texts[1] == texts[4] and elapsed < 300
    verdict(12, ok, f"{plan.name} at threads 1 and 4: {'byte-identical' if texts[1] == texts[4] else 'differ'} "
                    f"({len(plan.values) * len(plan.seeds)} points), {elapsed:.1f}s")
