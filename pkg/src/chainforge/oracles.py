"""Engine-vs-oracle grids: each analytic micro-scenario is encoded as a
MarketSpec, solved by the full optimizer, and compared with the closed form."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import closed_form as cf
from .market import DemandedGood, Mapping, MarketSpec, ProducedGood, SupplyCap
from .orders import evaluate_orders, optimize
from .uncertainty import Exhaustive, ScenarioSet, Shock, UncertaintyConfig, sample


@dataclass(frozen=True)
class CheckResult:
    name: str
    status: str  # pass | fail | skip | info
    detail: str

    @property
    def ok(self) -> bool:
        return self.status != "fail"


def _deterministic(spec: MarketSpec) -> ScenarioSet:
    return sample(spec.uncertainty, Exhaustive(), 0, spec.suppliers, spec.demanded_ids)


# --------------------------------------------------------------------------
# substitution


def substitution_spec(s: cf.SubstitutionScenario) -> MarketSpec:
    return MarketSpec(
        produced=(ProducedGood("g1", s.c1, s.n1, 1.0), ProducedGood("g2", s.c2, s.n2, 1.0)),
        demanded=(DemandedGood("d", s.zd, s.r, 0.0),),
        mappings=(Mapping.make("direct", {"g1": 1}, "d", s.t), Mapping.make("substitute", {"g2": 1}, "d", s.t)),
    )


def engine_prefers_substitute(s: cf.SubstitutionScenario) -> bool | None:
    """True if the optimizer builds g2 only, False for g1 only, None if it builds neither."""
    q = optimize(substitution_spec(s), _deterministic(substitution_spec(s))).order_qty
    if q["g2"] > 0 and q["g1"] == 0:
        return True
    if q["g1"] > 0 and q["g2"] == 0:
        return False
    return None


def check_break_even(n1=100.0, n2=40.0, c1=1.0, c2=2.0, r=10.0, t=0.0, step=3.0, points=21) -> CheckResult:
    name = "break-even flip"
    try:
        z_eq = cf.break_even_demand(n1, n2, c1, c2)
    except ValueError as exc:
        return CheckResult(name, "skip", str(exc))
    grid = z_eq + step * (np.arange(points) - points // 2)
    grid = grid[grid >= 0]
    mismatches, flips = [], []
    prev = None
    for z in grid:
        s = cf.SubstitutionScenario(r, t, c1, c2, n1, n2, float(z))
        got, want = engine_prefers_substitute(s), cf.prefer_substitute(s)
        if got != want and abs(z - z_eq) > step:
            mismatches.append(float(z))
        if prev is not None and got != prev:
            flips.append(float(z))
        prev = got
    flip_ok = len(flips) == 1 and abs(flips[0] - z_eq) <= step
    ok = not mismatches and flip_ok
    detail = f"{len(grid)} points, analytic {z_eq:g}, engine flip at {flips}, mismatches {mismatches}"
    return CheckResult(name, "pass" if ok else "fail", detail)


def check_substitution_examples() -> CheckResult:
    a = cf.SubstitutionScenario(10, 0, 1, 2, 100, 40, 30)
    b = cf.SubstitutionScenario(10, 0, 1, 2, 100, 40, 100)
    tie = cf.SubstitutionScenario(10, 1, 1, 1, 50, 50, 20)
    got = (cf.prefer_substitute(a), cf.prefer_substitute(b), cf.prefer_substitute(tie))
    ok = got == (True, False, False)
    return CheckResult("substitution plug-ins", "pass" if ok else "fail", f"Zd=30, Zd=100, tie -> {got}")


# --------------------------------------------------------------------------
# flexible producer


def goop_spec(k: int, g: float, t: float) -> tuple[MarketSpec, ScenarioSet]:
    """Two dedicated goods plus a flexible one; total demand k, uniform split."""
    spec = MarketSpec(
        produced=(ProducedGood("a", 1.0, 0.0, 1.0), ProducedGood("b", 1.0, 0.0, 1.0),
                  ProducedGood("m", 1.0, 0.0, 1.0)),
        demanded=(DemandedGood("d1", float(k), 0.0, g), DemandedGood("d2", float(k), 0.0, g)),
        mappings=(Mapping.make("a->d1", {"a": 1}, "d1"), Mapping.make("b->d2", {"b": 1}, "d2"),
                  Mapping.make("m->d1", {"m": 1}, "d1", t), Mapping.make("m->d2", {"m": 1}, "d2", t)),
    )
    z1 = np.arange(k + 1, dtype=float)
    dem = np.column_stack([z1 / k, (k - z1) / k])
    sc = ScenarioSet(("foundry",), np.ones((1, 1)), np.ones(1), ("d1", "d2"), dem,
                     np.full(k + 1, 1.0 / (k + 1)), strategy="uniform-split")
    return spec, sc


def engine_goop_costs(k: int, g: float, t: float) -> dict[tuple[int, int, int], float]:
    spec, sc = goop_spec(k, g, t)
    out = {}
    for a, b, m in cf.goop_costs(k, g, t):
        res = evaluate_orders(spec, sc, {"a": a, "b": b, "m": m})
        out[(a, b, m)] = -res.expected_profit - k  # strip the production cost
    return out


def check_goop(k=4, gs=(0.0, 0.5, 1.0, 2.0, 4.0), ts=(0.0, 0.5, 1.0, 2.0)) -> list[CheckResult]:
    bad, literal_diff, n = [], [], 0
    for g in gs:
        for t in ts:
            n += 1
            eng = engine_goop_costs(k, g, t)
            ana = cf.goop_costs(k, g, t)
            cost_ok = all(math.isclose(eng[x], ana[x], rel_tol=1e-7, abs_tol=1e-7) for x in ana)
            best = min(eng.values())
            eng_flex = eng[(0, 0, k)] <= best + 1e-7 * max(1.0, abs(best))
            want = cf.goop_threshold(k, g, t)
            if not cost_ok or eng_flex != want:
                bad.append((g, t))
            if want != cf.goop_threshold(k, g, t, literal=True):
                literal_diff.append((g, t))
    # free conversion makes flex weakly optimal; no shortage pressure means it is never strictly better
    trivial = all(cf.goop_threshold(k, g, 0.0) for g in gs) and all(
        cf.goop_cost(k, 0.0, t, 0, 0, k) >= cf.goop_cost(k, 0.0, t, k, 0, 0) for t in ts)
    return [
        CheckResult("goop engine vs enumeration", "pass" if not bad and trivial else "fail",
                    f"k={k}, {n} (g, t) points, mismatches {bad}"),
        CheckResult("goop literal inequality", "info",
                    f"literal g*t <= k disagrees with enumeration at {len(literal_diff)}/{n} points: {literal_diff}"),
    ]


# --------------------------------------------------------------------------
# programmability


def programmability_spec(s: cf.ProgrammabilityScenario, unit_cost: float = 1.0) -> tuple[MarketSpec, ScenarioSet]:
    produced = [ProducedGood(f"asic-{i}", unit_cost, s.n_asic, 1.0) for i in range(s.k)]
    produced.append(ProducedGood("prog", unit_cost, s.n_prog, 1.0))
    demanded = tuple(DemandedGood(f"d-{i}", s.m, unit_cost + s.R, 0.0, unit_cost + s.h) for i in range(s.k))
    mappings = [Mapping.make(f"asic-{i}->d-{i}", {f"asic-{i}": 1}, f"d-{i}") for i in range(s.k)]
    mappings += [Mapping.make(f"prog->d-{i}", {"prog": 1}, f"d-{i}") for i in range(s.k)]
    unc = UncertaintyConfig(demand={d.id: Shock(1.0 - s.p) for d in demanded})
    # the analytic builds are bounded (salvage above cost would otherwise be unbounded)
    caps = tuple(SupplyCap(f"asic-{i}", s.m) for i in range(s.k)) + (SupplyCap("prog", s.k * s.m),)
    spec = MarketSpec(tuple(produced), demanded, tuple(mappings), caps, unc)
    return spec, sample(unc, Exhaustive(), 0, spec.suppliers, spec.demanded_ids)


def check_programmable_profit(s=cf.ProgrammabilityScenario(4, 10.0, 0.4, 2.0, 0.5, 5.0, 12.0)) -> CheckResult:
    spec, sc = programmability_spec(s)
    worst = 0.0
    xs = [j * s.m / 2 for j in range(1, 2 * s.k + 1)]
    for x in xs:
        eng = evaluate_orders(spec, sc, {"prog": x}).expected_profit
        worst = max(worst, abs(eng - cf.programmable_expected_profit(s, x)))
    for x in (s.m / 2, s.m):
        eng = evaluate_orders(spec, sc, {"asic-0": x}).expected_profit
        ana = x * (s.R * s.p + s.h * (1 - s.p)) - s.n_asic  # unclamped: the order is forced
        worst = max(worst, abs(eng - ana))
    ok = worst <= 1e-7 * max(1.0, s.k * s.m * s.R)
    return CheckResult("programmable profit engine vs exhaustive", "pass" if ok else "fail",
                       f"{len(xs) + 2} builds, max abs error {worst:.3g}")


def check_programmable_decision(ks=(1, 2, 3, 4, 5), factors=(0.5, 0.8, 1.25, 2.0),
                                m=10.0, p=0.4, R=2.0, h=0.5) -> CheckResult:
    slope = R * p + h * (1 - p)
    bad, n = [], 0
    for k in ks:
        gross = cf.best_programmable(cf.ProgrammabilityScenario(k, m, p, R, h, 0.0, 0.0))[1]
        for f in factors:
            n += 1
            s = cf.ProgrammabilityScenario(k, m, p, R, h, m * slope + 1.0, f * gross)
            want = cf.best_programmable(s)[1] > 0 and cf.best_programmable(s)[1] > cf.asic_expected_profit(s, m)
            spec, sc = programmability_spec(s)
            got = optimize(spec, sc).order_qty["prog"] > 0
            if got != want:
                bad.append((k, f))
    return CheckResult("programmability decision grid", "pass" if not bad else "fail",
                       f"{n} (k, n_prog) points, mismatches {bad}")


def check_programmability_threshold(m=1.0, p=0.5, R=1.0, n_prog=3.0, kmax=12) -> CheckResult:
    bad = []
    thr = None
    for k in range(1, kmax + 1):
        exact = cf.ProgrammabilityScenario(k, m, p, R, R, m * (R * p + R * (1 - p)), n_prog)
        thr = cf.programmability_threshold(exact)
        x = k * p * m
        e = cf.programmable_expected_profit(exact, x, "exhaustive")
        if not math.isclose(e, cf.programmable_at_mean(exact), abs_tol=1e-9):
            bad.append((k, "value"))
        if (e > 1e-12) != (k > thr):
            bad.append((k, "sign"))
        if cf.asic_expected_profit(exact, m) != 0.0:
            bad.append((k, "asic"))
        lossy = cf.ProgrammabilityScenario(k, m, p, R, 0.0, 1.0, n_prog)
        if cf.programmable_expected_profit(lossy, x, "exhaustive") > cf.programmable_at_mean(lossy) + 1e-12:
            bad.append((k, "bound"))
    return CheckResult("programmability threshold k > n/(pmR)", "pass" if not bad else "fail",
                       f"k = 1..{kmax}, threshold {thr:g}, failures {bad}")


def check_monte_carlo(ks=(4, 8, 12), n=100_000, seed=7) -> CheckResult:
    worst = 0.0
    for k in ks:
        s = cf.ProgrammabilityScenario(k, 3.0, 0.3, 2.0, 0.4, 0.0, 5.0)
        x = round(k * s.p) * s.m
        ex = cf.programmable_expected_profit(s, x, "exhaustive")
        bi = cf.programmable_expected_profit(s, x, "binomial")
        est, se = cf.programmable_expected_profit(s, x, "montecarlo", n=n, seed=seed + k)
        if not math.isclose(ex, bi, rel_tol=1e-9, abs_tol=1e-9):
            return CheckResult("programmable exhaustive vs Monte Carlo", "fail", f"k={k}: binomial {bi} != {ex}")
        worst = max(worst, abs(est - ex) / se)
    return CheckResult("programmable exhaustive vs Monte Carlo", "pass" if worst <= 3.0 else "fail",
                       f"k in {list(ks)}, n={n}, worst deviation {worst:.2f} SE")


def run_all(break_even: dict | None = None) -> list[CheckResult]:
    """All oracle checks; ``break_even`` overrides the break-even grid parameters."""
    out = [check_substitution_examples(), check_break_even(**(break_even or {}))]
    out += check_goop()
    out += [check_programmable_profit(), check_programmable_decision(), check_programmability_threshold(),
            check_monte_carlo()]
    return out


def format_table(results: list[CheckResult]) -> str:
    w = max(len(r.name) for r in results)
    return "\n".join(f"{r.status.upper():4}  {r.name:<{w}}  {r.detail}" for r in results)
