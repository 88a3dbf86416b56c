"""Declarative sweeps over uncertainty and market parameters, with lambda
against the no-intervention baseline at each point."""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import chipcost
from . import market as mk
from .engine import ProfitReport, lambda_metric, report
from .orders import OptimizationResult, OptimizerConfig, constrained_rerun, optimize
from .uncertainty import (Deterministic, Exhaustive, MonteCarlo, Normal, Shock, StratifiedEquiProbable, Strategy,
                          UncertaintyConfig, pairwise_correlation, sample)

INTERVENTIONS = ("composition", "adaptation", "dispersion-unique", "dispersion-two", "jit", "market-mechanism")
AXES = ("supply_sigma", "demand_sigma", "both_sigma", "constraint_factor", "shock_factor", "salvage_factor",
        "interposer_constraint", "nre_reuse", "demand_pcc", "multi_isa_scale")
SIGMA_AXES = AXES[:3]


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentPlan:
    name: str
    interventions: tuple[str, ...] = ()
    axis: str = "both_sigma"
    values: tuple[float, ...] = (0.0,)
    seeds: tuple[int, ...] = (1,)
    strategy: Strategy = MonteCarlo(512)
    cost: chipcost.CostParams = field(default_factory=chipcost.CostParams)
    core_counts: tuple[int, ...] = (16, 8, 4)
    supply_sigma: float = 0.0  # background uncertainty for non-sigma axes
    demand_sigma: float = 0.0
    target_goods: tuple[str, ...] = ("4-core",)  # constraint / shock targets
    shock_on: str = "supply"
    nre_share: float = 1.0
    pcc: float = 0.0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def check(self) -> list[str]:
        errs = []
        unknown = set(self.interventions) - set(INTERVENTIONS)
        if unknown:
            errs.append(f"unknown interventions {sorted(unknown)}")
        if {"dispersion-unique", "dispersion-two"} <= set(self.interventions):
            errs.append("dispersion-unique and dispersion-two are exclusive")
        if self.axis not in AXES:
            errs.append(f"unknown sweep axis {self.axis!r}")
        if not self.values:
            errs.append("sweep needs at least one value")
        if list(self.values) != sorted(self.values):
            errs.append("sweep values must be sorted ascending")
        if not self.seeds:
            errs.append("need at least one seed")
        if self.shock_on not in ("supply", "demand"):
            errs.append("shock_on must be 'supply' or 'demand'")
        if self.axis == "nre_reuse" and "dispersion-two" not in self.interventions:
            errs.append("the nre_reuse axis needs the dispersion-two intervention")
        if self.axis == "interposer_constraint" and "composition" not in self.interventions:
            errs.append("the interposer_constraint axis needs the composition intervention")
        if self.axis == "multi_isa_scale" and self.interventions:
            errs.append("the multi_isa_scale axis takes no interventions")
        return errs


@dataclass
class PointResult:
    value: float
    seed: int
    report: ProfitReport | None = None
    order_qty: dict[str, float] = field(default_factory=dict)
    baseline_mean: float = float("nan")
    baseline_zero_mean: float = float("nan")
    zero_mean: float = float("nan")  # this spec's mean with uncertainty removed
    lam: float | None = None
    lam_yield_normalized: float | None = None
    error: str | None = None
    wall_time: float = 0.0


@dataclass
class SweepResult:
    plan: ExperimentPlan
    points: list[PointResult]
    goods: tuple[str, ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["experiment", "parameter", "seed", "mean", "std", "min", "q1", "median", "q3", "max",
                     "n_outliers", "lambda", "lambda_yield_normalized"]
                    + [f"order_share_{g}" for g in self.goods])
        for p in self.points:
            head = [self.plan.name, repr(float(p.value)), str(p.seed)]
            if p.report is None:
                wr.writerow(head + [""] * (10 + len(self.goods)))
                continue
            r = p.report
            row = head + [repr(float(v)) for v in (r.mean, r.std, r.min, r.q1, r.median, r.q3, r.max)]
            row += [str(len(r.outliers)), _fmt(p.lam), _fmt(p.lam_yield_normalized)]
            row += [repr(float(r.order_shares.get(g, 0.0))) for g in self.goods]
            wr.writerow(row)
        return buf.getvalue()

    def to_json(self) -> str:
        pts = []
        for p in self.points:
            d = {"parameter": p.value, "seed": p.seed, "error": p.error, "order_qty": p.order_qty,
                 "baseline_mean": _num(p.baseline_mean), "baseline_zero_mean": _num(p.baseline_zero_mean),
                 "zero_mean": _num(p.zero_mean), "lambda": p.lam,
                 "lambda_yield_normalized": p.lam_yield_normalized}
            if p.report is not None:
                d["report"] = p.report.to_dict()
            pts.append(d)
        plan = {"name": self.plan.name, "interventions": list(self.plan.interventions), "axis": self.plan.axis,
                "values": list(self.plan.values), "seeds": list(self.plan.seeds),
                "strategy": _strategy_label(self.plan.strategy), "optimizer": self.plan.optimizer.method}
        return json.dumps({"plan": plan, "points": pts}, sort_keys=True, indent=1)

    def policy_shares_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["parameter", "seed", "good", "order_qty", "share"])
        for p in self.points:
            total = sum(p.order_qty.values())
            for g in self.goods:
                q = p.order_qty.get(g, 0.0)
                wr.writerow([repr(float(p.value)), p.seed, g, repr(float(q)),
                             repr(float(q / total if total > 0 else 0.0))])
        return buf.getvalue()

    def means(self) -> list[float]:
        return [p.report.mean if p.report else float("nan") for p in self.points]


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def _num(v):
    return None if v != v else v


def _strategy_label(s: Strategy) -> str:
    return s.label()


# --------------------------------------------------------------------------
# spec construction per point


def _base_market(plan: ExperimentPlan, value: float, with_multi: bool = True) -> mk.MarketSpec:
    if plan.axis == "multi_isa_scale":
        spec = mk.build_multi_isa(value)
        if not with_multi:
            spec = replace(spec, produced=spec.produced[:2], mappings=spec.mappings[:2])
        return spec
    return mk.build_baseline(plan.core_counts, plan.cost)


def _interposer_need(spec: mk.MarketSpec) -> float:
    b = {d.id: d.base_demand for d in spec.demanded}
    return b.get(mk.core_id(16), 0.0) + 0.5 * b.get(mk.core_id(8), 0.0)


def build_spec(plan: ExperimentPlan, value: float, interventions: tuple[str, ...] | None = None,
               uncertain: bool = True) -> mk.MarketSpec:
    """The market of one sweep point; ``uncertain=False`` drops every random element."""
    iv = plan.interventions if interventions is None else interventions
    spec = _base_market(plan, value, with_multi=interventions is None or plan.axis != "multi_isa_scale")
    p = plan.cost
    if plan.axis == "salvage_factor":
        spec = mk.with_salvage_factor(spec, value)
    if "market-mechanism" in iv:
        spec = mk.with_demand_curves(spec)
    if "composition" in iv:
        ip16 = chipcost.interposer_cost(16 * p.area_per_core, p)
        as_good = plan.axis == "interposer_constraint"
        spec = mk.add_composition(spec, ip16, interposer_as_good=as_good)
        if as_good:
            spec = spec.with_constraints(mk.SupplyCap(mk.INTERPOSER, value * _interposer_need(spec)))
    if "adaptation" in iv:
        spec = mk.add_adaptation(spec)

    stage = mk.RecourseStage.MAPPING_AFTER_SUPPLY_AND_DEMAND
    if "composition" in iv and "jit" not in iv and "adaptation" not in iv:
        stage = mk.RecourseStage.MAPPING_AFTER_SUPPLY
    spec = spec.with_stage(stage)

    # uncertainty, set before dispersion so clones inherit their supplier's law
    s_sig, d_sig = plan.supply_sigma, plan.demand_sigma
    if plan.axis == "supply_sigma":
        s_sig = value
    elif plan.axis == "demand_sigma":
        d_sig = value
    elif plan.axis == "both_sigma":
        s_sig = d_sig = value
    if uncertain:
        spec = mk.set_uncertainty(spec, Normal(s_sig) if s_sig > 0 else Deterministic(1.0),
                                  Normal(d_sig) if d_sig > 0 else Deterministic(1.0))
        if plan.axis == "shock_factor" and value > 0:
            spec = _apply_shock(spec, plan, value)
        pcc = value if plan.axis == "demand_pcc" else plan.pcc
        if pcc != 0.0 and d_sig > 0:
            C, ids = pairwise_correlation(list(spec.demanded_ids), pcc)
            spec = spec.with_uncertainty(replace(spec.uncertainty, demand_correlation=C, correlated=ids))
    if "interposer" in spec.produced_ids:
        # interposers come from their own, certain supply
        unc = spec.uncertainty
        spec = spec.with_uncertainty(replace(unc, supply={**unc.supply, "interposer-supplier": Deterministic(1.0)}))

    if "dispersion-unique" in iv:
        spec = mk.add_dispersion(spec, mk.DispersionMode.UNIQUE_PER_GOOD)
    if "dispersion-two" in iv:
        share = value if plan.axis == "nre_reuse" else plan.nre_share
        spec = mk.add_dispersion(spec, mk.DispersionMode.TWO_SUPPLIERS_ALL, share)
    return mk.require_valid(spec)


def _apply_shock(spec: mk.MarketSpec, plan: ExperimentPlan, p: float) -> mk.MarketSpec:
    unc = spec.uncertainty
    if plan.shock_on == "demand":
        dem = dict(unc.demand)
        for g in plan.target_goods:
            dem[g] = Shock(p)
        return spec.with_uncertainty(replace(unc, demand=dem))
    produced = []
    supply = dict(unc.supply)
    for g in spec.produced:
        if g.id in plan.target_goods:
            sid = f"{g.supplier_id}/shock:{g.id}"
            supply[sid] = Shock(p)
            g = replace(g, supplier_id=sid)
        produced.append(g)
    return replace(spec, produced=tuple(produced), uncertainty=replace(unc, supply=supply))


def _strategy_for(plan: ExperimentPlan, spec: mk.MarketSpec) -> Strategy:
    if spec.uncertainty.demand_correlation is not None and not isinstance(plan.strategy, MonteCarlo):
        return MonteCarlo()
    return plan.strategy


def _solve(plan: ExperimentPlan, spec: mk.MarketSpec, seed: int, value: float) -> OptimizationResult:
    strat = _strategy_for(plan, spec)
    if isinstance(strat, Exhaustive):
        try:
            scen = sample(spec.uncertainty, strat, seed, spec.suppliers, spec.demanded_ids)
        except ValueError:
            scen = sample(spec.uncertainty, StratifiedEquiProbable(), seed, spec.suppliers, spec.demanded_ids)
    else:
        scen = sample(spec.uncertainty, strat, seed, spec.suppliers, spec.demanded_ids)
    cfg = replace(plan.optimizer, seed=seed)
    if plan.axis == "constraint_factor":
        goods = [g for g in spec.produced_ids if g in plan.target_goods or g.split("@")[0] in plan.target_goods]
        return constrained_rerun(spec, scen, cfg, value, goods)
    return optimize(spec, scen, cfg)


def run_point(plan: ExperimentPlan, value: float, seed: int) -> PointResult:
    t = time.perf_counter()
    pr = PointResult(value, seed)
    try:
        spec = build_spec(plan, value)
        res = _solve(plan, spec, seed, value)
        zero = _solve(plan, build_spec(plan, value, uncertain=False), seed, value).expected_profit
        if plan.interventions or plan.axis == "multi_isa_scale":
            b_mean = _solve(plan, build_spec(plan, value, interventions=()), seed, value).expected_profit
            b_zero = _solve(plan, build_spec(plan, value, interventions=(), uncertain=False), seed,
                            value).expected_profit
        else:
            b_mean, b_zero = res.expected_profit, zero
        gain0 = zero - b_zero if "composition" in plan.interventions else None
        pr.report = report(res.profits, res.weights, (b_mean, b_zero), res.order_qty, gain0)
        pr.order_qty = res.order_qty
        pr.baseline_mean, pr.baseline_zero_mean, pr.zero_mean = b_mean, b_zero, zero
        pr.lam, pr.lam_yield_normalized = pr.report.lam, pr.report.lam_yield_normalized
    except Exception as exc:  # recorded; the sweep goes on
        pr.error = f"{type(exc).__name__}: {exc}"
    pr.wall_time = time.perf_counter() - t
    return pr


def default_threads() -> int:
    env = os.environ.get("CHAINFORGE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise PlanError(f"CHAINFORGE_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def run(plan: ExperimentPlan, threads: int | None = None) -> SweepResult:
    errs = plan.check()
    if errs:
        raise PlanError("; ".join(errs))
    jobs = [(v, s) for v in plan.values for s in plan.seeds]
    threads = threads or default_threads()
    if threads == 1 or len(jobs) == 1:
        points = [run_point(plan, v, s) for v, s in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            points = list(ex.map(lambda js: run_point(plan, *js), jobs))
    goods: dict[str, None] = {}
    for v in plan.values:
        try:
            for g in build_spec(plan, v).produced_ids:
                goods.setdefault(g, None)
        except Exception:
            pass
    return SweepResult(plan, points, tuple(goods))


def lambda_table(results: SweepResult, baseline: SweepResult) -> list[tuple[float, int, float | None]]:
    """Lambda per (point, seed) of ``results`` against a separately run baseline sweep."""
    a = [(p.value, p.seed) for p in results.points]
    b = [(p.value, p.seed) for p in baseline.points]
    if results.plan.axis != baseline.plan.axis or a != b:
        raise PlanError("lambda table needs matching sweep axes, values and seeds")
    out = []
    for p, q in zip(results.points, baseline.points):
        if p.report is None or q.report is None:
            out.append((p.value, p.seed, None))
            continue
        out.append((p.value, p.seed, lambda_metric(p.report.mean, q.report.mean, q.zero_mean)))
    return out


def write_results(result: SweepResult, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for suffix, text in (("csv", result.to_csv()), ("json", result.to_json()),
                         ("policy.csv", result.policy_shares_csv())):
        path = os.path.join(out_dir, f"{result.plan.name}.{suffix}")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        paths.append(path)
    return paths
