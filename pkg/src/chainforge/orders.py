"""Stage-1 order search: sample-average expected profit over order quantities,
with mapping usage as recourse."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize as sciopt

from .engine import (CompiledMarket, DecisionPolicy, compile_market, evaluate_batch, scenario_arrays,
                     weighted_sum)
from .market import (MarketError, MarketSpec, OrderEquality, RecourseStage, SupplyCap, SupplyCapFactor,
                     validate)
from .recourse import build_recourse_lp, clip_usage, solve_highs
from .uncertainty import ScenarioSet

METHODS = ("subset-lp", "subset-nelder-mead", "annealing")
TIE_RTOL = 1e-7


class OptimizerError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "subset-lp"
    restarts: int = 2
    budget: int = 400  # objective evaluations per subset (Nelder-Mead) or in total (annealing)
    t0: float = 0.05  # initial temperature, relative to |incumbent|
    cooling: float = 0.97
    steps: int = 300
    seed: int = 0
    spread: float = 0.2
    max_goods: int = 12

    def __post_init__(self):
        if self.method not in METHODS:
            raise OptimizerError(f"unknown method {self.method!r}; choose one of {METHODS}")
        if self.restarts < 0 or self.budget < 1 or self.steps < 1:
            raise OptimizerError("restarts must be >= 0, budget and steps >= 1")
        if not 0.0 < self.cooling < 1.0:
            raise OptimizerError("cooling factor must lie in (0, 1)")
        if self.t0 < 0:
            raise OptimizerError("initial temperature must be >= 0")


@dataclass
class OptimizationResult:
    policy: DecisionPolicy
    expected_profit: float
    profits: np.ndarray  # per joint scenario
    weights: np.ndarray
    trace: list[tuple[int, float]] = field(default_factory=list)
    budget_exhausted: bool = False
    subset_values: dict[tuple[str, ...], float] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def order_qty(self) -> dict[str, float]:
        return dict(self.policy.order_qty)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["iteration", "incumbent"])
        for it, v in self.trace:
            wr.writerow([it, repr(float(v))])
        return buf.getvalue()


# --------------------------------------------------------------------------
# problem preparation


def order_classes(spec: MarketSpec) -> list[list[int]]:
    """Produced-good indices grouped by order-equality constraints (union-find)."""
    ids = spec.produced_ids
    parent = list(range(len(ids)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for c in spec.constraints:
        if isinstance(c, OrderEquality):
            idx = [ids.index(g) for g in c.goods]
            for a in idx[1:]:
                ra, rb = find(idx[0]), find(a)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = {}
    for i in range(len(ids)):
        groups.setdefault(find(i), []).append(i)
    return [groups[k] for k in sorted(groups)]


def _caps(spec: MarketSpec, reference: dict[str, float] | None) -> np.ndarray:
    ids = spec.produced_ids
    cap = np.full(len(ids), np.inf)
    for c in spec.constraints:
        if isinstance(c, SupplyCap):
            i = ids.index(c.good)
            cap[i] = min(cap[i], c.cap)
        elif isinstance(c, SupplyCapFactor):
            ref = c.reference
            if ref is None:
                if reference is None:
                    raise OptimizerError("supply-cap factor without a reference needs an unconstrained solve")
                ref = reference.get(c.good, 0.0)
            i = ids.index(c.good)
            cap[i] = min(cap[i], c.factor * ref)
    return cap


@dataclass(eq=False)
class _Problem:
    spec: MarketSpec
    cm: CompiledMarket
    scenarios: ScenarioSet
    Zs: np.ndarray
    Zd: np.ndarray
    w: np.ndarray
    stage: RecourseStage
    row_of: np.ndarray
    rows_supply: np.ndarray  # (R, S) supply multipliers per usage row
    classes: list[list[int]]
    class_ub: np.ndarray
    class_cost: np.ndarray  # expected production cost per unit of class q
    init: np.ndarray  # zero-uncertainty-style starting point per class

    @property
    def names(self) -> list[str]:
        return ["+".join(self.cm.produced_ids[i] for i in cls) for cls in self.classes]

    def q_goods(self, qc: np.ndarray) -> np.ndarray:
        q = np.zeros(self.cm.n_produced)
        for c, cls in enumerate(self.classes):
            q[cls] = qc[c]
        return q

    def obtained_rows(self, q: np.ndarray) -> np.ndarray:
        return q[None, :] * self.rows_supply[:, self.cm.supplier_of] * self.cm.yld[None, :]

    def score(self, q: np.ndarray, U_rows: np.ndarray) -> np.ndarray:
        o = (q > 1e-9).astype(float)
        U = U_rows[self.row_of]
        return evaluate_batch(self.cm, q, o, U, self.Zs, self.Zd)["profit"]

    def policy(self, q: np.ndarray, U_rows: np.ndarray) -> DecisionPolicy:
        return DecisionPolicy.from_orders(dict(zip(self.cm.produced_ids, q.tolist())), U_rows, self.stage,
                                          self.cm.mapping_ids)


def _prepare(spec: MarketSpec, scenarios: ScenarioSet, reference: dict[str, float] | None) -> _Problem:
    problems = validate(spec)
    if problems:
        raise MarketError("invalid market spec: " + "; ".join(map(str, problems)))
    cm = compile_market(spec)
    Zs, Zd = scenario_arrays(cm, scenarios)
    w = scenarios.weights
    stage = RecourseStage(spec.recourse_stage)
    K = len(scenarios)
    if stage == RecourseStage.MAPPING_AFTER_SUPPLY:
        row_of = np.repeat(np.arange(scenarios.n_supply), scenarios.n_demand)
        rows_supply = Zs[:: scenarios.n_demand]
    else:
        row_of = np.arange(K)
        rows_supply = Zs
    classes = order_classes(spec)
    cap = _caps(spec, reference)
    class_ub = np.array([cap[cls].min() for cls in classes])
    if np.any(class_ub < 0):
        raise OptimizerError("order caps must be >= 0")
    mean_zs = Zs.T @ w if Zs.size else np.zeros(0)
    per_good = cm.u_cost * (mean_zs[cm.supplier_of] if cm.n_produced else 0.0)
    class_cost = np.array([per_good[cls].sum() for cls in classes])
    # starting point: enough of each class to cover its identity demand
    init = np.zeros(len(classes))
    for c, cls in enumerate(classes):
        best = 0.0
        for i in cls:
            outs = {int(cm.out_idx[j]) for j in np.flatnonzero(cm.m_in[:, i] > 0)}
            need = sum(cm.base[d] for d in outs) / max(1, len(outs))
            best = max(best, need / cm.yld[i])
        init[c] = min(best if best > 0 else 1.0, class_ub[c])
    return _Problem(spec, cm, scenarios, Zs, Zd, w, stage, row_of, rows_supply, classes, class_ub,
                    class_cost, init)


def _solve_subset(pb: _Problem, subset: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Exact SAA optimum over q restricted to ``subset`` of order classes."""
    class_of = np.full(pb.cm.n_produced, -1)
    for pos, c in enumerate(subset):
        class_of[pb.classes[c]] = pos
    ypq = pb.rows_supply[:, pb.cm.supplier_of] * pb.cm.yld[None, :]
    sub = list(subset)
    prob = build_recourse_lp(pb.cm, pb.Zd * pb.cm.base[None, :], pb.w, pb.row_of, yield_per_q=ypq,
                             class_of=class_of, class_ub=pb.class_ub[sub], q_cost=pb.class_cost[sub])
    x = solve_highs(prob)
    qc = np.zeros(len(pb.classes))
    qc[sub] = np.clip(x[: len(sub)] * prob.scale, 0.0, pb.class_ub[sub])
    q = pb.q_goods(qc)
    U = clip_usage(pb.cm, prob.usage(x), pb.obtained_rows(q))
    return q, U


def _recourse_for(pb: _Problem, q: np.ndarray) -> np.ndarray:
    if pb.cm.n_mappings == 0:
        return np.zeros((pb.rows_supply.shape[0], 0))
    obt = pb.obtained_rows(q)
    prob = build_recourse_lp(pb.cm, pb.Zd * pb.cm.base[None, :], pb.w, pb.row_of, obtained=obt)
    x = solve_highs(prob)
    return clip_usage(pb.cm, prob.usage(x), obt)


def _value(pb: _Problem, q: np.ndarray) -> tuple[float, np.ndarray]:
    U = _recourse_for(pb, q)
    return weighted_sum(pb.score(q, U), pb.w), U


def _better(v: float, key, best_v: float, best_key) -> bool:
    tol = TIE_RTOL * max(1.0, abs(v), abs(best_v))
    if v > best_v + tol:
        return True
    if v < best_v - tol:
        return False
    return key < best_key


def _subset_key(pb: _Problem, q: np.ndarray):
    ordered = tuple(g for g, v in zip(pb.cm.produced_ids, q) if v > 1e-9)
    return (len(ordered), ordered)


def _subsets(n: int):
    for r in range(n + 1):
        yield from itertools.combinations(range(n), r)


def _run_subset_lp(pb: _Problem, cfg: OptimizerConfig):
    best = None
    trace, values = [], {}
    for it, subset in enumerate(_subsets(len(pb.classes))):
        if any(pb.class_ub[c] <= 0 for c in subset):
            continue
        q, U = _solve_subset(pb, subset)
        v = weighted_sum(pb.score(q, U), pb.w)
        values[tuple(pb.names[c] for c in subset)] = v
        key = _subset_key(pb, q)
        if best is None or _better(v, key, best[0], best[1]):
            best = (v, key, q, U)
        trace.append((it, best[0]))
    return best[2], best[3], trace, values, False


def _run_subset_nm(pb: _Problem, cfg: OptimizerConfig):
    rng = np.random.default_rng(cfg.seed)
    best = None
    trace, values = [], {}
    it = 0
    exhausted = False
    for subset in _subsets(len(pb.classes)):
        if any(pb.class_ub[c] <= 0 for c in subset):
            continue
        sub = list(subset)
        scale = np.maximum(pb.init[sub], 1.0)
        ub = pb.class_ub[sub] / scale

        def full(z):
            qc = np.zeros(len(pb.classes))
            qc[sub] = np.clip(np.abs(z), 0.0, ub) * scale
            return pb.q_goods(qc)

        def f(z):
            return -_value(pb, full(z))[0]

        if not sub:
            q = full(np.zeros(0))
            v, U = _value(pb, q)
        else:
            center = np.minimum(np.ones(len(sub)), ub)
            z_best, f_best = center, f(center)
            for r in range(cfg.restarts + 1):
                start = z_best if r == 0 else np.abs(z_best * (1 + cfg.spread * rng.standard_normal(len(sub))))
                simplex = np.vstack([start] + [start + cfg.spread * np.eye(len(sub))[k] * max(start[k], 0.1)
                                               for k in range(len(sub))])
                res = sciopt.minimize(f, start, method="Nelder-Mead",
                                      options={"initial_simplex": simplex, "maxfev": cfg.budget,
                                               "xatol": 1e-7, "fatol": 1e-9 * max(1.0, abs(f_best))})
                exhausted |= res.nfev >= cfg.budget
                if res.fun < f_best:
                    z_best, f_best = res.x, res.fun
            q = full(z_best)
            v, U = _value(pb, q)
        values[tuple(pb.names[c] for c in subset)] = v
        key = _subset_key(pb, q)
        if best is None or _better(v, key, best[0], best[1]):
            best = (v, key, q, U)
        trace.append((it, best[0]))
        it += 1
    return best[2], best[3], trace, values, exhausted


def _run_annealing(pb: _Problem, cfg: OptimizerConfig):
    rng = np.random.default_rng(cfg.seed)
    C = len(pb.classes)
    cur = np.minimum(pb.init.copy(), pb.class_ub)
    cur_v, cur_U = _value(pb, pb.q_goods(cur))
    best = (cur_v, cur.copy(), cur_U)
    T = cfg.t0 * max(1.0, abs(cur_v))
    trace = [(0, cur_v)]
    evals = 1
    for step in range(1, cfg.steps + 1):
        if evals >= cfg.budget:
            break
        cand = cur.copy()
        c = int(rng.integers(C)) if C else 0
        if C:
            if rng.random() < 0.2:
                cand[c] = 0.0 if cand[c] > 0 else pb.init[c]
            else:
                base = cand[c] if cand[c] > 0 else pb.init[c]
                cand[c] = base * math.exp(cfg.spread * rng.standard_normal())
            cand = np.clip(cand, 0.0, pb.class_ub)
        v, U = _value(pb, pb.q_goods(cand))
        evals += 1
        if v >= cur_v or (T > 0 and rng.random() < math.exp((v - cur_v) / T)):
            cur, cur_v, cur_U = cand, v, U
            if v > best[0]:
                best = (v, cand.copy(), U)
        T *= cfg.cooling
        trace.append((step, best[0]))
    exhausted = evals >= cfg.budget
    return pb.q_goods(best[1]), best[2], trace, {}, exhausted


def optimize(spec: MarketSpec, scenarios: ScenarioSet, config: OptimizerConfig = OptimizerConfig(),
             reference: dict[str, float] | None = None) -> OptimizationResult:
    """Best stage-1 orders for ``spec`` on the sample ``scenarios``."""
    if reference is None and any(isinstance(c, SupplyCapFactor) and c.reference is None
                                 for c in spec.constraints):
        plain = replace(spec, constraints=tuple(c for c in spec.constraints
                                                if not isinstance(c, SupplyCapFactor)))
        reference = optimize(plain, scenarios, config).order_qty
    pb = _prepare(spec, scenarios, reference)
    if len(pb.classes) > config.max_goods and config.method != "annealing":
        raise OptimizerError(f"{len(pb.classes)} order classes exceed the subset limit {config.max_goods}; "
                             "use annealing")
    runner = {"subset-lp": _run_subset_lp, "subset-nelder-mead": _run_subset_nm,
              "annealing": _run_annealing}[config.method]
    q, U, trace, values, exhausted = runner(pb, config)
    policy = pb.policy(q, U)
    profits = pb.score(q, U)
    meta = {"method": config.method, "seed": config.seed, "scenario_seed": scenarios.seed,
            "strategy": scenarios.strategy, "prng": scenarios.prng, "stage": int(pb.stage)}
    return OptimizationResult(policy, weighted_sum(profits, pb.w), profits, pb.w, trace, exhausted, values, meta)


def constrained_rerun(spec: MarketSpec, scenarios: ScenarioSet, config: OptimizerConfig, factor: float,
                      goods, unconstrained: OptimizationResult | None = None) -> OptimizationResult:
    """Re-optimize with ``q_i <= factor * q_i(unconstrained)`` on ``goods``."""
    if not 0.0 <= factor <= 1.0:
        raise OptimizerError("constraint factor must lie in [0, 1]")
    base = unconstrained or optimize(spec, scenarios, config)
    ref = base.order_qty
    extra = [SupplyCap(g, factor * ref.get(g, 0.0)) for g in goods]
    return optimize(spec.with_constraints(*extra), scenarios, config)


def evaluate_orders(spec: MarketSpec, scenarios: ScenarioSet, order_qty: dict[str, float]) -> OptimizationResult:
    """Expected profit of fixed orders with optimal recourse at the spec's stage."""
    pb = _prepare(spec, scenarios, dict(order_qty))
    unknown = set(order_qty) - set(pb.cm.produced_ids)
    if unknown:
        raise OptimizerError(f"unknown produced goods {sorted(unknown)}")
    q = np.array([float(order_qty.get(g, 0.0)) for g in pb.cm.produced_ids])
    if np.any(q < 0) or not np.all(np.isfinite(q)):
        raise OptimizerError("order quantities must be finite and >= 0")
    U = _recourse_for(pb, q)
    profits = pb.score(q, U)
    meta = {"method": "fixed-orders", "scenario_seed": scenarios.seed, "stage": int(pb.stage)}
    return OptimizationResult(pb.policy(q, U), weighted_sum(profits, pb.w), profits, pb.w, [], False, {}, meta)
