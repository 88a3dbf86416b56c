"""Profit accounting per scenario, expectation over scenario sets and report statistics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .market import MarketSpec, RecourseStage
from .uncertainty import Scenario, ScenarioSet

ORDER_EPS = 1e-9
USAGE_TOL = 1e-6


class InfeasibleUsageError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CompiledMarket:
    """Array view of a :class:`MarketSpec` in fixed id order."""

    produced_ids: tuple[str, ...]
    demanded_ids: tuple[str, ...]
    mapping_ids: tuple[str, ...]
    suppliers: tuple[str, ...]
    supplier_of: np.ndarray  # (P,) index into suppliers
    u_cost: np.ndarray
    nre: np.ndarray
    yld: np.ndarray
    m_in: np.ndarray  # (J, P)
    out_idx: np.ndarray  # (J,)
    gamma: np.ndarray
    base: np.ndarray
    u_ben: np.ndarray
    u_sc: np.ndarray
    salv: np.ndarray
    elasticity: np.ndarray  # nan where no curve
    base_price: np.ndarray

    @property
    def n_produced(self) -> int:
        return len(self.produced_ids)

    @property
    def n_demanded(self) -> int:
        return len(self.demanded_ids)

    @property
    def n_mappings(self) -> int:
        return len(self.mapping_ids)

    @property
    def has_curve(self) -> np.ndarray:
        return ~np.isnan(self.elasticity)

    @property
    def m_out(self) -> np.ndarray:
        M = np.zeros((self.n_mappings, self.n_demanded))
        M[np.arange(self.n_mappings), self.out_idx] = 1.0
        return M

    def demand_ceiling(self, dem: np.ndarray) -> np.ndarray:
        """Quantity the market absorbs: realized demand, or where the curve price hits zero."""
        dem = np.asarray(dem, dtype=float)
        curve = self.has_curve & (self.elasticity < 0)
        if not curve.any():
            return dem
        extra = np.where(curve, -self.base_price / np.where(curve, self.elasticity, -1.0), 0.0)
        return dem + extra


def compile_market(spec: MarketSpec) -> CompiledMarket:
    pids, dids = spec.produced_ids, spec.demanded_ids
    suppliers = spec.suppliers
    pidx = {g: i for i, g in enumerate(pids)}
    didx = {d: i for i, d in enumerate(dids)}
    J = len(spec.mappings)
    m_in = np.zeros((J, len(pids)))
    for j, m in enumerate(spec.mappings):
        for g, c in m.inputs:
            m_in[j, pidx[g]] += c
    curve_e = np.array([np.nan if d.demand_curve is None else d.demand_curve.elasticity
                        for d in spec.demanded], dtype=float)
    curve_p = np.array([np.nan if d.demand_curve is None else d.demand_curve.base_price
                        for d in spec.demanded], dtype=float)
    arr = lambda xs: np.array(list(xs), dtype=float)
    return CompiledMarket(
        produced_ids=pids,
        demanded_ids=dids,
        mapping_ids=spec.mapping_ids,
        suppliers=suppliers,
        supplier_of=np.array([suppliers.index(g.supplier_id) for g in spec.produced], dtype=int),
        u_cost=arr(g.unit_cost for g in spec.produced),
        nre=arr(g.nre for g in spec.produced),
        yld=arr(g.yield_rate for g in spec.produced),
        m_in=m_in,
        out_idx=np.array([didx[m.output] for m in spec.mappings], dtype=int),
        gamma=arr(m.cost_per_use for m in spec.mappings),
        base=arr(d.base_demand for d in spec.demanded),
        u_ben=arr(d.unit_benefit for d in spec.demanded),
        u_sc=arr(d.unit_shortage_cost for d in spec.demanded),
        salv=arr(d.salvage_value for d in spec.demanded),
        elasticity=curve_e,
        base_price=curve_p,
    )


def scenario_arrays(cm: CompiledMarket, scenarios: ScenarioSet) -> tuple[np.ndarray, np.ndarray]:
    """Joint supply (K, S) and demand (K, D) multipliers in the compiled id order."""
    s_cols = [scenarios.supply_ids.index(s) if s in scenarios.supply_ids else -1 for s in cm.suppliers]
    d_cols = [scenarios.demand_ids.index(d) if d in scenarios.demand_ids else -1 for d in cm.demanded_ids]
    K = len(scenarios)
    js, jd = scenarios.joint_supply, scenarios.joint_demand
    Zs = np.column_stack([js[:, c] if c >= 0 else np.ones(K) for c in s_cols]) if s_cols else np.ones((K, 0))
    Zd = np.column_stack([jd[:, c] if c >= 0 else np.ones(K) for c in d_cols]) if d_cols else np.ones((K, 0))
    return Zs.reshape(K, len(s_cols)), Zd.reshape(K, len(d_cols))


# --------------------------------------------------------------------------
# policies and breakdowns


@dataclass(frozen=True, eq=False)
class DecisionPolicy:
    """Stage-1 orders plus mapping usages.

    ``usage`` has one row per joint scenario (stage 3) or one row per supply
    realization (stage 2), columns in mapping order.
    """

    order_qty: Mapping[str, float]
    ordered: Mapping[str, int]
    usage: np.ndarray
    stage: RecourseStage = RecourseStage.MAPPING_AFTER_SUPPLY_AND_DEMAND
    mapping_ids: tuple[str, ...] = ()

    def __post_init__(self):
        for g, v in self.order_qty.items():
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"order quantity of {g!r} must be finite and >= 0, got {v}")
            if int(self.ordered.get(g, 0)) != int(v > ORDER_EPS):
                raise ValueError(f"ordered flag of {g!r} disagrees with its quantity {v}")
        u = np.asarray(self.usage, dtype=float)
        if u.ndim != 2 or not np.all(np.isfinite(u)) or np.any(u < 0):
            raise ValueError("mapping usage must be a finite, non-negative 2-D array")
        object.__setattr__(self, "usage", u)

    @classmethod
    def from_orders(cls, order_qty: Mapping[str, float], usage, stage=RecourseStage.MAPPING_AFTER_SUPPLY_AND_DEMAND,
                    mapping_ids: Sequence[str] = ()) -> "DecisionPolicy":
        q = {g: float(v) for g, v in order_qty.items()}
        return cls(q, {g: int(v > ORDER_EPS) for g, v in q.items()}, np.atleast_2d(np.asarray(usage, dtype=float)),
                   RecourseStage(stage), tuple(mapping_ids))

    def q_vector(self, cm: CompiledMarket) -> np.ndarray:
        unknown = set(self.order_qty) - set(cm.produced_ids)
        if unknown:
            raise ValueError(f"policy orders unknown goods {sorted(unknown)}")
        return np.array([self.order_qty.get(g, 0.0) for g in cm.produced_ids], dtype=float)

    def o_vector(self, cm: CompiledMarket) -> np.ndarray:
        return np.array([float(self.ordered.get(g, 0)) for g in cm.produced_ids])

    def joint_usage(self, scenarios: ScenarioSet) -> np.ndarray:
        if self.stage == RecourseStage.MAPPING_AFTER_SUPPLY:
            if self.usage.shape[0] != scenarios.n_supply:
                raise ValueError(f"stage-2 usage needs {scenarios.n_supply} rows, got {self.usage.shape[0]}")
            return np.repeat(self.usage, scenarios.n_demand, axis=0)
        if self.usage.shape[0] == 1 and len(scenarios) > 1:
            return np.repeat(self.usage, len(scenarios), axis=0)
        if self.usage.shape[0] != len(scenarios):
            raise ValueError(f"stage-3 usage needs {len(scenarios)} rows, got {self.usage.shape[0]}")
        return self.usage


@dataclass(frozen=True)
class ProfitBreakdown:
    received: dict[str, float]
    obtained: dict[str, float]
    used: dict[str, float]
    built: dict[str, float]
    demanded: dict[str, float]
    sold: dict[str, float]
    tc_prod: float
    tc_map: float
    tc_ben: float
    tc_short: float
    tc_salv: float
    profit: float


def _identity(tc_ben, tc_salv, tc_prod, tc_map, tc_short):
    return tc_ben + tc_salv - tc_prod - tc_map - tc_short


def evaluate_batch(cm: CompiledMarket, q: np.ndarray, o: np.ndarray, U: np.ndarray,
                   Zs: np.ndarray, Zd: np.ndarray, check: bool = True) -> dict[str, np.ndarray]:
    """Vectorized accounting over K scenarios; ``U`` is (K, J), ``Zs`` (K, S), ``Zd`` (K, D)."""
    U = np.asarray(U, dtype=float)
    K = U.shape[0]
    recv = q[None, :] * Zs[:, cm.supplier_of] if cm.n_produced else np.zeros((K, 0))
    obt = recv * cm.yld[None, :]
    used = U @ cm.m_in
    if check:
        over = used - obt > USAGE_TOL * np.maximum(1.0, obt)
        if over.any():
            k, i = np.argwhere(over)[0]
            raise InfeasibleUsageError(
                f"mapping usage consumes {used[k, i]:.9g} of {cm.produced_ids[i]!r} "
                f"but only {obt[k, i]:.9g} were obtained (scenario {k})")
    built = np.zeros((K, cm.n_demanded))
    np.add.at(built.T, cm.out_idx, U.T)
    dem = Zd * cm.base[None, :]
    ceiling = cm.demand_ceiling(dem)
    sold = np.minimum(ceiling, built)

    tc_prod = recv @ cm.u_cost + float(o @ cm.nre)
    tc_map = U @ cm.gamma
    curve = cm.has_curve
    if curve.any():
        e = np.where(curve, cm.elasticity, 0.0)
        p0 = np.where(curve, cm.base_price, 0.0)
        price = np.where(curve[None, :], e * (sold - dem) + p0, cm.u_ben[None, :])
        tc_ben = (price * sold).sum(axis=1)
        short_units = np.maximum(dem - sold, 0.0)
    else:
        tc_ben = sold @ cm.u_ben
        short_units = dem - sold
    tc_short = short_units @ cm.u_sc
    tc_salv = (built - sold) @ cm.salv
    profit = _identity(tc_ben, tc_salv, tc_prod, tc_map, tc_short)
    return dict(received=recv, obtained=obt, used=used, built=built, demanded=ceiling, sold=sold,
                tc_prod=tc_prod, tc_map=tc_map, tc_ben=tc_ben, tc_short=tc_short, tc_salv=tc_salv,
                profit=profit)


def _usage_vector(cm: CompiledMarket, usage) -> np.ndarray:
    if isinstance(usage, Mapping):
        unknown = set(usage) - set(cm.mapping_ids)
        if unknown:
            raise ValueError(f"usage names unknown mappings {sorted(unknown)}")
        return np.array([float(usage.get(m, 0.0)) for m in cm.mapping_ids])
    return np.asarray(usage, dtype=float).reshape(cm.n_mappings)


def evaluate_scenario(spec: MarketSpec, order_qty: Mapping[str, float], usage, scenario: Scenario,
                      cm: CompiledMarket | None = None) -> ProfitBreakdown:
    """Profit breakdown of one scenario.  ``usage`` maps mapping id to uses (or is a vector)."""
    cm = cm or compile_market(spec)
    q = np.array([float(order_qty.get(g, 0.0)) for g in cm.produced_ids])
    if np.any(q < 0) or not np.all(np.isfinite(q)):
        raise ValueError("order quantities must be finite and >= 0")
    o = (q > ORDER_EPS).astype(float)
    U = _usage_vector(cm, usage)[None, :]
    if np.any(U < 0):
        raise ValueError("mapping usage must be >= 0")
    Zs = np.array([[scenario.supply.get(s, 1.0) for s in cm.suppliers]]).reshape(1, len(cm.suppliers))
    Zd = np.array([[scenario.demand.get(d, 1.0) for d in cm.demanded_ids]]).reshape(1, cm.n_demanded)
    r = evaluate_batch(cm, q, o, U, Zs, Zd)
    P, D = cm.produced_ids, cm.demanded_ids
    vec = lambda a, ids: {k: float(v) for k, v in zip(ids, a[0])}
    return ProfitBreakdown(
        received=vec(r["received"], P), obtained=vec(r["obtained"], P), used=vec(r["used"], P),
        built=vec(r["built"], D), demanded=vec(r["demanded"], D), sold=vec(r["sold"], D),
        tc_prod=float(r["tc_prod"][0]), tc_map=float(r["tc_map"][0]), tc_ben=float(r["tc_ben"][0]),
        tc_short=float(r["tc_short"][0]), tc_salv=float(r["tc_salv"][0]), profit=float(r["profit"][0]),
    )


def weighted_sum(values: np.ndarray, weights: np.ndarray) -> float:
    """Correctly rounded, order-independent weighted sum."""
    return math.fsum((np.asarray(weights, dtype=float) * np.asarray(values, dtype=float)).tolist())


def scenario_profits(spec: MarketSpec, policy: DecisionPolicy, scenarios: ScenarioSet,
                     cm: CompiledMarket | None = None) -> np.ndarray:
    cm = cm or compile_market(spec)
    Zs, Zd = scenario_arrays(cm, scenarios)
    U = policy.joint_usage(scenarios)
    return evaluate_batch(cm, policy.q_vector(cm), policy.o_vector(cm), U, Zs, Zd)["profit"]


def expected_profit(spec: MarketSpec, policy: DecisionPolicy, scenarios: ScenarioSet,
                    cm: CompiledMarket | None = None) -> float:
    return weighted_sum(scenario_profits(spec, policy, scenarios, cm), scenarios.weights)


# --------------------------------------------------------------------------
# reports


def weighted_quantile(values, weights, p: float) -> float:
    """Linear interpolation between order statistics placed at cumulative weight
    before each point; equals numpy's default method for equal weights."""
    x = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    if x.size == 1:
        return float(x[0])
    if np.all(w == w[0]):
        return float(np.quantile(x, p))
    pos = np.concatenate([[0.0], np.cumsum(w)[:-1]])
    pos /= pos[-1]
    return float(np.interp(p, pos, x))


def lambda_metric(intervention_mean: float, baseline_mean: float, baseline_zero_mean: float,
                  gain0: float = 0.0) -> float | None:
    """Share (in %) of the uncertainty loss recovered; None when the loss is zero."""
    den = baseline_zero_mean - baseline_mean
    if abs(den) < 1e-9 * abs(baseline_zero_mean) or den == 0.0:
        return None
    return 100.0 * (intervention_mean - gain0 - baseline_mean) / den


CSV_COLUMNS = ["experiment", "parameter", "mean", "std", "min", "q1", "median", "q3", "max",
               "n_outliers", "lambda"]


@dataclass
class ProfitReport:
    profits: np.ndarray
    weights: np.ndarray
    mean: float
    std: float
    min: float
    max: float
    median: float
    q1: float
    q3: float
    outliers: tuple[float, ...]
    order_shares: dict[str, float] = field(default_factory=dict)
    lam: float | None = None
    lam_yield_normalized: float | None = None

    @property
    def lambda_defined(self) -> bool:
        return self.lam is not None

    def to_dict(self) -> dict:
        return {
            "mean": self.mean, "std": self.std, "min": self.min, "q1": self.q1, "median": self.median,
            "q3": self.q3, "max": self.max, "outliers": list(self.outliers),
            "order_shares": dict(self.order_shares), "lambda": self.lam,
            "lambda_yield_normalized": self.lam_yield_normalized,
            "profits": self.profits.tolist(), "weights": self.weights.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def csv_row(self, experiment: str, parameter, goods: Sequence[str] = ()) -> list[str]:
        lam = "" if self.lam is None else repr(float(self.lam))
        row = [experiment, str(parameter)] + [repr(float(v)) for v in (
            self.mean, self.std, self.min, self.q1, self.median, self.q3, self.max)]
        row += [str(len(self.outliers)), lam]
        row += [repr(float(self.order_shares.get(g, 0.0))) for g in goods]
        return row


def report(profits, weights=None, baseline_ref: tuple[float, float] | None = None,
           order_qty: Mapping[str, float] | None = None, gain0: float | None = None) -> ProfitReport:
    """Summary statistics of a weighted profit sample.

    ``baseline_ref`` is (baseline mean, baseline mean at zero uncertainty);
    ``gain0`` enables the yield-normalized lambda.
    """
    p = np.asarray(profits, dtype=float).ravel()
    if p.size == 0:
        raise ValueError("report needs at least one profit")
    w = np.full(p.size, 1.0 / p.size) if weights is None else np.asarray(weights, dtype=float).ravel()
    w = w / w.sum()
    mean = weighted_sum(p, w)
    var = weighted_sum((p - mean) ** 2, w)
    q1, med, q3 = (weighted_quantile(p, w, t) for t in (0.25, 0.5, 0.75))
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    outliers = tuple(float(v) for v in np.sort(p[(p < lo) | (p > hi)]))
    shares = {}
    if order_qty:
        total = math.fsum(order_qty.values())
        shares = {g: (v / total if total > 0 else 0.0) for g, v in order_qty.items()}
    lam = lam_n = None
    if baseline_ref is not None:
        lam = lambda_metric(mean, *baseline_ref)
        if gain0 is not None:
            lam_n = lambda_metric(mean, *baseline_ref, gain0=gain0)
    return ProfitReport(p, w, mean, math.sqrt(max(var, 0.0)), float(p.min()), float(p.max()), med, q1, q3,
                        outliers, shares, lam, lam_n)


def reports_to_csv(rows: Sequence[tuple[str, object, ProfitReport]], goods: Sequence[str]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_COLUMNS + [f"order_share_{g}" for g in goods])
    for exp, param, rep in rows:
        wr.writerow(rep.csv_row(exp, param, goods))
    return buf.getvalue()
