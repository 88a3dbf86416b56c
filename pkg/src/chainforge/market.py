"""Market specification: produced goods, demanded goods, mappings and builders
for the composition / adaptation / dispersion mapping sets."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping as TMapping, Union

import numpy as np

from . import chipcost
from .uncertainty import Distribution, UncertaintyConfig


class MarketError(ValueError):
    pass


class RecourseStage(enum.IntEnum):
    MAPPING_AFTER_SUPPLY = 2
    MAPPING_AFTER_SUPPLY_AND_DEMAND = 3


@dataclass(frozen=True)
class ProducedGood:
    id: str
    unit_cost: float
    nre: float
    yield_rate: float
    supplier_id: str = "foundry"


@dataclass(frozen=True)
class DemandCurve:
    elasticity: float  # money per unit^2, <= 0
    base_price: float


@dataclass(frozen=True)
class DemandedGood:
    id: str
    base_demand: float
    unit_benefit: float
    unit_shortage_cost: float
    salvage_value: float = 0.0
    demand_curve: DemandCurve | None = None


@dataclass(frozen=True)
class Mapping:
    id: str
    inputs: tuple[tuple[str, float], ...]
    output: str
    cost_per_use: float = 0.0

    @classmethod
    def make(cls, id: str, inputs: TMapping[str, float], output: str, cost: float = 0.0) -> "Mapping":
        return cls(id, tuple(sorted(inputs.items())), output, cost)

    @property
    def input_map(self) -> dict[str, float]:
        return dict(self.inputs)


@dataclass(frozen=True)
class SupplyCap:
    good: str
    cap: float


@dataclass(frozen=True)
class SupplyCapFactor:
    """``q[good] <= factor * reference``; a missing reference means "the unconstrained optimum"."""

    good: str
    factor: float
    reference: float | None = None


@dataclass(frozen=True)
class OrderEquality:
    goods: tuple[str, ...]


OrderConstraint = Union[SupplyCap, SupplyCapFactor, OrderEquality]


@dataclass(frozen=True)
class MarketSpec:
    produced: tuple[ProducedGood, ...]
    demanded: tuple[DemandedGood, ...]
    mappings: tuple[Mapping, ...]
    constraints: tuple[OrderConstraint, ...] = ()
    uncertainty: UncertaintyConfig = field(default_factory=UncertaintyConfig)
    recourse_stage: RecourseStage = RecourseStage.MAPPING_AFTER_SUPPLY_AND_DEMAND

    @property
    def produced_ids(self) -> tuple[str, ...]:
        return tuple(g.id for g in self.produced)

    @property
    def demanded_ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self.demanded)

    @property
    def mapping_ids(self) -> tuple[str, ...]:
        return tuple(m.id for m in self.mappings)

    @property
    def suppliers(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for g in self.produced:
            seen.setdefault(g.supplier_id, None)
        return tuple(seen)

    def good(self, gid: str) -> ProducedGood:
        for g in self.produced:
            if g.id == gid:
                return g
        raise MarketError(f"unknown produced good {gid!r}")

    def demand(self, did: str) -> DemandedGood:
        for d in self.demanded:
            if d.id == did:
                return d
        raise MarketError(f"unknown demanded good {did!r}")

    def with_uncertainty(self, unc: UncertaintyConfig) -> "MarketSpec":
        return replace(self, uncertainty=unc)

    def with_stage(self, stage: RecourseStage) -> "MarketSpec":
        return replace(self, recourse_stage=RecourseStage(stage))

    def with_constraints(self, *extra: OrderConstraint) -> "MarketSpec":
        return replace(self, constraints=self.constraints + tuple(extra))

    def scaled_money(self, k: float) -> "MarketSpec":
        """Every monetary parameter multiplied by ``k``."""
        prod = tuple(replace(g, unit_cost=g.unit_cost * k, nre=g.nre * k) for g in self.produced)
        dem = tuple(
            replace(
                d,
                unit_benefit=d.unit_benefit * k,
                unit_shortage_cost=d.unit_shortage_cost * k,
                salvage_value=d.salvage_value * k,
                demand_curve=None if d.demand_curve is None else DemandCurve(
                    d.demand_curve.elasticity * k, d.demand_curve.base_price * k),
            )
            for d in self.demanded
        )
        maps = tuple(replace(m, cost_per_use=m.cost_per_use * k) for m in self.mappings)
        return replace(self, produced=prod, demanded=dem, mappings=maps)


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


def validate(spec: MarketSpec) -> list[Violation]:
    out: list[Violation] = []

    def bad(path, msg):
        out.append(Violation(path, msg))

    for kind, items in (("produced", spec.produced), ("demanded", spec.demanded),
                        ("mappings", spec.mappings)):
        seen = set()
        for i, it in enumerate(items):
            if it.id in seen:
                bad(f"{kind}[{i}].id", f"duplicate id {it.id!r}")
            seen.add(it.id)

    for i, g in enumerate(spec.produced):
        p = f"produced[{i}]({g.id})"
        if not np.isfinite(g.unit_cost) or g.unit_cost < 0:
            bad(f"{p}.unit_cost", "must be finite and >= 0")
        if not np.isfinite(g.nre) or g.nre < 0:
            bad(f"{p}.nre", "must be finite and >= 0")
        if not (0.0 < g.yield_rate <= 1.0):
            bad(f"{p}.yield_rate", f"must lie in (0, 1], got {g.yield_rate}")

    for i, d in enumerate(spec.demanded):
        p = f"demanded[{i}]({d.id})"
        if not np.isfinite(d.base_demand) or d.base_demand < 0:
            bad(f"{p}.base_demand", "must be finite and >= 0")
        if d.unit_benefit < 0:
            bad(f"{p}.unit_benefit", "must be >= 0")
        if d.unit_shortage_cost < 0:
            bad(f"{p}.unit_shortage_cost", "must be >= 0")
        if not (0.0 <= d.salvage_value < d.unit_benefit) and not (d.salvage_value == 0.0 == d.unit_benefit):
            bad(f"{p}.salvage_value", "must satisfy 0 <= salvage < unit_benefit")
        if d.demand_curve is not None:
            if d.demand_curve.elasticity > 0:
                bad(f"{p}.demand_curve.elasticity", "must be <= 0 (price falls as more is sold)")
            if d.demand_curve.base_price < 0:
                bad(f"{p}.demand_curve.base_price", "must be >= 0")

    pids = set(spec.produced_ids)
    dids = set(spec.demanded_ids)
    for i, m in enumerate(spec.mappings):
        p = f"mappings[{i}]({m.id})"
        if not any(c > 0 for _, c in m.inputs):
            bad(f"{p}.inputs", "needs at least one input with a positive count")
        for gid, c in m.inputs:
            if gid not in pids:
                bad(f"{p}.inputs.{gid}", f"unknown produced good {gid!r}")
            if c < 0 or not np.isfinite(c):
                bad(f"{p}.inputs.{gid}", "count must be finite and >= 0")
        if m.output not in dids:
            bad(f"{p}.output", f"unknown demanded good {m.output!r}")
        if m.cost_per_use < 0:
            bad(f"{p}.cost_per_use", "must be >= 0")

    for i, c in enumerate(spec.constraints):
        p = f"constraints[{i}]"
        goods = c.goods if isinstance(c, OrderEquality) else (c.good,)
        for gid in goods:
            if gid not in pids:
                bad(p, f"unknown produced good {gid!r}")
        if isinstance(c, SupplyCapFactor) and not (0.0 <= c.factor <= 1.0):
            bad(f"{p}.factor", f"must lie in [0, 1], got {c.factor}")
        if isinstance(c, SupplyCap) and c.cap < 0:
            bad(f"{p}.cap", "must be >= 0")
        if isinstance(c, OrderEquality) and len(set(c.goods)) < 2:
            bad(f"{p}.goods", "order equality needs at least two goods")

    suppliers = set(spec.suppliers)
    for key in spec.uncertainty.supply:
        if key not in suppliers:
            bad(f"uncertainty.supply.{key}", "unknown supplier id")
    for key in spec.uncertainty.demand:
        if key not in dids:
            bad(f"uncertainty.demand.{key}", "unknown demanded good")
    for gid in spec.uncertainty.correlated:
        if gid not in dids:
            bad("uncertainty.correlated", f"unknown demanded good {gid!r}")
    out += [Violation(p, m) for p, m in spec.uncertainty.check()]

    try:
        RecourseStage(spec.recourse_stage)
    except ValueError:
        bad("recourse_stage", "must be 2 (after supply) or 3 (after supply and demand)")
    return out


def require_valid(spec: MarketSpec) -> MarketSpec:
    problems = validate(spec)
    if problems:
        raise MarketError("invalid market spec: " + "; ".join(map(str, problems)))
    return spec


# --------------------------------------------------------------------------
# builders


def core_id(cores: int) -> str:
    return f"{cores}-core"


def build_baseline(core_counts: Iterable[int], params: chipcost.CostParams) -> MarketSpec:
    """One produced and one demanded good per core count, joined by identity mappings."""
    counts = list(core_counts)
    if not counts:
        raise MarketError("core_counts must not be empty")
    if len(set(counts)) != len(counts):
        raise MarketError(f"duplicate core counts in {counts}")
    produced, demanded, mappings = [], [], []
    for k in counts:
        econ = chipcost.chip_economics(k, params)
        gid = core_id(k)
        produced.append(ProducedGood(gid, econ.unit_cost, econ.nre, econ.yield_rate))
        demanded.append(DemandedGood(gid, params.base_demand, econ.unit_benefit, econ.shortage_cost))
        mappings.append(Mapping.make(f"id:{gid}", {gid: 1.0}, gid))
    return require_valid(MarketSpec(tuple(produced), tuple(demanded), tuple(mappings)))


def _add_mappings(spec: MarketSpec, new: list[Mapping]) -> MarketSpec:
    have = set(spec.mapping_ids)
    extra = tuple(m for m in new if m.id not in have)
    return require_valid(replace(spec, mappings=spec.mappings + extra))


def _need(spec: MarketSpec, ids: Iterable[str], role: str) -> None:
    pids, dids = set(spec.produced_ids), set(spec.demanded_ids)
    missing = [g for g in ids if g not in pids or g not in dids]
    if missing:
        raise MarketError(f"{role} needs produced and demanded goods {missing}")


INTERPOSER = "interposer"


def add_composition(spec: MarketSpec, interposer_cost_16: float, interposer_as_good: bool = False,
                    interposer_nre: float = 0.0) -> MarketSpec:
    """Chiplet compositions into 16- and 8-core chips.

    The 8-core composition uses an interposer of half the area, so it costs half
    as much.  With ``interposer_as_good`` the interposer becomes a produced good
    (one unit = one 16-core-sized interposer) and the mappings carry no cost.
    """
    c16, c8, c4 = core_id(16), core_id(8), core_id(4)
    _need(spec, (c16, c8, c4), "composition")
    g16, g8 = interposer_cost_16, interposer_cost_16 / 2.0
    recipes = [
        ("comp:2x8->16", {c8: 2.0}, c16, 1.0),
        ("comp:4x4->16", {c4: 4.0}, c16, 1.0),
        ("comp:1x8+2x4->16", {c8: 1.0, c4: 2.0}, c16, 1.0),
        ("comp:2x4->8", {c4: 2.0}, c8, 0.5),
    ]
    if interposer_as_good:
        if INTERPOSER not in spec.produced_ids:
            spec = replace(spec, produced=spec.produced + (
                ProducedGood(INTERPOSER, interposer_cost_16, interposer_nre, 1.0, "interposer-supplier"),))
        new = [Mapping.make(mid, {**ins, INTERPOSER: share}, out) for mid, ins, out, share in recipes]
    else:
        new = [Mapping.make(mid, ins, out, g16 if share == 1.0 else g8)
               for mid, ins, out, share in recipes]
    return _add_mappings(spec, new)


def add_adaptation(spec: MarketSpec) -> MarketSpec:
    """Larger chips resold as smaller ones at no mapping cost."""
    c16, c8, c4 = core_id(16), core_id(8), core_id(4)
    _need(spec, (c16, c8, c4), "adaptation")
    new = [
        Mapping.make("adapt:16->8", {c16: 1.0}, c8),
        Mapping.make("adapt:16->4", {c16: 1.0}, c4),
        Mapping.make("adapt:8->4", {c8: 1.0}, c4),
    ]
    return _add_mappings(spec, new)


class DispersionMode(enum.Enum):
    UNIQUE_PER_GOOD = "unique"
    TWO_SUPPLIERS_ALL = "two"


def add_dispersion(spec: MarketSpec, mode: DispersionMode | str, nre_share: float = 0.0) -> MarketSpec:
    """Spread supply over independent suppliers.

    ``unique``: every produced good gets its own supplier (same distribution as
    before).  ``two``: every produced good is cloned into ``@A`` and ``@B``
    variants from two suppliers, ordered in equal amounts; the ``@B`` clone's
    NRE is scaled by ``1 - nre_share``.
    """
    mode = DispersionMode(mode)
    if not 0.0 <= nre_share <= 1.0:
        raise MarketError("nre_share must lie in [0, 1]")
    unc = spec.uncertainty
    if mode is DispersionMode.UNIQUE_PER_GOOD:
        produced = tuple(replace(g, supplier_id=f"{g.supplier_id}/{g.id}") for g in spec.produced)
        supply = {f"{g.supplier_id}/{g.id}": unc.supply_for(g.supplier_id) for g in spec.produced}
        out = replace(spec, produced=produced, uncertainty=replace(unc, supply=supply))
        return require_valid(out)

    produced, supply, constraints = [], {}, list(spec.constraints)
    rename: dict[str, tuple[str, str]] = {}
    for g in spec.produced:
        a, b = f"{g.id}@A", f"{g.id}@B"
        sa, sb = f"{g.supplier_id}@A", f"{g.supplier_id}@B"
        produced.append(replace(g, id=a, supplier_id=sa))
        produced.append(replace(g, id=b, supplier_id=sb, nre=g.nre * (1.0 - nre_share)))
        supply[sa] = unc.supply_for(g.supplier_id)
        supply[sb] = unc.supply_for(g.supplier_id)
        rename[g.id] = (a, b)
        constraints.append(OrderEquality((a, b)))
    constraints = [_rename_constraint(c, rename) for c in constraints]

    mappings = []
    for m in spec.mappings:
        splits = []
        for gid, cnt in m.inputs:
            a, b = rename[gid]
            if float(cnt).is_integer():
                n = int(cnt)
                splits.append([((a, float(n - k)), (b, float(k))) for k in range(n + 1)])
            else:
                splits.append([((a, cnt), (b, 0.0)), ((a, 0.0), (b, cnt))])
        for combo in itertools.product(*splits):
            ins = {}
            tag = []
            for (ga, ca), (gb, cb) in combo:
                if ca:
                    ins[ga] = ca
                if cb:
                    ins[gb] = cb
                tag.append(f"A{ca:g}B{cb:g}")
            if all(t.endswith("B0") for t in tag):
                suffix = "A"
            elif all(t.startswith("A0") for t in tag):
                suffix = "B"
            else:
                suffix = "mix:" + ",".join(tag)
            mappings.append(Mapping.make(f"{m.id}@{suffix}", ins, m.output, m.cost_per_use))
    out = replace(spec, produced=tuple(produced), mappings=tuple(mappings),
                  constraints=tuple(constraints), uncertainty=replace(unc, supply=supply))
    return require_valid(out)


def _rename_constraint(c: OrderConstraint, rename: dict[str, tuple[str, str]]) -> OrderConstraint:
    if isinstance(c, OrderEquality):
        goods = []
        for g in c.goods:
            goods.extend(rename.get(g, (g,)))
        # an equality over originals becomes one over all clones
        return OrderEquality(tuple(dict.fromkeys(goods)))
    if c.good in rename:
        # caps on the original apply to each clone equally
        return replace(c, good=rename[c.good][0])
    return c


def with_salvage_factor(spec: MarketSpec, factor: float) -> MarketSpec:
    """Salvage of each demanded good = factor x unit cost of the same-named produced chip."""
    costs = {g.id: g.unit_cost for g in spec.produced}
    dem = []
    for d in spec.demanded:
        h = factor * costs.get(d.id, 0.0)
        dem.append(replace(d, salvage_value=min(h, np.nextafter(d.unit_benefit, 0.0))))
    return require_valid(replace(spec, demanded=tuple(dem)))


def with_demand_curves(spec: MarketSpec) -> MarketSpec:
    """Linear demand curves whose revenue peaks at base demand sold at the old unit benefit."""
    dem = []
    for d in spec.demanded:
        e = -d.unit_benefit / d.base_demand if d.base_demand > 0 else 0.0
        dem.append(replace(d, demand_curve=DemandCurve(e, d.unit_benefit)))
    return require_valid(replace(spec, demanded=tuple(dem)))


def build_multi_isa(cost_scale: float, unit_cost: float = 1.0, nre: float = 1e7,
                    base_demand: float = 1e8, yield_rate: float = 0.9) -> MarketSpec:
    """Two single-ISA microcontrollers plus one multi-ISA part serving both demands.

    ``cost_scale`` multiplies the multi-ISA part's unit cost and NRE.
    """
    ben = chipcost.unit_benefit(unit_cost, nre, base_demand)
    produced = (
        ProducedGood("isa1", unit_cost, nre, yield_rate),
        ProducedGood("isa2", unit_cost, nre, yield_rate),
        ProducedGood("multi-isa", unit_cost * cost_scale, nre * cost_scale, yield_rate),
    )
    demanded = (
        DemandedGood("isa1", base_demand, ben, ben),
        DemandedGood("isa2", base_demand, ben, ben),
    )
    mappings = (
        Mapping.make("id:isa1", {"isa1": 1.0}, "isa1"),
        Mapping.make("id:isa2", {"isa2": 1.0}, "isa2"),
        Mapping.make("multi->isa1", {"multi-isa": 1.0}, "isa1"),
        Mapping.make("multi->isa2", {"multi-isa": 1.0}, "isa2"),
    )
    return require_valid(MarketSpec(produced, demanded, mappings))


def set_uncertainty(spec: MarketSpec, supply: Distribution | None = None,
                    demand: Distribution | None = None) -> MarketSpec:
    """Same distribution for every supplier and/or every demanded good."""
    unc = spec.uncertainty
    if supply is not None:
        unc = replace(unc, supply={s: supply for s in spec.suppliers})
    if demand is not None:
        unc = replace(unc, demand={d: demand for d in spec.demanded_ids})
    return replace(spec, uncertainty=unc)
