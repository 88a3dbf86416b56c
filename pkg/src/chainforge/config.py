"""YAML configuration: schema checks with path-named errors, and conversion to
cost parameters, markets, optimizer settings and experiment plans."""

from __future__ import annotations

import dataclasses
import json
from importlib import resources
from typing import Any

import yaml

from . import chipcost
from . import market as mk
from .experiments import AXES, INTERVENTIONS, ExperimentPlan
from .orders import OptimizerConfig
from .uncertainty import (Deterministic, Exhaustive, MonteCarlo, Normal, Scaled, Shock, StratifiedEquiProbable,
                          UncertaintyConfig)


class ConfigError(ValueError):
    pass


def default_config_text() -> str:
    return resources.files("chainforge").joinpath("data/default.yaml").read_text(encoding="utf-8")


def load(path: str | None) -> dict:
    if path is None:
        text = default_config_text()
    else:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror or exc})") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path or 'default config'}: not valid YAML: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'default config'}: top level must be a mapping")
    _keys(data, "", {"chipcost", "market", "optimizer", "sampling", "experiments", "oracles"})
    return data


def _keys(d: Any, path: str, allowed: set[str], required: set[str] = frozenset()) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping")
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"{path + '.' if path else ''}{unknown[0]}: unknown key "
                          f"(allowed: {', '.join(sorted(allowed))})")
    missing = sorted(required - set(d))
    if missing:
        raise ConfigError(f"{path + '.' if path else ''}{missing[0]}: required key missing")
    return d


def _num(v, path: str) -> float:
    # YAML 1.1 reads 1e8 (no dot, no sign) as a string
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            pass
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    return float(v)


def _int(v, path: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    return v


def _list(v, path: str) -> list:
    if not isinstance(v, list):
        raise ConfigError(f"{path}: expected a list")
    return v


def _fields(cls) -> dict[str, dataclasses.Field]:
    return {f.name: f for f in dataclasses.fields(cls)}


def _build_dataclass(cls, d: dict, path: str, nested: dict | None = None):
    nested = nested or {}
    fields = _fields(cls)
    _keys(d, path, set(fields))
    kw = {}
    for k, v in d.items():
        p = f"{path}.{k}"
        if k in nested:
            kw[k] = nested[k](v, p)
            continue
        default = fields[k].default
        if isinstance(default, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"{p}: expected true/false")
            kw[k] = v
        elif isinstance(default, int) and not isinstance(default, bool):
            kw[k] = _int(v, p)
        elif isinstance(default, float):
            kw[k] = _num(v, p)
        else:
            kw[k] = v
    try:
        return cls(**kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def cost_params(data: dict) -> chipcost.CostParams:
    block = data.get("chipcost", {}) or {}
    return _build_dataclass(chipcost.CostParams, block, "chipcost",
                            {"interposer": lambda v, p: _build_dataclass(chipcost.InterposerParams, v, p)})


def optimizer_config(data: dict, seed: int | None = None) -> OptimizerConfig:
    cfg = _build_dataclass(OptimizerConfig, data.get("optimizer", {}) or {}, "optimizer")
    return dataclasses.replace(cfg, seed=seed) if seed is not None else cfg


def strategy(d: dict | None, path: str = "sampling"):
    d = d or {}
    _keys(d, path, {"strategy", "n", "n_supply"})
    kind = d.get("strategy", "montecarlo")
    if kind == "montecarlo":
        n = _int(d.get("n", 512), f"{path}.n")
        ns = d.get("n_supply")
        return MonteCarlo(n, None if ns is None else _int(ns, f"{path}.n_supply"))
    if kind == "stratified":
        if "n_supply" in d:
            raise ConfigError(f"{path}.n_supply: only used by montecarlo")
        return StratifiedEquiProbable(_int(d.get("n", 16), f"{path}.n"))
    if kind == "exhaustive":
        if set(d) - {"strategy"}:
            raise ConfigError(f"{path}: exhaustive takes no size")
        return Exhaustive()
    raise ConfigError(f"{path}.strategy: unknown strategy {kind!r} (montecarlo, stratified, exhaustive)")


def distribution(d: dict, path: str):
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError(f"{path}: a distribution needs a 'kind'")
    kind = d["kind"]
    if kind == "deterministic":
        _keys(d, path, {"kind", "value"})
        return Deterministic(_num(d.get("value", 1.0), f"{path}.value"))
    if kind == "normal":
        _keys(d, path, {"kind", "std"}, {"std"})
        return Normal(_num(d["std"], f"{path}.std"))
    if kind == "shock":
        _keys(d, path, {"kind", "p"}, {"p"})
        return Shock(_num(d["p"], f"{path}.p"))
    if kind == "scaled":
        _keys(d, path, {"kind", "factor", "inner"}, {"factor", "inner"})
        return Scaled(distribution(d["inner"], f"{path}.inner"), _num(d["factor"], f"{path}.factor"))
    raise ConfigError(f"{path}.kind: unknown distribution {kind!r}")


def market(data: dict) -> mk.MarketSpec:
    """Explicit market from the ``market`` section."""
    if "market" not in data:
        raise ConfigError("market: section missing")
    m = _keys(data["market"], "market", {"goods", "demands", "mappings", "constraints", "recourse_stage",
                                         "uncertainty"}, {"goods", "demands", "mappings"})
    goods = []
    for i, g in enumerate(_list(m["goods"], "market.goods")):
        p = f"market.goods[{i}]"
        _keys(g, p, {"id", "unit_cost", "nre", "yield_rate", "supplier_id"}, {"id", "unit_cost"})
        goods.append(mk.ProducedGood(str(g["id"]), _num(g["unit_cost"], f"{p}.unit_cost"),
                                     _num(g.get("nre", 0.0), f"{p}.nre"),
                                     _num(g.get("yield_rate", 1.0), f"{p}.yield_rate"),
                                     str(g.get("supplier_id", "foundry"))))
    demands = []
    for i, d in enumerate(_list(m["demands"], "market.demands")):
        p = f"market.demands[{i}]"
        _keys(d, p, {"id", "base_demand", "unit_benefit", "unit_shortage_cost", "salvage_value", "demand_curve"},
              {"id", "base_demand", "unit_benefit"})
        ben = _num(d["unit_benefit"], f"{p}.unit_benefit")
        curve = None
        if d.get("demand_curve") is not None:
            c = _keys(d["demand_curve"], f"{p}.demand_curve", {"elasticity", "base_price"},
                      {"elasticity", "base_price"})
            curve = mk.DemandCurve(_num(c["elasticity"], f"{p}.demand_curve.elasticity"),
                                   _num(c["base_price"], f"{p}.demand_curve.base_price"))
        demands.append(mk.DemandedGood(str(d["id"]), _num(d["base_demand"], f"{p}.base_demand"), ben,
                                       _num(d.get("unit_shortage_cost", ben), f"{p}.unit_shortage_cost"),
                                       _num(d.get("salvage_value", 0.0), f"{p}.salvage_value"), curve))
    maps = []
    for i, mp in enumerate(_list(m["mappings"], "market.mappings")):
        p = f"market.mappings[{i}]"
        _keys(mp, p, {"id", "inputs", "output", "cost_per_use"}, {"id", "inputs", "output"})
        ins = mp["inputs"]
        if not isinstance(ins, dict):
            raise ConfigError(f"{p}.inputs: expected a mapping of good id to count")
        maps.append(mk.Mapping.make(str(mp["id"]), {str(k): _num(v, f"{p}.inputs.{k}") for k, v in ins.items()},
                                    str(mp["output"]), _num(mp.get("cost_per_use", 0.0), f"{p}.cost_per_use")))
    cons = []
    for i, c in enumerate(_list(m.get("constraints", []) or [], "market.constraints")):
        p = f"market.constraints[{i}]"
        kind = c.get("kind") if isinstance(c, dict) else None
        if kind == "supply_cap":
            _keys(c, p, {"kind", "good", "cap"}, {"good", "cap"})
            cons.append(mk.SupplyCap(str(c["good"]), _num(c["cap"], f"{p}.cap")))
        elif kind == "supply_cap_factor":
            _keys(c, p, {"kind", "good", "factor", "reference"}, {"good", "factor"})
            ref = c.get("reference")
            cons.append(mk.SupplyCapFactor(str(c["good"]), _num(c["factor"], f"{p}.factor"),
                                           None if ref is None else _num(ref, f"{p}.reference")))
        elif kind == "order_equality":
            _keys(c, p, {"kind", "goods"}, {"goods"})
            cons.append(mk.OrderEquality(tuple(map(str, _list(c["goods"], f"{p}.goods")))))
        else:
            raise ConfigError(f"{p}.kind: expected supply_cap, supply_cap_factor or order_equality")
    stage = m.get("recourse_stage", 3)
    if stage not in (2, 3):
        raise ConfigError("market.recourse_stage: must be 2 or 3")
    unc = uncertainty(m.get("uncertainty") or {}, "market.uncertainty")
    spec = mk.MarketSpec(tuple(goods), tuple(demands), tuple(maps), tuple(cons), unc, mk.RecourseStage(stage))
    problems = mk.validate(spec)
    if problems:
        raise ConfigError("; ".join(f"market.{v.path}: {v.message}" for v in problems))
    return spec


def uncertainty(u: dict, path: str) -> UncertaintyConfig:
    _keys(u, path, {"supply", "demand", "demand_correlation"})
    sup = {str(k): distribution(v, f"{path}.supply.{k}") for k, v in (u.get("supply") or {}).items()}
    dem = {str(k): distribution(v, f"{path}.demand.{k}") for k, v in (u.get("demand") or {}).items()}
    C, ids = None, ()
    if u.get("demand_correlation") is not None:
        c = _keys(u["demand_correlation"], f"{path}.demand_correlation", {"goods", "matrix"}, {"goods", "matrix"})
        ids = tuple(map(str, _list(c["goods"], f"{path}.demand_correlation.goods")))
        C = tuple(tuple(_num(x, f"{path}.demand_correlation.matrix") for x in _list(row, f"{path}.demand_correlation.matrix"))
                  for row in _list(c["matrix"], f"{path}.demand_correlation.matrix"))
    cfg = UncertaintyConfig(sup, dem, C, ids)
    problems = cfg.check()
    if problems:
        raise ConfigError("; ".join(f"{p}: {m}" for p, m in problems))
    return cfg


_PLAN_KEYS = {"interventions", "axis", "values", "seeds", "sampling", "core_counts", "supply_sigma",
              "demand_sigma", "target_goods", "shock_on", "nre_share", "pcc"}


def plans(data: dict, seed: int | None = None) -> dict[str, ExperimentPlan]:
    exps = data.get("experiments") or {}
    _keys(exps, "experiments", set(exps))
    cost = cost_params(data)
    opt = optimizer_config(data)
    base_strategy = strategy(data.get("sampling"))
    out = {}
    for name, e in exps.items():
        p = f"experiments.{name}"
        _keys(e, p, _PLAN_KEYS)
        ivs = tuple(map(str, _list(e.get("interventions", []) or [], f"{p}.interventions")))
        for iv in ivs:
            if iv not in INTERVENTIONS:
                raise ConfigError(f"{p}.interventions: unknown intervention {iv!r} ({', '.join(INTERVENTIONS)})")
        axis = e.get("axis", "both_sigma")
        if axis not in AXES:
            raise ConfigError(f"{p}.axis: unknown axis {axis!r} ({', '.join(AXES)})")
        values = tuple(_num(v, f"{p}.values") for v in _list(e.get("values", [0.0]), f"{p}.values"))
        seeds = tuple(_int(s, f"{p}.seeds") for s in _list(e.get("seeds", [1]), f"{p}.seeds"))
        if seed is not None:
            seeds = (seed,)
        kw = {}
        for k in ("supply_sigma", "demand_sigma", "nre_share", "pcc"):
            if k in e:
                kw[k] = _num(e[k], f"{p}.{k}")
        if "core_counts" in e:
            kw["core_counts"] = tuple(_int(c, f"{p}.core_counts") for c in _list(e["core_counts"], f"{p}.core_counts"))
        if "target_goods" in e:
            kw["target_goods"] = tuple(map(str, _list(e["target_goods"], f"{p}.target_goods")))
        if "shock_on" in e:
            kw["shock_on"] = str(e["shock_on"])
        strat = strategy(e["sampling"], f"{p}.sampling") if "sampling" in e else base_strategy
        plan = ExperimentPlan(str(name), ivs, axis, values, seeds, strat, cost, optimizer=opt, **kw)
        errs = plan.check()
        if errs:
            raise ConfigError(f"{p}: {'; '.join(errs)}")
        out[str(name)] = plan
    return out


def resolved_json(plan: ExperimentPlan) -> str:
    """Provenance record of a fully resolved plan."""
    d = dataclasses.asdict(plan)
    d["strategy"] = plan.strategy.label()
    return json.dumps(d, sort_keys=True, indent=1, default=str)
