"""Command-line entry point.

Exit codes: 0 success, 1 a check fell outside tolerance, 2 configuration or
usage error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import chipcost, config, oracles
from . import experiments as ex
from .engine import report
from .orders import optimize
from .recourse import optimal_usage_stage3
from .uncertainty import sample

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

COST_TARGETS = {16: 0.12, 8: 0.05, 4: 0.024}
COST_RTOL = 0.15
RATIO_TARGET, RATIO_TOL = 1.71, 0.05


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file (default: the shipped config)")
    p.add_argument("--seed", type=int, help="override every seed")
    p.add_argument("--threads", type=int, help="worker threads (default: CHAINFORGE_THREADS or logical cores)")
    p.add_argument("--out", default="results", help="output directory (default: results)")
    p.add_argument("--dump-lp", metavar="PATH", help="write the first scenario's recourse LP (solve only)")


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chainforge", description="Stochastic supply-chain optimizer for chip firms.")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run named experiment plans")
    p.add_argument("names", nargs="*", help="plan names (default: all)")
    _common(p)
    for name, help_ in (("validate-costs", "print the cost-model calibration table"),
                        ("oracle-check", "run the engine-vs-closed-form grids"),
                        ("solve", "optimize the explicit market of the config"),
                        ("list", "list experiment plans")):
        _common(sub.add_parser(name, help=help_))
    return ap


def cmd_run(data: dict, names: list[str], seed: int | None, out: str, threads: int | None) -> int:
    plans = config.plans(data, seed)
    missing = [n for n in names if n not in plans]
    if missing:
        raise config.ConfigError(f"experiments.{missing[0]}: no such experiment "
                                 f"(have: {', '.join(plans) or 'none'})")
    status = EXIT_OK
    for name in names or list(plans):
        plan = plans[name]
        result = ex.run(plan, threads)
        paths = ex.write_results(result, out)
        prov = os.path.join(out, f"{name}.config.json")
        with open(prov, "w", encoding="utf-8", newline="") as fh:
            fh.write(config.resolved_json(plan))
        print(f"== {name} ({plan.axis}) -> {', '.join(paths + [prov])}")
        print(f"{'parameter':>10} {'seed':>5} {'mean':>14} {'std':>12} {'lambda':>9}")
        for pt in result.points:
            if pt.error:
                print(f"{pt.value:>10g} {pt.seed:>5} ERROR {pt.error}")
                status = EXIT_RUNTIME
                continue
            lam = "n/a" if pt.lam is None else f"{pt.lam:.2f}"
            print(f"{pt.value:>10g} {pt.seed:>5} {pt.report.mean:>14.6g} {pt.report.std:>12.6g} {lam:>9}")
    return status


def cmd_validate_costs(data: dict) -> int:
    params = config.cost_params(data)
    ok = True
    print(f"{'chip':>8} {'unit cost':>10} {'target':>8} {'nre':>12} {'benefit':>10}  check")
    for cores, target in COST_TARGETS.items():
        econ = chipcost.chip_economics(cores, params)
        good = abs(econ.unit_cost / target - 1.0) <= COST_RTOL
        ok &= good
        print(f"{cores:>2}-core   {econ.unit_cost:>10.4f} {target:>8.3f} {econ.nre:>12.2f} "
              f"{econ.unit_benefit:>10.4f}  {'PASS' if good else 'FAIL'} (+/-{COST_RTOL:.0%})")
    ratio = chipcost.composition_validation(params)
    good = abs(ratio - RATIO_TARGET) <= RATIO_TOL
    ok &= good
    print(f"32-core monolithic / 4x8-core chiplets: {ratio:.3f} (target {RATIO_TARGET} +/- {RATIO_TOL})  "
          f"{'PASS' if good else 'FAIL'}")
    ip = chipcost.interposer_cost(16 * params.area_per_core, params)
    print(f"16-core interposer unit cost: {ip:.4f}")
    return EXIT_OK if ok else EXIT_CHECK


_BREAK_EVEN_KEYS = {"n1", "n2", "c1", "c2", "r", "t", "step", "points"}


def cmd_oracle_check(data: dict) -> int:
    block = config._keys(data.get("oracles") or {}, "oracles", {"break_even"})
    be = config._keys(block.get("break_even") or {}, "oracles.break_even", _BREAK_EVEN_KEYS)
    kw = {k: (config._int(v, f"oracles.break_even.{k}") if k == "points" else
              config._num(v, f"oracles.break_even.{k}")) for k, v in be.items()}
    results = oracles.run_all(kw)
    print(oracles.format_table(results))
    failed = [r.name for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} checks ok")
    return EXIT_OK if not failed else EXIT_CHECK


def cmd_solve(data: dict, seed: int | None, dump_lp: str | None) -> int:
    spec = config.market(data)
    opt = config.optimizer_config(data, seed)
    strat = config.strategy(data.get("sampling"))
    scen = sample(spec.uncertainty, strat, opt.seed, spec.suppliers, spec.demanded_ids)
    res = optimize(spec, scen, opt)
    summary = report(res.profits, res.weights, order_qty=res.order_qty).to_dict()
    for k in ("profits", "weights", "outliers"):
        summary.pop(k, None)
    print(json.dumps({"order_qty": res.order_qty, "expected_profit": res.expected_profit,
                      "scenarios": scen.metadata(), "report": summary}, sort_keys=True, indent=1))
    if dump_lp:
        first = next(iter(scen))
        obtained = {g.id: res.order_qty[g.id] * first.supply[g.supplier_id] * g.yield_rate for g in spec.produced}
        demanded = {d.id: d.base_demand * first.demand[d.id] for d in spec.demanded}
        optimal_usage_stage3(spec, obtained, demanded, dump_lp=dump_lp)
        print(f"recourse LP of scenario 0 written to {dump_lp}", file=sys.stderr)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = parser().parse_args(argv)
    try:
        if args.threads is not None and args.threads < 1:
            raise config.ConfigError("--threads: must be >= 1")
        data = config.load(args.config)
        if args.command == "run":
            return cmd_run(data, args.names, args.seed, args.out, args.threads)
        if args.command == "validate-costs":
            return cmd_validate_costs(data)
        if args.command == "oracle-check":
            return cmd_oracle_check(data)
        if args.command == "solve":
            return cmd_solve(data, args.seed, args.dump_lp)
        for name, plan in config.plans(data).items():
            print(f"{name}: {plan.axis} {list(plan.values)} {list(plan.interventions)}")
        return EXIT_OK
    except (config.ConfigError, ex.PlanError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported with its type, mapped to the runtime code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
