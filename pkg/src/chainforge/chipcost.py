"""Die cost model: dies per wafer, defect-limited yield, RE/NRE and unit cost.

All money amounts in :class:`CostParams` are raw currency; results are
returned in normalized units, i.e. divided by ``CostParams.cost_unit`` (the
price of a reference 45 nm wafer in the same currency).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace


class CostModelError(ValueError):
    pass


@dataclass(frozen=True)
class DieSpec:
    area: float  # mm^2
    d0: float = 0.0  # defects per mm^2
    n_layers: int = 13  # one device layer + 12 metal layers
    frac_crit_wire: float = 0.2625
    frac_crit_logic: float = 0.75
    alpha: float = 1.0

    def __post_init__(self):
        if not self.area > 0:
            raise CostModelError(f"die area must be positive, got {self.area}")
        for name in ("frac_crit_wire", "frac_crit_logic"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise CostModelError(f"{name} must lie in [0, 1], got {v}")
        if not self.alpha > 0:
            raise CostModelError(f"clustering factor must be positive, got {self.alpha}")
        if self.d0 < 0:
            raise CostModelError(f"defect density must be >= 0, got {self.d0}")
        if self.n_layers < 1:
            raise CostModelError(f"n_layers must be >= 1, got {self.n_layers}")

    @property
    def critical_area(self) -> float:
        return self.area * min(1.0, self.frac_crit_wire + self.frac_crit_logic)


@dataclass(frozen=True)
class InterposerParams:
    wafer_cost: float = 4000.0
    d0: float = 0.0
    n_layers: int = 4
    nre_design_cost_per_mm2: float = 0.0
    nre_mask_set_cost: float = 0.0
    area_factor: float = 1.0  # interposer area / composed chip area


@dataclass(frozen=True)
class CostParams:
    """Technology and economics inputs of the cost model.

    ``area_per_core`` and ``d0`` describe the logic dies; a die for ``k`` cores
    has area ``k * area_per_core``.  The defaults (area, defect density, NRE)
    are calibrated so 16/8/4-core dies cost about 0.12/0.05/0.024 at an order
    of 1e8 and a 32-core monolithic die costs 1.71x four 8-core chiplets.
    """

    wafer_radius: float = 150.0
    re_wafer_cost: float = 24300.0
    cost_unit: float = 10000.0
    nre_design_cost_per_mm2: float = 6.0e6
    nre_mask_set_cost: float = 2.15e9
    order: float = 1e8
    area_per_core: float = 48.0
    d0: float = 0.0058
    n_layers: int = 13
    frac_crit_wire: float = 0.2625
    frac_crit_logic: float = 0.75
    alpha: float = 1.0
    base_demand: float = 1e8
    re_only_unit_cost: bool = False
    interposer: InterposerParams = InterposerParams()

    def __post_init__(self):
        for name in (
            "wafer_radius",
            "re_wafer_cost",
            "nre_design_cost_per_mm2",
            "nre_mask_set_cost",
            "order",
            "d0",
            "base_demand",
        ):
            if getattr(self, name) < 0:
                raise CostModelError(f"{name} must be >= 0")
        if not self.cost_unit > 0:
            raise CostModelError("cost_unit must be positive")
        if not self.area_per_core > 0:
            raise CostModelError("area_per_core must be positive")

    def die(self, cores: int) -> DieSpec:
        return DieSpec(
            area=cores * self.area_per_core,
            d0=self.d0,
            n_layers=self.n_layers,
            frac_crit_wire=self.frac_crit_wire,
            frac_crit_logic=self.frac_crit_logic,
            alpha=self.alpha,
        )

    def with_order(self, order: float) -> "CostParams":
        return replace(self, order=order)


def dies_per_wafer(radius: float, area: float) -> int:
    """Gross dies on a round wafer, ``floor(pi * (R - sqrt(A))**2 / A)``."""
    if not area > 0 or not radius > math.sqrt(area):
        raise CostModelError(
            f"need R > sqrt(A) > 0, got R={radius}, A={area}"
        )
    return math.floor(math.pi * (radius - math.sqrt(area)) ** 2 / area)


def die_yield(die: DieSpec) -> float:
    """Negative-binomial yield with the defect density spread over the vulnerable layers."""
    lam = die.d0 / die.n_layers * die.critical_area
    return (1.0 + lam / die.alpha) ** (-die.alpha)


def good_dies_per_wafer(die: DieSpec, radius: float) -> float:
    return dies_per_wafer(radius, die.area) * die_yield(die)


def re_cost(die: DieSpec, params: CostParams, order: float | None = None) -> float:
    """Recurring cost of ``order`` good dies, normalized."""
    order = params.order if order is None else order
    good = good_dies_per_wafer(die, params.wafer_radius)
    if good <= 0:
        raise CostModelError(f"no good dies for area {die.area}")
    return order / good * params.re_wafer_cost / params.cost_unit


def nre(die: DieSpec, params: CostParams) -> float:
    """Area-scaled design cost plus one mask set, normalized."""
    raw = die.area * params.nre_design_cost_per_mm2 + params.nre_mask_set_cost
    return raw / params.cost_unit


def unit_cost(die: DieSpec, params: CostParams, order: float | None = None) -> float:
    order = params.order if order is None else order
    if not order > 0:
        raise CostModelError("order must be positive")
    re = re_cost(die, params, order)
    if params.re_only_unit_cost:
        return re / order
    return 2.0 * (re + nre(die, params)) / order


def unit_benefit(unit_cost: float, nre: float, base_demand: float) -> float:
    """Price at a 50% gross margin over unit cost plus amortized NRE."""
    if not base_demand > 0:
        raise CostModelError("base_demand must be positive")
    return 2.0 * (unit_cost + nre / base_demand)


def interposer_cost(chip_area: float, params: CostParams, order: float | None = None) -> float:
    """Per-use cost of a passive interposer sized to ``chip_area``, normalized."""
    ip = params.interposer
    order = params.order if order is None else order
    die = DieSpec(area=chip_area * ip.area_factor, d0=ip.d0, n_layers=ip.n_layers)
    good = good_dies_per_wafer(die, params.wafer_radius)
    if good <= 0:
        raise CostModelError(f"no good interposers for area {die.area}")
    re = order / good * ip.wafer_cost / params.cost_unit
    ip_nre = (die.area * ip.nre_design_cost_per_mm2 + ip.nre_mask_set_cost) / params.cost_unit
    return 2.0 * (re + ip_nre) / order


@dataclass(frozen=True)
class ChipEconomics:
    cores: int
    area: float
    yield_rate: float
    unit_cost: float
    nre: float
    unit_benefit: float

    @property
    def shortage_cost(self) -> float:
        return self.unit_benefit


def chip_economics(cores: int, params: CostParams) -> ChipEconomics:
    die = params.die(cores)
    uc = unit_cost(die, params)
    n = nre(die, params)
    return ChipEconomics(
        cores=cores,
        area=die.area,
        yield_rate=die_yield(die),
        unit_cost=uc,
        nre=n,
        unit_benefit=unit_benefit(uc, n, params.base_demand),
    )


def composition_validation(
    params: CostParams, total_cores: int = 32, chiplets: int = 4
) -> float:
    """Cost of a monolithic chip over the same chip built from equal chiplets.

    Chiplets are ordered ``chiplets`` times the monolithic order; the composed
    chip additionally carries one interposer of the full chip area.
    """
    if total_cores % chiplets:
        raise CostModelError("total_cores must be divisible by chiplets")
    mono = unit_cost(params.die(total_cores), params)
    per = params.die(total_cores // chiplets)
    composed = chiplets * unit_cost(per, params, params.order * chiplets)
    composed += interposer_cost(total_cores * params.area_per_core, params)
    return mono / composed
