"""Analytic micro-scenarios used as oracles for the full engine."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class SubstitutionScenario:
    """One demanded good served either directly by g1 or by adapting g2."""

    r: float
    t: float
    c1: float
    c2: float
    n1: float
    n2: float
    zd: float

    def __post_init__(self):
        if min(self.r, self.t, self.c1, self.c2, self.n1, self.n2, self.zd) < 0:
            raise ValueError("substitution parameters must be >= 0")


def prefer_substitute(s: SubstitutionScenario) -> bool:
    """Build g2 (and adapt it) instead of g1; ties keep the direct good."""
    direct = (s.c1 + s.t - s.r) * s.zd + s.n1
    subst = (s.c2 + s.t - s.r) * s.zd + s.n2
    return subst < direct


def break_even_demand(n1: float, n2: float, c1: float, c2: float) -> float:
    """Demand at which both producers give the same profit."""
    if c1 == c2:
        raise ValueError("break-even demand is undefined for equal unit costs")
    return (n1 - n2) / (c2 - c1)


# --------------------------------------------------------------------------
# flexible producer under known total, unknown split


def goop_cost(k: int, g: float, t: float, a: int, b: int, m: int) -> float:
    """Expected misallocation cost of building (a, b, m) when the split of k is uniform.

    Flexible units are converted (at ``t`` each) only where that beats the
    shortage penalty ``g``.
    """
    convert = t < g
    total = 0.0
    for z1 in range(k + 1):
        short = max(0, z1 - a) + max(0, k - z1 - b)
        conv = min(m, short) if convert else 0
        total += t * conv + g * (short - conv)
    return total / (k + 1)


def goop_costs(k: int, g: float, t: float) -> dict[tuple[int, int, int], float]:
    """Expected cost of every integer build (a, b, m) with a + b + m = k."""
    return {(a, b, k - a - b): goop_cost(k, g, t, a, b, k - a - b)
            for a in range(k + 1) for b in range(k + 1 - a)}


def goop_literal(k: int, g: float, t: float) -> bool:
    return g * t <= k


def goop_threshold(k: int, g: float, t: float, literal: bool = False) -> bool:
    """Whether building only the flexible good, (0, 0, k), is (weakly) cost-optimal.

    By default decided by enumeration; ``literal`` applies the inequality
    ``g*t <= k`` as printed instead.
    """
    if k < 1 or g < 0 or t < 0:
        raise ValueError("need k >= 1 and g, t >= 0")
    if literal:
        return goop_literal(k, g, t)
    costs = goop_costs(k, g, t)
    flex = costs[(0, 0, k)]
    return flex <= min(costs.values()) + 1e-12 * max(1.0, abs(flex))


# --------------------------------------------------------------------------
# programmable part vs k dedicated ASICs


@dataclass(frozen=True)
class ProgrammabilityScenario:
    k: int
    m: float
    p: float
    R: float  # margin r - c per unit sold
    h: float  # salvage per unsold unit, net of cost
    n_asic: float
    n_prog: float

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")


def asic_expected_profit(s: ProgrammabilityScenario, x) -> float:
    """Sum over goods of max(E[P_i | x_i > 0], 0); ``x`` is a scalar or one value per good."""
    xs = np.broadcast_to(np.asarray(x, dtype=float), (s.k,))
    if np.any(xs < 0) or np.any(xs > s.m + 1e-12):
        raise ValueError("ASIC build must satisfy 0 <= x_i <= m")
    slope = s.R * s.p + s.h * (1.0 - s.p)
    per = np.where(xs > 0, xs * slope - s.n_asic, 0.0)
    return float(np.maximum(per, 0.0).sum())


def _prog_payoff(s: ProgrammabilityScenario, x: float, sold_demand: np.ndarray) -> np.ndarray:
    return np.minimum(x, sold_demand) * s.R + np.maximum(0.0, x - sold_demand) * s.h - (s.n_prog if x > 0 else 0.0)


def programmable_expected_profit(s: ProgrammabilityScenario, x: float, method: str = "exhaustive",
                                 n: int = 100_000, seed: int = 0):
    """Expected profit of building ``x`` programmable parts.

    ``exhaustive`` enumerates all 2**k demand outcomes; ``binomial`` uses the
    equivalent binomial law; ``montecarlo`` returns (estimate, standard error).
    """
    if not 0.0 <= x <= s.k * s.m + 1e-9:
        raise ValueError("programmable build must satisfy 0 <= x <= k*m")
    if method == "exhaustive":
        if s.k > 20:
            raise ValueError("exhaustive enumeration is limited to k <= 20")
        outcomes = np.array(list(itertools.product((0, 1), repeat=s.k)), dtype=float)
        ones = outcomes.sum(axis=1)
        prob = s.p ** ones * (1.0 - s.p) ** (s.k - ones)
        vals = _prog_payoff(s, x, s.m * ones)
        return math.fsum((prob * vals).tolist())
    if method == "binomial":
        j = np.arange(s.k + 1)
        prob = stats.binom.pmf(j, s.k, s.p)
        return math.fsum((prob * _prog_payoff(s, x, s.m * j)).tolist())
    if method == "montecarlo":
        rng = np.random.default_rng(seed)
        demand = s.m * rng.binomial(1, s.p, size=(n, s.k)).sum(axis=1)
        vals = _prog_payoff(s, x, demand.astype(float))
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))
    raise ValueError(f"unknown method {method!r}")


def programmable_at_mean(s: ProgrammabilityScenario) -> float:
    """The shortcut value kpmR - n at x = kpm; exact when h = R, an upper bound when h <= R."""
    return s.k * s.p * s.m * s.R - s.n_prog


def programmability_threshold(s: ProgrammabilityScenario) -> float:
    """Smallest k (as a real) above which kpmR - n is positive."""
    return s.n_prog / (s.p * s.m * s.R)


def best_programmable(s: ProgrammabilityScenario, steps: int | None = None) -> tuple[float, float]:
    """Best build on the grid {0, m, 2m, ..., km} (the payoff is piecewise linear
    between these points, so the grid holds the optimum)."""
    grid = [j * s.m for j in range(s.k + 1)] if steps is None else list(np.linspace(0, s.k * s.m, steps))
    vals = [programmable_expected_profit(s, float(x), "binomial") for x in grid]
    i = int(np.argmax(vals))
    return float(grid[i]), float(vals[i])
