"""Supply/demand multiplier distributions and reproducible scenario sets.

A :class:`ScenarioSet` is the product of two independent blocks: one row
per supply draw (a multiplier per supplier) times one row per demand draw (a
multiplier per demanded good).  The product structure is what lets mapping
decisions be taken per supply realization while demand is still unknown.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Union

import numpy as np
from scipy import special

PRNG_NAME = "numpy.PCG64/SeedSequence"


class UncertaintyError(ValueError):
    pass


# --------------------------------------------------------------------------
# distributions


def _phi(z):
    return np.exp(-0.5 * np.square(z)) / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Deterministic:
    value: float = 1.0

    def check(self) -> list[str]:
        return [] if self.value >= 0 else ["deterministic value must be >= 0"]

    @property
    def degenerate(self) -> bool:
        return True

    def support(self):
        return [(float(self.value), 1.0)]

    def from_normal(self, z: np.ndarray) -> np.ndarray:
        return np.full(np.shape(z), float(self.value))

    def cell_means(self, n: int) -> np.ndarray:
        return np.full(n, float(self.value))

    def mean(self) -> float:
        return float(self.value)


@dataclass(frozen=True)
class Normal:
    """Normal multiplier clamped at zero."""

    std: float
    mean_value: float = 1.0

    def check(self) -> list[str]:
        return [] if self.std >= 0 else ["normal std must be >= 0"]

    @property
    def degenerate(self) -> bool:
        return self.std == 0

    def support(self):
        if self.degenerate:
            return [(max(0.0, self.mean_value), 1.0)]
        return None

    def from_normal(self, z: np.ndarray) -> np.ndarray:
        return np.maximum(0.0, self.mean_value + self.std * np.asarray(z, dtype=float))

    def cell_means(self, n: int) -> np.ndarray:
        if self.degenerate:
            return np.full(n, max(0.0, self.mean_value))
        edges = special.ndtri(np.linspace(0.0, 1.0, n + 1))
        clamp = -self.mean_value / self.std
        lo = np.maximum(edges[:-1], clamp)
        hi = np.maximum(edges[1:], clamp)
        # integral of (m + s z) phi(z) over [lo, hi], times n
        mass = special.ndtr(hi) - special.ndtr(lo)
        part = self.mean_value * mass + self.std * (_phi(lo) - _phi(hi))
        return np.maximum(0.0, n * part)

    def mean(self) -> float:
        m, s = self.mean_value, self.std
        if s == 0:
            return max(0.0, m)
        a = m / s
        return float(m * special.ndtr(a) + s * _phi(a))


@dataclass(frozen=True)
class Shock:
    """Multiplier is 0 with probability ``p`` and 1 otherwise."""

    p: float

    def check(self) -> list[str]:
        return [] if 0.0 <= self.p <= 1.0 else ["shock probability must lie in [0, 1]"]

    @property
    def degenerate(self) -> bool:
        return self.p in (0.0, 1.0)

    def support(self):
        pts = [(0.0, float(self.p)), (1.0, 1.0 - float(self.p))]
        return [(v, w) for v, w in pts if w > 0]

    def from_normal(self, z: np.ndarray) -> np.ndarray:
        return (special.ndtr(np.asarray(z, dtype=float)) >= self.p).astype(float)

    def cell_means(self, n: int) -> np.ndarray:
        lo = np.arange(n) / n
        hi = np.arange(1, n + 1) / n
        return n * np.clip(hi - np.maximum(lo, self.p), 0.0, None)

    def mean(self) -> float:
        return 1.0 - self.p


@dataclass(frozen=True)
class Scaled:
    inner: "Distribution"
    factor: float

    def check(self) -> list[str]:
        errs = list(self.inner.check())
        if self.factor < 0:
            errs.append("scale factor must be >= 0")
        return errs

    @property
    def degenerate(self) -> bool:
        return self.factor == 0 or self.inner.degenerate

    def support(self):
        s = self.inner.support()
        return None if s is None else [(self.factor * v, w) for v, w in s]

    def from_normal(self, z: np.ndarray) -> np.ndarray:
        return self.factor * self.inner.from_normal(z)

    def cell_means(self, n: int) -> np.ndarray:
        return self.factor * self.inner.cell_means(n)

    def mean(self) -> float:
        return self.factor * self.inner.mean()


Distribution = Union[Deterministic, Normal, Shock, Scaled]

ONE = Deterministic(1.0)


@dataclass(frozen=True)
class UncertaintyConfig:
    """Supply multipliers are drawn per supplier, demand multipliers per demanded good.

    ``demand_correlation`` pairs with ``correlated`` (demanded-good ids, in
    matrix order); it couples the demand draws through a Gaussian copula.
    """

    supply: Mapping[str, Distribution] = field(default_factory=dict)
    demand: Mapping[str, Distribution] = field(default_factory=dict)
    demand_correlation: tuple[tuple[float, ...], ...] | None = None
    correlated: tuple[str, ...] = ()

    def supply_for(self, supplier: str) -> Distribution:
        return self.supply.get(supplier, ONE)

    def demand_for(self, good: str) -> Distribution:
        return self.demand.get(good, ONE)

    def check(self) -> list[tuple[str, str]]:
        out = []
        for block in ("supply", "demand"):
            for key, dist in getattr(self, block).items():
                out += [(f"uncertainty.{block}.{key}", e) for e in dist.check()]
        if self.demand_correlation is not None:
            C = np.asarray(self.demand_correlation, dtype=float)
            path = "uncertainty.demand_correlation"
            if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] != len(self.correlated):
                out.append((path, "correlation matrix must be square and match the correlated goods"))
            else:
                if not np.allclose(C, C.T, atol=1e-12):
                    out.append((path, "correlation matrix must be symmetric"))
                if not np.allclose(np.diag(C), 1.0, atol=1e-12):
                    out.append((path, "correlation matrix must have a unit diagonal"))
                if np.linalg.eigvalsh((C + C.T) / 2).min() < -1e-10:
                    out.append((path, "correlation matrix must be positive semidefinite"))
        return out


def pairwise_correlation(goods: list[str], rho: float):
    """Correlation matrix and id order with the same Pearson coefficient for every pair."""
    k = len(goods)
    C = np.full((k, k), rho)
    np.fill_diagonal(C, 1.0)
    return tuple(map(tuple, C.tolist())), tuple(goods)


# --------------------------------------------------------------------------
# strategies


@dataclass(frozen=True)
class MonteCarlo:
    """About ``n`` joint scenarios of i.i.d. draws.

    A lone uncertain block gets all ``n`` draws.  When both blocks are
    uncertain the supply block gets ``n_supply`` rows (default 16) and the
    demand block ``n // n_supply``, so stage-2 usage can be decided per supply
    row against a whole demand sample.
    """

    n: int = 512
    n_supply: int | None = None

    def sizes(self, supply_uncertain: bool, demand_uncertain: bool) -> tuple[int, int]:
        if supply_uncertain and demand_uncertain:
            ns = self.n_supply or min(16, self.n)
            return ns, max(1, self.n // ns)
        return self.n, self.n

    def label(self) -> str:
        return f"montecarlo(n={self.n},n_supply={self.n_supply or 16})"


@dataclass(frozen=True)
class StratifiedEquiProbable:
    """``n`` equal-probability cells per uncertain axis, represented by their centroids."""

    n: int = 16

    def label(self) -> str:
        return f"stratified(n={self.n})"


@dataclass(frozen=True)
class Exhaustive:
    def label(self) -> str:
        return "exhaustive"


Strategy = Union[MonteCarlo, StratifiedEquiProbable, Exhaustive]


# --------------------------------------------------------------------------
# scenario sets


@dataclass(frozen=True)
class Scenario:
    index: int
    supply: dict[str, float]
    demand: dict[str, float]
    weight: float


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    supply_ids: tuple[str, ...]
    supply_values: np.ndarray  # (n_supply_rows, len(supply_ids))
    supply_weights: np.ndarray
    demand_ids: tuple[str, ...]
    demand_values: np.ndarray  # (n_demand_rows, len(demand_ids))
    demand_weights: np.ndarray
    seed: int | None = None
    strategy: str = ""
    prng: str = PRNG_NAME

    def __post_init__(self):
        for name in ("supply_values", "supply_weights", "demand_values", "demand_weights"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for w in (self.supply_weights, self.demand_weights):
            if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
                raise UncertaintyError("block weights must be positive and sum to 1")

    @property
    def n_supply(self) -> int:
        return self.supply_values.shape[0]

    @property
    def n_demand(self) -> int:
        return self.demand_values.shape[0]

    def __len__(self) -> int:
        return self.n_supply * self.n_demand

    @property
    def weights(self) -> np.ndarray:
        return np.outer(self.supply_weights, self.demand_weights).ravel()

    @property
    def joint_supply(self) -> np.ndarray:
        return np.repeat(self.supply_values, self.n_demand, axis=0)

    @property
    def joint_demand(self) -> np.ndarray:
        return np.tile(self.demand_values, (self.n_supply, 1))

    def __iter__(self) -> Iterator[Scenario]:
        w = self.weights
        k = 0
        for s in range(self.n_supply):
            sup = dict(zip(self.supply_ids, self.supply_values[s].tolist()))
            for d in range(self.n_demand):
                dem = dict(zip(self.demand_ids, self.demand_values[d].tolist()))
                yield Scenario(k, sup, dem, float(w[k]))
                k += 1

    @property
    def scenarios(self) -> list[Scenario]:
        return list(self)

    def column(self, axis: str) -> np.ndarray:
        """Joint-scenario values of ``supply:<id>`` or ``demand:<id>``."""
        block, _, key = axis.partition(":")
        if block == "supply" and key in self.supply_ids:
            return self.joint_supply[:, self.supply_ids.index(key)]
        if block == "demand" and key in self.demand_ids:
            return self.joint_demand[:, self.demand_ids.index(key)]
        raise UncertaintyError(f"unknown axis {axis!r}")

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["index", "weight"]
                    + [f"supply:{s}" for s in self.supply_ids]
                    + [f"demand:{d}" for d in self.demand_ids])
        for sc in self:
            wr.writerow([sc.index, repr(sc.weight)]
                        + [repr(sc.supply[s]) for s in self.supply_ids]
                        + [repr(sc.demand[d]) for d in self.demand_ids])
        return buf.getvalue()

    def metadata(self) -> dict:
        return {"seed": self.seed, "strategy": self.strategy, "prng": self.prng,
                "n_supply": self.n_supply, "n_demand": self.n_demand}


def moments(scenarios: ScenarioSet, axis: str) -> tuple[float, float]:
    """Weighted mean and variance of one multiplier."""
    x = scenarios.column(axis)
    w = scenarios.weights
    mean = float(np.dot(w, x))
    return mean, float(np.dot(w, (x - mean) ** 2))


def _block_exhaustive(dists: list[Distribution]) -> tuple[np.ndarray, np.ndarray]:
    supports = []
    for d in dists:
        s = d.support()
        if s is None:
            raise UncertaintyError(f"exhaustive enumeration needs finite support, got {d}")
        supports.append(s)
    rows, weights = [], []
    for combo in itertools.product(*supports):
        rows.append([v for v, _ in combo])
        weights.append(math.prod(w for _, w in combo))
    return np.array(rows, dtype=float).reshape(len(rows), len(dists)), np.array(weights)


def _block_stratified(dists: list[Distribution], n: int) -> tuple[np.ndarray, np.ndarray]:
    axes = []
    for d in dists:
        if d.degenerate:
            axes.append(d.cell_means(1)[:1])
        else:
            axes.append(d.cell_means(n))
    sizes = [a.size for a in axes]
    idx = np.array(list(itertools.product(*[range(s) for s in sizes])), dtype=int).reshape(-1, len(dists))
    vals = np.column_stack([axes[j][idx[:, j]] for j in range(len(dists))]) if dists else np.zeros((1, 0))
    w = np.full(vals.shape[0], 1.0 / vals.shape[0])
    return vals, w


def _block_montecarlo(dists: list[Distribution], n: int, seq: np.random.SeedSequence,
                      corr: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    if not dists or all(d.degenerate for d in dists):
        vals = np.array([[d.from_normal(np.zeros(1))[0] for d in dists]], dtype=float).reshape(1, len(dists))
        return vals, np.ones(1)
    rng = np.random.Generator(np.random.PCG64(seq))
    z = rng.standard_normal((n, len(dists)))
    if corr is not None:
        L = _psd_factor(corr)
        z = z @ L.T
    vals = np.column_stack([d.from_normal(z[:, j]) for j, d in enumerate(dists)])
    return vals, np.full(n, 1.0 / n)


def _psd_factor(C: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(C)
        if w.min() < -1e-10:
            raise UncertaintyError("demand correlation matrix is not positive semidefinite")
        return V * np.sqrt(np.clip(w, 0.0, None))


def sample(config: UncertaintyConfig, strategy: Strategy, seed: int,
           suppliers: list[str] | tuple[str, ...], demanded: list[str] | tuple[str, ...]) -> ScenarioSet:
    """Draw a scenario set; a pure function of (config, strategy, seed, ids)."""
    suppliers = tuple(suppliers)
    demanded = tuple(demanded)
    problems = config.check()
    if problems:
        raise UncertaintyError("; ".join(f"{p}: {m}" for p, m in problems))
    sd = [config.supply_for(s) for s in suppliers]
    dd = [config.demand_for(d) for d in demanded]

    corr = None
    if config.demand_correlation is not None:
        unknown = set(config.correlated) - set(demanded)
        if unknown:
            raise UncertaintyError(f"correlation names unknown demanded goods {sorted(unknown)}")
        C = np.eye(len(demanded))
        pos = [demanded.index(g) for g in config.correlated]
        C[np.ix_(pos, pos)] = np.asarray(config.demand_correlation, dtype=float)
        if not np.allclose(C, np.eye(len(demanded))):
            corr = C

    if isinstance(strategy, Exhaustive):
        if corr is not None:
            raise UncertaintyError("exhaustive enumeration does not support correlated demand")
        sv, sw = _block_exhaustive(sd)
        dv, dw = _block_exhaustive(dd)
    elif isinstance(strategy, StratifiedEquiProbable):
        if strategy.n < 1:
            raise UncertaintyError("stratified sampling needs n >= 1")
        if corr is not None:
            raise UncertaintyError("stratified sampling does not support correlated demand")
        sv, sw = _block_stratified(sd, strategy.n)
        dv, dw = _block_stratified(dd, strategy.n)
    elif isinstance(strategy, MonteCarlo):
        if strategy.n < 1 or (strategy.n_supply is not None and strategy.n_supply < 1):
            raise UncertaintyError("monte carlo needs at least one draw")
        if corr is not None:
            _psd_factor(corr)
        s_seq, d_seq = np.random.SeedSequence(seed).spawn(2)
        ns, nd = strategy.sizes(any(not d.degenerate for d in sd), any(not d.degenerate for d in dd))
        sv, sw = _block_montecarlo(sd, ns, s_seq, None)
        dv, dw = _block_montecarlo(dd, nd, d_seq, corr)
    else:
        raise UncertaintyError(f"unknown strategy {strategy!r}")

    return ScenarioSet(suppliers, sv, sw, demanded, dv, dw, seed=seed, strategy=strategy.label())
