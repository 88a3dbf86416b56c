"""Optimal mapping usage: per-scenario and per-supply-row recourse LPs, the
extensive form used by the order search, and a brute-force grid oracle."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize, sparse

from . import lp
from .engine import CompiledMarket, compile_market, evaluate_batch, weighted_sum
from .market import MarketSpec, RecourseStage

CURVE_SEGMENTS = 8
MAX_GRID = 10**6


class RecourseError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class RecourseLp:
    """maximize ``scale * (c @ x + const)``; rows are all ``A x <= b``."""

    c: np.ndarray
    A: sparse.csr_matrix
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    const: float
    scale: float
    n_q: int
    u_off: int
    n_rows: int  # recourse rows R
    n_map: int
    names: tuple[str, ...]

    def usage(self, x: np.ndarray) -> np.ndarray:
        u = x[self.u_off:self.u_off + self.n_rows * self.n_map].reshape(self.n_rows, self.n_map)
        return np.maximum(u, 0.0) * self.scale

    def to_problem(self) -> lp.LpProblem:
        return lp.LpProblem(self.c, self.A.toarray(), self.b, [lp.LE] * self.A.shape[0],
                            self.lb, self.ub, list(self.names))


def _chords(e: float, p0: float, dem: np.ndarray, ceiling: np.ndarray, T: int):
    """Slopes and widths of T equal chords of the concave revenue s*(e*(s-dem)+p0)."""
    width = ceiling / T
    pts = width[:, None] * np.arange(T + 1)[None, :]
    rev = pts * (e * (pts - dem[:, None]) + p0)
    with np.errstate(invalid="ignore", divide="ignore"):
        slope = np.where(width[:, None] > 0, np.diff(rev, axis=1) / width[:, None], 0.0)
    return slope, width


def build_recourse_lp(cm: CompiledMarket, dem: np.ndarray, weights: np.ndarray, row_of: np.ndarray,
                      *, obtained: np.ndarray | None = None, yield_per_q: np.ndarray | None = None,
                      class_of: np.ndarray | None = None, class_ub: np.ndarray | None = None,
                      q_cost: np.ndarray | None = None, segments: int = CURVE_SEGMENTS) -> RecourseLp:
    """Recourse LP over K demand outcomes grouped into R usage rows.

    Either ``obtained`` (R, P) is fixed, or the order quantities are variables:
    ``yield_per_q`` (R, P) gives obtained units per ordered unit, ``class_of``
    (P,) the order class of each good (-1: not ordered), ``class_ub`` the caps and
    ``q_cost`` (C,) the expected production cost per unit of each class.
    """
    dem = np.asarray(dem, dtype=float)
    w = np.asarray(weights, dtype=float)
    row_of = np.asarray(row_of, dtype=int)
    K, D = dem.shape
    J, P = cm.m_in.shape
    R = int(row_of.max()) + 1 if K else 0
    scale = float(max(1.0, np.max(cm.base, initial=0.0), np.max(dem, initial=0.0)))
    dem_s = dem / scale
    ceil_s = cm.demand_ceiling(dem) / scale
    free_q = obtained is None
    C = int(class_ub.size) if free_q else 0

    names: list[str] = [f"q_c{c}" for c in range(C)]
    u_off = C
    names += [f"U_r{r}_{m}" for r in range(R) for m in cm.mapping_ids]
    n = u_off + R * J
    c = np.zeros(n)
    lb = [np.zeros(n)]
    ub = [np.concatenate([class_ub / scale if free_q else np.zeros(0), np.full(R * J, np.inf)])]
    if free_q:
        c[:C] = -q_cost
    W_r = np.bincount(row_of, weights=w, minlength=R)
    h_out = cm.salv[cm.out_idx] if J else np.zeros(0)
    c[u_off:] = (W_r[:, None] * (h_out - cm.gamma)[None, :]).ravel()
    cs = [c]

    rows, cols, vals, rhs = [], [], [], []
    n_row = 0

    # capacity: sum_j M_ji U_rj <= obtained_ri
    goods = np.flatnonzero(cm.m_in.any(axis=0))
    for i in goods:
        js = np.flatnonzero(cm.m_in[:, i])
        rr = np.repeat(np.arange(R), js.size)
        rows.append(n_row + rr)
        cols.append(u_off + rr * J + np.tile(js, R))
        vals.append(np.tile(cm.m_in[js, i], R))
        if free_q:
            if class_of[i] >= 0:
                rows.append(n_row + np.arange(R))
                cols.append(np.full(R, class_of[i]))
                vals.append(-yield_per_q[:, i])
            rhs.append(np.zeros(R))
        else:
            rhs.append(obtained[:, i] / scale)
        n_row += R

    # sales variables and links to built quantities
    const = -float(np.sum(w[:, None] * dem_s * cm.u_sc[None, :]))
    T = segments
    for d in range(D):
        js = np.flatnonzero(cm.out_idx == d)
        curve = bool(cm.has_curve[d]) and cm.elasticity[d] < 0
        nv = T + 1 if curve else 1
        off = n
        n += K * nv
        if curve:
            slope, width = _chords(cm.elasticity[d], cm.base_price[d], dem_s[:, d], ceil_s[:, d], T)
            cv = np.zeros((K, nv))
            cv[:, :T] = w[:, None] * (slope - cm.salv[d])
            cv[:, T] = w * cm.u_sc[d]
            up = np.zeros((K, nv))
            up[:, :T] = width[:, None]
            up[:, T] = dem_s[:, d]
            names += [f"s_k{k}_{cm.demanded_ids[d]}_{t}" for k in range(K) for t in range(nv)]
            # m <= sum of segments
            rows.append(n_row + np.repeat(np.arange(K), nv))
            cols.append(off + np.arange(K * nv))
            vals.append(np.tile(np.r_[-np.ones(T), 1.0], K))
            rhs.append(np.zeros(K))
            n_row += K
        else:
            cv = (w * (cm.u_ben[d] + cm.u_sc[d] - cm.salv[d]))[:, None]
            up = dem_s[:, d][:, None]
            names += [f"sold_k{k}_{cm.demanded_ids[d]}" for k in range(K)]
        cs.append(cv.ravel())
        lb.append(np.zeros(K * nv))
        ub.append(up.ravel())
        # sum(sales) - sum_{j -> d} U_{row(k), j} <= 0
        n_sales = T if curve else 1
        rows.append(n_row + np.repeat(np.arange(K), n_sales))
        cols.append(off + (np.arange(K)[:, None] * nv + np.arange(n_sales)[None, :]).ravel())
        vals.append(np.ones(K * n_sales))
        if js.size:
            rows.append(n_row + np.repeat(np.arange(K), js.size))
            cols.append(u_off + np.repeat(row_of, js.size) * J + np.tile(js, K))
            vals.append(-np.ones(K * js.size))
        rhs.append(np.zeros(K))
        n_row += K

    A = sparse.csr_matrix(
        (np.concatenate(vals) if vals else np.zeros(0),
         (np.concatenate(rows) if rows else np.zeros(0, int), np.concatenate(cols) if cols else np.zeros(0, int))),
        shape=(n_row, n))
    A.sum_duplicates()
    return RecourseLp(np.concatenate(cs), A, np.concatenate(rhs) if rhs else np.zeros(0),
                      np.concatenate(lb), np.concatenate(ub), const, scale, C, u_off, R, J, tuple(names))


def solve_highs(prob: RecourseLp) -> np.ndarray:
    res = optimize.linprog(-prob.c, A_ub=prob.A, b_ub=prob.b,
                           bounds=np.column_stack([prob.lb, prob.ub]), method="highs")
    if res.status != 0:
        raise RecourseError(f"recourse LP failed: {res.message}")
    return res.x


def clip_usage(cm: CompiledMarket, U: np.ndarray, obtained: np.ndarray) -> np.ndarray:
    """Shrink each usage row just enough that no good is over-consumed."""
    used = U @ cm.m_in
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(used > obtained, obtained / np.where(used > 0, used, 1.0), 1.0)
    f = ratio.min(axis=1, initial=1.0)
    return U * np.clip(f, 0.0, 1.0)[:, None]


# --------------------------------------------------------------------------
# single-supply-row recourse with the dense simplex


def _obtained_vector(cm: CompiledMarket, obtained: Mapping[str, float]) -> np.ndarray:
    unknown = set(obtained) - set(cm.produced_ids)
    if unknown:
        raise ValueError(f"unknown produced goods {sorted(unknown)}")
    v = np.array([float(obtained.get(g, 0.0)) for g in cm.produced_ids])
    if np.any(v < 0):
        raise ValueError("obtained units must be >= 0")
    return v


def _demand_vector(cm: CompiledMarket, demanded: Mapping[str, float]) -> np.ndarray:
    unknown = set(demanded) - set(cm.demanded_ids)
    if unknown:
        raise ValueError(f"unknown demanded goods {sorted(unknown)}")
    v = np.array([float(demanded.get(d, 0.0)) for d in cm.demanded_ids])
    if np.any(v < 0):
        raise ValueError("demanded units must be >= 0")
    return v


def recourse_values(cm: CompiledMarket, U: np.ndarray, obtained: np.ndarray, dem: np.ndarray) -> np.ndarray:
    """Profit excluding production cost for usage rows ``U`` against one demand vector."""
    U = np.atleast_2d(U)
    n = U.shape[0]
    base = np.where(cm.base > 0, cm.base, 1.0)
    Zd = np.broadcast_to(dem / base, (n, cm.n_demanded))
    # zero-base goods still need their demand: fold it into a unit base
    cm2 = cm if np.all(cm.base > 0) else _with_base(cm, base)
    r = evaluate_batch(cm2, np.zeros(cm.n_produced), np.zeros(cm.n_produced), U,
                       np.ones((n, len(cm.suppliers))), Zd, check=False)
    return r["profit"]


def _with_base(cm: CompiledMarket, base: np.ndarray) -> CompiledMarket:
    from dataclasses import replace
    return replace(cm, base=base)


def _dump(prob: RecourseLp, path: str | None, name: str) -> None:
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(lp.to_lp_format(prob.to_problem(), name))


def optimal_usage_stage3(spec: MarketSpec, obtained: Mapping[str, float], demanded: Mapping[str, float],
                         dump_lp: str | None = None) -> tuple[dict[str, float], float]:
    """Usage maximizing one scenario's profit (production cost excluded)."""
    cm = compile_market(spec)
    return _single_row(cm, _obtained_vector(cm, obtained), _demand_vector(cm, demanded)[None, :],
                       np.ones(1), dump_lp, "stage3")


def optimal_usage_stage2(spec: MarketSpec, obtained: Mapping[str, float],
                         demand_samples: Sequence[tuple[Mapping[str, float], float]],
                         dump_lp: str | None = None) -> tuple[dict[str, float], float]:
    """One usage vector maximizing expected profit over weighted demand samples."""
    if not demand_samples:
        raise ValueError("need at least one demand sample")
    cm = compile_market(spec)
    dem = np.array([_demand_vector(cm, d) for d, _ in demand_samples]).reshape(len(demand_samples), cm.n_demanded)
    w = np.array([float(wt) for _, wt in demand_samples])
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("sample weights must be >= 0 with a positive sum")
    return _single_row(cm, _obtained_vector(cm, obtained), dem, w / w.sum(), dump_lp, "stage2")


def _single_row(cm, obt, dem, w, dump_lp, name):
    K = dem.shape[0]
    prob = build_recourse_lp(cm, dem, w, np.zeros(K, dtype=int), obtained=obt[None, :])
    _dump(prob, dump_lp, name)
    if cm.n_mappings == 0:
        U = np.zeros((1, 0))
    else:
        sol = lp.solve_lp(prob.to_problem())
        if not sol.optimal:
            raise RecourseError(f"recourse LP reported {sol.status.value}")
        U = clip_usage(cm, prob.usage(sol.x), obt[None, :])
    vals = np.array([recourse_values(cm, U, obt, dem[k])[0] for k in range(K)])
    return dict(zip(cm.mapping_ids, U[0].tolist())), weighted_sum(vals, w)


def brute_force_usage(spec: MarketSpec, obtained: Mapping[str, float], demanded: Mapping[str, float],
                      step: float = 1.0) -> tuple[dict[str, float], float]:
    """Exhaustive search over usage on a grid of ``step``; the test oracle for the LP."""
    if not step > 0:
        raise ValueError("grid step must be positive")
    cm = compile_market(spec)
    obt = _obtained_vector(cm, obtained)
    dem = _demand_vector(cm, demanded)
    axes = []
    for j in range(cm.n_mappings):
        need = cm.m_in[j]
        lim = min(obt[i] / need[i] for i in np.flatnonzero(need > 0))
        axes.append(np.arange(0.0, math.floor(lim / step + 1e-9) + 1) * step)
    size = math.prod(len(a) for a in axes) if axes else 1
    if size > MAX_GRID:
        raise ValueError(f"usage grid has {size} points, limit is {MAX_GRID}")
    if not axes:
        return {}, float(recourse_values(cm, np.zeros((1, 0)), obt, dem)[0])
    grid = np.array(list(itertools.product(*axes)), dtype=float)
    feasible = np.all(grid @ cm.m_in <= obt[None, :] + 1e-9, axis=1)
    grid = grid[feasible]
    vals = recourse_values(cm, grid, obt, dem)
    best = int(np.argmax(vals))
    return dict(zip(cm.mapping_ids, grid[best].tolist())), float(vals[best])
