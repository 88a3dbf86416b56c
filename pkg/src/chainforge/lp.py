"""Dense two-phase primal simplex with Bland's rule.

Meant for the small recourse problems (a few dozen variables) solved per
scenario; the tableau is a plain numpy array and every pivot choice is
deterministic.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

FEAS_TOL = 1e-7
OPT_TOL = 1e-9
PIVOT_TOL = 1e-11


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


LE, EQ, GE = "<=", "=", ">="


@dataclass
class LpProblem:
    """maximize ``c @ x`` subject to ``A[i] @ x (sense[i]) b[i]`` and ``lb <= x <= ub``."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    senses: Sequence[str]
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    names: Sequence[str] | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.senses = list(self.senses)
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, dtype=float)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        m = self.A.shape[0]
        if self.b.size != m or len(self.senses) != m:
            raise ValueError("constraint rows, rhs and senses disagree in length")
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bounds must match the number of variables")
        if any(s not in (LE, EQ, GE) for s in self.senses):
            raise ValueError(f"unknown constraint sense in {self.senses}")
        for arr, what in ((self.c, "objective"), (self.A, "matrix"), (self.b, "rhs")):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite {what} coefficient")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)) or np.any(self.lb > self.ub):
            raise ValueError("inconsistent variable bounds")

    @property
    def n_vars(self) -> int:
        return self.c.size


@dataclass
class LpSolution:
    status: Status
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective: float = math.nan
    basis: tuple[int, ...] = ()

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def _pivot(T: np.ndarray, basis: list[int], row: int, col: int) -> None:
    T[row] /= T[row, col]
    colv = T[:, col].copy()
    colv[row] = 0.0
    T -= np.outer(colv, T[row])
    basis[row] = col


def _simplex(T: np.ndarray, basis: list[int], allowed: np.ndarray, max_iter: int) -> Status:
    """Maximize the objective held in the last row of ``T`` (as reduced costs).

    The last row stores ``-reduced cost``: a negative entry means the column
    improves the objective.
    """
    m = T.shape[0] - 1
    for _ in range(max_iter):
        obj = T[-1, :-1]
        cand = np.flatnonzero((obj < -OPT_TOL) & allowed)
        if cand.size == 0:
            return Status.OPTIMAL
        col = int(cand[0])
        colv = T[:m, col]
        pos = colv > PIVOT_TOL
        if not pos.any():
            return Status.UNBOUNDED
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / colv[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, abs(best)))
        row = min(ties, key=lambda r: basis[r])
        _pivot(T, basis, int(row), col)
    raise RuntimeError("simplex iteration limit reached")


def solve_lp(problem: LpProblem, max_iter: int = 50_000) -> LpSolution:
    """Solve ``problem``; infeasibility and unboundedness come back as a status."""
    c, A, b = problem.c, problem.A, problem.b
    lb, ub = problem.lb, problem.ub
    n = c.size

    # Substitute x = lb + x' for finite lb; split free variables as x+ - x-.
    cols: list[tuple[int, float]] = []  # (original var, sign)
    shift = np.where(np.isfinite(lb), lb, 0.0)
    for j in range(n):
        if np.isfinite(lb[j]):
            cols.append((j, 1.0))
        elif np.isfinite(ub[j]):
            cols.append((j, -1.0))  # x = ub - x'
            shift[j] = ub[j]
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    nx = len(cols)
    Ax = np.zeros((A.shape[0], nx))
    cx = np.zeros(nx)
    for k, (j, s) in enumerate(cols):
        Ax[:, k] = s * A[:, j]
        cx[k] = s * c[j]
    rhs = b - A @ shift
    senses = list(problem.senses)

    rows = [Ax[i] for i in range(Ax.shape[0])]
    # Finite upper bounds on shifted-from-lb variables become explicit rows.
    for k, (j, s) in enumerate(cols):
        if s > 0 and np.isfinite(lb[j]) and np.isfinite(ub[j]):
            r = np.zeros(nx)
            r[k] = 1.0
            rows.append(r)
            rhs = np.append(rhs, ub[j] - lb[j])
            senses.append(LE)
    A2 = np.array(rows).reshape(len(rows), nx)
    m = A2.shape[0]

    # Normalize to nonnegative rhs.
    for i in range(m):
        if rhs[i] < 0:
            A2[i] = -A2[i]
            rhs[i] = -rhs[i]
            senses[i] = {LE: GE, GE: LE, EQ: EQ}[senses[i]]

    n_slack = sum(1 for s in senses if s != EQ)
    n_art = sum(1 for s in senses if s != LE)
    width = nx + n_slack + n_art
    T = np.zeros((m + 1, width + 1))
    T[:m, :nx] = A2
    T[:m, -1] = rhs
    basis: list[int] = [0] * m
    si, ai = nx, nx + n_slack
    art_cols = []
    for i, s in enumerate(senses):
        if s == LE:
            T[i, si] = 1.0
            basis[i] = si
            si += 1
        elif s == GE:
            T[i, si] = -1.0
            si += 1
            T[i, ai] = 1.0
            basis[i] = ai
            art_cols.append(ai)
            ai += 1
        else:
            T[i, ai] = 1.0
            basis[i] = ai
            art_cols.append(ai)
            ai += 1

    allowed = np.ones(width, dtype=bool)
    if art_cols:
        # Phase 1: maximize -sum(artificials).
        T[-1, :] = 0.0
        T[-1, art_cols] = 1.0
        for i, bv in enumerate(basis):
            if bv in art_cols:
                T[-1] -= T[i]
        status = _simplex(T, basis, allowed, max_iter)
        if status is not Status.OPTIMAL or -T[-1, -1] > FEAS_TOL * max(1.0, np.abs(rhs).max()):
            return LpSolution(Status.INFEASIBLE)
        # Drive remaining artificials out of the basis where possible.
        for i, bv in enumerate(basis):
            if bv in art_cols:
                nz = np.flatnonzero(np.abs(T[i, :nx + n_slack]) > PIVOT_TOL)
                if nz.size:
                    _pivot(T, basis, i, int(nz[0]))
        allowed[art_cols] = False

    T[-1, :] = 0.0
    T[-1, :nx] = -cx
    for i, bv in enumerate(basis):
        if T[-1, bv] != 0.0:
            T[-1] -= T[-1, bv] * T[i]
    status = _simplex(T, basis, allowed, max_iter)
    if status is Status.UNBOUNDED:
        return LpSolution(Status.UNBOUNDED)

    xs = np.zeros(width)
    for i, bv in enumerate(basis):
        xs[bv] = T[i, -1]
    x = shift.copy()
    for k, (j, s) in enumerate(cols):
        x[j] += s * xs[k]
    x = np.clip(x, lb, ub)
    return LpSolution(Status.OPTIMAL, x, float(c @ x), tuple(basis))


def _fmt(v: float) -> str:
    return repr(float(v))


def to_lp_format(problem: LpProblem, name: str = "problem") -> str:
    """Render in CPLEX LP text format for cross-checks with external solvers."""
    names = list(problem.names or [f"x{j}" for j in range(problem.n_vars)])

    def expr(coefs: np.ndarray) -> str:
        terms = [f"{'+' if v >= 0 else '-'} {_fmt(abs(v))} {names[j]}"
                 for j, v in enumerate(coefs) if v != 0.0]
        return " ".join(terms) if terms else "0 " + names[0]

    out = [f"\\ {name}", "Maximize", f" obj: {expr(problem.c)}", "Subject To"]
    for i, (row, s, rhs) in enumerate(zip(problem.A, problem.senses, problem.b)):
        out.append(f" c{i}: {expr(row)} {s} {_fmt(rhs)}")
    out.append("Bounds")
    for j, nm in enumerate(names):
        lo, hi = problem.lb[j], problem.ub[j]
        lo_s = "-inf" if not np.isfinite(lo) else _fmt(lo)
        hi_s = "+inf" if not np.isfinite(hi) else _fmt(hi)
        out.append(f" {lo_s} <= {nm} <= {hi_s}")
    out.append("End")
    return "\n".join(out) + "\n"
