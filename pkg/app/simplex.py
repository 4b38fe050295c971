"""Dense bounded-variable primal simplex with Bland's rule.

Solves   min c.x   s.t.  A x (sense) b,  lower <= x <= upper
where every structural variable has a finite lower bound. Rows with sense ">=" are
negated, "<=" rows get a slack and rows whose starting residual has the wrong sign get
an artificial. Phase I minimises the artificial sum; Phase II keeps the final basis and
fixes artificials at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from app.config import LP_TOLERANCE, MAX_SIMPLEX_ITERATIONS, logger
from app.errors import InvalidArgumentError, LPError

SENSES = ("=", "<=", ">=")


class SimplexStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True, eq=False)
class SimplexResult:
    status: SimplexStatus
    x: np.ndarray | None
    objective: float
    iterations: int


class _BoundedSimplex:
    """Working state of one solve: columns, bounds, basis and nonbasic positions."""

    def __init__(self, A: np.ndarray, b: np.ndarray, lower: np.ndarray, upper: np.ndarray, tol: float) -> None:
        self.A = A
        self.b = b
        self.lower = lower
        self.upper = upper
        self.tol = tol
        self.m, self.ncols = A.shape
        self.at_upper = np.zeros(self.ncols, dtype=bool)
        self.basis: list[int] = []
        self.iterations = 0

    def nonbasic_values(self) -> np.ndarray:
        values = np.where(self.at_upper, self.upper, self.lower)
        values[self.basis] = 0.0
        return values

    def primal(self, lu) -> np.ndarray:
        x = self.nonbasic_values()
        rhs = self.b - self.A @ x
        x[self.basis] = lu_solve(lu, rhs)
        return x

    def run(self, cost: np.ndarray, max_iterations: int) -> np.ndarray:
        tol = self.tol
        while True:
            if self.iterations >= max_iterations:
                raise LPError(f"Limite de iteraciones del simplex alcanzado ({max_iterations}).")
            basis = self.basis
            lu = lu_factor(self.A[:, basis])
            x = self.primal(lu)
            y = lu_solve(lu, cost[basis], trans=1)
            reduced = cost - self.A.T @ y

            movable = self.upper > self.lower + tol
            is_basic = np.zeros(self.ncols, dtype=bool)
            is_basic[basis] = True
            increase = ~is_basic & movable & ~self.at_upper & (reduced < -tol)
            decrease = ~is_basic & movable & self.at_upper & (reduced > tol)
            candidates = np.nonzero(increase | decrease)[0]
            if candidates.size == 0:
                return x

            entering = int(candidates[0])
            direction = 1.0 if increase[entering] else -1.0
            alpha = lu_solve(lu, self.A[:, entering])
            change = -direction * alpha

            best = math.inf
            leave_row = -1
            leave_to_upper = False
            for row in range(self.m):
                var = basis[row]
                if change[row] < -tol:
                    limit = (x[var] - self.lower[var]) / -change[row]
                    to_upper = False
                elif change[row] > tol and math.isfinite(self.upper[var]):
                    limit = (self.upper[var] - x[var]) / change[row]
                    to_upper = True
                else:
                    continue
                limit = max(limit, 0.0)
                # Bland: among tied leaving candidates the smallest variable index wins.
                if limit < best - tol or (abs(limit - best) <= tol and var < basis[leave_row]):
                    best = limit
                    leave_row = row
                    leave_to_upper = to_upper

            flip = self.upper[entering] - self.lower[entering]
            if leave_row < 0 and not math.isfinite(flip):
                raise LPError("Modelo LP no acotado.")
            self.iterations += 1
            if flip <= best:
                self.at_upper[entering] = not self.at_upper[entering]
                continue
            leaving = basis[leave_row]
            basis[leave_row] = entering
            self.at_upper[entering] = False
            self.at_upper[leaving] = leave_to_upper


def solve_bounded_lp(
    c: np.ndarray,
    A: np.ndarray,
    senses: list[str],
    b: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    tol: float = LP_TOLERANCE,
    max_iterations: int = MAX_SIMPLEX_ITERATIONS,
) -> SimplexResult:
    c = np.asarray(c, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64).reshape(len(senses), c.size)
    b = np.asarray(b, dtype=np.float64)
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    nvars = c.size
    if not np.all(np.isfinite(lower)):
        raise InvalidArgumentError("Todas las variables necesitan cota inferior finita.")
    if any(sense not in SENSES for sense in senses):
        raise InvalidArgumentError(f"Sentido de fila desconocido: {senses}.")
    if np.any(upper < lower - tol):
        return SimplexResult(SimplexStatus.INFEASIBLE, None, math.inf, 0)

    m = len(senses)
    if m == 0:
        if np.any((c < -tol) & ~np.isfinite(upper)):
            raise LPError("Modelo LP no acotado.")
        x = np.where(c < 0, upper, lower)
        return SimplexResult(SimplexStatus.OPTIMAL, x, float(c @ x), 0)
    flip = np.array([-1.0 if sense == ">=" else 1.0 for sense in senses])
    rows = A * flip[:, None]
    rhs = b * flip
    has_slack = np.array([sense != "=" for sense in senses])
    slack_rows = np.nonzero(has_slack)[0]

    start = lower.copy()
    residual = rhs - rows @ start
    needs_artificial = ~has_slack | (residual < 0)
    art_rows = np.nonzero(needs_artificial)[0]

    nslack = slack_rows.size
    nart = art_rows.size
    ncols = nvars + nslack + nart
    full = np.zeros((m, ncols))
    full[:, :nvars] = rows
    full[slack_rows, nvars + np.arange(nslack)] = 1.0
    for pos, row in enumerate(art_rows):
        full[row, nvars + nslack + pos] = 1.0 if residual[row] >= 0 else -1.0

    lo = np.concatenate([lower, np.zeros(nslack + nart)])
    hi = np.concatenate([upper, np.full(nslack, math.inf), np.full(nart, math.inf)])

    solver = _BoundedSimplex(full, rhs, lo, hi, tol)
    slack_of_row = {int(row): nvars + pos for pos, row in enumerate(slack_rows)}
    art_of_row = {int(row): nvars + nslack + pos for pos, row in enumerate(art_rows)}
    solver.basis = [art_of_row[row] if row in art_of_row else slack_of_row[row] for row in range(m)]

    if nart:
        phase_one = np.zeros(ncols)
        phase_one[nvars + nslack:] = 1.0
        x = solver.run(phase_one, max_iterations)
        infeasibility = float(x[nvars + nslack:].sum())
        if infeasibility > max(1e-7, tol * (1.0 + float(np.abs(rhs).max(initial=0.0)))):
            logger.debug(f"Simplex: fase I termina con infactibilidad {infeasibility:.3e}.")
            return SimplexResult(SimplexStatus.INFEASIBLE, None, math.inf, solver.iterations)
        solver.upper[nvars + nslack:] = 0.0
        solver.at_upper[nvars + nslack:] = False

    phase_two = np.zeros(ncols)
    phase_two[:nvars] = c
    x = solver.run(phase_two, max_iterations)
    structural = np.clip(x[:nvars], lower, upper)
    return SimplexResult(SimplexStatus.OPTIMAL, structural, float(c @ structural), solver.iterations)
