"""Self-contained LP and mixed-binary solver for desk-scale master problems.

The LP engine is a dense bounded-variable simplex: rows get a slack whose
bounds encode the sense, infeasible starting slacks get a phase-1 artificial,
and pricing uses Dantzig's rule with a Bland fallback once pivots stay
degenerate for too long. The basis is refactorized every iteration, which is
slow asymptotically but rock solid at the few-hundred-row sizes used here.

Binary variables are handled by best-bound branch and bound with
most-fractional branching.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np

from .model import CapmaxError, ValidationError

INF = float("inf")
INT_TOL = 1e-6
PIVOT_EPS = 1e-10


class SimplexStallError(CapmaxError):
    """Simplex exceeded its iteration cap; carries the final basis for diagnosis."""

    def __init__(self, message, basis=None):
        super().__init__(message)
        self.basis = list(basis) if basis is not None else None


@dataclass
class LinRow:
    coeffs: tuple          # ((index, coef), ...)
    sense: str             # "<=", ">=", "="
    rhs: float


class LpModel:
    """Sparse-input linear program with per-variable bounds."""

    def __init__(self, num_vars: int, sense: str = "max"):
        if num_vars < 1:
            raise ValidationError("num_vars must be >= 1")
        if sense not in ("max", "min"):
            raise ValidationError(f"sense must be 'max' or 'min', got {sense!r}")
        self.num_vars = num_vars
        self.sense = sense
        self.objective = np.zeros(num_vars)
        self.lb = np.full(num_vars, -INF)
        self.ub = np.full(num_vars, INF)
        self.rows: list[LinRow] = []

    def set_objective_coef(self, j: int, coef: float) -> None:
        self.objective[j] = coef

    def set_bounds(self, j: int, lo: float, hi: float) -> None:
        if lo > hi:
            raise ValidationError(f"variable {j}: lower bound {lo} exceeds upper {hi}")
        self.lb[j], self.ub[j] = lo, hi

    def add_row(self, coeffs, sense: str, rhs: float) -> int:
        if sense not in ("<=", ">=", "="):
            raise ValidationError(f"bad row sense {sense!r}")
        if not np.isfinite(rhs):
            raise ValidationError("row rhs must be finite")
        items = tuple(sorted(dict(coeffs).items()))
        for j, v in items:
            if not 0 <= j < self.num_vars:
                raise ValidationError(f"row references variable {j} out of range")
            if not np.isfinite(v):
                raise ValidationError("row coefficients must be finite")
        self.rows.append(LinRow(items, sense, float(rhs)))
        return len(self.rows) - 1

    def validate(self) -> None:
        if not np.all(np.isfinite(self.objective)):
            raise ValidationError("objective must be finite")
        if np.any(self.lb > self.ub):
            raise ValidationError("variable bounds must satisfy lb <= ub")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)):
            raise ValidationError("bounds may be infinite but not NaN")


class MilpModel:
    """An LpModel plus the index set of binary variables (bounds clipped into [0,1])."""

    def __init__(self, lp: LpModel, binaries):
        self.lp = lp
        self.binaries = sorted(set(int(j) for j in binaries))
        for j in self.binaries:
            if not 0 <= j < lp.num_vars:
                raise ValidationError(f"binary index {j} out of range")
            lo = max(0.0, lp.lb[j])
            hi = min(1.0, lp.ub[j])
            if lo > hi:
                raise ValidationError(f"binary {j} has empty bound interval")
            lp.set_bounds(j, lo, hi)


@dataclass
class LpSolution:
    status: str            # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None
    value: float | None
    duals: np.ndarray | None   # shadow prices d(value)/d(rhs) in the model's sense
    iterations: int
    basis: list = field(default_factory=list)


@dataclass
class MilpSolution:
    status: str            # "optimal" | "infeasible" | "unbounded" | "limit"
    x: np.ndarray | None
    value: float | None
    bound: float | None
    node_count: int
    bound_history: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Bounded-variable simplex core
# ---------------------------------------------------------------------------

AT_LOWER, AT_UPPER, FREE_AT_ZERO, BASIC = 0, 1, 2, 3


class _Tableau:
    def __init__(self, A, b, lo, up):
        self.A = A                    # (r, N)
        self.b = b
        self.lo = lo
        self.up = up
        self.r, self.N = A.shape
        self.state = np.empty(self.N, dtype=np.int8)
        self.x = np.zeros(self.N)
        self.basis = np.empty(self.r, dtype=np.int64)

    def nonbasic_value(self, j):
        if self.state[j] == AT_LOWER:
            return self.lo[j]
        if self.state[j] == AT_UPPER:
            return self.up[j]
        return 0.0

    def recompute_basics(self):
        nb_val = np.array([self.nonbasic_value(j) if self.state[j] != BASIC else 0.0
                           for j in range(self.N)])
        rhs = self.b - self.A @ nb_val
        B = self.A[:, self.basis]
        self.x = nb_val
        self.x[self.basis] = np.linalg.solve(B, rhs)


def _simplex(tab: _Tableau, cost: np.ndarray, tol: float, max_iters: int):
    """Minimize cost over the tableau; returns (status, iterations)."""
    r, N = tab.r, tab.N
    bland = False
    degen_streak = 0
    bland_trigger = 2 * (r + N)
    for it in range(max_iters):
        tab.recompute_basics()
        B = tab.A[:, tab.basis]
        y = np.linalg.solve(B.T, cost[tab.basis])
        d = cost - tab.A.T @ y

        entering, sigma, best_score = -1, 0.0, tol
        for j in range(N):
            if tab.state[j] == BASIC:
                continue
            dj = d[j]
            if tab.state[j] == AT_LOWER and dj < -tol:
                score = -dj
                sj = 1.0
            elif tab.state[j] == AT_UPPER and dj > tol:
                score = dj
                sj = -1.0
            elif tab.state[j] == FREE_AT_ZERO and abs(dj) > tol:
                score = abs(dj)
                sj = -np.sign(dj)
            else:
                continue
            if bland:
                entering, sigma = j, sj
                break
            if score > best_score:
                entering, sigma, best_score = j, sj, score
        if entering < 0:
            return "optimal", it

        w = np.linalg.solve(B, tab.A[:, entering])
        # entering moves by sigma*delta; basic k moves by -sigma*w_k*delta
        delta = tab.up[entering] - tab.lo[entering] if tab.state[entering] != FREE_AT_ZERO else INF
        leaving, leave_to = -1, AT_LOWER
        for k in range(r):
            jk = tab.basis[k]
            rate = sigma * w[k]
            if rate > PIVOT_EPS:
                room = tab.x[jk] - tab.lo[jk]
                if tab.lo[jk] == -INF:
                    continue
                ratio = room / rate
                if ratio < delta - PIVOT_EPS or (abs(ratio - delta) <= PIVOT_EPS
                                                 and (leaving < 0 or jk < tab.basis[leaving])):
                    delta, leaving, leave_to = max(ratio, 0.0), k, AT_LOWER
            elif rate < -PIVOT_EPS:
                if tab.up[jk] == INF:
                    continue
                room = tab.up[jk] - tab.x[jk]
                ratio = room / -rate
                if ratio < delta - PIVOT_EPS or (abs(ratio - delta) <= PIVOT_EPS
                                                 and (leaving < 0 or jk < tab.basis[leaving])):
                    delta, leaving, leave_to = max(ratio, 0.0), k, AT_UPPER
        if delta == INF:
            return "unbounded", it

        if delta <= PIVOT_EPS:
            degen_streak += 1
            if degen_streak >= bland_trigger:
                bland = True
        else:
            degen_streak = 0
            bland = False

        if leaving < 0:
            # bound flip: entering runs to its opposite bound
            tab.state[entering] = AT_UPPER if sigma > 0 else AT_LOWER
        else:
            left_var = tab.basis[leaving]
            tab.basis[leaving] = entering
            tab.state[left_var] = leave_to
            tab.state[entering] = BASIC
    raise SimplexStallError(
        f"simplex hit the iteration cap ({max_iters}) without converging",
        basis=tab.basis,
    )


def solve_lp(model: LpModel, tol: float = 1e-8) -> LpSolution:
    """Two-phase bounded-variable simplex; duals are shadow prices w.r.t. row rhs."""
    model.validate()
    n, r = model.num_vars, len(model.rows)
    c_int = model.objective if model.sense == "min" else -model.objective

    if r == 0:
        # pure bound problem: push each variable to its favorable bound
        x = np.where(c_int > 0, model.lb, np.where(c_int < 0, model.ub, 0.0))
        x = np.where(np.isfinite(x), x, np.where(c_int == 0, 0.0, x))
        if not np.all(np.isfinite(x[c_int != 0])):
            return LpSolution("unbounded", None, None, None, 0)
        x = np.clip(x, model.lb, model.ub)
        x[~np.isfinite(x)] = 0.0
        val = float(model.objective @ x)
        return LpSolution("optimal", x, val, np.zeros(0), 0)

    # columns: structural | slacks | artificials (appended lazily)
    A = np.zeros((r, n + r))
    b = np.zeros(r)
    lo = np.concatenate([model.lb, np.zeros(r)])
    up = np.concatenate([model.ub, np.zeros(r)])
    for i, row in enumerate(model.rows):
        for j, v in row.coeffs:
            A[i, j] = v
        A[i, n + i] = 1.0
        b[i] = row.rhs
        if row.sense == "<=":
            lo[n + i], up[n + i] = 0.0, INF
        elif row.sense == ">=":
            lo[n + i], up[n + i] = -INF, 0.0
        else:
            lo[n + i], up[n + i] = 0.0, 0.0

    state = np.empty(n + r, dtype=np.int8)
    x_init = np.zeros(n + r)
    for j in range(n):
        if np.isfinite(lo[j]):
            state[j], x_init[j] = AT_LOWER, lo[j]
        elif np.isfinite(up[j]):
            state[j], x_init[j] = AT_UPPER, up[j]
        else:
            state[j], x_init[j] = FREE_AT_ZERO, 0.0

    s_init = b - A[:, :n] @ x_init[:n]
    art_cols, art_signs, basis = [], [], []
    feas_eps = 1e-9 * (1.0 + np.abs(b).max(initial=0.0))
    for i in range(r):
        si = s_init[i]
        if lo[n + i] - feas_eps <= si <= up[n + i] + feas_eps:
            state[n + i] = BASIC
            basis.append(n + i)
        else:
            anchor = up[n + i] if si > up[n + i] else lo[n + i]
            state[n + i] = AT_UPPER if si > up[n + i] else AT_LOWER
            resid = si - anchor
            art_cols.append(i)
            art_signs.append(np.sign(resid))
            basis.append(n + r + len(art_cols) - 1)

    n_art = len(art_cols)
    if n_art:
        A_art = np.zeros((r, n_art))
        for k, (i, s) in enumerate(zip(art_cols, art_signs)):
            A_art[i, k] = s
        A_full = np.hstack([A, A_art])
        lo = np.concatenate([lo, np.zeros(n_art)])
        up = np.concatenate([up, np.full(n_art, INF)])
        state = np.concatenate([state, np.full(n_art, BASIC, dtype=np.int8)])
    else:
        A_full = A

    tab = _Tableau(A_full, b, lo, up)
    tab.state = state
    tab.basis = np.array(basis, dtype=np.int64)

    max_iters = 2000 + 200 * (r + n)
    iters_total = 0
    if n_art:
        c1 = np.zeros(A_full.shape[1])
        c1[n + r:] = 1.0
        status, it1 = _simplex(tab, c1, tol, max_iters)
        iters_total += it1
        tab.recompute_basics()
        if status != "optimal" or tab.x[n + r:].sum() > 1e-7 * (1.0 + np.abs(b).max()):
            return LpSolution("infeasible", None, None, None, iters_total)
        # pin artificials at zero for phase 2
        tab.up[n + r:] = 0.0
        tab.x[n + r:] = np.clip(tab.x[n + r:], 0.0, 0.0)

    c2 = np.zeros(A_full.shape[1])
    c2[:n] = c_int
    status, it2 = _simplex(tab, c2, tol, max_iters)
    iters_total += it2
    if status == "unbounded":
        return LpSolution("unbounded", None, None, None, iters_total)
    tab.recompute_basics()
    x = tab.x[:n].copy()
    value_int = float(c_int @ x)
    B = tab.A[:, tab.basis]
    y = np.linalg.solve(B.T, c2[tab.basis])
    duals = y if model.sense == "min" else -y
    value = value_int if model.sense == "min" else -value_int
    return LpSolution("optimal", x, value, duals, iters_total, basis=list(tab.basis))


# ---------------------------------------------------------------------------
# Branch and bound
# ---------------------------------------------------------------------------


def _clone_with_bounds(model: LpModel, fixed: dict[int, tuple[float, float]]) -> LpModel:
    clone = LpModel(model.num_vars, model.sense)
    clone.objective = model.objective.copy()
    clone.lb = model.lb.copy()
    clone.ub = model.ub.copy()
    clone.rows = model.rows
    for j, (lo, hi) in fixed.items():
        clone.lb[j] = max(clone.lb[j], lo)
        clone.ub[j] = min(clone.ub[j], hi)
        if clone.lb[j] > clone.ub[j]:
            raise ValidationError("empty branch bounds")
    return clone

def solve_milp(model: MilpModel, tol: float = 1e-8,
               time_limit: float | None = None) -> MilpSolution:
    """Best-bound branch and bound over the binary variables."""
    lp = model.lp
    lp.validate()
    sense_mul = 1.0 if lp.sense == "max" else -1.0

    def better(a, b):
        return a > b if lp.sense == "max" else a < b

    start = time.monotonic()
    root = solve_lp(lp, tol)
    if root.status == "infeasible":
        return MilpSolution("infeasible", None, None, None, 1)
    if root.status == "unbounded":
        return MilpSolution("unbounded", None, None, None, 1)

    counter = 0
    heap = [(-sense_mul * root.value, counter, {}, root)]
    incumbent, inc_val = None, -INF if lp.sense == "max" else INF
    node_count = 1
    bound_history = []
    status = "optimal"
    break_bound = None

    while heap:
        neg_bound, _, fixed, sol = heapq.heappop(heap)
        node_bound = -neg_bound * sense_mul
        bound_history.append(node_bound)
        if incumbent is not None and not better(node_bound, inc_val + sense_mul * tol * (1 + abs(inc_val))):
            break_bound = node_bound
            break  # best-bound order: nothing left can beat the incumbent
        if time_limit is not None and time.monotonic() - start > time_limit:
            status = "limit"
            break_bound = node_bound
            break

        frac = {j: abs(sol.x[j] - round(sol.x[j])) for j in model.binaries}
        fractional = [j for j, fj in frac.items() if fj > INT_TOL]
        if not fractional:
            # integral candidate: fix binaries and clean up the continuous part
            fixed_int = dict(fixed)
            for j in model.binaries:
                v = float(round(sol.x[j]))
                fixed_int[j] = (v, v)
            try:
                clean = solve_lp(_clone_with_bounds(lp, fixed_int), tol)
            except ValidationError:
                clean = None
            cand = clean if clean is not None and clean.status == "optimal" else sol
            if cand.status == "optimal" and (incumbent is None or better(cand.value, inc_val)):
                incumbent, inc_val = cand.x.copy(), cand.value
                for j in model.binaries:
                    incumbent[j] = round(incumbent[j])
            continue

        j_star = max(fractional, key=lambda j: (min(frac[j], 1 - frac[j]), -j))
        for lo_hi in ((0.0, 0.0), (1.0, 1.0)):
            child_fixed = dict(fixed)
            child_fixed[j_star] = lo_hi
            try:
                child = solve_lp(_clone_with_bounds(lp, child_fixed), tol)
            except ValidationError:
                continue
            node_count += 1
            if child.status != "optimal":
                continue
            if incumbent is not None and not better(child.value, inc_val):
                continue
            counter += 1
            heapq.heappush(heap, (-sense_mul * child.value, counter, child_fixed, child))

    if incumbent is None:
        if status == "limit":
            return MilpSolution("limit", None, None, break_bound, node_count, bound_history)
        return MilpSolution("infeasible", None, None, None, node_count, bound_history)

    # honest global bound: the incumbent, or whatever was still open when we stopped
    bound = inc_val
    if break_bound is not None and better(break_bound, bound):
        bound = break_bound
    return MilpSolution(status, incumbent, inc_val, bound, node_count, bound_history)
