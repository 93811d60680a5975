"""Brute-force ground truth for small instances.

`brute_force_joint` enumerates every feasible open set (up to 2^m, guarded)
and solves the concave inner spend problem for each; `grid_cost_oracle`
bounds the inner optimum by exhaustive grid search, independent of the
gradient-based solver, with an explicit Lipschitz accuracy guarantee.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .model import InfeasibleError, Instance, JointResult, Solution, ValidationError, mrum_value
from .costopt import solve_cost_mrum

MAX_ENUM_LOCATIONS = 20
MAX_GRID_OPEN = 4
GRID_BATCH = 500_000


@dataclass
class GridResult:
    value: float
    x_best: np.ndarray
    guarantee: float      # |true optimum - value| <= guarantee
    points_evaluated: int


def _lipschitz_per_coord(instance: Instance, y: np.ndarray) -> np.ndarray:
    """Upper bound on |df/dx_i| over X(y): gradients are largest at the scaled lower bounds."""
    lo = y * instance.lower
    d_min = instance.u_comp + (instance.a * y) @ lo + instance.b @ y
    return ((instance.q * instance.u_comp) / d_min**2) @ (instance.a * y)


def grid_cost_oracle(instance: Instance, y, step: float) -> GridResult:
    """Exhaustive grid maximization of the spend objective for a fixed open set.

    Grid points include both box endpoints, and points on the budget facet are
    completed exactly; the optimum is matched within sum_i lipschitz_i * step.
    """
    y = np.asarray(y, dtype=np.float64)
    open_idx = np.nonzero(y > 0)[0]
    k = len(open_idx)
    if k > MAX_GRID_OPEN:
        raise ValidationError(f"grid oracle limited to {MAX_GRID_OPEN} open locations, got {k}")
    if step <= 0:
        raise ValidationError("step must be positive")
    lip = _lipschitz_per_coord(instance, y)
    guarantee = float(lip[open_idx].sum() * step)
    if k == 0:
        return GridResult(0.0, np.zeros(instance.m), 0.0, 1)

    lo = instance.lower[open_idx] * y[open_idx]
    hi = instance.upper[open_idx] * y[open_idx]
    axes = []
    for j in range(k):
        n = max(2, int(np.ceil((hi[j] - lo[j]) / step)) + 1) if hi[j] > lo[j] else 1
        axes.append(np.linspace(lo[j], hi[j], n))
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([g.ravel() for g in mesh], axis=1)

    # complete the budget facet: for each coordinate, solve for the value that
    # lands exactly on sum x = C given the other coordinates on the grid
    budget = instance.budget
    extra = []
    for j in range(k):
        others = points.sum(axis=1) - points[:, j]
        xj = budget - others
        ok = (xj >= lo[j] - 1e-12) & (xj <= hi[j] + 1e-12)
        if ok.any():
            pts = points[ok].copy()
            pts[:, j] = np.clip(xj[ok], lo[j], hi[j])
            extra.append(pts)
    if extra:
        points = np.vstack([points] + extra)

    feasible = points.sum(axis=1) <= budget + 1e-12
    points = points[feasible]
    if len(points) == 0:
        raise InfeasibleError(["no grid point satisfies the budget"])

    a_open = instance.a[:, open_idx] * y[open_idx]
    offset = instance.u_comp + instance.b @ y
    qu = instance.q * instance.u_comp
    total_q = instance.q.sum()

    best_val, best_row = -np.inf, None
    for lo_i in range(0, len(points), GRID_BATCH):
        chunk = points[lo_i:lo_i + GRID_BATCH]
        d = offset[:, None] + a_open @ chunk.T
        vals = total_q - (qu[:, None] / d).sum(axis=0)
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val, best_row = float(vals[j]), chunk[j]

    x_best = np.zeros(instance.m)
    x_best[open_idx] = best_row
    return GridResult(best_val, x_best, guarantee, len(points))


def brute_force_joint(instance: Instance, cost_tol: float = 1e-10,
                      cross_check_step: float | None = None) -> JointResult:
    """Exact optimum by enumerating open sets and solving each inner spend problem."""
    m = instance.m
    if m > MAX_ENUM_LOCATIONS:
        raise ValidationError(f"enumeration guarded to m <= {MAX_ENUM_LOCATIONS}, got m={m}")
    best_val = 0.0
    best_y = np.zeros(m, dtype=np.int64)
    best_x = np.zeros(m)
    for k in range(1, min(instance.cap, m) + 1):
        for subset in itertools.combinations(range(m), k):
            idx = np.array(subset)
            if instance.lower[idx].sum() > instance.budget + 1e-12:
                continue
            y = np.zeros(m)
            y[idx] = 1.0
            res = solve_cost_mrum(instance, y, tol=cost_tol, with_multipliers=False)
            if cross_check_step is not None and k <= MAX_GRID_OPEN:
                grid = grid_cost_oracle(instance, y, cross_check_step)
                if abs(grid.value - res.value) > grid.guarantee + 1e-9:
                    raise ValidationError(
                        f"cost solver and grid oracle disagree on subset {subset}: "
                        f"{res.value} vs {grid.value} (allowed {grid.guarantee})"
                    )
            if res.value > best_val + 1e-15:
                best_val = res.value
                best_y = y.astype(np.int64)
                best_x = res.x_star
    solution = Solution(y=best_y, x=best_x)
    value = mrum_value(instance, best_y.astype(float), best_x)
    return JointResult(solution=solution, value=value, bound=value, status="optimal")
