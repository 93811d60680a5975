"""Spend optimization for a fixed open set.

With the open set fixed, the multiplicative-utility objective is a sum of
ratios with constant numerators,

    f(x) = sum_n q_n * (1 - u_n / d_n(x)),   d_n(x) = u_n + sum_i y_i*(a_ni*x_i + b_ni),

which is concave in x, so projected gradient ascent over the budget-and-box
set X(y) = {sum x <= C, y_i*L_i <= x_i <= y_i*U_i} finds the global optimum.
The same machinery accepts fractional y in [0,1]^m (bounds scale with y),
which is the continuous extension used for gradient checks of the open-set
value function.

Lagrange multipliers for the budget and bound constraints are recovered from
the optimal point by case analysis on which constraints are active; when the
budget is tight and every coordinate sits on a bound the multipliers are not
identified, so the budget is nudged by a small epsilon and the perturbed
problem is solved instead (the epsilon and the perturbed anchor point are
recorded on the result).

The additive-utility objective is not concave; `probe_arum_landscape` runs
the same ascent from many starts and reports the distinct local maxima.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import FEAS_TOL, CapmaxError, InfeasibleError, Instance, ValidationError

ARMIJO_SIGMA = 1e-4
ARMIJO_SHRINK = 0.5
ARMIJO_STEP0 = 1.0
DEFAULT_TOL = 1e-8
MAX_ITERS = 100_000


class MultiplierInferenceError(CapmaxError):
    """Stationarity residual could not be driven below tolerance."""


def project_knapsack_box(point, budget, lower, upper, active) -> np.ndarray:
    """Euclidean projection onto {sum x <= budget, active_i*lower_i <= x_i <= active_i*upper_i}.

    Bisection on the budget multiplier followed by an exact polish on the
    identified free set; the returned point meets the bounds exactly and the
    budget within 1e-10.
    """
    point = np.asarray(point, dtype=np.float64)
    active = np.asarray(active, dtype=np.float64)
    lo = active * np.asarray(lower, dtype=np.float64)
    hi = active * np.asarray(upper, dtype=np.float64)
    if point.shape != lo.shape:
        raise ValidationError(f"point has shape {point.shape}, bounds have {lo.shape}")
    if np.any(lo > hi + FEAS_TOL):
        raise InfeasibleError(["empty box: lower exceeds upper"])
    if lo.sum() > budget + max(FEAS_TOL, 1e-12 * (1 + abs(budget))):
        raise InfeasibleError(
            [f"empty feasible set: sum of lower bounds {lo.sum()} exceeds budget {budget}"]
        )
    x = np.clip(point, lo, hi)
    if x.sum() <= budget:
        return x
    # budget binds: x(nu) = clip(point - nu, lo, hi), sum decreasing in nu
    nu_lo, nu_hi = 0.0, float((point - lo).max())
    for _ in range(80):
        nu = 0.5 * (nu_lo + nu_hi)
        if np.clip(point - nu, lo, hi).sum() > budget:
            nu_lo = nu
        else:
            nu_hi = nu
    nu = nu_hi
    x = np.clip(point - nu, lo, hi)
    free = (x > lo + 1e-12) & (x < hi - 1e-12)
    if free.any():
        clamped = np.where(free, 0.0, x).sum()
        nu = (point[free].sum() + clamped - budget) / free.sum()
        x = np.clip(point - nu, lo, hi)
    return x


@dataclass(frozen=True)
class KktMultipliers:
    """Budget and bound multipliers, plus the point/budget they certify.

    For the degenerate all-at-bounds case the system is solved at the
    epsilon-perturbed budget; `x_ref` and `budget_ref` then differ from the
    original optimum, and `epsilon` records the perturbation used.
    """

    lam: float
    gamma_u: np.ndarray
    gamma_l: np.ndarray
    case: int                 # 1 budget slack, 2 tight w/ interior coord, 3 perturbed
    epsilon: float
    x_ref: np.ndarray
    budget_ref: float
    stationarity_residual: float

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "gamma_u": self.gamma_u.tolist(),
            "gamma_l": self.gamma_l.tolist(),
            "case": self.case,
            "epsilon": self.epsilon,
            "x_ref": self.x_ref.tolist(),
            "budget_ref": self.budget_ref,
            "stationarity_residual": self.stationarity_residual,
        }


@dataclass
class CostResult:
    x_star: np.ndarray
    value: float
    multipliers: KktMultipliers
    iterations: int
    converged: bool
    projected_grad_norm: float

    def to_dict(self) -> dict:
        return {
            "x": self.x_star.tolist(),
            "value": self.value,
            "multipliers": self.multipliers.to_dict(),
            "iterations": self.iterations,
            "converged": self.converged,
            "projected_grad_norm": self.projected_grad_norm,
        }


def _check_open_set(instance: Instance, y: np.ndarray, budget: float | None = None) -> None:
    budget = instance.budget if budget is None else budget
    violations = []
    if y.sum() > instance.cap + FEAS_TOL:
        violations.append(f"cardinality: sum(y)={y.sum():g} > cap {instance.cap}")
    min_spend = float((y * instance.lower).sum())
    if min_spend > budget + FEAS_TOL:
        violations.append(
            f"budget: open-set lower bounds sum to {min_spend:g} > budget {budget}"
        )
    if violations:
        raise InfeasibleError(violations)


def _mrum_closures(instance: Instance, y: np.ndarray):
    ay = instance.a * y           # (zones, m): d/dx_i weight
    offset = instance.u_comp + (instance.b @ y)
    qu = instance.q * instance.u_comp

    def value(x):
        d = offset + ay @ x
        return float((instance.q - qu / d).sum())

    def grad(x):
        d = offset + ay @ x
        return (qu / d**2) @ ay

    return value, grad


def _pga(value_fn, grad_fn, x0, budget, lo, hi, tol, max_iters):
    """Projected gradient ascent with backtracking; returns (x, f, iters, converged, pg_norm)."""

    def project(p):
        return project_knapsack_box(p, budget, lo, hi, np.ones_like(lo))

    x = project(np.asarray(x0, dtype=np.float64))
    f = value_fn(x)
    pg_norm = np.inf
    for it in range(1, max_iters + 1):
        g = grad_fn(x)
        full_step = project(x + g)
        pg_norm = float(np.linalg.norm(full_step - x))
        if pg_norm <= tol:
            return x, f, it - 1, True, pg_norm
        step = ARMIJO_STEP0
        while True:
            cand = full_step if step == ARMIJO_STEP0 else project(x + step * g)
            dx = cand - x
            f_cand = value_fn(cand)
            if f_cand >= f + ARMIJO_SIGMA * float(g @ dx):
                break
            step *= ARMIJO_SHRINK
            if step < 1e-16:
                # numerically flat: cannot make progress beyond rounding
                return x, f, it, pg_norm <= tol, pg_norm
        x, f = cand, f_cand
    return x, f, max_iters, False, pg_norm


def _coerce_weights(instance: Instance, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (instance.m,):
        raise ValidationError(f"y has shape {y.shape}, expected ({instance.m},)")
    if np.any(y < -FEAS_TOL) or np.any(y > 1 + FEAS_TOL):
        raise ValidationError("y entries must lie in [0, 1]")
    return np.clip(y, 0.0, 1.0)


def solve_cost_mrum(instance: Instance, y, tol: float = DEFAULT_TOL,
                    max_iters: int = MAX_ITERS, budget: float | None = None,
                    with_multipliers: bool = True) -> CostResult:
    """Globally maximize the multiplicative-utility objective over X(y)."""
    y = _coerce_weights(instance, y)
    budget = instance.budget if budget is None else float(budget)
    _check_open_set(instance, y, budget)
    lo, hi = y * instance.lower, y * instance.upper
    value_fn, grad_fn = _mrum_closures(instance, y)

    if not np.any((instance.a * y) > 0):
        # objective constant in x: park at the scaled lower bounds
        x = lo.copy()
        mult = KktMultipliers(0.0, np.zeros(instance.m), np.zeros(instance.m),
                              case=1, epsilon=0.0, x_ref=x, budget_ref=budget,
                              stationarity_residual=0.0)
        return CostResult(x, value_fn(x), mult, 0, True, 0.0)

    x0 = 0.5 * (lo + hi)
    x, f, iters, converged, pg_norm = _pga(value_fn, grad_fn, x0, budget, lo, hi, tol, max_iters)
    mult = None
    if with_multipliers:
        mult = infer_multipliers(instance, y, x, budget=budget, solver_tol=min(tol, 1e-10))
    return CostResult(x, f, mult, iters, converged, pg_norm)


def _assign_gammas(grad, lam, at_lo, at_hi):
    t = grad - lam
    gamma_u = np.where(at_hi, np.maximum(t, 0.0), 0.0)
    gamma_l = np.where(at_lo & ~(at_hi & (t > 0)), np.maximum(-t, 0.0), 0.0)
    return gamma_u, gamma_l


def infer_multipliers(instance: Instance, y, x_star, budget: float | None = None,
                      epsilon: float | None = None, solver_tol: float = 1e-10,
                      _case3_origin: float | None = None) -> KktMultipliers:
    """Recover (lambda, gamma_u, gamma_l) certifying optimality of x_star over X(y)."""
    y = _coerce_weights(instance, y)
    budget = instance.budget if budget is None else float(budget)
    x_star = np.asarray(x_star, dtype=np.float64)
    lo, hi = y * instance.lower, y * instance.upper
    _, grad_fn = _mrum_closures(instance, y)
    g = grad_fn(x_star)
    scale = 1.0 + float(np.abs(g).max())

    act_tol = 1e-7 * (1.0 + float(hi.max(initial=0.0)))
    at_lo = x_star - lo <= act_tol
    at_hi = hi - x_star <= act_tol
    tight = budget - x_star.sum() <= 1e-7 * (1.0 + budget)
    interior = ~at_lo & ~at_hi

    if not tight:
        lam, case = 0.0, 1
    elif interior.any():
        lam, case = float(g[interior].mean()), 2
    else:
        # budget equals a sum of active bounds: multipliers not identified here,
        # so nudge the budget until an interior coordinate (or slack) appears
        eps0 = epsilon if epsilon is not None else 1e-4 * (1.0 + budget)
        for k in (1, 2, 4, 8):
            eps = k * eps0
            x_pert, _, _, _, _ = _pga(*_mrum_closures(instance, y), x_star,
                                      budget + eps, lo, hi, solver_tol, MAX_ITERS)
            try:
                mult = infer_multipliers(instance, y, x_pert, budget=budget + eps,
                                         solver_tol=solver_tol, _case3_origin=eps)
            except MultiplierInferenceError:
                continue
            if mult.case != 3:
                return KktMultipliers(mult.lam, mult.gamma_u, mult.gamma_l, case=3,
                                      epsilon=eps, x_ref=mult.x_ref,
                                      budget_ref=mult.budget_ref,
                                      stationarity_residual=mult.stationarity_residual)
        raise MultiplierInferenceError(
            "budget perturbation did not expose an interior coordinate"
        )

    gamma_u, gamma_l = _assign_gammas(g, lam, at_lo, at_hi)
    residual = float(np.abs(g - lam - gamma_u + gamma_l).max())
    if residual > 1e-6 * scale:
        raise MultiplierInferenceError(
            f"stationarity residual {residual:.3e} exceeds tolerance; "
            "x_star does not look optimal"
        )
    return KktMultipliers(lam, gamma_u, gamma_l, case=case,
                          epsilon=_case3_origin or 0.0, x_ref=x_star.copy(),
                          budget_ref=budget, stationarity_residual=residual)


# ---------------------------------------------------------------------------
# Additive-utility landscape probe
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LocalOptimum:
    x: np.ndarray
    value: float
    basin_starts: int = 1


def _arum_closures(instance: Instance, y: np.ndarray):
    mask = y > 0
    a_open = instance.a[:, mask]
    b_open = instance.b[:, mask]
    qu = instance.q * instance.u_comp
    idx = np.nonzero(mask)[0]

    def value(x):
        e = np.exp(np.clip(a_open * x[idx] + b_open, None, 700.0))
        d = instance.u_comp + e.sum(axis=1)
        return float((instance.q - qu / d).sum())

    def grad(x):
        g = np.zeros_like(x)
        e = np.exp(np.clip(a_open * x[idx] + b_open, None, 700.0))
        d = instance.u_comp + e.sum(axis=1)
        g[idx] = (qu / d**2) @ (a_open * e)
        return g

    return value, grad


def probe_arum_landscape(instance: Instance, y, starts, tol: float = DEFAULT_TOL,
                         max_iters: int = 20_000, cluster_tol: float = 1e-4,
                         probe_delta: float = 1e-3) -> list[LocalOptimum]:
    """Run ascent on the additive objective from each start; return distinct local maxima."""
    y = _coerce_weights(instance, y)
    _check_open_set(instance, y)
    lo, hi = y * instance.lower, y * instance.upper
    value_fn, grad_fn = _arum_closures(instance, y)

    def project(p):
        return project_knapsack_box(p, instance.budget, lo, hi, np.ones_like(lo))

    converged_points = []
    for start in starts:
        x, f, _, _, _ = _pga(value_fn, grad_fn, np.asarray(start, dtype=np.float64),
                             instance.budget, lo, hi, tol, max_iters)
        converged_points.append((x, f))

    # keep only genuine local maxima: probe feasible perturbations, including
    # directions tangent to the budget facet, and reject any ascent direction
    open_idx = np.nonzero(y > 0)[0]
    directions = []
    for i in open_idx:
        e = np.zeros(instance.m)
        e[i] = 1.0
        directions.extend([e, -e])
    for ii, i in enumerate(open_idx):
        for j in open_idx[ii + 1:]:
            d = np.zeros(instance.m)
            d[i], d[j] = 1.0, -1.0
            d /= np.sqrt(2)
            directions.extend([d, -d])

    maxima = []
    for x, f in converged_points:
        improvable = False
        for d in directions:
            x_probe = project(x + probe_delta * d)
            if value_fn(x_probe) > f + 1e-9 * (1.0 + abs(f)):
                improvable = True
                break
        if not improvable:
            maxima.append((x, f))

    maxima.sort(key=lambda p: (-p[1], tuple(p[0])))
    clusters: list[list] = []
    for x, f in maxima:
        for cluster in clusters:
            if np.linalg.norm(cluster[0] - x) <= cluster_tol:
                cluster[2] += 1
                break
        else:
            clusters.append([x, f, 1])
    return [LocalOptimum(x=c[0], value=c[1], basin_starts=c[2]) for c in clusters]
