"""Problem data, choice probabilities, and objective evaluation.

A firm enters a market with ``zones`` customer zones and ``m`` candidate
locations. It opens at most ``cap`` facilities (binary vector ``y``) and
spends ``x_i`` on each open facility, subject to per-facility box bounds
``[lower_i, upper_i]`` and a total budget. Customers in zone ``n`` split
between the new facilities and a competitor with fixed utility
``u_comp[n]`` according to a multinomial logit model in one of two forms:

* additive (ARUM): facility weight ``exp(a[n,i]*x_i + b[n,i])``
* multiplicative (MRUM): facility weight ``a[n,i]*x_i + b[n,i]``

The captured demand is ``sum_n q[n] * (zone-n share of open facilities)``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

FEAS_TOL = 1e-9

INSTANCE_FIELDS = ("m", "zones", "q", "a", "b", "u_comp", "budget", "cap", "lower", "upper")


class CapmaxError(Exception):
    """Base class for package errors."""


class ValidationError(CapmaxError):
    """Structurally invalid data: bad dimensions, non-finite or out-of-range values."""


class InfeasibleError(CapmaxError):
    """A solution, open set, or input violates the problem constraints."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "infeasible")


class Framework(str, enum.Enum):
    ARUM = "arum"
    MRUM = "mrum"


def _as_array(value, shape, name, dtype=np.float64):
    arr = np.asarray(value, dtype=dtype)
    if arr.shape != shape:
        raise ValidationError(f"{name}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: contains NaN or Inf")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Instance:
    """Immutable problem data; validated on construction."""

    q: np.ndarray        # (zones,) customers per zone, > 0
    a: np.ndarray        # (zones, m) cost sensitivities, >= 0
    b: np.ndarray        # (zones, m) cost-independent utility offsets
    u_comp: np.ndarray   # (zones,) competitor utility per zone, > 0
    budget: float        # total spend cap C
    cap: int             # max number of open facilities K
    lower: np.ndarray    # (m,) per-facility minimum spend when open
    upper: np.ndarray    # (m,) per-facility maximum spend
    allow_negative_b: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        if a.ndim != 2:
            raise ValidationError(f"a: expected a 2-D matrix, got ndim={a.ndim}")
        zones, m = a.shape
        if m < 1 or zones < 1:
            raise ValidationError(f"need m >= 1 and zones >= 1, got m={m}, zones={zones}")
        object.__setattr__(self, "a", _as_array(a, (zones, m), "a"))
        object.__setattr__(self, "b", _as_array(self.b, (zones, m), "b"))
        object.__setattr__(self, "q", _as_array(self.q, (zones,), "q"))
        object.__setattr__(self, "u_comp", _as_array(self.u_comp, (zones,), "u_comp"))
        object.__setattr__(self, "lower", _as_array(self.lower, (m,), "lower"))
        object.__setattr__(self, "upper", _as_array(self.upper, (m,), "upper"))
        object.__setattr__(self, "budget", float(self.budget))
        object.__setattr__(self, "cap", int(self.cap))
        if not math.isfinite(self.budget) or self.budget <= 0:
            raise ValidationError(f"budget must be positive and finite, got {self.budget}")
        if self.cap < 0:
            raise ValidationError(f"cap must be nonnegative, got {self.cap}")
        if np.any(self.q <= 0):
            raise ValidationError("q: all zone demands must be positive")
        if np.any(self.u_comp <= 0):
            raise ValidationError("u_comp: competitor utilities must be positive")
        if np.any(self.a < 0):
            raise ValidationError("a: cost sensitivities must be nonnegative")
        if not self.allow_negative_b and np.any(self.b < 0):
            raise ValidationError(
                "b: negative offsets break multiplicative utilities; "
                "set allow_negative_b=True for additive-only instances"
            )
        if np.any(self.lower < 0):
            raise ValidationError("lower: bounds must be nonnegative")
        if np.any(self.lower > self.upper):
            raise ValidationError("bounds: need lower <= upper componentwise")
        if float(self.lower.min()) > self.budget:
            raise ValidationError(
                f"infeasible: cheapest facility lower bound {self.lower.min()} exceeds budget {self.budget}"
            )

    @property
    def m(self) -> int:
        return self.a.shape[1]

    @property
    def zones(self) -> int:
        return self.a.shape[0]

    @property
    def total_demand(self) -> float:
        return float(self.q.sum())


@dataclass(frozen=True)
class Solution:
    """Open-set vector y in {0,1}^m and spend vector x >= 0."""

    y: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y)
        if y.ndim != 1:
            raise ValidationError("y must be a 1-D vector")
        if not np.all(np.isin(y, (0, 1))):
            raise ValidationError("y entries must be 0 or 1")
        y = y.astype(np.int64)
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", _as_array(self.x, y.shape, "x"))


def check_feasible(instance: Instance, solution: Solution) -> list[str]:
    """Return the list of violated constraints (empty iff feasible within 1e-9)."""
    if solution.y.shape[0] != instance.m:
        raise ValidationError(
            f"solution has {solution.y.shape[0]} locations, instance has {instance.m}"
        )
    y, x = solution.y, solution.x
    violations = []
    for i in np.nonzero((y == 0) & (np.abs(x) > FEAS_TOL))[0]:
        violations.append(f"cost positive at closed location {i}: x={x[i]}")
    for i in np.nonzero((y == 1) & (x < instance.lower - FEAS_TOL))[0]:
        violations.append(f"cost below lower bound at location {i}: {x[i]} < {instance.lower[i]}")
    for i in np.nonzero((y == 1) & (x > instance.upper + FEAS_TOL))[0]:
        violations.append(f"cost above upper bound at location {i}: {x[i]} > {instance.upper[i]}")
    spend = float((x * y).sum())
    if spend > instance.budget + FEAS_TOL:
        violations.append(f"budget exceeded: {spend} > {instance.budget}")
    if int(y.sum()) > instance.cap:
        violations.append(f"cardinality cap exceeded: {int(y.sum())} > {instance.cap}")
    return violations


def ensure_feasible(instance: Instance, solution: Solution) -> None:
    violations = check_feasible(instance, solution)
    if violations:
        raise InfeasibleError(violations)


def mrum_denominators(instance: Instance, y, x) -> np.ndarray:
    """Per-zone choice denominators u_comp + sum_i y_i*(a*x_i + b).

    Accepts fractional y (continuous extension used by the solvers).
    """
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return instance.u_comp + (instance.a * x + instance.b) @ y


def mrum_value(instance: Instance, y, x) -> float:
    """Captured demand under multiplicative utilities; no feasibility check."""
    d = mrum_denominators(instance, y, x)
    return float((instance.q * (1.0 - instance.u_comp / d)).sum())


def arum_value(instance: Instance, y, x) -> float:
    """Captured demand under additive utilities; no feasibility check."""
    y = np.asarray(y, dtype=np.float64)
    open_mask = y > 0
    if not open_mask.any():
        return 0.0
    v = instance.a[:, open_mask] * np.asarray(x, dtype=np.float64)[open_mask] + instance.b[:, open_mask]
    vmax = v.max(axis=1, keepdims=True)
    log_s = vmax[:, 0] + np.log(np.exp(v - vmax).sum(axis=1))
    # share = S/(u+S) = sigmoid(log S - log u), stable for extreme utilities
    share = 1.0 / (1.0 + np.exp(np.clip(np.log(instance.u_comp) - log_s, None, 700.0)))
    return float((instance.q * share).sum())


def choice_probs(instance: Instance, solution: Solution, framework: Framework, zone: int) -> np.ndarray:
    """Zone-level choice probabilities over the m locations plus the competitor (last entry)."""
    ensure_feasible(instance, solution)
    if not 0 <= zone < instance.zones:
        raise ValidationError(f"zone {zone} out of range [0, {instance.zones})")
    framework = Framework(framework)
    y = solution.y.astype(np.float64)
    x = solution.x
    probs = np.zeros(instance.m + 1)
    if framework is Framework.MRUM:
        util = y * (instance.a[zone] * x + instance.b[zone])
        denom = float(instance.u_comp[zone] + util.sum())
        probs[:-1] = util / denom
        probs[-1] = instance.u_comp[zone] / denom
        return probs
    open_mask = solution.y == 1
    if not open_mask.any():
        probs[-1] = 1.0
        return probs
    v = instance.a[zone, open_mask] * x[open_mask] + instance.b[zone, open_mask]
    # shift so every exponent is <= 0: stable for saturated utilities either way
    shift = max(float(v.max()), math.log(instance.u_comp[zone]))
    w = np.exp(v - shift)
    comp_w = math.exp(math.log(instance.u_comp[zone]) - shift)
    denom = float(comp_w + w.sum())
    probs[np.nonzero(open_mask)[0]] = w / denom
    probs[-1] = comp_w / denom
    return probs


def eval_objective(instance: Instance, solution: Solution, framework: Framework) -> float:
    """Expected captured demand sum_n q_n * share_n for a feasible solution."""
    ensure_feasible(instance, solution)
    framework = Framework(framework)
    y = solution.y.astype(np.float64)
    if framework is Framework.MRUM:
        return mrum_value(instance, y, solution.x)
    return arum_value(instance, y, solution.x)


@dataclass
class JointResult:
    """Outcome of a joint location-and-cost solve (exact or heuristic)."""

    solution: Solution
    value: float
    bound: float | None
    status: str  # "optimal" | "limit"
    log: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "y": self.solution.y.tolist(),
            "x": self.solution.x.tolist(),
            "value": self.value,
            "bound": self.bound,
            "status": self.status,
            "log": self.log,
        }


# ---------------------------------------------------------------------------
# Instance file format: a flat JSON document; `a` and `b` are row-major lists
# of length zones*m. The reader rejects NaN/Inf and dimension mismatches.
# ---------------------------------------------------------------------------


def instance_to_dict(instance: Instance) -> dict:
    doc = {
        "m": instance.m,
        "zones": instance.zones,
        "q": instance.q.tolist(),
        "a": instance.a.ravel().tolist(),
        "b": instance.b.ravel().tolist(),
        "u_comp": instance.u_comp.tolist(),
        "budget": instance.budget,
        "cap": instance.cap,
        "lower": instance.lower.tolist(),
        "upper": instance.upper.tolist(),
    }
    if instance.allow_negative_b:
        doc["allow_negative_b"] = True
    if instance.meta:
        doc["meta"] = instance.meta
    return doc


def instance_from_dict(doc: dict) -> Instance:
    missing = [k for k in INSTANCE_FIELDS if k not in doc]
    if missing:
        raise ValidationError(f"instance document missing fields: {missing}")
    m, zones = int(doc["m"]), int(doc["zones"])
    if m < 1 or zones < 1:
        raise ValidationError(f"need m >= 1 and zones >= 1, got m={m}, zones={zones}")
    a = np.asarray(doc["a"], dtype=np.float64)
    b = np.asarray(doc["b"], dtype=np.float64)
    if a.size != zones * m or b.size != zones * m:
        raise ValidationError(
            f"a/b must hold zones*m={zones * m} row-major entries, got {a.size}/{b.size}"
        )
    return Instance(
        q=doc["q"],
        a=a.reshape(zones, m),
        b=b.reshape(zones, m),
        u_comp=doc["u_comp"],
        budget=doc["budget"],
        cap=doc["cap"],
        lower=doc["lower"],
        upper=doc["upper"],
        allow_negative_b=bool(doc.get("allow_negative_b", False)),
        meta=dict(doc.get("meta", {})),
    )


def _reject_constant(token):
    raise ValidationError(f"non-finite JSON token {token!r} rejected")


def canonical_dumps(obj) -> str:
    """Deterministic JSON used for every file the package writes."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def loads_strict(text: str):
    return json.loads(text, parse_constant=_reject_constant)


def save_instance(instance: Instance, path) -> None:
    with open(path, "w") as fh:
        fh.write(canonical_dumps(instance_to_dict(instance)))


def load_instance(path) -> Instance:
    with open(path) as fh:
        return instance_from_dict(loads_strict(fh.read()))
