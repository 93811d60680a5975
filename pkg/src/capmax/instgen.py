"""Seeded synthetic instance generator.

Sensitivities a_ni are uniform on [0.5, 1.5], offsets b_ni uniform on
[1, 10], and zone demands q_n come from a low regime [1, 10] or a high
regime [90, 100]. The budget is C = c_frac*m and the cardinality cap is
K = round(k_frac*m). Spend bounds are drawn relative to the per-facility
budget share C/K: L_i uniform in lower_frac_range*(C/K) and
U_i = L_i + width uniform in width_frac_range*(C/K).

Randomness comes from numpy's Philox counter-based generator, so a given
seed produces bit-identical instances on every platform. The generator
settings are echoed into the instance's ``meta`` block.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .model import Instance, ValidationError

RNG_NAME = "philox4x64"

Q_REGIMES = {"low": (1.0, 10.0), "high": (90.0, 100.0)}


@dataclass(frozen=True)
class GenSpec:
    m: int
    zones: int
    c_frac: float = 0.2
    k_frac: float = 0.5
    q_regime: str = "low"
    a_range: tuple[float, float] = (0.5, 1.5)
    b_range: tuple[float, float] = (1.0, 10.0)
    lower_frac_range: tuple[float, float] = (0.1, 0.5)
    width_frac_range: tuple[float, float] = (0.5, 1.5)
    u_comp: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.m < 1 or self.zones < 1:
            raise ValidationError(f"need m >= 1 and zones >= 1, got m={self.m}, zones={self.zones}")
        if self.c_frac <= 0 or self.k_frac <= 0:
            raise ValidationError("c_frac and k_frac must be positive")
        if self.q_regime not in Q_REGIMES:
            raise ValidationError(f"q_regime must be one of {sorted(Q_REGIMES)}")
        for name in ("a_range", "b_range", "lower_frac_range", "width_frac_range"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi):
                raise ValidationError(f"{name} must satisfy 0 <= lo <= hi, got ({lo}, {hi})")
        if self.u_comp <= 0:
            raise ValidationError("u_comp must be positive")


def _uniform(rng, rng_range, size):
    lo, hi = rng_range
    return lo + (hi - lo) * rng.random(size)


def generate(spec: GenSpec) -> Instance:
    """Draw an Instance from the spec; identical seeds give identical instances."""
    rng = np.random.Generator(np.random.Philox(spec.seed))
    budget = spec.c_frac * spec.m
    cap = max(1, int(round(spec.k_frac * spec.m)))
    share = budget / cap

    a = _uniform(rng, spec.a_range, (spec.zones, spec.m))
    b = _uniform(rng, spec.b_range, (spec.zones, spec.m))
    q = _uniform(rng, Q_REGIMES[spec.q_regime], spec.zones)
    lower = _uniform(rng, spec.lower_frac_range, spec.m) * share
    upper = lower + _uniform(rng, spec.width_frac_range, spec.m) * share

    if lower.min() > budget:
        raise ValidationError(
            f"generated bounds infeasible: min lower {lower.min()} exceeds budget {budget}"
        )
    meta = {"generator": asdict(spec), "rng": RNG_NAME}
    # tuples are not JSON-stable; normalize to lists
    for key, val in list(meta["generator"].items()):
        if isinstance(val, tuple):
            meta["generator"][key] = list(val)
    return Instance(
        q=q,
        a=a,
        b=b,
        u_comp=np.full(spec.zones, spec.u_comp),
        budget=budget,
        cap=cap,
        lower=lower,
        upper=upper,
        meta=meta,
    )
