"""Weight functions shaping the open-ended rejection boundary.

The monitor rejects at time ``k`` once ``w(m, k) * |Psi(m, k)|`` exceeds a
critical value, with ``w(m, k) = m**-0.5 * rho(k / m)`` after a burn-in and
zero before it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


class Normalization(str, enum.Enum):
    HOMOSCEDASTIC = "homoscedastic"
    HETEROSCEDASTIC = "heteroscedastic"


def rho(gamma: float, t):
    """``(1/(1+t)) * ((1+t)/t)**gamma`` for ``t > 0``; accepts arrays."""
    if not 0.0 <= gamma < 0.5:
        raise ValueError(f"gamma must lie in [0, 0.5), got {gamma}")
    if isinstance(t, (int, float)):
        if t <= 0:
            raise ValueError("weight undefined at nonpositive time")
        return math.exp((gamma - 1.0) * math.log1p(t) - gamma * math.log(t))
    arr = np.asarray(t, dtype=float)
    if np.any(arr <= 0):
        raise ValueError("weight undefined at nonpositive time")
    out = np.exp((gamma - 1.0) * np.log1p(arr) - gamma * np.log(arr))
    return float(out) if np.ndim(t) == 0 else out


@dataclass(frozen=True)
class WeightConfig:
    """Weight family settings.

    ``burn_in=None`` resolves to ``ceil(sqrt(m))``.  ``rho_fn`` replaces the
    built-in family; critical values are only tabulated for the built-in one.
    """

    gamma: float = 0.0
    burn_in: int | None = None
    mmosum_b: float = 0.4
    normalization: Normalization = Normalization.HOMOSCEDASTIC
    rho_fn: Callable[[float], float] | None = None

    def __post_init__(self):
        if not 0.0 <= self.gamma < 0.5:
            raise ValueError(f"gamma must lie in [0, 0.5), got {self.gamma}")
        if not 0.0 < self.mmosum_b < 1.0:
            raise ValueError(f"mMOSUM fraction b must lie in (0, 1), got {self.mmosum_b}")
        if self.burn_in is not None and self.burn_in < 1:
            raise ValueError("burn_in must be >= 1")
        object.__setattr__(self, "normalization", Normalization(self.normalization))

    def resolve_burn_in(self, m: int) -> int:
        if self.burn_in is not None:
            return self.burn_in
        return default_burn_in(m)

    def rho(self, t):
        if self.rho_fn is not None:
            return self.rho_fn(t)
        return rho(self.gamma, t)


def default_burn_in(m: int) -> int:
    return math.isqrt(m - 1) + 1 if m > 0 else 1


def weight(m: int, k: int, cfg: WeightConfig) -> float:
    if m < 1 or k < 1:
        raise ValueError("weight needs m >= 1 and k >= 1")
    if k <= cfg.resolve_burn_in(m):
        return 0.0
    return float(cfg.rho(k / m)) / math.sqrt(m)


def hetero_weight(m: int, k: int, s1: float, s2: float) -> float:
    """Normalization for unequal projection variances ``s1**2 != s2**2``."""
    if s1 <= 0 or s2 <= 0:
        raise ValueError("nonpositive scale")
    return s1 / (math.sqrt(m) * (s2 * s2 + s1 * s1 * k / m))


def weight_curve(m: int, horizon: int, cfg: WeightConfig, s1: float = 1.0, s2: float = 1.0) -> np.ndarray:
    """Vector of weights for ``k = 1..horizon`` (index ``k - 1``).

    In homoscedastic mode the caller still divides by the scale estimate.
    """
    k = np.arange(1, horizon + 1, dtype=float)
    burn = cfg.resolve_burn_in(m)
    if cfg.normalization is Normalization.HETEROSCEDASTIC:
        if s1 <= 0 or s2 <= 0:
            raise ValueError("nonpositive scale")
        w = s1 / (math.sqrt(m) * (s2 * s2 + s1 * s1 * k / m))
    elif cfg.rho_fn is not None:
        w = np.array([cfg.rho_fn(x) for x in k / m], dtype=float) / math.sqrt(m)
    else:
        w = rho(cfg.gamma, k / m) / math.sqrt(m)
    w[: min(burn, horizon)] = 0.0
    return w
