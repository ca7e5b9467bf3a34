"""Two-sample U-statistic kernels and their null-hypothesis structure.

A kernel ``h(x, y)`` compares a historic observation ``x`` with a monitoring
observation ``y``.  Three kernels are provided:

* ``DOM``: difference of means, ``h(x, y) = x - y``
* ``WILCOXON``: rank indicator, ``h(x, y) = 1{x < y}``
* ``SYMMETRIC_SUM``: ``h(x, y) = (x + y) / 2``, detecting departures from
  symmetry around zero

Every kernel used here has a null expectation ``theta`` that does not depend on
the (unknown) innovation distribution, which is what makes the sequential test
feasible without estimating ``theta``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy import integrate, stats


class KernelKind(str, enum.Enum):
    DOM = "dom"
    WILCOXON = "wilcoxon"
    SYMMETRIC_SUM = "symsum"


class VariancePolicy(str, enum.Enum):
    ESTIMATE = "estimate"
    KNOWN = "known"
    USER = "user"


class Distribution(str, enum.Enum):
    """Innovation distributions with unit variance used in simulations."""

    STD_NORMAL = "normal"
    STD_T3 = "t3"

    def cdf(self, x):
        if self is Distribution.STD_NORMAL:
            return stats.norm.cdf(x)
        return stats.t.cdf(np.asarray(x) * _SQRT3, df=3)

    def pdf(self, x):
        if self is Distribution.STD_NORMAL:
            return stats.norm.pdf(x)
        return _SQRT3 * stats.t.pdf(np.asarray(x) * _SQRT3, df=3)

    @property
    def mean(self) -> float:
        return 0.0

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        """Draw iid innovations.  The t3 draws are scaled by 1/sqrt(3) so Var = 1."""
        if self is Distribution.STD_NORMAL:
            return rng.standard_normal(size)
        return rng.standard_t(3, size) / _SQRT3


_SQRT3 = math.sqrt(3.0)


class EmpiricalDistribution:
    """Discrete distribution putting mass 1/n on each point of a sample."""

    def __init__(self, sample: Sequence[float]):
        values = np.sort(np.asarray(sample, dtype=float))
        if values.size == 0:
            raise ValueError("empty reference sample")
        self.values = values

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    def cdf(self, x):
        """P(X <= x)."""
        return np.searchsorted(self.values, x, side="right") / self.values.size

    def cdf_strict(self, x):
        """P(X < x)."""
        return np.searchsorted(self.values, x, side="left") / self.values.size


DistributionLike = Union[Distribution, EmpiricalDistribution]


@dataclass(frozen=True)
class KernelSpec:
    """A kernel together with its null expectation and variance policy.

    ``variance`` is only read for ``VariancePolicy.KNOWN`` (the constant) and
    ``VariancePolicy.USER`` (a ``(sigma1_sq, sigma2_sq)`` pair).
    """

    kind: KernelKind
    variance_policy: VariancePolicy | None = None
    variance: float | tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        policy = self.variance_policy
        if policy is None:
            if self.kind is KernelKind.WILCOXON:
                policy = VariancePolicy.KNOWN
                if self.variance is None:
                    object.__setattr__(self, "variance", 1.0 / 12.0)
            else:
                policy = VariancePolicy.ESTIMATE
        object.__setattr__(self, "variance_policy", VariancePolicy(policy))
        if self.variance_policy is not VariancePolicy.ESTIMATE and self.variance is None:
            raise ValueError(f"variance policy {self.variance_policy.value!r} needs a variance value")

    @property
    def theta(self) -> float:
        if self.kind is KernelKind.WILCOXON:
            return 0.5
        return 0.0

    @property
    def name(self) -> str:
        return self.kind.value


DOM = KernelSpec(KernelKind.DOM)
WILCOXON = KernelSpec(KernelKind.WILCOXON)
SYMMETRIC_SUM = KernelSpec(KernelKind.SYMMETRIC_SUM)

KERNELS = {k.name: k for k in (DOM, WILCOXON, SYMMETRIC_SUM)}


def get_kernel(name: str | KernelSpec) -> KernelSpec:
    if isinstance(name, KernelSpec):
        return name
    try:
        return KERNELS[KernelKind(name.lower()).value]
    except ValueError:
        raise ValueError(f"unknown kernel {name!r}; expected one of {sorted(KERNELS)}") from None


def eval_kernel(spec: KernelSpec, x, y):
    """Evaluate ``h(x, y)``; works elementwise on arrays.

    Wilcoxon ties give 0 (strict indicator), no midranks.
    """
    if spec.kind is KernelKind.DOM:
        return np.subtract(x, y) if _is_array(x, y) else x - y
    if spec.kind is KernelKind.WILCOXON:
        if _is_array(x, y):
            return np.less(x, y).astype(float)
        return 1.0 if x < y else 0.0
    if _is_array(x, y):
        return np.add(x, y) / 2.0
    return (x + y) / 2.0


def _is_array(*args) -> bool:
    return any(isinstance(a, np.ndarray) for a in args)


def change_magnitude(spec: KernelSpec, d: float, dist: Distribution | str) -> float:
    """Shift in the kernel mean after a location change of height ``d``.

    Returns ``E h(Y, Y' + d) - theta``.  For the Wilcoxon kernel this is
    ``int f(z) (F(z + d) - F(z)) dz``, evaluated by adaptive quadrature.
    """
    if not math.isfinite(d):
        raise ValueError("change height must be finite")
    dist = Distribution(dist)
    if spec.kind is KernelKind.DOM:
        return -d
    if spec.kind is KernelKind.SYMMETRIC_SUM:
        # E (Y + Z)/2 with E Y = 0 and E Z = d
        return d / 2.0
    if d == 0:
        return 0.0

    def integrand(z):
        return dist.pdf(z) * (dist.cdf(z + d) - dist.cdf(z))

    value, _ = integrate.quad(integrand, -np.inf, np.inf, epsabs=1e-11, epsrel=1e-10, limit=200)
    return float(value)


@dataclass(frozen=True)
class HoeffdingComponents:
    """``h(x, y) = theta + h1(x) + h2(y) + r(x, y)`` under a reference law."""

    theta: float
    h1: Callable
    h2: Callable
    r: Callable
    reference_cdf: Callable = field(repr=False)


def hoeffding_components(spec: KernelSpec, dist: DistributionLike | str | Sequence[float]) -> HoeffdingComponents:
    """Build the Hoeffding projections of ``spec`` under the reference law ``dist``.

    ``dist`` is a :class:`Distribution`, its string value, or a sample (which
    is turned into its empirical distribution).  The remainder ``r`` is
    defined as whatever is left, so the identity holds by construction; the
    projections are centred under the reference law.
    """
    if isinstance(dist, str):
        dist = Distribution(dist)
    elif not isinstance(dist, (Distribution, EmpiricalDistribution)):
        dist = EmpiricalDistribution(dist)

    mu = dist.mean
    if spec.kind is KernelKind.DOM:
        theta = 0.0

        def h1(x):
            return np.asarray(x, dtype=float) - mu if _is_array(x) else x - mu

        def h2(y):
            return mu - np.asarray(y, dtype=float) if _is_array(y) else mu - y

        def r(x, y):
            return np.zeros(np.broadcast(x, y).shape) if _is_array(x, y) else 0.0

    elif spec.kind is KernelKind.SYMMETRIC_SUM:
        theta = mu

        def h1(x):
            return (np.asarray(x, dtype=float) - mu) / 2.0 if _is_array(x) else (x - mu) / 2.0

        h2 = h1

        def r(x, y):
            return np.zeros(np.broadcast(x, y).shape) if _is_array(x, y) else 0.0

    else:
        if isinstance(dist, EmpiricalDistribution):
            # general projections; atoms make P(X < X') differ from 1/2
            n = dist.values.size
            _, counts = np.unique(dist.values, return_counts=True)
            theta = float((1.0 - np.sum((counts / n) ** 2)) / 2.0)

            def h1(x):
                return 1.0 - dist.cdf(x) - theta

            def h2(y):
                return dist.cdf_strict(y) - theta

        else:
            theta = 0.5

            def h1(x):
                return 0.5 - dist.cdf(x)

            def h2(y):
                return dist.cdf(y) - 0.5

        def r(x, y):
            return eval_kernel(spec, x, y) - theta - h1(x) - h2(y)

    return HoeffdingComponents(theta=theta, h1=h1, h2=h2, r=r, reference_cdf=dist.cdf)


def kernel_variance(
    spec: KernelSpec, historic: Sequence[float] | None = None
) -> tuple[float, float]:
    """Variances ``(sigma1^2, sigma2^2)`` of the two linear projections.

    Wilcoxon uses the distribution-free value 1/12.  DOM estimates Var(Y) by the
    unbiased sample variance of the historic data; the symmetric-sum kernel's
    projections are halved, so its estimate is a quarter of that.
    """
    if spec.variance_policy is VariancePolicy.KNOWN:
        v = float(spec.variance)
        return v, v
    if spec.variance_policy is VariancePolicy.USER:
        v = spec.variance
        if isinstance(v, tuple):
            return float(v[0]), float(v[1])
        return float(v), float(v)

    data = np.asarray(historic if historic is not None else [], dtype=float)
    if data.size < 2:
        raise ValueError("insufficient historic data")
    s2 = float(np.var(data, ddof=1))
    if spec.kind is KernelKind.SYMMETRIC_SUM:
        s2 /= 4.0
    elif spec.kind is KernelKind.WILCOXON:
        # estimate Var F(Y) by the variance of the normalized ranks
        ranks = stats.rankdata(data) / data.size
        s2 = float(np.var(ranks, ddof=1))
    return s2, s2
