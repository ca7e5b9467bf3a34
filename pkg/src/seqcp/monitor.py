"""Streaming sequential monitoring with two-sample U-statistics.

The detector after ``k`` monitoring observations is

    Gamma(m, k) = (1/m) * sum_{i<=m} sum_{j<=k} (h(X_i, X_{m+j}) - theta)

which updates in O(1) (DOM, symmetric sum) or O(log m) (Wilcoxon) per new
observation.  Three monitoring schemes are derived from the Gamma trace:

* CUSUM:       ``|Gamma(k)|``
* mMOSUM:      ``|Gamma(k) - Gamma(floor(k * b))|``
* Page-CUSUM:  ``max_{0 <= l <= k} |Gamma(k) - Gamma(l)|``
"""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .kernels import KernelKind, KernelSpec, VariancePolicy, eval_kernel, get_kernel, kernel_variance
from .weights import Normalization, WeightConfig, hetero_weight, weight, weight_curve


class Scheme(str, enum.Enum):
    CUSUM = "cusum"
    MMOSUM = "mmosum"
    PAGE = "page"


def get_scheme(name: str | Scheme) -> Scheme:
    try:
        return Scheme(name.lower() if isinstance(name, str) else name)
    except ValueError:
        raise ValueError(f"unknown scheme {name!r}; expected one of {[s.value for s in Scheme]}") from None


@dataclass(frozen=True)
class HistoricSummary:
    m: int
    mean: float
    sorted_historic: tuple[float, ...] = field(repr=False)
    sigma1_sq: float
    sigma2_sq: float
    theta: float
    kernel: KernelSpec

    @classmethod
    def from_historic(cls, historic: Sequence[float], kernel: KernelSpec) -> "HistoricSummary":
        data = np.asarray(historic, dtype=float)
        if data.ndim != 1 or data.size < 2:
            raise ValueError("insufficient historic data")
        if not np.all(np.isfinite(data)):
            raise ValueError("non-finite observation in historic data")
        s1, s2 = kernel_variance(kernel, data)
        return cls(
            m=int(data.size),
            mean=float(np.mean(data)),
            sorted_historic=tuple(np.sort(data).tolist()),
            sigma1_sq=s1,
            sigma2_sq=s2,
            theta=kernel.theta,
            kernel=kernel,
        )

    def increment(self, x: float) -> float:
        """``(1/m) * sum_i (h(X_i, x) - theta)`` without touching every X_i."""
        kind = self.kernel.kind
        if kind is KernelKind.DOM:
            return self.mean - x
        if kind is KernelKind.WILCOXON:
            return bisect.bisect_left(self.sorted_historic, x) / self.m - 0.5
        return (self.mean + x) / 2.0 - self.theta


class Decision(NamedTuple):
    """Outcome of one monitoring step.

    ``statistic`` is the weighted, scale-normalized value compared against
    ``c_alpha``; ``margin = c_alpha - statistic`` (negative once crossed).
    ``stopped_at`` is set once the monitor has rejected and never changes.
    """

    k: int
    gamma: float
    psi: float
    weight: float
    statistic: float
    margin: float
    stopped_at: int | None

    @property
    def reject(self) -> bool:
        return self.stopped_at is not None


@dataclass
class MonitorState:
    scheme: Scheme
    cfg: WeightConfig
    c_alpha: float
    k: int = 0
    gamma_now: float = 0.0
    gamma_prefix: list[float] = field(default_factory=lambda: [0.0])
    gamma_min: float = 0.0
    gamma_max: float = 0.0
    stopped_at: int | None = None
    trace: bool = False
    summary_id: int | None = field(default=None, repr=False)
    last: Decision | None = field(default=None, repr=False)

    def psi(self) -> float:
        return _psi_now(self.scheme, self.gamma_prefix, self.k, self.gamma_min, self.gamma_max, self.cfg.mmosum_b)


def _psi_now(scheme: Scheme, prefix: list[float], k: int, gmin: float, gmax: float, b: float) -> float:
    g = prefix[k]
    if scheme is Scheme.CUSUM:
        return abs(g)
    if scheme is Scheme.MMOSUM:
        return abs(g - prefix[math.floor(k * b)])
    return max(g - gmin, gmax - g)


def init_monitor(
    historic: Sequence[float],
    kernel: KernelSpec,
    scheme: Scheme | str,
    cfg: WeightConfig,
    c_alpha: float,
    trace: bool = False,
) -> tuple[HistoricSummary, MonitorState]:
    if not c_alpha > 0:
        raise ValueError("critical value must be positive")
    summary = HistoricSummary.from_historic(historic, get_kernel(kernel))
    if cfg.normalization is Normalization.HOMOSCEDASTIC and summary.sigma1_sq <= 0:
        raise ValueError("degenerate historic variance: cannot normalize the statistic")
    if cfg.normalization is Normalization.HETEROSCEDASTIC and (summary.sigma1_sq <= 0 or summary.sigma2_sq <= 0):
        raise ValueError("nonpositive scale")
    state = MonitorState(scheme=get_scheme(scheme), cfg=cfg, c_alpha=float(c_alpha), trace=trace, summary_id=id(summary))
    return summary, state


def _scaled_weight(summary: HistoricSummary, cfg: WeightConfig, k: int) -> float:
    m = summary.m
    if k <= cfg.resolve_burn_in(m):
        return 0.0
    if cfg.normalization is Normalization.HETEROSCEDASTIC:
        return hetero_weight(m, k, math.sqrt(summary.sigma1_sq), math.sqrt(summary.sigma2_sq))
    return weight(m, k, cfg) / math.sqrt(summary.sigma1_sq)


def step(summary: HistoricSummary, state: MonitorState, x_new: float) -> Decision:
    """Feed one observation.

    After a rejection the state is frozen and the stored decision is returned,
    unless the monitor runs in trace mode, in which case statistics keep
    updating while ``stopped_at`` stays fixed.
    """
    if state.summary_id is not None and state.summary_id != id(summary):
        raise ValueError("monitor state was initialised from a different historic summary")
    if state.stopped_at is not None and not state.trace:
        return state.last
    x = float(x_new)
    if not math.isfinite(x):
        raise ValueError("non-finite observation")

    k = state.k + 1
    g = state.gamma_now + summary.increment(x)
    state.k = k
    state.gamma_now = g
    state.gamma_prefix.append(g)
    if g < state.gamma_min:
        state.gamma_min = g
    elif g > state.gamma_max:
        state.gamma_max = g

    psi = state.psi()
    w = _scaled_weight(summary, state.cfg, k)
    stat = w * psi
    if state.stopped_at is None and stat > state.c_alpha:
        state.stopped_at = k
    state.last = Decision(k, g, psi, w, stat, state.c_alpha - stat, state.stopped_at)
    return state.last


def run_monitor(
    historic: Sequence[float],
    monitoring: Sequence[float],
    kernel: KernelSpec,
    scheme: Scheme | str,
    cfg: WeightConfig,
    c_alpha: float,
    trace: bool = True,
) -> list[Decision]:
    """Stream ``monitoring`` through a fresh monitor and collect decisions."""
    summary, state = init_monitor(historic, kernel, scheme, cfg, c_alpha, trace=trace)
    out = []
    for x in monitoring:
        out.append(step(summary, state, x))
        if state.stopped_at is not None and not trace:
            break
    return out


# -- batch evaluation over many replications ---------------------------------


def gamma_traces(historic: np.ndarray, monitoring: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    """Gamma(m, k) for k = 1..n on every row of a ``(reps, m)`` / ``(reps, n)`` pair.

    Uses the same increments and left-to-right accumulation as :func:`step`.
    """
    historic = np.atleast_2d(np.asarray(historic, dtype=float))
    monitoring = np.atleast_2d(np.asarray(monitoring, dtype=float))
    m = historic.shape[1]
    if kernel.kind is KernelKind.DOM:
        inc = np.mean(historic, axis=1, keepdims=True) - monitoring
    elif kernel.kind is KernelKind.SYMMETRIC_SUM:
        inc = (np.mean(historic, axis=1, keepdims=True) + monitoring) / 2.0 - kernel.theta
    else:
        counts = np.empty(monitoring.shape, dtype=float)
        for i in range(historic.shape[0]):
            counts[i] = np.searchsorted(np.sort(historic[i]), monitoring[i], side="left")
        inc = counts / m - 0.5
    return np.cumsum(inc, axis=1)


def psi_traces(gamma: np.ndarray, scheme: Scheme | str, b: float = 0.4) -> np.ndarray:
    """Scheme statistic for every k given Gamma traces (k = 1..n along axis 1)."""
    scheme = get_scheme(scheme)
    gamma = np.atleast_2d(gamma)
    if scheme is Scheme.CUSUM:
        return np.abs(gamma)
    n = gamma.shape[1]
    padded = np.concatenate([np.zeros((gamma.shape[0], 1)), gamma], axis=1)
    if scheme is Scheme.MMOSUM:
        lag = np.floor(np.arange(1, n + 1) * b).astype(np.intp)
        return np.abs(gamma - padded[:, lag])
    gmax = np.maximum.accumulate(padded, axis=1)[:, 1:]
    gmin = np.minimum.accumulate(padded, axis=1)[:, 1:]
    return np.maximum(gamma - gmin, gmax - gamma)


def scale_estimates(historic: np.ndarray, kernel: KernelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-row ``(sigma1, sigma2)`` for a batch of historic samples."""
    historic = np.atleast_2d(historic)
    if kernel.variance_policy is VariancePolicy.ESTIMATE:
        pairs = np.array([kernel_variance(kernel, row) for row in historic])
    else:
        pairs = np.tile(kernel_variance(kernel), (historic.shape[0], 1))
    return np.sqrt(pairs[:, 0]), np.sqrt(pairs[:, 1])


def normalized_traces(
    historic: np.ndarray,
    gamma: np.ndarray,
    kernel: KernelSpec,
    scheme: Scheme | str,
    cfg: WeightConfig,
) -> np.ndarray:
    """Weighted statistic ``w(m, k) * |Psi(m, k)| / sigma`` for every row and k."""
    historic = np.atleast_2d(historic)
    m = historic.shape[1]
    n = gamma.shape[-1]
    psi = psi_traces(gamma, scheme, cfg.mmosum_b)
    s1, s2 = scale_estimates(historic, kernel)
    if cfg.normalization is Normalization.HETEROSCEDASTIC:
        k = np.arange(1, n + 1, dtype=float)
        w = s1[:, None] / (math.sqrt(m) * (s2[:, None] ** 2 + s1[:, None] ** 2 * k / m))
        w[:, : min(cfg.resolve_burn_in(m), n)] = 0.0
        return w * psi
    w = weight_curve(m, n, cfg)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (w[None, :] / s1[:, None]) * psi


def stopping_times(stat: np.ndarray, c_alpha: float) -> np.ndarray:
    """First k (1-based) with ``stat > c_alpha`` per row; 0 where never."""
    hit = stat > c_alpha
    first = np.argmax(hit, axis=1) + 1
    first[~hit.any(axis=1)] = 0
    return first


# -- brute-force oracles --------------------------------------------------------


def _kernel_matrix(historic, monitoring, kernel: KernelSpec, k: int) -> np.ndarray:
    if k > len(monitoring):
        raise ValueError("k exceeds the monitoring sample")
    x = np.asarray(historic, dtype=float)[:, None]
    y = np.asarray(monitoring, dtype=float)[None, :k]
    return eval_kernel(kernel, x, y) - kernel.theta


def brute_gamma(historic: Sequence[float], monitoring: Sequence[float], kernel: KernelSpec, k: int) -> float:
    """Full O(m*k) double sum over every (historic, monitoring) pair."""
    return float(np.sum(_kernel_matrix(historic, monitoring, kernel, k))) / len(historic)


def brute_psi(
    historic: Sequence[float],
    monitoring: Sequence[float],
    kernel: KernelSpec,
    scheme: Scheme | str,
    cfg: WeightConfig,
    k: int,
) -> float:
    """Scheme statistic by definition; Page enumerates every l in [0, k]."""
    scheme = get_scheme(scheme)
    h = _kernel_matrix(historic, monitoring, kernel, k)
    m = h.shape[0]
    if scheme is Scheme.CUSUM:
        return abs(float(np.sum(h)) / m)
    if scheme is Scheme.MMOSUM:
        return abs(float(np.sum(h[:, math.floor(k * cfg.mmosum_b):])) / m)
    return max(abs(float(np.sum(h[:, l:])) / m) for l in range(k + 1))
