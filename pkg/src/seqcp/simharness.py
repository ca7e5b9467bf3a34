"""Size, power and detection-delay experiments for the sequential monitors.

Data follow the location-change model ``X_i = Y_i + d * 1{i > m + k*}`` with
iid standard normal or standardized t3 innovations and ``k* = floor(m**beta)``;
``beta = inf`` (or ``d = 0``) is the null hypothesis.

Replication ``i`` of a scenario draws from its own stream
``SeedSequence(seed, spawn_key=(tag, i))``, so results depend only on the
scenario and never on the number of worker threads.  Calibration runs for
size-corrected power use ``tag = 1`` to stay independent of the evaluation
streams (``tag = 0``).
"""

from __future__ import annotations

import dataclasses
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import critvals
from .critvals import CriticalValueTable, LimitFunctionalSpec, upper_quantile
from .kernels import Distribution, KernelSpec, get_kernel
from .monitor import Scheme, gamma_traces, get_scheme, normalized_traces, stopping_times
from .weights import Normalization, WeightConfig, default_burn_in

REPORT_SCHEMA_VERSION = 1
DELAY_QUANTILES = (5, 25, 50, 75, 95)


class MissingCriticalValues(LookupError):
    pass


@dataclass(frozen=True)
class Scenario:
    m: int = 100
    dist: Distribution = Distribution.STD_NORMAL
    d: float = 0.0
    beta: float = math.inf
    horizon: int | None = None
    kernel: KernelSpec | str = "dom"
    scheme: Scheme | str = Scheme.CUSUM
    gamma: float = 0.0
    b: float = 0.4
    alpha: float = 0.05
    burn_in: int | None = None
    replications: int = 10_000
    seed: int = 0
    normalization: Normalization = Normalization.HOMOSCEDASTIC

    def __post_init__(self):
        object.__setattr__(self, "dist", Distribution(self.dist))
        object.__setattr__(self, "kernel", get_kernel(self.kernel))
        object.__setattr__(self, "scheme", get_scheme(self.scheme))
        object.__setattr__(self, "normalization", Normalization(self.normalization))
        if self.m < 2:
            raise ValueError("m must be >= 2")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        burn = self.burn_in if self.burn_in is not None else default_burn_in(self.m)
        if self.horizon is None:
            if self.is_null:
                horizon = 10 * self.m
            else:
                horizon = max(10 * self.m, 2 * self.change_time + 10 * self.m)
            object.__setattr__(self, "horizon", horizon)
        if self.horizon <= burn:
            raise ValueError("horizon must exceed the burn-in")
        if not self.is_null and self.horizon <= self.change_time:
            raise ValueError(f"horizon {self.horizon} leaves no post-change data (k* = {self.change_time})")
        # validate gamma/b eagerly
        self.weight_config()

    @property
    def is_null(self) -> bool:
        return self.d == 0 or math.isinf(self.beta)

    @property
    def change_time(self) -> int | None:
        """k*; observation k* + 1 of the monitoring period is the first shifted one."""
        if math.isinf(self.beta):
            return None
        return math.floor(self.m ** self.beta + 1e-9)

    def weight_config(self) -> WeightConfig:
        return WeightConfig(self.gamma, self.burn_in, self.b, self.normalization)

    def limit_spec(self, grid_points: int = critvals.DESK_GRID, replications: int = critvals.DESK_REPS,
                   seed: int = 0) -> LimitFunctionalSpec:
        return LimitFunctionalSpec(
            self.scheme, self.gamma, self.b if self.scheme is Scheme.MMOSUM else None,
            self.normalization, grid_points, replications, seed,
        )

    def label(self) -> str:
        b = f"_b{self.b:g}" if self.scheme is Scheme.MMOSUM else ""
        beta = "H0" if self.is_null else f"beta{self.beta:g}"
        return f"{self.kernel.name}_{self.scheme.value}{b}_g{self.gamma:g}_{self.dist.value}_m{self.m}_d{self.d:g}_{beta}"


@dataclass
class SimulationReport:
    scenario: Scenario
    rejections: int
    rejection_rate: float
    false_alarm_rate_pre_change: float
    used_c_alpha: float
    size_corrected: bool
    delay_quantiles: dict[int, float] = field(default_factory=dict)
    delay_mean: float = math.nan
    delay_histogram: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64), repr=False)
    stopping_times: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64), repr=False)

    @property
    def detections(self) -> int:
        return int(self.delay_histogram.sum())

    def binomial_se(self) -> float:
        p = self.rejection_rate
        return math.sqrt(max(p * (1 - p), 1e-12) / self.scenario.replications)


# -- data generation ---------------------------------------------------------------


def _rng(seed: int, tag: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(tag, index))))


def generate_stream(scenario: Scenario, replication_index: int, tag: int = 0) -> tuple[np.ndarray, np.ndarray]:
    rng = _rng(scenario.seed, tag, replication_index)
    draws = scenario.dist.sample(rng, scenario.m + scenario.horizon)
    historic, monitoring = draws[: scenario.m], draws[scenario.m :]
    if not scenario.is_null:
        monitoring[scenario.change_time :] += scenario.d
    return historic, monitoring


def generate_streams(scenario: Scenario, tag: int = 0, workers: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """All replications stacked as ``(reps, m)`` and ``(reps, horizon)`` arrays."""
    n = scenario.replications
    hist = np.empty((n, scenario.m))
    mon = np.empty((n, scenario.horizon))

    def fill(i):
        hist[i], mon[i] = generate_stream(scenario, i, tag)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, range(n)))
    else:
        for i in range(n):
            fill(i)
    return hist, mon


# -- experiment driver ---------------------------------------------------------------


def _statistics(scenario: Scenario, streams) -> np.ndarray:
    hist, mon = streams
    gamma = gamma_traces(hist, mon, scenario.kernel)
    return normalized_traces(hist, gamma, scenario.kernel, scenario.scheme, scenario.weight_config())


def _summarize(scenario: Scenario, taus: np.ndarray, c_alpha: float, size_corrected: bool) -> SimulationReport:
    n = scenario.replications
    stopped = taus > 0
    rejections = int(stopped.sum())
    report = SimulationReport(
        scenario=scenario,
        rejections=rejections,
        rejection_rate=rejections / n,
        false_alarm_rate_pre_change=0.0,
        used_c_alpha=float(c_alpha),
        size_corrected=size_corrected,
        stopping_times=taus,
    )
    if scenario.is_null:
        report.false_alarm_rate_pre_change = report.rejection_rate
        return report
    k_star = scenario.change_time
    report.false_alarm_rate_pre_change = int((stopped & (taus <= k_star)).sum()) / n
    delays = (taus[taus > k_star] - k_star).astype(np.int64)
    if delays.size:
        report.delay_quantiles = {q: float(np.percentile(delays, q)) for q in DELAY_QUANTILES}
        report.delay_mean = float(delays.mean())
        report.delay_histogram = np.bincount(delays, minlength=scenario.horizon - k_star + 1)
    else:
        report.delay_histogram = np.zeros(scenario.horizon - k_star + 1, dtype=np.int64)
    return report


def resolve_critical_value(
    scenario: Scenario,
    table: CriticalValueTable | float | None = None,
    cache_directory: str | os.PathLike | None = None,
) -> float:
    if isinstance(table, (int, float)):
        return float(table)
    if table is None:
        table = critvals.cached_table(scenario.limit_spec(), cache_directory, compute=False)
        if table is None:
            raise MissingCriticalValues(
                f"no critical values cached for {scenario.limit_spec().filename()}; "
                "run `seqcp critvals` first or pass a table"
            )
    spec = table.spec
    if spec.scheme is not scenario.scheme or spec.normalization is not scenario.normalization or (
        spec.normalization is Normalization.HOMOSCEDASTIC and spec.gamma != scenario.gamma
    ) or (spec.scheme is Scheme.MMOSUM and spec.b != scenario.b):
        raise ValueError(f"critical value table {spec.filename()} does not match scenario {scenario.label()}")
    return table.critical_value(scenario.alpha)


def run_experiment(
    scenario: Scenario,
    table: CriticalValueTable | float | None = None,
    streams: tuple[np.ndarray, np.ndarray] | None = None,
    cache_directory: str | os.PathLike | None = None,
    workers: int | None = None,
) -> SimulationReport:
    """Monitor every replication until rejection or the horizon.

    ``table`` may be a :class:`CriticalValueTable`, a bare critical value, or
    ``None`` to look the scenario's desk-scale table up in the cache.
    ``streams`` lets several scenarios share the same simulated data.
    """
    c_alpha = resolve_critical_value(scenario, table, cache_directory)
    if streams is None:
        streams = generate_streams(scenario, workers=workers)
    stat = _statistics(scenario, streams)
    return _summarize(scenario, stopping_times(stat, c_alpha), c_alpha, size_corrected=False)


def null_suprema(scenario: Scenario, streams=None, workers: int | None = None) -> np.ndarray:
    """``sup_k w(m,k) |Psi(m,k)| / sigma`` over the horizon, per replication."""
    if streams is None:
        streams = generate_streams(scenario, tag=1, workers=workers)
    return _statistics(scenario, streams).max(axis=1)


def size_corrected_power(
    h0_scenario: Scenario,
    h1_scenario: Scenario,
    h0_streams=None,
    h1_streams=None,
    workers: int | None = None,
) -> SimulationReport:
    """Power at the threshold that gives empirical size alpha on H0 data."""
    a = dataclasses.replace(h0_scenario, d=0.0, beta=math.inf, horizon=None, seed=0)
    b = dataclasses.replace(h1_scenario, d=0.0, beta=math.inf, horizon=None, seed=0)
    if a != b:
        raise ValueError("H0 and H1 scenarios must agree on everything except the change")
    if not h0_scenario.is_null:
        raise ValueError("calibration scenario must be a null scenario")
    if h0_scenario.horizon < h1_scenario.horizon:
        raise ValueError("calibration horizon must cover the evaluation horizon")
    if h0_streams is None:
        h0_streams = generate_streams(h0_scenario, tag=1, workers=workers)
    hist, mon = h0_streams
    sups = _statistics(h0_scenario, (hist, mon[:, : h1_scenario.horizon])).max(axis=1)
    c_alpha = upper_quantile(np.sort(sups), h0_scenario.alpha)
    if h1_streams is None:
        h1_streams = generate_streams(h1_scenario, workers=workers)
    taus = stopping_times(_statistics(h1_scenario, h1_streams), c_alpha)
    return _summarize(h1_scenario, taus, c_alpha, size_corrected=True)


def calibration_scenario(h1: Scenario) -> Scenario:
    """Null counterpart of ``h1`` with a matching horizon."""
    return dataclasses.replace(h1, d=0.0, beta=math.inf, horizon=h1.horizon)


# -- report emission --------------------------------------------------------------------

REPORT_COLUMNS = (
    "label", "kernel", "scheme", "b", "gamma", "dist", "m", "d", "beta", "k_star", "horizon",
    "alpha", "replications", "seed", "size_corrected", "c_alpha", "rejection_rate",
    "false_alarm_rate_pre_change", "delay_mean",
) + tuple(f"delay_q{q}" for q in DELAY_QUANTILES)


def report_row(report: SimulationReport) -> dict[str, str]:
    s = report.scenario
    row = {
        "label": s.label(),
        "kernel": s.kernel.name,
        "scheme": s.scheme.value,
        "b": f"{s.b:g}" if s.scheme is Scheme.MMOSUM else "",
        "gamma": f"{s.gamma:g}",
        "dist": s.dist.value,
        "m": str(s.m),
        "d": f"{s.d:g}",
        "beta": "inf" if math.isinf(s.beta) else f"{s.beta:g}",
        "k_star": "" if s.change_time is None else str(s.change_time),
        "horizon": str(s.horizon),
        "alpha": f"{s.alpha:g}",
        "replications": str(s.replications),
        "seed": str(s.seed),
        "size_corrected": str(int(report.size_corrected)),
        "c_alpha": repr(float(report.used_c_alpha)),
        "rejection_rate": repr(float(report.rejection_rate)),
        "false_alarm_rate_pre_change": repr(float(report.false_alarm_rate_pre_change)),
        "delay_mean": "" if math.isnan(report.delay_mean) else repr(float(report.delay_mean)),
    }
    for q in DELAY_QUANTILES:
        v = report.delay_quantiles.get(q)
        row[f"delay_q{q}"] = "" if v is None else repr(float(v))
    return row


def write_reports(reports: Iterable[SimulationReport], out_dir: str | os.PathLike) -> Path:
    """Write ``summary.tsv`` plus one ``delays_<label>.tsv`` histogram per H1 cell."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"# seqcp simulation report v{REPORT_SCHEMA_VERSION}", "\t".join(REPORT_COLUMNS)]
    for rep in reports:
        row = report_row(rep)
        lines.append("\t".join(row[c] for c in REPORT_COLUMNS))
        if not rep.scenario.is_null:
            hist_lines = [f"# seqcp delay histogram v{REPORT_SCHEMA_VERSION}", "delay\tcount"]
            hist_lines += [f"{d}\t{c}" for d, c in enumerate(rep.delay_histogram.tolist())]
            (out / f"delays_{row['label']}.tsv").write_text("\n".join(hist_lines) + "\n")
    path = out / "summary.tsv"
    path.write_text("\n".join(lines) + "\n")
    return path


def read_report_table(path: str | os.PathLike) -> list[dict[str, str]]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# seqcp simulation report v"):
        raise ValueError(f"{path}: not a simulation report")
    version = int(lines[0].rsplit("v", 1)[1])
    if version != REPORT_SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported report schema version {version}")
    header = lines[1].split("\t")
    return [dict(zip(header, line.split("\t"))) for line in lines[2:] if line]


# -- scenario configuration files ----------------------------------------------------------

_FIELD_TYPES = {
    "m": int, "d": float, "beta": float, "horizon": int, "gamma": float, "b": float,
    "alpha": float, "burn_in": int, "replications": int, "seed": int,
    "dist": str, "kernel": str, "scheme": str, "normalization": str,
}


def parse_scenarios(text: str, source: str = "<config>") -> list[Scenario]:
    """Parse ``key = value`` blocks separated by blank lines.

    A block starting with ``[defaults]`` sets defaults for the following
    blocks; ``#`` starts a comment.
    """
    defaults: dict[str, object] = {}
    scenarios = []
    block: dict[str, object] = {}
    is_defaults = False

    def flush(lineno):
        nonlocal block, is_defaults
        if is_defaults:
            defaults.update(block)
        elif block:
            try:
                scenarios.append(Scenario(**{**defaults, **block}))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{source}: block ending at line {lineno}: {exc}") from None
        block, is_defaults = {}, False

    lines = text.splitlines()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            if block or is_defaults:
                flush(lineno)
            continue
        if line == "[defaults]":
            flush(lineno)
            is_defaults = True
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or key not in _FIELD_TYPES:
            raise ValueError(f"{source}:{lineno}: expected 'key = value' with key in {sorted(_FIELD_TYPES)}")
        try:
            block[key] = _FIELD_TYPES[key](value) if value not in ("none", "None") else None
        except ValueError:
            raise ValueError(f"{source}:{lineno}: bad value {value!r} for {key}") from None
    flush(len(lines))
    return scenarios


def run_scenarios(
    scenarios: Sequence[Scenario],
    size_corrected: bool = False,
    cache_directory: str | os.PathLike | None = None,
    compute_missing: bool = True,
    workers: int | None = None,
    grid_points: int = critvals.DESK_GRID,
    limit_replications: int = critvals.DESK_REPS,
) -> list[SimulationReport]:
    """Run a scenario grid, sharing simulated streams between cells with equal data settings.

    ``grid_points`` and ``limit_replications`` set the scale of the critical-value tables.
    """
    bank: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}

    def streams_for(s: Scenario, tag: int):
        key = (tag, s.m, s.dist, s.d, s.beta, s.horizon, s.replications, s.seed)
        if key not in bank:
            bank[key] = generate_streams(s, tag=tag, workers=workers)
        return bank[key]

    reports = []
    for s in scenarios:
        if size_corrected and not s.is_null:
            h0 = calibration_scenario(s)
            reports.append(size_corrected_power(h0, s, streams_for(h0, 1), streams_for(s, 0)))
            continue
        spec = s.limit_spec(grid_points, limit_replications)
        table = critvals.cached_table(spec, cache_directory, compute=compute_missing, workers=workers)
        if table is None:
            raise MissingCriticalValues(f"no critical values cached for {spec.filename()}; run `seqcp critvals` first")
        reports.append(run_experiment(s, table, streams_for(s, 0)))
    return reports
