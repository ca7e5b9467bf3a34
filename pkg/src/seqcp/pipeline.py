"""Monthly series ingestion, deseasonalization and multi-scheme analysis."""

from __future__ import annotations

import csv
import logging
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import critvals
from .critvals import LimitFunctionalSpec
from .kernels import KernelSpec, get_kernel
from .monitor import Scheme, get_scheme, run_monitor
from .weights import Normalization, WeightConfig

logger = logging.getLogger(__name__)

_DATE = re.compile(r"^\s*(\d{4})-(\d{1,2})(?:-(\d{1,2}))?\s*$")


class DataError(ValueError):
    """Malformed input data (reported with exit code 2 by the CLI)."""


@dataclass(frozen=True)
class SeriesRecord:
    year: int
    month: int
    value: float

    @property
    def month_index(self) -> int:
        return self.year * 12 + self.month - 1

    @property
    def label(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"


def parse_month(text: str) -> tuple[int, int]:
    match = _DATE.match(text)
    if not match:
        raise ValueError(f"unrecognised date {text!r} (expected YYYY-MM or YYYY-MM-DD)")
    year, month = int(match.group(1)), int(match.group(2))
    if not 1 <= month <= 12:
        raise ValueError(f"month out of range in {text!r}")
    return year, month


def load_csv(path: str | os.PathLike, value_column: str, date_column: str = "date") -> list[SeriesRecord]:
    """Read a monthly series; rows must have strictly increasing months."""
    records: list[SeriesRecord] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file, header row expected")
        for col in (date_column, value_column):
            if col not in reader.fieldnames:
                raise DataError(f"{path}: missing column {col!r} (have {reader.fieldnames})")
        for row in reader:
            line = reader.line_num
            raw_value = (row.get(value_column) or "").strip()
            if not raw_value:
                raise DataError(f"{path}:{line}: missing value in column {value_column!r}")
            try:
                year, month = parse_month(row.get(date_column) or "")
                value = float(raw_value)
            except ValueError as exc:
                raise DataError(f"{path}:{line}: {exc}") from None
            if not math.isfinite(value):
                raise DataError(f"{path}:{line}: non-finite value {raw_value!r}")
            rec = SeriesRecord(year, month, value)
            if records and rec.month_index <= records[-1].month_index:
                raise DataError(f"{path}:{line}: timestamps not increasing ({records[-1].label} then {rec.label})")
            if records and rec.month_index > records[-1].month_index + 1:
                logger.warning("%s:%d: gap in series between %s and %s", path, line, records[-1].label, rec.label)
            records.append(rec)
    return records


def find_gaps(records: Sequence[SeriesRecord]) -> list[tuple[str, str]]:
    return [
        (a.label, b.label) for a, b in zip(records, records[1:]) if b.month_index > a.month_index + 1
    ]


def deseasonalize(records: Sequence[SeriesRecord], historic_len: int, period: int = 12) -> list[SeriesRecord]:
    """Subtract per-season means estimated on the first ``historic_len`` records only."""
    if historic_len < period:
        raise ValueError(f"historic window ({historic_len}) shorter than the period ({period})")
    if historic_len > len(records):
        raise ValueError("historic window longer than the series")
    by_season: dict[int, list[float]] = {}
    for rec in records[:historic_len]:
        by_season.setdefault(rec.month_index % period, []).append(rec.value)
    # clamping keeps a constant season exactly constant despite rounding
    means = {c: min(max(math.fsum(v) / len(v), min(v)), max(v)) for c, v in by_season.items()}
    out = []
    for rec in records:
        c = rec.month_index % period
        if c not in means:
            raise DataError(f"season {c + 1} of {period} has no observation in the historic window")
        out.append(SeriesRecord(rec.year, rec.month, rec.value - means[c]))
    return out


@dataclass
class PairResult:
    kernel: str
    scheme: str
    c_alpha: float
    historic_len: int
    k: np.ndarray = field(repr=False)
    gamma: np.ndarray = field(repr=False)
    psi: np.ndarray = field(repr=False)
    weight: np.ndarray = field(repr=False)
    normalized: np.ndarray = field(repr=False)
    stopping_time: int | None = None

    @property
    def name(self) -> str:
        return f"{self.kernel}_{self.scheme}"


@dataclass
class AnalysisOutput:
    results: dict[tuple[str, str], PairResult]
    historic_len: int
    labels: list[str] = field(default_factory=list)

    def __getitem__(self, key: tuple[str, str]) -> PairResult:
        return self.results[key]

    def stopping_times(self) -> dict[tuple[str, str], int | None]:
        return {key: r.stopping_time for key, r in self.results.items()}


def critical_values_for(
    schemes: Iterable[Scheme | str],
    gamma: float,
    b: float,
    alpha: float,
    grid_points: int = critvals.DESK_GRID,
    replications: int = critvals.DESK_REPS,
    seed: int = 0,
    cache_directory: str | os.PathLike | None = None,
) -> dict[Scheme, float]:
    out = {}
    for scheme in schemes:
        scheme = get_scheme(scheme)
        spec = LimitFunctionalSpec(scheme, gamma, b if scheme is Scheme.MMOSUM else None,
                                   Normalization.HOMOSCEDASTIC, grid_points, replications, seed)
        out[scheme] = critvals.cached_table(spec, cache_directory).critical_value(alpha)
    return out


def analyze(
    series: Sequence[float] | Sequence[SeriesRecord],
    historic_len: int,
    kernels: Iterable[KernelSpec | str] = ("dom", "wilcoxon"),
    schemes: Iterable[Scheme | str] = ("cusum", "mmosum", "page"),
    gamma: float = 0.0,
    b: float = 0.4,
    alpha: float = 0.05,
    c_alpha: Mapping[Scheme | str, float] | None = None,
    burn_in: int | None = None,
    **critval_options,
) -> AnalysisOutput:
    """Monitor the post-historic part of ``series`` with every (kernel, scheme) pair.

    The normalized trace ``w(m,k) |Psi(m,k)| / (sigma * c_alpha)`` crosses 1 at
    the stopping time.  Critical values come from ``c_alpha`` when given,
    otherwise from the cache (simulated on a miss).
    """
    labels = []
    if len(series) and isinstance(series[0], SeriesRecord):
        labels = [r.label for r in series]
        values = np.array([r.value for r in series], dtype=float)
    else:
        values = np.asarray(series, dtype=float)
    if historic_len < 2:
        raise ValueError("insufficient historic data")
    if historic_len >= values.size:
        raise ValueError("no monitoring data after the historic window")
    schemes = [get_scheme(s) for s in schemes]
    kernels = [get_kernel(k) for k in kernels]
    if c_alpha is None:
        crit = critical_values_for(schemes, gamma, b, alpha, **critval_options)
    else:
        crit = {get_scheme(s): float(v) for s, v in c_alpha.items()}
    cfg = WeightConfig(gamma=gamma, burn_in=burn_in, mmosum_b=b)
    historic, monitoring = values[:historic_len], values[historic_len:]

    results = {}
    for kernel in kernels:
        for scheme in schemes:
            c = crit[scheme]
            decisions = run_monitor(historic, monitoring, kernel, scheme, cfg, c, trace=True)
            stat = np.array([d.statistic for d in decisions])
            res = PairResult(
                kernel=kernel.name,
                scheme=scheme.value,
                c_alpha=c,
                historic_len=historic_len,
                k=np.arange(1, len(decisions) + 1),
                gamma=np.array([d.gamma for d in decisions]),
                psi=np.array([d.psi for d in decisions]),
                weight=np.array([d.weight for d in decisions]),
                normalized=stat / c,
                stopping_time=decisions[-1].stopped_at if decisions else None,
            )
            results[(kernel.name, scheme.value)] = res
    return AnalysisOutput(results, historic_len, labels)


# -- output files ------------------------------------------------------------------

TRACE_COLUMNS = ("k", "gamma_stat", "psi", "weight", "normalized")


def write_analysis(output: AnalysisOutput, out_dir: str | os.PathLike) -> list[Path]:
    """One ``trace_<kernel>_<scheme>.tsv`` per pair and a ``stopping_times.tsv`` summary.

    ``weight`` is the scale-normalized weight ``w(m,k) / sigma`` actually applied.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    mon_labels = output.labels[output.historic_len :] if output.labels else []
    summary = ["kernel\tscheme\tc_alpha\thistoric_len\tstopping_time\tstopping_date"]
    for res in output.results.values():
        lines = ["\t".join(TRACE_COLUMNS)]
        for k, *vals in zip(res.k.tolist(), res.gamma.tolist(), res.psi.tolist(), res.weight.tolist(),
                            res.normalized.tolist()):
            lines.append("\t".join([str(k)] + [repr(v) for v in vals]))
        path = out / f"trace_{res.name}.tsv"
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
        tau = res.stopping_time
        date = mon_labels[tau - 1] if tau and mon_labels else ""
        summary.append(f"{res.kernel}\t{res.scheme}\t{float(res.c_alpha)!r}\t{res.historic_len}\t{tau or ''}\t{date}")
    path = out / "stopping_times.tsv"
    path.write_text("\n".join(summary) + "\n")
    written.append(path)
    return written


def read_trace(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    header, body = rows[0], rows[1:]
    if tuple(header) != TRACE_COLUMNS:
        raise DataError(f"{path}: unexpected trace columns {header}")
    cols = list(zip(*body)) if body else [[] for _ in header]
    out = {"k": np.array(cols[0], dtype=int)}
    for name, col in zip(header[1:], cols[1:]):
        out[name] = np.array(col, dtype=float)
    return out


# -- synthetic fixture --------------------------------------------------------------


def synthetic_temperature(
    seed: int = 0,
    start_year: int = 1893,
    end_year: int = 2018,
    shift_month: str | None = "1987-10",
    shift: float = 1.5,
) -> list[dict[str, object]]:
    """Monthly mean/min temperatures with a seasonal cycle and one level shift.

    Synthetic stand-in for a station record: mean temperatures have Gaussian
    anomalies, minimal temperatures have heavier-tailed, left-skewed ones.
    """
    rng = np.random.default_rng(seed)
    years = np.repeat(np.arange(start_year, end_year + 1), 12)
    months = np.tile(np.arange(1, 13), end_year - start_year + 1)
    n = years.size
    season = np.cos(2 * np.pi * (months - 7) / 12)
    level = np.zeros(n)
    if shift_month:
        y, mth = parse_month(shift_month)
        level[years * 12 + months - 1 >= y * 12 + mth - 1] = shift
    mean_t = 9.0 + 9.5 * season + level + 1.8 * rng.standard_normal(n)
    min_t = -6.5 + 9.0 * season + level - 1.2 * np.abs(rng.standard_t(3, n)) + 0.9 * rng.standard_normal(n)
    return [
        {"date": f"{y:04d}-{mo:02d}", "mean_temp": round(float(a), 2), "min_temp": round(float(b), 2)}
        for y, mo, a, b in zip(years, months, mean_t, min_t)
    ]


def write_series_csv(rows: Sequence[Mapping[str, object]], path: str | os.PathLike) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    return path


def fixture_path() -> Path:
    return Path(__file__).parent / "data" / "synthetic_temperature.csv"
