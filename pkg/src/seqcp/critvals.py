"""Monte-Carlo critical values from the pivotal null limits of the monitors.

Each replication draws a standard Wiener path on the grid ``t_i = i/N``,
``i = 1..N-1``, evaluates the scheme's functional along it and keeps the
supremum.  Critical values are upper order statistics of those suprema.

Homoscedastic limits (built-in weight family, weight already simplified)::

    cusum   sup_t t^-g |W(t)|
    mmosum  sup_t t^-g |W(t) - (1 - t(1-b)) W(tb / (1 - t(1-b)))|
    page    sup_t t^-g (1-t) sup_{s<=t} |W(t)/(1-t) - W(s)/(1-s)|

Heteroscedastic limits drop ``t^-g`` and, for Page, use
``sup_{s<=t} |W(t) - (1-t)/(1-s) W(s)|``.

Replications are generated in fixed-size blocks; block ``j`` draws from its
own stream ``SeedSequence(seed, spawn_key=(j,))``, so the result does not
depend on how blocks are distributed over worker threads.
"""

from __future__ import annotations

import datetime as _dt
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .monitor import Scheme, get_scheme
from .weights import Normalization

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
BLOCK_SIZE = 250
ALPHA_GRID = tuple(i / 1000 for i in range(1, 1000))
MEMORY_BUDGET_BYTES = 512 * 2**20
CACHE_ENV = "SEQCP_CACHE_DIR"

FULL_GRID, FULL_REPS = 10_000, 50_000
DESK_GRID, DESK_REPS = 2_000, 5_000


class CacheFormatError(ValueError):
    """A cache file could not be parsed or has an unsupported version."""


@dataclass(frozen=True)
class LimitFunctionalSpec:
    scheme: Scheme
    gamma: float = 0.0
    b: float | None = None
    normalization: Normalization = Normalization.HOMOSCEDASTIC
    grid_points: int = FULL_GRID
    replications: int = FULL_REPS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scheme", get_scheme(self.scheme))
        object.__setattr__(self, "normalization", Normalization(self.normalization))
        object.__setattr__(self, "gamma", float(self.gamma))
        if self.scheme is Scheme.MMOSUM:
            if self.b is None or not 0.0 < self.b < 1.0:
                raise ValueError("mMOSUM limit needs b in (0, 1)")
            object.__setattr__(self, "b", float(self.b))
        else:
            object.__setattr__(self, "b", None)
        if self.normalization is Normalization.HETEROSCEDASTIC:
            # the heteroscedastic limits carry no gamma
            object.__setattr__(self, "gamma", 0.0)
        if not 0.0 <= self.gamma < 0.5:
            raise ValueError(f"gamma must lie in [0, 0.5), got {self.gamma}")
        if self.grid_points < 100:
            raise ValueError("grid_points must be >= 100")
        if self.replications < 100:
            raise ValueError("replications must be >= 100")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def desk(cls, scheme, gamma=0.0, b=None, normalization=Normalization.HOMOSCEDASTIC, seed=0):
        return cls(scheme, gamma, b, normalization, DESK_GRID, DESK_REPS, seed)

    def key(self) -> dict[str, str]:
        return {
            "scheme": self.scheme.value,
            "gamma": repr(float(self.gamma)),
            "b": "none" if self.b is None else repr(float(self.b)),
            "normalization": self.normalization.value,
            "grid_points": str(self.grid_points),
            "replications": str(self.replications),
            "seed": str(self.seed),
        }

    def filename(self) -> str:
        b = "none" if self.b is None else f"{self.b:g}"
        return (
            f"{self.scheme.value}_g{self.gamma:g}_b{b}_{self.normalization.value[:6]}"
            f"_N{self.grid_points}_R{self.replications}_s{self.seed}_v{FORMAT_VERSION}.cvt"
        )


@dataclass
class CriticalValueTable:
    spec: LimitFunctionalSpec
    quantiles: dict[float, float]
    sorted_sup_samples: np.ndarray | None = field(default=None, repr=False)
    created_at: str | None = None
    format_version: int = FORMAT_VERSION

    def critical_value(self, alpha: float) -> float:
        return critical_value(self, alpha)


def _quantile_index(alpha: float, n: int) -> int:
    # floor((1 - alpha) * n), guarded against 0.95 * 100 = 94.999... style error
    idx = math.floor(round((1.0 - alpha) * n, 9))
    return min(max(idx, 0), n - 1)


def upper_quantile(sorted_samples: np.ndarray, alpha: float) -> float:
    """Conservative empirical (1 - alpha)-quantile of ascending samples.

    Returns the order statistic at 0-based index ``floor((1 - alpha) * n)``, so
    at most ``alpha * n`` samples strictly exceed it.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return float(sorted_samples[_quantile_index(alpha, len(sorted_samples))])


def critical_value(table: CriticalValueTable, alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if table.sorted_sup_samples is not None:
        return upper_quantile(table.sorted_sup_samples, alpha)
    # tables loaded from disk keep only the alpha grid; round alpha down
    grid_alpha = math.floor(round(alpha * 1000, 6)) / 1000
    if grid_alpha not in table.quantiles:
        raise ValueError(f"alpha {alpha} below the stored grid resolution of 0.001")
    return table.quantiles[grid_alpha]


# -- path functionals ------------------------------------------------------------


def _block_suprema(spec: LimitFunctionalSpec, block: int, size: int) -> np.ndarray:
    n = spec.grid_points
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed, spawn_key=(block,))))
    w = rng.standard_normal((size, n - 1))
    np.cumsum(w, axis=1, out=w)
    w *= 1.0 / math.sqrt(n)
    t = np.arange(1, n, dtype=float) / n
    return path_functional(w, t, spec)


def path_functional(w: np.ndarray, t: np.ndarray, spec: LimitFunctionalSpec) -> np.ndarray:
    """Supremum of the scheme's limit functional along each row of ``w``.

    ``w[:, i]`` is the path at ``t[i] = (i + 1) / N``.
    """
    n = len(t) + 1
    homo = spec.normalization is Normalization.HOMOSCEDASTIC
    tw = t ** -spec.gamma if homo and spec.gamma > 0 else None

    if spec.scheme is Scheme.CUSUM:
        stat = np.abs(w)
    elif spec.scheme is Scheme.MMOSUM:
        b = spec.b
        shrink = 1.0 - t * (1.0 - b)
        idx = np.floor(t * b / shrink * n + 1e-9).astype(np.intp)  # grid index at or below the inner time
        padded = np.concatenate([np.zeros((w.shape[0], 1)), w], axis=1)
        stat = np.abs(w - shrink * padded[:, idx])
    else:
        v = w / (1.0 - t)
        vmax = np.maximum(np.maximum.accumulate(v, axis=1), 0.0)
        vmin = np.minimum(np.minimum.accumulate(v, axis=1), 0.0)
        if homo:
            stat = (1.0 - t) * np.maximum(v - vmin, vmax - v)
        else:
            stat = np.maximum(np.abs(w - (1.0 - t) * vmax), np.abs(w - (1.0 - t) * vmin))
    if tw is not None:
        stat *= tw
    return stat.max(axis=1)


def simulate_suprema(spec: LimitFunctionalSpec, workers: int | None = None) -> np.ndarray:
    """Unsorted suprema of all replications, in replication order."""
    row_bytes = 8 * spec.grid_points * 4
    if row_bytes > MEMORY_BUDGET_BYTES:
        raise MemoryError(
            f"a single path of {spec.grid_points} points exceeds the memory budget; lower grid_points"
        )
    block = max(1, min(BLOCK_SIZE, MEMORY_BUDGET_BYTES // row_bytes))
    if block != BLOCK_SIZE:
        logger.warning("block size reduced to %d; results are not comparable to default runs", block)
    sizes = [min(block, spec.replications - start) for start in range(0, spec.replications, block)]
    jobs = list(enumerate(sizes))
    if workers is None or workers <= 1:
        parts = [_block_suprema(spec, j, size) for j, size in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda job: _block_suprema(spec, *job), jobs))
    return np.concatenate(parts)


def simulate_limit(spec: LimitFunctionalSpec, workers: int | None = None) -> CriticalValueTable:
    samples = np.sort(simulate_suprema(spec, workers))
    if not np.all(np.isfinite(samples)):
        raise FloatingPointError("non-finite supremum in limit simulation")
    quantiles = {a: upper_quantile(samples, a) for a in ALPHA_GRID}
    return CriticalValueTable(
        spec=spec,
        quantiles=quantiles,
        sorted_sup_samples=samples,
        created_at=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    )


# -- persistent cache ----------------------------------------------------------------

_HEADER = "# seqcp critical values"


def format_table(table: CriticalValueTable, timestamp: bool = True) -> str:
    lines = [_HEADER, f"format_version = {table.format_version}"]
    lines += [f"{k} = {v}" for k, v in table.spec.key().items()]
    if timestamp and table.created_at:
        lines.append(f"created_at = {table.created_at}")
    lines.append("---")
    lines.append("alpha\tc_alpha")
    for a in sorted(table.quantiles):
        lines.append(f"{a:.3f}\t{float(table.quantiles[a])!r}")
    return "\n".join(lines) + "\n"


def cache_store(table: CriticalValueTable, path: str | os.PathLike, timestamp: bool = True) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(format_table(table, timestamp))
    tmp.replace(path)
    return path


def read_table(path: str | os.PathLike) -> CriticalValueTable:
    """Parse a cache file; raises :class:`CacheFormatError` on any defect."""
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or lines[0] != _HEADER:
        raise CacheFormatError(f"{path}: missing header line")
    header: dict[str, str] = {}
    i = 1
    while i < len(lines) and lines[i] != "---":
        key, sep, value = lines[i].partition("=")
        if not sep:
            raise CacheFormatError(f"{path}:{i + 1}: expected 'key = value'")
        header[key.strip()] = value.strip()
        i += 1
    if i >= len(lines):
        raise CacheFormatError(f"{path}: missing '---' separator")
    version = header.get("format_version")
    if version != str(FORMAT_VERSION):
        raise CacheFormatError(f"{path}: unsupported format_version {version} (expected {FORMAT_VERSION})")
    try:
        b = header["b"]
        spec = LimitFunctionalSpec(
            scheme=header["scheme"],
            gamma=float(header["gamma"]),
            b=None if b == "none" else float(b),
            normalization=header["normalization"],
            grid_points=int(header["grid_points"]),
            replications=int(header["replications"]),
            seed=int(header["seed"]),
        )
    except (KeyError, ValueError) as exc:
        raise CacheFormatError(f"{path}: bad header: {exc}") from None
    if i + 1 >= len(lines) or lines[i + 1] != "alpha\tc_alpha":
        raise CacheFormatError(f"{path}: missing column header")
    quantiles = {}
    for lineno, line in enumerate(lines[i + 2 :], start=i + 3):
        parts = line.split("\t")
        try:
            a, c = float(parts[0]), float(parts[1])
        except (IndexError, ValueError):
            raise CacheFormatError(f"{path}:{lineno}: malformed quantile row {line!r}") from None
        if len(parts) != 2 or not math.isfinite(c) or c < 0:
            raise CacheFormatError(f"{path}:{lineno}: malformed quantile row {line!r}")
        quantiles[round(a, 3)] = c
    if set(quantiles) != set(ALPHA_GRID):
        raise CacheFormatError(f"{path}: incomplete quantile grid ({len(quantiles)} of {len(ALPHA_GRID)} rows)")
    return CriticalValueTable(spec=spec, quantiles=quantiles, created_at=header.get("created_at"))


def cache_load(spec: LimitFunctionalSpec, path: str | os.PathLike) -> CriticalValueTable | None:
    """Load a table if ``path`` exists and was built for exactly ``spec``."""
    path = Path(path)
    if not path.exists():
        return None
    table = read_table(path)
    if table.spec != spec:
        return None
    return table


def cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "seqcp"


def cached_table(
    spec: LimitFunctionalSpec,
    directory: str | os.PathLike | None = None,
    compute: bool = True,
    workers: int | None = None,
) -> CriticalValueTable | None:
    """Look ``spec`` up in the cache directory; simulate and store on a miss."""
    path = Path(directory) if directory is not None else cache_dir()
    path = path / spec.filename()
    table = cache_load(spec, path)
    if table is not None or not compute:
        return table
    logger.info("simulating critical values for %s", spec.filename())
    table = simulate_limit(spec, workers)
    cache_store(table, path)
    return table


def list_cache(directory: str | os.PathLike | None = None) -> list[Path]:
    path = Path(directory) if directory is not None else cache_dir()
    if not path.is_dir():
        return []
    return sorted(path.glob("*.cvt"))
