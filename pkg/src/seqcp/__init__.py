"""Sequential change-point monitoring based on two-sample U-statistics."""

from .critvals import (
    CriticalValueTable,
    LimitFunctionalSpec,
    cache_load,
    cache_store,
    critical_value,
    simulate_limit,
)
from .kernels import DOM, SYMMETRIC_SUM, WILCOXON, Distribution, KernelSpec, get_kernel
from .monitor import Decision, MonitorState, Scheme, init_monitor, run_monitor, step
from .simharness import Scenario, SimulationReport, run_experiment, size_corrected_power
from .weights import Normalization, WeightConfig

__version__ = "0.1.0"

__all__ = [
    "CriticalValueTable", "LimitFunctionalSpec", "cache_load", "cache_store", "critical_value",
    "simulate_limit", "DOM", "SYMMETRIC_SUM", "WILCOXON", "Distribution", "KernelSpec", "get_kernel",
    "Decision", "MonitorState", "Scheme", "init_monitor", "run_monitor", "step", "Scenario",
    "SimulationReport", "run_experiment", "size_corrected_power", "Normalization", "WeightConfig",
]
