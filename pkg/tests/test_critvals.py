import math

import numpy as np
import pytest
from scipy.optimize import brentq

from seqcp import critvals
from seqcp.critvals import (
    ALPHA_GRID,
    CacheFormatError,
    CriticalValueTable,
    LimitFunctionalSpec,
    cache_load,
    cache_store,
    cached_table,
    critical_value,
    path_functional,
    read_table,
    simulate_limit,
    simulate_suprema,
    upper_quantile,
)
from seqcp.monitor import Scheme
from seqcp.weights import Normalization, rho


def sup_abs_bm_cdf(x: float) -> float:
    """P(sup_{[0,1]} |W| <= x) from the reflection series."""
    return 4 / math.pi * sum(
        (-1) ** k / (2 * k + 1) * math.exp(-((2 * k + 1) ** 2) * math.pi**2 / (8 * x * x)) for k in range(60)
    )


SUP_ABS_BM_Q95 = brentq(lambda x: sup_abs_bm_cdf(x) - 0.95, 1.0, 4.0)


def test_series_oracle_value():
    assert SUP_ABS_BM_Q95 == pytest.approx(2.2414, abs=1e-4)


def _paths(reps, n, seed=0):
    rng = np.random.default_rng(seed)
    w = np.cumsum(rng.standard_normal((reps, n - 1)), axis=1) / math.sqrt(n)
    return w, np.arange(1, n) / n


def _spec(scheme, gamma=0.0, b=None, norm="homoscedastic", n=200, r=100):
    return LimitFunctionalSpec(scheme, gamma, b, norm, n, r, 0)


class TestQuantileRule:
    def test_known_sequence(self):
        samples = np.arange(1.0, 101.0)
        assert upper_quantile(samples, 0.05) == 96.0

    def test_alpha_near_one(self):
        samples = np.arange(1.0, 101.0)
        assert upper_quantile(samples, 1 - 1e-12) == 1.0

    def test_monotone_in_alpha(self, rng):
        samples = np.sort(rng.exponential(size=777))
        assert upper_quantile(samples, 0.01) >= upper_quantile(samples, 0.05) >= upper_quantile(samples, 0.10)

    def test_exceedance_at_most_alpha(self, rng):
        samples = np.sort(rng.standard_normal(1234))
        for a in (0.01, 0.05, 0.1, 0.37):
            assert np.sum(samples > upper_quantile(samples, a)) <= a * samples.size

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5])
    def test_invalid_alpha(self, alpha):
        with pytest.raises(ValueError):
            upper_quantile(np.arange(10.0), alpha)


class TestFunctionals:
    def test_simplified_weight_matches_composition(self):
        t = np.linspace(1e-4, 1 - 1e-4, 1001)
        for gamma in (0.0, 0.25, 0.45):
            composed = rho(gamma, t / (1 - t)) / (1 - t)
            assert np.allclose(composed, t**-gamma, rtol=1e-12)

    @pytest.mark.parametrize("gamma", [0.0, 0.3])
    def test_unsimplified_cusum_functional(self, gamma):
        w, t = _paths(20, 400)
        composed = (rho(gamma, t / (1 - t)) * np.abs(w) / (1 - t)).max(axis=1)
        assert np.allclose(path_functional(w, t, _spec("cusum", gamma)), composed, rtol=1e-12)

    def test_page_brute_force(self):
        w, t = _paths(5, 150, seed=3)
        for norm in ("homoscedastic", "heteroscedastic"):
            for gamma in (0.0, 0.25):
                spec = _spec("page", gamma, None, norm)
                got = path_functional(w, t, spec)
                for r in range(5):
                    best = 0.0
                    for i, ti in enumerate(t):
                        # s ranges over the grid up to t plus the s -> 0 limit W(0) = 0
                        inner = abs(w[r, i]) if norm == "heteroscedastic" else abs(w[r, i] / (1 - ti))
                        for j in range(i + 1):
                            if norm == "heteroscedastic":
                                inner = max(inner, abs(w[r, i] - (1 - ti) / (1 - t[j]) * w[r, j]))
                            else:
                                inner = max(inner, abs(w[r, i] / (1 - ti) - w[r, j] / (1 - t[j])))
                        scale = 1.0 if norm == "heteroscedastic" else ti**-spec.gamma * (1 - ti)
                        best = max(best, scale * inner)
                    assert got[r] == pytest.approx(best, rel=1e-12)

    def test_mmosum_brute_force(self):
        w, t = _paths(4, 120, seed=4)
        n = 120
        for b in (0.1, 0.4, 0.9):
            got = path_functional(w, t, _spec("mmosum", 0.25, b))
            for r in range(4):
                best = 0.0
                for i, ti in enumerate(t):
                    u = ti * b / (1 - ti * (1 - b))
                    j = int(math.floor(u * n + 1e-9))  # grid point at or below u
                    wu = 0.0 if j == 0 else w[r, j - 1]
                    best = max(best, ti**-0.25 * abs(w[r, i] - (1 - ti * (1 - b)) * wu))
                assert got[r] == pytest.approx(best, rel=1e-12)

    def test_heteroscedastic_page_equals_homoscedastic_at_gamma_zero(self):
        w, t = _paths(50, 500, seed=5)
        a = path_functional(w, t, _spec("page", 0.0))
        b = path_functional(w, t, _spec("page", 0.0, None, "heteroscedastic"))
        assert np.allclose(a, b, rtol=1e-12)

    def test_page_dominates_cusum(self):
        w, t = _paths(300, 1000, seed=6)
        assert np.all(path_functional(w, t, _spec("page")) >= path_functional(w, t, _spec("cusum")) - 1e-12)

    def test_mmosum_small_b_degenerates_to_cusum(self):
        w, t = _paths(300, 1000, seed=7)
        for gamma in (0.0, 0.25):
            cusum = path_functional(w, t, _spec("cusum", gamma))
            mm = path_functional(w, t, _spec("mmosum", gamma, 1e-6))
            assert np.max(np.abs(cusum - mm)) < 1e-12

    def test_grid_refinement_drift(self):
        # coupled paths: the coarse grid is every 10th point of the fine grid
        w, t = _paths(2000, 10_000, seed=8)
        fine = path_functional(w, t, _spec("cusum", n=10_000))
        coarse_w = w[:, 9::10]
        coarse = path_functional(coarse_w, t[9::10], _spec("cusum", n=1000))
        assert np.all(fine >= coarse)
        qf, qc = upper_quantile(np.sort(fine), 0.05), upper_quantile(np.sort(coarse), 0.05)
        assert qf > qc and (qf - qc) / qf < 0.02


class TestSimulation:
    def test_desk_cusum_matches_series(self):
        table = simulate_limit(LimitFunctionalSpec.desk("cusum"))
        assert abs(critical_value(table, 0.05) - SUP_ABS_BM_Q95) <= 0.06

    def test_case_a_and_b_agree_for_cusum(self):
        a = simulate_limit(_spec("cusum", 0.0, None, "homoscedastic", 500, 400))
        b = simulate_limit(_spec("cusum", 0.0, None, "heteroscedastic", 500, 400))
        assert np.array_equal(a.sorted_sup_samples, b.sorted_sup_samples)

    def test_deterministic_across_workers(self):
        spec = LimitFunctionalSpec("page", 0.25, None, "homoscedastic", 300, 1100, 42)
        one = simulate_suprema(spec, workers=1)
        four = simulate_suprema(spec, workers=4)
        assert one.tobytes() == four.tobytes()

    def test_seed_changes_samples(self):
        a = simulate_suprema(LimitFunctionalSpec("cusum", 0, None, "homoscedastic", 300, 300, 1))
        b = simulate_suprema(LimitFunctionalSpec("cusum", 0, None, "homoscedastic", 300, 300, 2))
        assert not np.array_equal(a, b)

    @pytest.mark.parametrize("scheme,b", [("cusum", None), ("page", None), ("mmosum", 0.4)])
    def test_quantiles_increase_with_gamma(self, scheme, b):
        qs = [
            critical_value(simulate_limit(LimitFunctionalSpec(scheme, g, b, "homoscedastic", 1000, 2000, 0)), 0.05)
            for g in (0.0, 0.25, 0.45)
        ]
        assert qs[0] < qs[1] < qs[2]

    def test_table_invariants(self):
        table = simulate_limit(_spec("mmosum", 0.1, 0.4, n=500, r=1000))
        samples = table.sorted_sup_samples
        assert np.all(np.isfinite(samples)) and np.all(samples >= 0)
        assert np.all(np.diff(samples) >= 0)
        cs = [table.quantiles[a] for a in ALPHA_GRID]
        assert np.all(np.diff(cs) <= 0)
        assert table.critical_value(0.01) > table.critical_value(0.05) > table.critical_value(0.10)

    def test_memory_guard(self, monkeypatch):
        monkeypatch.setattr(critvals, "MEMORY_BUDGET_BYTES", 1000)
        with pytest.raises(MemoryError, match="lower grid_points"):
            simulate_suprema(_spec("cusum"))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            LimitFunctionalSpec("mmosum", 0.0, None)
        with pytest.raises(ValueError):
            LimitFunctionalSpec("cusum", 0.5)
        with pytest.raises(ValueError):
            LimitFunctionalSpec("cusum", grid_points=50)
        assert LimitFunctionalSpec("page", b=0.4).b is None


class TestCache:
    @pytest.fixture
    def table(self):
        return simulate_limit(_spec("mmosum", 0.25, 0.4, n=300, r=500))

    def test_round_trip(self, table, tmp_path):
        path = cache_store(table, tmp_path / "t.cvt")
        loaded = cache_load(table.spec, path)
        assert loaded.spec == table.spec
        assert loaded.created_at == table.created_at
        assert all(loaded.quantiles[a] == table.quantiles[a] for a in ALPHA_GRID)
        for a in (0.01, 0.05, 0.1, 0.5):
            assert critical_value(loaded, a) == critical_value(table, a)

    def test_key_mismatch_is_miss(self, table, tmp_path):
        path = cache_store(table, tmp_path / "t.cvt")
        other = LimitFunctionalSpec("mmosum", 0.1, 0.4, "homoscedastic", 300, 500, 0)
        assert cache_load(other, path) is None
        assert cache_load(LimitFunctionalSpec("mmosum", 0.25, 0.4, "homoscedastic", 300, 500, 1), path) is None

    def test_missing_file_is_miss(self, table, tmp_path):
        assert cache_load(table.spec, tmp_path / "absent.cvt") is None

    def test_version_bump(self, table, tmp_path):
        path = cache_store(table, tmp_path / "t.cvt")
        path.write_text(path.read_text().replace("format_version = 1", "format_version = 2"))
        with pytest.raises(CacheFormatError, match="format_version 2"):
            cache_load(table.spec, path)

    @pytest.mark.parametrize(
        "damage",
        [
            lambda s: s.replace("0.050\t", "0.050\tabc\t"),
            lambda s: s.replace("---\n", ""),
            lambda s: "\n".join(s.splitlines()[:-5]),
            lambda s: s.replace("seqcp critical values", "something else"),
            lambda s: s.replace("seed = 0", "seed = x"),
        ],
    )
    def test_corruption_raises(self, table, tmp_path, damage):
        path = cache_store(table, tmp_path / "t.cvt")
        path.write_text(damage(path.read_text()))
        with pytest.raises(CacheFormatError):
            read_table(path)

    def test_without_timestamp_is_reproducible(self, tmp_path):
        spec = _spec("cusum", n=300, r=200)
        a = cache_store(simulate_limit(spec), tmp_path / "a.cvt", timestamp=False)
        b = cache_store(simulate_limit(spec), tmp_path / "b.cvt", timestamp=False)
        assert a.read_bytes() == b.read_bytes()

    def test_alpha_rounds_down_to_grid(self, table, tmp_path):
        loaded = read_table(cache_store(table, tmp_path / "t.cvt"))
        assert critical_value(loaded, 0.0505) == loaded.quantiles[0.05]
        with pytest.raises(ValueError):
            critical_value(loaded, 0.0004)

    def test_cached_table_uses_env_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SEQCP_CACHE_DIR", str(tmp_path))
        spec = _spec("cusum", n=300, r=200)
        assert cached_table(spec, compute=False) is None
        first = cached_table(spec)
        assert (tmp_path / spec.filename()).exists()
        second = cached_table(spec)
        assert second.sorted_sup_samples is None
        assert second.quantiles == first.quantiles
