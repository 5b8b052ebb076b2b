import math

import numpy as np
import pytest

from edgepart.analytic import SystemState
from edgepart.profiles import MB, Configuration, HardwareSpec, ModelProfile
from edgepart.simulator import (CSV_COLUMNS, SimConfig, SimulationError, WeightCache,
                                cache_lookup_and_charge, merge_streams, model_stream,
                                nearest_rank, poisson_arrivals, run_sim)

from conftest import single_point_model

HW = HardwareSpec(8 * MB, 320 * MB, 4)


def md1_state(rate=5.0, s=0.1):
    m = single_point_model("m", 1_000_000, s)
    return SystemState((m,), (rate,), HW, Configuration((1,), (0,)))


def pipeline_state():
    a = ModelProfile("a", 150_528, (0, 2_000_000, 4_000_000), (0.0, 0.01, 0.02),
                     (0.06, 0.03, 0.0), (0, 100_000, 0))
    b = ModelProfile("b", 150_528, (0, 3_000_000, 6_000_000), (0.0, 0.01, 0.03),
                     (0.08, 0.05, 0.0), (0, 100_000, 0))
    return SystemState((a, b), (8.0, 6.0), HW, Configuration((1, 2), (4, 0)))


def test_md1_mean_wait():
    rep = run_sim(SimConfig(md1_state(), seed=1, total_requests=200_000))
    assert rep.stats("m").mean_tpu_wait_s == pytest.approx(0.05, rel=0.02)


def test_determinism_and_seed_sensitivity():
    cfg = SimConfig(pipeline_state(), seed=42, total_requests=20_000)
    a, b = run_sim(cfg), run_sim(cfg)
    assert a.to_json() == b.to_json()
    assert a.to_csv() == b.to_csv()
    c = run_sim(SimConfig(pipeline_state(), seed=43, total_requests=20_000))
    assert c.to_json() != a.to_json()


def test_streams_independent_of_other_models():
    # adding a model never perturbs the arrivals of the others
    a1 = poisson_arrivals(model_stream(5, 0), ((0.0, 3.0),), 100.0)
    a2 = poisson_arrivals(model_stream(5, 0), ((0.0, 3.0),), 100.0)
    b = poisson_arrivals(model_stream(5, 1), ((0.0, 3.0),), 100.0)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1[:10], b[:10])
    times, mids = merge_streams([a1, b])
    assert np.all(np.diff(times) >= 0)
    assert np.array_equal(times[mids == 0], a1)


def test_piecewise_arrival_rates():
    t = poisson_arrivals(model_stream(0, 0), ((0.0, 1.0), (1000.0, 5.0)), 2000.0)
    assert np.sum(t < 1000) == pytest.approx(1000, rel=0.1)
    assert np.sum(t >= 1000) == pytest.approx(5000, rel=0.05)


def test_conservation_and_percentiles():
    cfg = SimConfig(pipeline_state(), seed=3, total_requests=30_000)
    rep = run_sim(cfg)
    assert sum(s.completed for s in rep.models) == cfg.total_requests - cfg.warmup_requests
    rec = rep.records
    assert np.all(rec["done"] >= rec["arrival"])
    assert np.all(rec["done"][~np.isnan(rec["tpu_start"])] >= rec["tpu_end"][~np.isnan(rec["tpu_start"])])
    for s in rep.models:
        assert s.p50_e2e_s <= s.p95_e2e_s <= s.p99_e2e_s
        assert 0.0 <= s.miss_fraction <= 1.0
    assert not rep.truncated and not rep.saturated


def _time_average_in_system(enter, leave, lo, hi, rng, n=20_000):
    t = rng.uniform(lo, hi, n)
    enter, leave = np.sort(enter), np.sort(leave)
    return float(np.mean(np.searchsorted(enter, t, "right") - np.searchsorted(leave, t, "right")))


def test_littles_law_per_stage():
    rep = run_sim(SimConfig(pipeline_state(), seed=11, total_requests=100_000))
    rec = rep.records
    rng = np.random.default_rng(0)
    lo, hi = rec["arrival"][5000], rec["arrival"][-5000]
    span = hi - lo

    on = ~np.isnan(rec["tpu_start"])
    enter, leave = rec["arrival"][on], rec["tpu_end"][on]
    window = (enter >= lo) & (enter < hi)
    lam = window.sum() / span
    sojourn = (leave - enter)[window].mean()
    assert _time_average_in_system(enter, leave, lo, hi, rng) == pytest.approx(lam * sojourn, rel=0.05)

    for i in range(2):
        sel = (rec["model"] == i) & ~np.isnan(rec["cpu_start"])
        if not sel.any():
            continue
        enter, leave = rec["cpu_arrival"][sel], rec["done"][sel]
        window = (enter >= lo) & (enter < hi)
        lam = window.sum() / span
        sojourn = (leave - enter)[window].mean()
        assert _time_average_in_system(enter, leave, lo, hi, rng) == pytest.approx(lam * sojourn, rel=0.05)


def test_empty_report_for_zero_rates():
    st = SystemState(md1_state().models, (0.0,), HW, Configuration((1,), (0,)))
    rep = run_sim(SimConfig(st))
    assert rep.models[0].completed == 0
    assert rep.total_requests == 0


def test_invalid_config_rejected():
    st = SystemState(md1_state().models, (1.0,), HW, Configuration((0,), (0,)))
    with pytest.raises(SimulationError):
        run_sim(SimConfig(st, total_requests=5000))
    with pytest.raises(ValueError):
        SimConfig(md1_state(), total_requests=100, warmup_requests=100)


def test_horizon_truncates():
    rep = run_sim(SimConfig(md1_state(), total_requests=100_000, warmup_requests=100, horizon_s=200.0))
    assert rep.truncated
    assert rep.total_requests < 100_000


def test_overload_flagged():
    rep = run_sim(SimConfig(md1_state(rate=12.0), total_requests=20_000))
    assert rep.saturated


def test_empirical_miss_fraction_balanced_pair(bundled_by_name):
    mods = (bundled_by_name["EfficientNet"], bundled_by_name["GPUNet"])
    st = SystemState(mods, (10.0, 10.0), HW, Configuration((6, 5), (0, 0)))
    rep = run_sim(SimConfig(st, seed=0, total_requests=40_000))
    for s in rep.models:
        assert s.miss_fraction == pytest.approx(0.5, abs=0.02)


def test_cache_modes_agree_when_irrelevant(bundled_by_name):
    # single tenant, and a fitting pair: nothing is ever evicted in either mode
    for mods, rates, parts in [((bundled_by_name["GPUNet"],), (10.0,), (5,)),
                               ((bundled_by_name["MobileNetV2"], bundled_by_name["SqueezeNet"]),
                                (20.0, 20.0), (5, 2))]:
        st = SystemState(mods, rates, HW, Configuration(parts, (0,) * len(mods)))
        means = {mode: [run_sim(SimConfig(st, mode, seed, 20_000)).weighted_mean_e2e_s
                        for seed in (0, 1)] for mode in ("evict_on_switch", "lru_bytes")}
        assert np.mean(means["lru_bytes"]) == pytest.approx(np.mean(means["evict_on_switch"]), rel=0.01)


# ---- weight cache ---------------------------------------------------------------------

def test_cache_fitting_never_charges():
    for mode in ("evict_on_switch", "lru_bytes"):
        cache = WeightCache(mode, HW)
        cache.configure([4_100_000, 1_400_000])
        assert [cache_lookup_and_charge(cache, i % 2, [4_100_000, 1_400_000][i % 2], HW)
                for i in range(10)] == [0.0] * 10


def test_evict_on_switch_residency():
    cache = WeightCache("evict_on_switch", HW)
    sizes = [6_700_000, 12_200_000]
    cache.configure(sizes)
    cache.lookup_and_charge(0, sizes[0])
    assert cache.lookup_and_charge(0, sizes[0]) == 0.0
    assert cache.lookup_and_charge(1, sizes[1]) == pytest.approx(12_200_000 / 320e6)
    assert cache.lookup_and_charge(1, sizes[1]) == 0.0


def test_lru_hand_trace():
    cache = WeightCache("lru_bytes", HW)
    sizes = [6_700_000, 12_200_000]
    cache.configure(sizes)
    # warm start in model order: 6.7 MB of model 0, then the 1.3 MB that remain for model 1
    assert dict(cache.resident) == {0: 6_700_000, 1: 1_300_000}
    # model 1 keeps at most C = 8 MB resident, so it misses 8 - 1.3 = 6.7 MB
    charge = cache.lookup_and_charge(1, sizes[1])
    assert charge == pytest.approx(6_700_000 / 320e6, rel=1e-12)
    assert dict(cache.resident) == {1: 8_000_000}
    # model 0 evicts 6.7 MB of model 1
    assert cache.lookup_and_charge(0, sizes[0]) == pytest.approx(6_700_000 / 320e6, rel=1e-12)
    assert dict(cache.resident) == {1: 1_300_000, 0: 6_700_000}
    again = cache.lookup_and_charge(1, sizes[1])
    assert again == pytest.approx(6_700_000 / 320e6, rel=1e-12)
    assert again < 12_200_000 / 320e6


def test_cache_hardware_mismatch():
    cache = WeightCache("lru_bytes", HW)
    with pytest.raises(ValueError):
        cache_lookup_and_charge(cache, 0, 10, HardwareSpec(1 * MB, 320 * MB, 4))
    with pytest.raises(ValueError):
        WeightCache("fifo", HW)


# ---- formatting -----------------------------------------------------------------------

def test_nearest_rank():
    x = np.arange(1, 101, dtype=float)
    assert nearest_rank(x, 50) == 50
    assert nearest_rank(x, 95) == 95
    assert nearest_rank(x, 99) == 99
    assert nearest_rank(np.array([3.0]), 99) == 3.0
    assert math.isnan(nearest_rank(np.empty(0), 50))


def test_csv_layout():
    rep = run_sim(SimConfig(pipeline_state(), seed=0, total_requests=5_000))
    lines = rep.to_csv().splitlines()
    assert lines[0].split(",") == list(CSV_COLUMNS)
    assert [l.split(",")[0] for l in lines[1:]] == ["a", "b", "__all__"]
