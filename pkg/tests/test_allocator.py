import math

import pytest
from hypothesis import given, settings, strategies as st

from edgepart.allocator import (InfeasibleError, SearchSpaceTooLarge, allocate,
                                brute_force_optimize, compiler_baseline, count_candidates,
                                greedy_optimize, prop_alloc, threshold_baseline)
from edgepart.analytic import SystemState, objective
from edgepart.profiles import MB, Configuration, HardwareSpec, ModelProfile, synth_profile

from conftest import single_point_model


def cpu_only(name, suffix_s, points=1):
    step = suffix_s / points
    return ModelProfile(name, 0, tuple(range(points + 1)),
                        tuple(0.001 * p for p in range(points + 1)),
                        tuple(suffix_s - step * p for p in range(points)) + (0.0,),
                        (0,) * (points + 1))


def profile_from_deltas(name, tpu_deltas, cpu_deltas):
    """Profile whose block j costs tpu_deltas[j] on the accelerator and cpu_deltas[j] on a core."""
    n = len(tpu_deltas)
    tpu = [0.0]
    for d in tpu_deltas:
        tpu.append(tpu[-1] + d)
    cpu = [sum(cpu_deltas[p:]) for p in range(n + 1)]
    return ModelProfile(name, 0, tuple(1000 * p for p in range(n + 1)), tuple(tpu), tuple(cpu),
                        (0,) * (n + 1))


# ---- PropAlloc ------------------------------------------------------------------------

def test_prop_alloc_largest_remainder():
    a, b = cpu_only("a", 0.1), cpu_only("b", 0.1)
    # loads 0.4 and 0.2: quotas 2.67 and 1.33
    assert prop_alloc([a, b], [4.0, 2.0], [0, 0], 4) == (3, 1)


def test_prop_alloc_full_tpu_model_gets_nothing():
    a, b = cpu_only("a", 0.1), cpu_only("b", 0.1)
    assert prop_alloc([a, b], [4.0, 2.0], [1, 0], 4) == (0, 4)


def test_prop_alloc_floor_of_one():
    mods = [cpu_only(f"m{i}", 0.1) for i in range(4)]
    assert prop_alloc(mods, [100.0, 0.01, 0.01, 0.01], [0] * 4, 4) == (1, 1, 1, 1)
    assert prop_alloc(mods + [cpu_only("x", 0.1)], [1.0] * 5, [0] * 5, 4) is None


def test_prop_alloc_starved_model_takes_from_largest():
    mods = [cpu_only(f"m{i}", 0.1) for i in range(3)]
    # quotas (3.96, 0.02, 0.02) round to (4, 0, 0) then each tail model borrows a core
    assert prop_alloc(mods, [198.0, 1.0, 1.0], [0, 0, 0], 4) == (2, 1, 1)


@settings(max_examples=200, deadline=None)
@given(rates=st.lists(st.floats(0.0, 50.0), min_size=1, max_size=5),
       suffix=st.lists(st.booleans(), min_size=5, max_size=5),
       k=st.integers(1, 8))
def test_prop_alloc_constraints(rates, suffix, k):
    n = len(rates)
    mods = [cpu_only(f"m{i}", 0.05 + 0.01 * i) for i in range(n)]
    parts = [0 if suffix[i] else 1 for i in range(n)]
    cores = prop_alloc(mods, rates, parts, k)
    n_suffix = sum(1 for p in parts if p == 0)
    if n_suffix > k:
        assert cores is None
        return
    assert Configuration(tuple(parts), cores).is_valid(mods, k)
    if n_suffix:
        assert sum(cores) == k


# ---- greedy and brute force -----------------------------------------------------------

def test_greedy_full_tpu_when_faster_and_fitting(hw):
    m = synth_profile("m", 6, 3 * MB, 0.004, 0.03, 0.8, hw, input_bytes=0, intermediate_bytes=0)
    g = greedy_optimize([m], [5.0], hw)
    b = brute_force_optimize([m], [5.0], hw)
    assert g.config.partitions == (6,)
    assert b.config.partitions == (6,)
    assert g.objective == pytest.approx(b.objective, rel=1e-12)


def test_greedy_matches_brute_at_low_load_with_trailing_parity(bundled_by_name, hw):
    m = bundled_by_name["InceptionV4"]
    g = greedy_optimize([m], [1e-6], hw)
    b = brute_force_optimize([m], [1e-6], hw)
    assert g.objective == pytest.approx(b.objective, rel=1e-9)


def two_step_fixture():
    hw = HardwareSpec(8 * MB, 320 * MB, 4)
    # stopping after one block pushes a 40 MB tensor over the bus: 0.125 s
    a = ModelProfile("a", 0, (0, 1_000_000, 2_000_000), (0.0, 0.005, 0.01), (0.1, 0.09, 0.0),
                     (0, 40_000_000, 0))
    b = single_point_model("b", 1_000_000, 0.01, cpu_s=0.05)
    return [a, b], [1.0, 1.0], hw


def test_two_step_fixture_escapes_local_optimum():
    models, rates, hw = two_step_fixture()
    a = models[0]
    start = SystemState(models, rates, hw, Configuration((0, 0), (2, 2)))
    one = SystemState(models, rates, hw, Configuration((1, 0), (2, 2)))
    two = SystemState(models, rates, hw, Configuration((2, 0), (0, 4)))
    assert objective(one)[0] > objective(start)[0] > objective(two)[0]

    g = greedy_optimize(models, rates, hw)
    assert any(t.model == a.name and t.h == 2 for t in g.trace)
    b = brute_force_optimize(models, rates, hw)
    assert g.objective == pytest.approx(b.objective, rel=1e-12)
    assert g.config == b.config


def test_greedy_trace_and_recomputation(bundled_by_name, hw):
    models = [bundled_by_name["MnasNet"], bundled_by_name["InceptionV4"]]
    g = greedy_optimize(models, [5.0, 3.0], hw)
    objs = [t.objective for t in g.trace]
    assert all(b < a for a, b in zip(objs, objs[1:]))
    assert g.iterations == len(g.trace) <= sum(m.num_partition_points for m in models)
    value, _ = objective(SystemState(models, [5.0, 3.0], hw, g.config))
    assert value == g.objective
    start = objective(SystemState(models, [5.0, 3.0], hw, Configuration((0, 0), (2, 2))))[0]
    assert g.objective <= start


def test_greedy_surplus_models_start_on_accelerator():
    hw = HardwareSpec(100 * MB, 320 * MB, 2)
    mods = [single_point_model(f"m{i}", 100_000, 0.001, cpu_s=0.01) for i in range(3)]
    g = greedy_optimize(mods, [1.0, 2.0, 3.0], hw)
    assert g.config.is_valid(mods, 2)


def test_greedy_reports_infeasible():
    hw = HardwareSpec(8 * MB, 320 * MB, 1)
    m = single_point_model("m", 1_000_000, 0.5, cpu_s=1.0)
    with pytest.raises(InfeasibleError):
        greedy_optimize([m], [10.0], hw)
    with pytest.raises(InfeasibleError):
        brute_force_optimize([m], [10.0], hw)


def test_brute_force_small_enumeration():
    hw = HardwareSpec(8 * MB, 320 * MB, 1)
    m = ModelProfile("m", 0, (0, 1000, 2000), (0.0, 0.01, 0.02), (0.05, 0.03, 0.0), (0, 0, 0))
    res = brute_force_optimize([m], [2.0], hw)
    # p in {0, 1} with k = 1, or p = 2 with k = 0
    assert res.iterations == 3 <= 3 * 2
    hand = min(
        (objective(SystemState([m], [2.0], hw, Configuration((p,), (k,))))[0], (p,), (k,))
        for p, k in [(0, 1), (1, 1), (2, 0)]
    )
    assert res.objective == hand[0]
    assert (res.config.partitions, res.config.cores) == (hand[1], hand[2])


def test_brute_force_guard(bundled):
    hw, models = bundled
    total = count_candidates(models, hw.max_cores)
    with pytest.raises(SearchSpaceTooLarge):
        brute_force_optimize(models, [1.0] * len(models), hw, limit=total - 1)
    wide = HardwareSpec(8 * MB, 320 * MB, 8)
    many = [synth_profile(f"m{i}", 11, 20 * MB, 0.03, 0.2, 0.6, wide) for i in range(5)]
    assert count_candidates(many, wide.max_cores) > 10_000_000
    with pytest.raises(SearchSpaceTooLarge):
        brute_force_optimize(many, [1.0] * 5, wide)


def test_count_candidates_matches_enumeration():
    hw = HardwareSpec(8 * MB, 320 * MB, 3)
    mods = [cpu_only("a", 0.1, 2), cpu_only("b", 0.1, 3)]
    res = brute_force_optimize(mods, [1.0, 1.0], hw)
    assert res.iterations == count_candidates(mods, 3)


# ---- baselines ------------------------------------------------------------------------

def test_threshold_all_parity():
    m = profile_from_deltas("par", [0.01] * 5, [0.01] * 5)
    assert threshold_baseline(m) == 0


def test_threshold_none_within():
    m = profile_from_deltas("fast", [0.01] * 5, [0.05] * 5)
    assert threshold_baseline(m) == 5


def test_threshold_parity_in_last_three():
    tpu = [0.02, 0.03, 0.05, 0.095, 0.10, 0.10]
    cpu = [0.10] * 6
    m = profile_from_deltas("decay", tpu, cpu)
    # hand scan from the end: 0.10 <= 0.11, 0.10 <= 0.11, 0.10 <= 0.1045, then 0.10 > 0.055
    assert threshold_baseline(m) == 3


def test_compiler_baseline(bundled):
    _, models = bundled
    cfg = compiler_baseline(models)
    assert cfg.partitions == tuple(m.num_partition_points for m in models)
    assert set(cfg.cores) == {0}


def test_compiler_worse_when_over_capacity():
    hw = HardwareSpec(8 * MB, 320 * MB, 4)
    big = [single_point_model(f"b{i}", 5 * MB, 0.01) for i in range(2)]
    small = [single_point_model(f"s{i}", 3 * MB, 0.01) for i in range(2)]
    rates = [10.0, 10.0]
    over = objective(SystemState(big, rates, hw, compiler_baseline(big)))[0]
    fit = objective(SystemState(small, rates, hw, compiler_baseline(small)))[0]
    assert over > fit


def test_compiler_equals_greedy_for_single_fitting_model(bundled_by_name, hw):
    m = bundled_by_name["MobileNetV2"]
    g = greedy_optimize([m], [5.0], hw)
    assert g.config.partitions == (m.num_partition_points,)
    c = allocate("compiler", [m], [5.0], hw)
    assert c.objective == g.objective


def test_allocate_strategies_return_valid_configs(bundled_by_name, hw):
    models = [bundled_by_name["EfficientNet"], bundled_by_name["GPUNet"]]
    for strategy in ("compiler", "threshold", "alpha-zero", "greedy", "brute"):
        res = allocate(strategy, models, [10.0, 10.0], hw)
        assert res.config.is_valid(models, hw.max_cores)
        assert res.strategy == strategy
        value, _ = objective(SystemState(models, [10.0, 10.0], hw, res.config))
        assert value == res.objective
    with pytest.raises(ValueError):
        allocate("nope", models, [1.0, 1.0], hw)


@settings(max_examples=40, deadline=None)
@given(r1=st.floats(0.5, 40.0), r2=st.floats(0.5, 40.0), c=st.floats(0.01, 1.0),
       p1=st.integers(0, 5), p2=st.integers(0, 5))
def test_feasible_region_monotone_in_load(r1, r2, c, p1, p2, bundled_by_name):
    hw = HardwareSpec(8 * MB, 320 * MB, 4)
    models = [bundled_by_name["EfficientNet"], bundled_by_name["GPUNet"]]
    cores = prop_alloc(models, [r1, r2], [p1, p2], 4)
    cfg = Configuration((p1, p2), cores)
    value = objective(SystemState(models, [r1, r2], hw, cfg))[0]
    if math.isfinite(value):
        assert math.isfinite(objective(SystemState(models, [c * r1, c * r2], hw, cfg))[0])
