"""Joint partition-point and CPU-core search."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

from .analytic import INF, LatencyEstimate, SystemState, objective
from .profiles import Configuration, HardwareSpec, ModelProfile

BRUTE_FORCE_LIMIT = 10_000_000


class InfeasibleError(RuntimeError):
    """No configuration satisfies the constraints with finite latency."""


class SearchSpaceTooLarge(RuntimeError):
    """Exhaustive enumeration would exceed the candidate guard."""


@dataclass(frozen=True)
class TraceStep:
    step: int
    model: str
    h: int
    objective: float


@dataclass
class AllocationResult:
    config: Configuration
    objective: float
    estimate: LatencyEstimate
    iterations: int = 0
    trace: list[TraceStep] = field(default_factory=list)
    strategy: str = "greedy"

    def to_dict(self) -> dict:
        names = list(self.estimate.names)
        return {
            "strategy": self.strategy,
            "config": self.config.to_dict(names),
            "objective": self.objective,
            "iterations": self.iterations,
            "estimate": self.estimate.to_dict(),
            "trace": [
                {"step": t.step, "model": t.model, "h": t.h, "objective": t.objective}
                for t in self.trace
            ],
        }


def prop_alloc(models: Sequence[ModelProfile], rates: Sequence[float],
               partitions: Sequence[int], max_cores: int) -> tuple[int, ...] | None:
    """Split ``max_cores`` across models with a CPU suffix, proportional to CPU load.

    Quotas ``K * load_i / sum(load)`` are rounded by largest remainder, then
    any suffix model left at zero takes one core from the most over-served
    model. Returns None when more models need a core than there are cores.
    """
    n = len(models)
    suffix = [i for i in range(n) if partitions[i] < models[i].num_partition_points]
    cores = [0] * n
    if not suffix:
        return tuple(cores)
    if len(suffix) > max_cores:
        return None
    loads = [rates[i] * models[i].cpu_suffix_s[partitions[i]] for i in suffix]
    total = sum(loads)
    if total > 0:
        quotas = [max_cores * l / total for l in loads]
    else:
        quotas = [max_cores / len(suffix)] * len(suffix)
    alloc = [math.floor(q) for q in quotas]
    left = max_cores - sum(alloc)
    order = sorted(range(len(suffix)), key=lambda j: (-(quotas[j] - alloc[j]), j))
    for j in order[:left]:
        alloc[j] += 1
    for j in range(len(suffix)):
        if alloc[j] == 0:
            donor = max((d for d in range(len(suffix)) if alloc[d] > 1),
                        key=lambda d: (alloc[d] - quotas[d], alloc[d], -d))
            alloc[donor] -= 1
            alloc[j] = 1
    for i, k in zip(suffix, alloc):
        cores[i] = k
    return tuple(cores)


def _evaluate(models, rates, hw, partitions, alpha_mode):
    cores = prop_alloc(models, rates, partitions, hw.max_cores)
    if cores is None:
        cores = (1,) * len(models)  # violates the core budget, scored as infeasible
    state = SystemState(models, rates, hw, Configuration(tuple(partitions), cores), alpha_mode)
    value, est = objective(state)
    return value, est, state.config


def _overload(est: LatencyEstimate, models, rates, config) -> float:
    # Distance from stability, used only to steer out of an infeasible start.
    excess = max(0.0, est.tpu_utilization - 1.0) if math.isfinite(est.tpu_utilization) else 1e9
    for m, r, p, k in zip(models, rates, config.partitions, config.cores):
        if p < m.num_partition_points:
            if k < 1:
                return 1e18
            excess += max(0.0, r * m.cpu_suffix_s[p] / k - 1.0)
    return excess + 1e-12


def _initial_partitions(models, rates, max_cores) -> list[int]:
    parts = [0] * len(models)
    surplus = len(models) - max_cores
    if surplus > 0:
        by_load = sorted(range(len(models)), key=lambda i: (rates[i] * models[i].cpu_suffix_s[0], i))
        for i in by_load[:surplus]:
            parts[i] = models[i].num_partition_points
    return parts


def greedy_optimize(models: Sequence[ModelProfile], rates: Sequence[float], hw: HardwareSpec,
                    alpha_mode: str = "full") -> AllocationResult:
    """Hill-climb from all-CPU, moving one model up by one or two blocks per step.

    Each step commits the candidate with the lowest objective (ties: lowest
    model index, then h = 1). Stops when no candidate improves. While the
    current configuration is still unstable, the move that most reduces the
    overload is committed instead.
    """
    models = tuple(models)
    rates = tuple(float(r) for r in rates)
    parts = _initial_partitions(models, rates, hw.max_cores)
    current, est, config = _evaluate(models, rates, hw, parts, alpha_mode)
    trace: list[TraceStep] = []
    step = 0
    while True:
        best = None
        for m in range(len(models)):
            for h in (1, 2):
                if parts[m] + h > models[m].num_partition_points:
                    continue
                cand = list(parts)
                cand[m] += h
                value, c_est, c_cfg = _evaluate(models, rates, hw, cand, alpha_mode)
                if best is None or value < best[0]:
                    best = (value, m, h, cand, c_est, c_cfg)
        if best is None:
            break
        if best[0] < current:
            value, m, h, cand, c_est, c_cfg = best
        elif current == INF:
            # no finite candidate yet: follow the steepest drop in overload
            pick = None
            for m in range(len(models)):
                for h in (1, 2):
                    if parts[m] + h > models[m].num_partition_points:
                        continue
                    cand = list(parts)
                    cand[m] += h
                    value, c_est, c_cfg = _evaluate(models, rates, hw, cand, alpha_mode)
                    score = _overload(c_est, models, rates, c_cfg)
                    if pick is None or score < pick[0]:
                        pick = (score, value, m, h, cand, c_est, c_cfg)
            _, value, m, h, cand, c_est, c_cfg = pick
        else:
            break
        step += 1
        parts, current, est, config = cand, value, c_est, c_cfg
        trace.append(TraceStep(step, models[m].name, h, value))
    if current == INF:
        raise InfeasibleError("greedy search found no stable configuration")
    return AllocationResult(config, current, est, step, trace, "greedy" if alpha_mode == "full"
                            else "alpha-zero")


def _core_vectors(suffix_mask: Sequence[bool], max_cores: int):
    idx = [i for i, s in enumerate(suffix_mask) if s]
    n = len(suffix_mask)
    if not idx:
        yield (0,) * n
        return
    for ks in itertools.product(range(1, max_cores + 1), repeat=len(idx)):
        if sum(ks) > max_cores:
            continue
        out = [0] * n
        for i, k in zip(idx, ks):
            out[i] = k
        yield tuple(out)


def count_candidates(models: Sequence[ModelProfile], max_cores: int) -> int:
    # suffix models draw from compositions with parts >= 1 and total <= K
    n = len(models)
    per_suffix_count = [math.comb(max_cores, j) if j <= max_cores else 0 for j in range(n + 1)]
    # dynamic program over models: ways[j] = number of partition choices with j suffix models
    ways = [1] + [0] * n
    for m in models:
        nxt = [0] * (n + 1)
        for j, w in enumerate(ways):
            if not w:
                continue
            nxt[j] += w  # full accelerator
            if j + 1 <= n:
                nxt[j + 1] += w * m.num_partition_points
        ways = nxt
    return sum(w * per_suffix_count[j] for j, w in enumerate(ways))


def brute_force_optimize(models: Sequence[ModelProfile], rates: Sequence[float], hw: HardwareSpec,
                         alpha_mode: str = "full",
                         limit: int = BRUTE_FORCE_LIMIT) -> AllocationResult:
    """Exhaustive minimum over every partition vector and every feasible core split."""
    models = tuple(models)
    rates = tuple(float(r) for r in rates)
    total = count_candidates(models, hw.max_cores)
    if total > limit:
        raise SearchSpaceTooLarge(f"{total} candidates exceed the limit of {limit}")
    best = None
    evaluated = 0
    for parts in itertools.product(*(range(m.num_partition_points + 1) for m in models)):
        mask = [p < m.num_partition_points for p, m in zip(parts, models)]
        for cores in _core_vectors(mask, hw.max_cores):
            cfg = Configuration(parts, cores)
            value, est = objective(SystemState(models, rates, hw, cfg, alpha_mode))
            evaluated += 1
            # product order is lexicographic, so strict < keeps the smallest tie
            if best is None or value < best[0]:
                best = (value, est, cfg)
    value, est, cfg = best
    if value == INF:
        raise InfeasibleError("no stable configuration exists")
    return AllocationResult(cfg, value, est, evaluated, [], "brute")


def threshold_baseline(model: ModelProfile, threshold_pct: float = 10.0) -> int:
    """Offload trailing blocks while each block's CPU time is within the threshold of its accelerator time."""
    limit = 1.0 + threshold_pct / 100.0
    p = model.num_partition_points
    while p > 0:
        cpu_delta = model.cpu_suffix_s[p - 1] - model.cpu_suffix_s[p]
        tpu_delta = model.tpu_prefix_s[p] - model.tpu_prefix_s[p - 1]
        if cpu_delta <= limit * tpu_delta:
            p -= 1
        else:
            break
    return p


def compiler_baseline(models: Sequence[ModelProfile]) -> Configuration:
    """Everything on the accelerator, sharing its memory."""
    return Configuration(tuple(m.num_partition_points for m in models), (0,) * len(models))


def threshold_configuration(models: Sequence[ModelProfile], rates: Sequence[float], hw: HardwareSpec,
                            threshold_pct: float = 10.0) -> Configuration:
    parts = tuple(threshold_baseline(m, threshold_pct) for m in models)
    cores = prop_alloc(models, rates, parts, hw.max_cores)
    if cores is None:
        raise InfeasibleError("threshold partitioning leaves more CPU suffixes than cores")
    return Configuration(parts, cores)


STRATEGIES = ("compiler", "threshold", "alpha-zero", "greedy", "brute")


def allocate(strategy: str, models: Sequence[ModelProfile], rates: Sequence[float],
             hw: HardwareSpec, threshold_pct: float = 10.0) -> AllocationResult:
    """Run one named strategy; the result is always scored with the full model."""
    if strategy == "greedy":
        return greedy_optimize(models, rates, hw, "full")
    if strategy == "brute":
        return brute_force_optimize(models, rates, hw, "full")
    if strategy == "alpha-zero":
        cfg = greedy_optimize(models, rates, hw, "zero").config
    elif strategy == "compiler":
        cfg = compiler_baseline(models)
    elif strategy == "threshold":
        cfg = threshold_configuration(models, rates, hw, threshold_pct)
    else:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    value, est = objective(SystemState(models, rates, hw, cfg))
    return AllocationResult(cfg, value, est, 0, [], strategy)
