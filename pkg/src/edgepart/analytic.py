"""Closed-form latency model for an accelerator queue feeding per-model CPU pools.

The accelerator is an M/G/1 FCFS queue shared by every model prefix; each
model's CPU suffix runs in its own M/D/k pool. Unstable queues and constraint
violations are reported as an infinite objective instead of raising, so the
optimizers can rank any candidate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .profiles import Configuration, HardwareSpec, ModelProfile

INF = math.inf
ALPHA_MODES = ("full", "zero")


@dataclass(frozen=True)
class SystemState:
    models: tuple[ModelProfile, ...]
    rates: tuple[float, ...]
    hw: HardwareSpec
    config: Configuration
    alpha_mode: str = "full"

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if len(self.rates) != len(self.models) or len(self.config.partitions) != len(self.models):
            raise ValueError("models, rates and configuration must have the same length")
        if len({m.name for m in self.models}) != len(self.models):
            raise ValueError("model names must be unique")
        if any(r < 0 or math.isnan(r) for r in self.rates):
            raise ValueError("rates must be >= 0")
        if self.alpha_mode not in ALPHA_MODES:
            raise ValueError(f"alpha_mode must be one of {ALPHA_MODES}")

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.models]

    def index(self, model: str | int) -> int:
        if isinstance(model, int):
            return model
        for i, m in enumerate(self.models):
            if m.name == model:
                return i
        raise KeyError(model)

    def with_config(self, config: Configuration) -> "SystemState":
        return SystemState(self.models, self.rates, self.hw, config, self.alpha_mode)


@dataclass(frozen=True)
class LatencyEstimate:
    names: tuple[str, ...]
    per_model_e2e_s: tuple[float, ...]
    tpu_wait_s: float
    cpu_wait_s: tuple[float, ...]
    tpu_utilization: float
    alpha: tuple[float, ...]
    objective: float
    feasible: bool
    violations: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "objective": self.objective,
            "tpu_utilization": self.tpu_utilization,
            "tpu_wait_s": self.tpu_wait_s,
            "violations": list(self.violations),
            "models": [
                {"name": n, "e2e_s": e, "cpu_wait_s": c, "alpha": a}
                for n, e, c, a in zip(self.names, self.per_model_e2e_s, self.cpu_wait_s, self.alpha)
            ],
        }


def _alphas(state: SystemState) -> list[float]:
    parts = state.config.partitions
    rates = state.rates
    n = len(parts)
    on_tpu = [i for i in range(n) if parts[i] > 0]
    alpha = [0.0] * n
    if state.alpha_mode == "zero" or len(on_tpu) <= 1:
        return alpha
    footprint = sum(state.models[i].prefix_bytes[parts[i]] for i in on_tpu)
    if footprint <= state.hw.sram_capacity_bytes:
        return alpha
    lam_tpu = sum(rates[i] for i in on_tpu)
    if lam_tpu <= 0:
        return alpha
    for i in on_tpu:
        alpha[i] = 1.0 - rates[i] / lam_tpu
    return alpha


def weight_miss_prob(state: SystemState, model: str | int) -> float:
    """Probability that a request finds its prefix weights evicted."""
    i = state.index(model)
    if state.config.partitions[i] <= 0:
        raise ValueError(f"model {state.models[i].name!r} has no accelerator prefix")
    lam_tpu = sum(r for r, p in zip(state.rates, state.config.partitions) if p > 0)
    if lam_tpu <= 0:
        raise ValueError("aggregate accelerator arrival rate must be > 0")
    return _alphas(state)[i]


def _moments(state: SystemState, alpha: Sequence[float]) -> tuple[float, float, float]:
    bw = state.hw.bandwidth_bytes_per_s
    lam_tpu = mean = m2 = 0.0
    for m, r, p, a in zip(state.models, state.rates, state.config.partitions, alpha):
        if p <= 0 or r <= 0:
            continue
        # the bus transfers occupy the accelerator too, so they are part of its service time
        s = m.tpu_prefix_s[p] + (m.input_bytes + m.intermediate_bytes[p]) / bw
        load = m.prefix_bytes[p] / bw
        lam_tpu += r
        mean += r * (a * load + s)
        m2 += r * (a * (load + s) ** 2 + (1.0 - a) * s * s)
    if lam_tpu <= 0:
        return 0.0, 0.0, 0.0
    return lam_tpu, mean / lam_tpu, m2 / lam_tpu


def tpu_service_moments(state: SystemState) -> tuple[float, float]:
    """Mean and second moment of accelerator service time over the request mix.

    Each model contributes a two-point distribution: ``T_load + s`` with its
    miss probability, ``s`` otherwise, weighted by its share of the arrivals.
    ``s`` is the prefix time plus the input and intermediate transfers, which
    hold the accelerator while they cross the bus.
    """
    lam_tpu, mean, m2 = _moments(state, _alphas(state))
    if lam_tpu <= 0:
        raise ValueError("no model with an accelerator prefix and positive rate")
    return mean, m2


def _pk_wait(lam: float, mean: float, m2: float) -> tuple[float, float]:
    rho = lam * mean
    if lam <= 0:
        return 0.0, 0.0
    if rho >= 1.0:
        return INF, rho
    return lam * m2 / (2.0 * (1.0 - rho)), rho


def tpu_wait(state: SystemState) -> float:
    """Pollaczek-Khinchine mean queueing delay at the accelerator (inf when rho >= 1)."""
    lam, mean, m2 = _moments(state, _alphas(state))
    return _pk_wait(lam, mean, m2)[0]


def cpu_wait(rate: float, suffix_s: float, k: int) -> float:
    """Approximate M/D/k mean queueing delay for one model's CPU pool."""
    if suffix_s <= 0:
        raise ValueError("suffix_s must be > 0")
    if k < 1:
        raise ValueError("k must be >= 1")
    if rate < 0:
        raise ValueError("rate must be >= 0")
    capacity = k / suffix_s
    if rate >= capacity:
        return INF
    return 0.5 * (1.0 / (capacity - rate) - 1.0 / capacity)


def _evaluate(state: SystemState) -> LatencyEstimate:
    models, rates = state.models, state.rates
    parts, cores = state.config.partitions, state.config.cores
    n = len(models)
    names = tuple(m.name for m in models)
    violations = tuple(state.config.violations(models, state.hw.max_cores))
    if violations:
        return LatencyEstimate(names, (INF,) * n, INF, (INF,) * n, INF, (0.0,) * n, INF, False,
                               violations)

    bw = state.hw.bandwidth_bytes_per_s
    alpha = _alphas(state)
    lam, mean, m2 = _moments(state, alpha)
    w_tpu, rho = _pk_wait(lam, mean, m2)
    feasible = w_tpu < INF

    e2e = []
    w_cpu = []
    objective = 0.0
    for i in range(n):
        m, r, p = models[i], rates[i], parts[i]
        big_p = m.num_partition_points
        t = 0.0
        if p > 0:
            t += (m.input_bytes + m.intermediate_bytes[p]) / bw
            t += w_tpu + alpha[i] * m.prefix_bytes[p] / bw + m.tpu_prefix_s[p]
        wc = 0.0
        if p < big_p:
            s = m.cpu_suffix_s[p]
            wc = cpu_wait(r, s, cores[i]) if s > 0 else 0.0
            t += wc + s
        if wc == INF:
            feasible = False
        w_cpu.append(wc)
        e2e.append(t)
        if r > 0:
            objective += r * t
    if not feasible:
        objective = INF
    return LatencyEstimate(names, tuple(e2e), w_tpu, tuple(w_cpu), rho, tuple(alpha),
                           objective, feasible)


def e2e_latency(state: SystemState, model: str | int) -> float:
    """Expected end-to-end latency of one model's requests."""
    return _evaluate(state).per_model_e2e_s[state.index(model)]


def objective(state: SystemState) -> tuple[float, LatencyEstimate]:
    """Rate-weighted sum of end-to-end latencies and the full estimate."""
    est = _evaluate(state)
    return est.objective, est


def predict(state: SystemState) -> LatencyEstimate:
    return _evaluate(state)
