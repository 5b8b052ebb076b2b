"""Online re-optimization driven by sliding-window rate estimates."""
from __future__ import annotations

import bisect
import json
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .allocator import InfeasibleError, greedy_optimize
from .analytic import SystemState, objective
from .profiles import Configuration, HardwareSpec, ModelProfile, WorkloadSpec, select_models
from .simulator import merge_streams, model_stream, poisson_arrivals, simulate_requests


@dataclass(frozen=True)
class ControllerPolicy:
    window_s: float = 60.0
    decision_period_s: float = 30.0
    hysteresis_pct: float = 5.0
    switch_penalty_s: float = 0.0

    def __post_init__(self):
        if self.window_s <= 0 or self.decision_period_s <= 0:
            raise ValueError("window_s and decision_period_s must be > 0")
        if self.hysteresis_pct < 0 or self.switch_penalty_s < 0:
            raise ValueError("hysteresis_pct and switch_penalty_s must be >= 0")


def estimate_rates(arrival_log: Mapping[str, Sequence[float]], now_s: float,
                   window_s: float) -> dict[str, float]:
    """Arrivals per second in ``(now - window, now]`` for each model in the log.

    Each log entry must be sorted by time.
    """
    if window_s <= 0:
        raise ValueError("window_s must be > 0")
    out = {}
    for name, times in arrival_log.items():
        lo = bisect.bisect_right(times, now_s - window_s)
        hi = bisect.bisect_right(times, now_s)
        out[name] = (hi - lo) / window_s
    return out


@dataclass
class Decision:
    time_s: float
    estimated_rates: dict
    config: dict
    switched: bool
    predicted_current: float
    predicted_best: float
    decision_wall_s: float
    windowed_mean_latency_s: float = float("nan")
    requests_in_window: int = 0

    def to_dict(self) -> dict:
        # NaN and inf are not valid JSON; an empty window or unstable state becomes null
        return {k: (None if isinstance(v, float) and not np.isfinite(v) else v)
                for k, v in vars(self).items()}


@dataclass
class ReplayReport:
    seed: int
    models: list[str]
    decisions: list[Decision]
    switch_times: list[float]
    configs: list[Configuration] = field(repr=False)
    mean_latency_s: float = float("nan")
    records: dict = field(default_factory=dict, repr=False)

    @property
    def switches(self) -> int:
        return len(self.switch_times)

    def to_jsonl(self) -> str:
        header = {"kind": "replay", "seed": self.seed, "models": self.models,
                  "switches": self.switches,
                  "mean_latency_s": self.mean_latency_s if np.isfinite(self.mean_latency_s) else None,
                  "initial_config": self.configs[0].to_dict(self.models)}
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps({"kind": "decision", **d.to_dict()}, sort_keys=True)
                  for d in self.decisions]
        return "\n".join(lines) + "\n"


def replay(workload: WorkloadSpec, policy: ControllerPolicy, hw: HardwareSpec,
           profiles: Sequence[ModelProfile], seed: int = 0, horizon_s: float | None = None,
           cache_mode: str = "evict_on_switch",
           initial_rates: Mapping[str, float] | None = None) -> ReplayReport:
    """Replay a time-varying workload with periodic greedy re-optimization.

    Decisions only depend on observed arrivals, so the decision timeline is
    computed first and the whole trace is then simulated with each request
    pinned to the configuration in force at its arrival.
    """
    names = workload.models
    models = select_models(profiles, names)
    if horizon_s is None:
        last = workload.change_points()[-1]
        horizon_s = last + max(last / max(len(workload.change_points()) - 1, 1), policy.window_s)

    streams = [poisson_arrivals(model_stream(seed, i), workload.schedules[n], horizon_s)
               for i, n in enumerate(names)]
    log = {n: s.tolist() for n, s in zip(names, streams)}

    start_rates = initial_rates or workload.rates_at(0.0)
    rates0 = [start_rates[n] for n in names]
    current = greedy_optimize(models, rates0, hw).config
    configs = [current]
    switch_times = [0.0]
    decisions = []
    t = policy.window_s
    while t <= horizon_s + 1e-9:
        est = estimate_rates(log, t, policy.window_s)
        rates = [est[n] for n in names]
        tic = time.perf_counter()
        try:
            best = greedy_optimize(models, rates, hw)
            best_cfg, best_val = best.config, best.objective
        except InfeasibleError:
            best_cfg, best_val = current, float("inf")
        cur_val, _ = objective(SystemState(models, rates, hw, current))
        wall = time.perf_counter() - tic
        improve = cur_val - best_val
        switched = False
        if best_cfg != current and improve > 0 and (
                cur_val == float("inf") or improve > policy.hysteresis_pct / 100.0 * cur_val):
            current = best_cfg
            configs.append(current)
            switch_times.append(t)
            switched = True
        decisions.append(Decision(t, dict(est), current.to_dict(names), switched, cur_val,
                                  best_val, wall))
        t += policy.decision_period_s

    times, mids = merge_streams(streams)
    cfg_idx = np.searchsorted(np.asarray(switch_times), times, side="right") - 1
    records = simulate_requests(times, mids, cfg_idx, configs, models, hw, cache_mode,
                                switch_times, policy.switch_penalty_s)
    e2e = records["done"] - records["arrival"]
    for d in decisions:
        sel = (times > d.time_s - policy.window_s) & (times <= d.time_s)
        d.requests_in_window = int(sel.sum())
        if d.requests_in_window:
            d.windowed_mean_latency_s = float(e2e[sel].mean())
    mean = float(e2e.mean()) if len(e2e) else float("nan")
    return ReplayReport(seed, names, decisions, switch_times[1:], configs, mean, records)
