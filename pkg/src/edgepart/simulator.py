"""Seeded discrete-event simulation of the accelerator -> CPU pipeline.

Requests are handled in arrival order. The accelerator is a single FCFS
server, so each start time is ``max(arrival, previous end)``; per-model CPU
pools are FCFS k-server stations tracked as a heap of server-free times.
Service times are deterministic except for weight reloads, which the
:class:`WeightCache` charges per request.
"""
from __future__ import annotations

import csv
import heapq
import io
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .analytic import SystemState
from .profiles import Configuration, HardwareSpec, ModelProfile

CACHE_MODES = ("evict_on_switch", "lru_bytes")
CSV_COLUMNS = ("model", "rate_rps", "completed", "mean_e2e_s", "p50_e2e_s", "p95_e2e_s",
               "p99_e2e_s", "mean_tpu_wait_s", "mean_cpu_wait_s", "miss_fraction")


class SimulationError(RuntimeError):
    pass


class WeightCache:
    """Accelerator weight residency under one of two eviction hypotheses.

    ``evict_on_switch`` reloads a model's whole prefix whenever the previous
    accelerator request belonged to another model and the configured prefixes
    do not fit together. ``lru_bytes`` keeps up to ``C`` bytes of prefixes,
    evicting least-recently-used bytes and charging only what is missing. In
    both modes a prefix larger than ``C`` only keeps ``C`` bytes resident; the
    overflow is streamed on every inference and is part of its profiled time.
    """

    def __init__(self, mode: str, hw: HardwareSpec):
        if mode not in CACHE_MODES:
            raise ValueError(f"cache_mode must be one of {CACHE_MODES}")
        self.mode = mode
        self.capacity = hw.sram_capacity_bytes
        self.bandwidth = hw.bandwidth_bytes_per_s
        self.footprint = 0
        self.last_model = None
        self.resident: OrderedDict = OrderedDict()  # model -> bytes, LRU first

    def configure(self, prefix_bytes: Sequence[int]) -> None:
        """Install the accelerator prefixes of a (new) configuration."""
        self.footprint = sum(b for b in prefix_bytes if b > 0)
        if self.mode != "lru_bytes":
            return
        if not self.resident and self.last_model is None:
            # steady state after the cold start: fill in model order
            free = self.capacity
            for i, b in enumerate(prefix_bytes):
                if b > 0 and free > 0:
                    take = min(b, free)
                    self.resident[i] = take
                    free -= take
            return
        for i in list(self.resident):
            need = min(prefix_bytes[i], self.capacity) if i < len(prefix_bytes) else 0
            if need <= 0:
                del self.resident[i]
            elif self.resident[i] > need:
                self.resident[i] = need

    def lookup_and_charge(self, model: int, prefix_bytes: int) -> float:
        if prefix_bytes <= 0:
            return 0.0
        if self.mode == "evict_on_switch":
            miss = (self.last_model is not None and self.last_model != model
                    and self.footprint > self.capacity)
            self.last_model = model
            return prefix_bytes / self.bandwidth if miss else 0.0

        self.last_model = model
        need = min(prefix_bytes, self.capacity)
        have = self.resident.get(model, 0)
        missing = need - have
        if missing > 0:
            free = self.capacity - sum(self.resident.values())
            for victim in list(self.resident):
                if free >= missing:
                    break
                if victim == model:
                    continue
                take = min(self.resident[victim], missing - free)
                self.resident[victim] -= take
                free += take
                if self.resident[victim] == 0:
                    del self.resident[victim]
            self.resident[model] = need
        else:
            missing = 0
        self.resident[model] = need
        self.resident.move_to_end(model)
        return missing / self.bandwidth


def cache_lookup_and_charge(cache: WeightCache, model: int, prefix_bytes: int,
                            hw: HardwareSpec | None = None) -> float:
    """Seconds of weight loading charged to a request before it runs."""
    if hw is not None and (hw.sram_capacity_bytes != cache.capacity
                           or hw.bandwidth_bytes_per_s != cache.bandwidth):
        raise ValueError("hardware does not match the cache")
    return cache.lookup_and_charge(model, prefix_bytes)


def model_stream(seed: int, index: int):
    """Independent generator per (seed, model index)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), index]))


def poisson_arrivals(rng, schedule: Sequence[tuple[float, float]], t_end: float) -> np.ndarray:
    """Arrival times in ``[schedule[0].start, t_end)`` for a piecewise-constant rate."""
    out = []
    for j, (start, rate) in enumerate(schedule):
        stop = schedule[j + 1][0] if j + 1 < len(schedule) else t_end
        stop = min(stop, t_end)
        if rate <= 0 or stop <= start:
            continue
        t = start
        chunk = max(16, int(rate * (stop - start) * 1.1) + 16)
        while True:
            times = t + np.cumsum(rng.exponential(1.0 / rate, size=chunk))
            keep = times[times < stop]
            out.append(keep)
            if len(keep) < chunk:
                break
            t = times[-1]
    if not out:
        return np.empty(0)
    return np.concatenate(out)


@dataclass(frozen=True)
class SimConfig:
    state: SystemState
    cache_mode: str = "evict_on_switch"
    seed: int = 0
    total_requests: int = 100_000
    warmup_requests: int | None = None
    horizon_s: float | None = None

    def __post_init__(self):
        if self.cache_mode not in CACHE_MODES:
            raise ValueError(f"cache_mode must be one of {CACHE_MODES}")
        if self.warmup_requests is None:
            object.__setattr__(self, "warmup_requests",
                               max(1000, int(0.05 * self.total_requests)))
        if not self.total_requests > self.warmup_requests >= 0:
            raise ValueError("need total_requests > warmup_requests >= 0")


@dataclass
class ModelStats:
    name: str
    rate_rps: float
    completed: int
    mean_e2e_s: float
    p50_e2e_s: float
    p95_e2e_s: float
    p99_e2e_s: float
    mean_tpu_wait_s: float
    mean_cpu_wait_s: float
    miss_fraction: float
    tpu_requests: int


@dataclass
class SimReport:
    models: list[ModelStats]
    tpu_busy_fraction: float
    weighted_mean_e2e_s: float
    seed: int
    cache_mode: str
    total_requests: int
    warmup_requests: int
    truncated: bool = False
    saturated: bool = False
    config: dict = field(default_factory=dict)
    records: dict = field(default_factory=dict, repr=False, compare=False)

    def stats(self, name: str) -> ModelStats:
        for s in self.models:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "cache_mode": self.cache_mode,
            "total_requests": self.total_requests,
            "warmup_requests": self.warmup_requests,
            "truncated": self.truncated,
            "saturated": self.saturated,
            "tpu_busy_fraction": self.tpu_busy_fraction,
            "weighted_mean_e2e_s": self.weighted_mean_e2e_s,
            "config": self.config,
            "models": [vars(s).copy() for s in self.models],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for s in self.models:
            w.writerow([s.name] + [getattr(s, c) for c in CSV_COLUMNS[1:]])
        total = sum(s.completed for s in self.models)
        w.writerow(["__all__", sum(s.rate_rps for s in self.models), total,
                    self.weighted_mean_e2e_s, "", "", "", "", "", ""])
        return buf.getvalue()


def nearest_rank(sorted_values: np.ndarray, q: float) -> float:
    n = len(sorted_values)
    if n == 0:
        return float("nan")
    rank = max(1, math.ceil(q / 100.0 * n))
    return float(sorted_values[rank - 1])


def simulate_requests(times: np.ndarray, mids: np.ndarray, cfg_idx: np.ndarray,
                      configs: Sequence[Configuration], models: Sequence[ModelProfile],
                      hw: HardwareSpec, cache_mode: str,
                      switch_times: Sequence[float] | None = None,
                      switch_penalty_s: float = 0.0) -> dict:
    """Run the pipeline over pre-generated, time-sorted arrivals.

    ``cfg_idx[j]`` selects the configuration in force when request ``j``
    arrived; it keeps that configuration until completion. Returns per-request
    arrays.
    """
    n_req = len(times)
    bw = hw.bandwidth_bytes_per_s
    n_models = len(models)
    # per configuration, per model: (p, fixed tpu service, prefix bytes, cpu service, cores)
    tables = []
    for cfg in configs:
        row = []
        for i, m in enumerate(models):
            p = cfg.partitions[i]
            fixed = 0.0
            if p > 0:
                fixed = (m.input_bytes + m.intermediate_bytes[p]) / bw + m.tpu_prefix_s[p]
            row.append((p, fixed, m.prefix_bytes[p], m.cpu_suffix_s[p], cfg.cores[i],
                        p < m.num_partition_points))
        tables.append(row)

    cache = WeightCache(cache_mode, hw)
    tpu_start = np.full(n_req, np.nan)
    tpu_end = np.full(n_req, np.nan)
    miss = np.zeros(n_req, dtype=bool)
    cpu_arrival = np.array(times, dtype=float)
    tpu_busy = 0.0
    tpu_free = 0.0
    active = -1
    t_list = times.tolist()
    m_list = mids.tolist()
    c_list = cfg_idx.tolist()
    for j in range(n_req):
        c = c_list[j]
        p, fixed, pbytes, _, _, _ = tables[c][m_list[j]]
        if p == 0:
            continue
        if c != active:
            cache.configure([tables[c][i][2] for i in range(n_models)])
            if active >= 0 and switch_times is not None and switch_penalty_s > 0:
                tpu_free = max(tpu_free, switch_times[c] + switch_penalty_s)
            active = c
        t = t_list[j]
        start = t if t > tpu_free else tpu_free
        load = cache.lookup_and_charge(m_list[j], pbytes)
        end = start + fixed + load
        tpu_start[j] = start
        tpu_end[j] = end
        miss[j] = load > 0
        cpu_arrival[j] = end
        tpu_busy += end - start
        tpu_free = end

    cpu_start = np.full(n_req, np.nan)
    done = np.where(np.isnan(tpu_end), np.nan, tpu_end)
    cpu_busy = [0.0] * n_models
    for i in range(n_models):
        sel = np.flatnonzero(mids == i)
        if len(sel) == 0:
            continue
        order = sel[np.argsort(cpu_arrival[sel], kind="stable")]
        servers: list[float] = []
        width = 0
        arr = cpu_arrival[order].tolist()
        cfgs = cfg_idx[order].tolist()
        for j, t, c in zip(order.tolist(), arr, cfgs):
            _, _, _, s, k, has_suffix = tables[c][i]
            if not has_suffix:
                continue
            if k != width:
                if k > width:
                    t0 = switch_times[c] if switch_times is not None else 0.0
                    for _ in range(k - width):
                        heapq.heappush(servers, t0)
                else:
                    servers = sorted(servers)[:k]
                width = k
            free = heapq.heappop(servers)
            start = t if t > free else free
            end = start + s
            heapq.heappush(servers, end)
            cpu_start[j] = start
            done[j] = end
            cpu_busy[i] += s
    return {
        "arrival": np.asarray(times, dtype=float),
        "model": np.asarray(mids),
        "config": np.asarray(cfg_idx),
        "tpu_start": tpu_start,
        "tpu_end": tpu_end,
        "miss": miss,
        "cpu_arrival": cpu_arrival,
        "cpu_start": cpu_start,
        "done": done,
        "tpu_busy_s": tpu_busy,
        "cpu_busy_s": cpu_busy,
    }


def merge_streams(streams: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    times = np.concatenate([s for s in streams] + [np.empty(0)])
    mids = np.concatenate([np.full(len(s), i, dtype=np.int64) for i, s in enumerate(streams)]
                          + [np.empty(0, dtype=np.int64)])
    order = np.lexsort((mids, times))
    return times[order], mids[order]


def _generate(cfg: SimConfig) -> tuple[np.ndarray, np.ndarray, bool]:
    rates = cfg.state.rates
    total_rate = sum(rates)
    target = cfg.total_requests
    t_end = target / total_rate * 1.02 + 20.0 / total_rate
    if cfg.horizon_s is not None:
        t_end = min(t_end, cfg.horizon_s)
    while True:
        streams = [poisson_arrivals(model_stream(cfg.seed, i), ((0.0, r),), t_end)
                   for i, r in enumerate(rates)]
        times, mids = merge_streams(streams)
        if len(times) >= target:
            return times[:target], mids[:target], False
        if cfg.horizon_s is not None and t_end >= cfg.horizon_s:
            return times, mids, True
        t_end *= 1.25
        if cfg.horizon_s is not None:
            t_end = min(t_end, cfg.horizon_s)


def summarize(records: dict, models: Sequence[ModelProfile], rates: Sequence[float],
              warmup: int, start_index: int | None = None, stop_index: int | None = None) -> tuple:
    """Per-model statistics over requests ``[warmup, stop_index)`` in arrival order."""
    lo = warmup if start_index is None else start_index
    hi = len(records["arrival"]) if stop_index is None else stop_index
    arrival = records["arrival"][lo:hi]
    mids = records["model"][lo:hi]
    e2e = records["done"][lo:hi] - arrival
    tpu_wait = records["tpu_start"][lo:hi] - arrival
    cpu_wait = records["cpu_start"][lo:hi] - records["cpu_arrival"][lo:hi]
    miss = records["miss"][lo:hi]
    out = []
    for i, m in enumerate(models):
        sel = mids == i
        x = np.sort(e2e[sel])
        tw = tpu_wait[sel]
        on_tpu = ~np.isnan(tw)
        cw = cpu_wait[sel]
        cw = cw[~np.isnan(cw)]
        n_tpu = int(on_tpu.sum())
        out.append(ModelStats(
            name=m.name,
            rate_rps=float(rates[i]),
            completed=int(sel.sum()),
            mean_e2e_s=float(x.mean()) if len(x) else float("nan"),
            p50_e2e_s=nearest_rank(x, 50),
            p95_e2e_s=nearest_rank(x, 95),
            p99_e2e_s=nearest_rank(x, 99),
            mean_tpu_wait_s=float(tw[on_tpu].mean()) if n_tpu else 0.0,
            mean_cpu_wait_s=float(cw.mean()) if len(cw) else 0.0,
            miss_fraction=float(miss[sel][on_tpu].mean()) if n_tpu else 0.0,
            tpu_requests=n_tpu,
        ))
    weighted = float(e2e.mean()) if len(e2e) else float("nan")
    return out, weighted


def run_sim(cfg: SimConfig) -> SimReport:
    """Simulate ``cfg.total_requests`` Poisson arrivals under a fixed configuration."""
    state = cfg.state
    models = state.models
    names = state.names
    config_dict = state.config.to_dict(names)
    if sum(state.rates) <= 0:
        empty = [ModelStats(m.name, 0.0, 0, float("nan"), float("nan"), float("nan"),
                            float("nan"), 0.0, 0.0, 0.0, 0) for m in models]
        return SimReport(empty, 0.0, float("nan"), cfg.seed, cfg.cache_mode, 0, 0,
                         truncated=False, saturated=False, config=config_dict)
    violations = state.config.violations(models, state.hw.max_cores)
    if violations:
        raise SimulationError("invalid configuration: " + "; ".join(violations))

    times, mids, truncated = _generate(cfg)
    if len(times) <= cfg.warmup_requests:
        raise SimulationError("horizon too short to get past the warmup requests")
    records = simulate_requests(times, mids, np.zeros(len(times), dtype=np.int64),
                                [state.config], models, state.hw, cfg.cache_mode)
    stats, weighted = summarize(records, models, state.rates, cfg.warmup_requests)
    makespan = float(np.nanmax(records["done"]))
    busy = records["tpu_busy_s"] / makespan if makespan > 0 else 0.0
    span = float(times[-1] - times[0]) or 1.0
    saturated = busy > 0.99
    for i, (m, k) in enumerate(zip(models, state.config.cores)):
        if k and records["cpu_busy_s"][i] / (k * span) > 0.99:
            saturated = True
    # backlog growth: the last requests waited far longer than the middle ones
    if not saturated and np.nanmax(records["done"]) - times[-1] > 0.25 * span:
        saturated = True
    return SimReport(stats, float(busy), weighted, cfg.seed, cfg.cache_mode, len(times),
                     cfg.warmup_requests, truncated, saturated, config_dict, records)
