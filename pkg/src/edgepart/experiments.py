"""Validation grids and baseline comparisons: analytic prediction vs simulation."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .allocator import STRATEGIES, allocate, compiler_baseline
from .analytic import SystemState, _alphas, objective
from .profiles import HardwareSpec, ModelProfile, select_models
from .simulator import SimConfig, run_sim

VALIDATION_COLUMNS = ("cell", "mix", "rho", "strategy", "model", "rate", "predicted_s",
                      "simulated_s", "ape_pct")


def solve_rates_for_rho(models: Sequence[ModelProfile], hw: HardwareSpec, rho: float,
                        tol: float = 1e-12, max_iter: int = 10_000) -> list[float]:
    """Rates giving each model an equal share of accelerator utilization ``rho``.

    Utilization is measured under the all-accelerator deployment, including bus
    transfers and the expected reload time, so the shares depend on the miss probabilities and
    are found by damped fixed-point iteration.
    """
    if not 0 < rho < 1:
        raise ValueError("rho must be in (0, 1)")
    models = tuple(models)
    n = len(models)
    cfg = compiler_baseline(models)
    bw = hw.bandwidth_bytes_per_s
    busy = [m.tpu_prefix_s[-1] + (m.input_bytes + m.intermediate_bytes[-1]) / bw for m in models]
    rates = [rho / (n * b) for b in busy]
    for _ in range(max_iter):
        alpha = _alphas(SystemState(models, rates, hw, cfg))
        target = [rho / (n * (b + a * m.prefix_bytes[-1] / bw))
                  for m, b, a in zip(models, busy, alpha)]
        nxt = [0.5 * r + 0.5 * t for r, t in zip(rates, target)]
        if max(abs(a - b) for a, b in zip(nxt, rates)) < tol:
            return nxt
        rates = nxt
    return rates


@dataclass
class ValidationRow:
    cell: int
    mix: str
    rho: float
    strategy: str
    model: str
    rate: float
    predicted_s: float
    simulated_s: float

    @property
    def ape_pct(self) -> float:
        return abs(self.predicted_s - self.simulated_s) / self.simulated_s * 100.0


def validate_grid(profiles: Sequence[ModelProfile], hw: HardwareSpec, grid: dict,
                  seed: int = 0, total_requests: int = 100_000,
                  cache_mode: str = "evict_on_switch") -> list[ValidationRow]:
    """Compare predicted and simulated per-model mean latency on every grid cell."""
    rows = []
    for c, cell in enumerate(grid["cells"]):
        models = select_models(profiles, cell["mix"])
        rho = float(cell["rho"])
        rates = solve_rates_for_rho(models, hw, rho)
        for strategy in cell.get("configs", ["greedy"]):
            result = allocate(strategy, models, rates, hw)
            state = SystemState(models, rates, hw, result.config)
            est = result.estimate
            report = run_sim(SimConfig(state, cache_mode, seed, total_requests))
            for i, m in enumerate(models):
                rows.append(ValidationRow(c, "+".join(cell["mix"]), rho, strategy, m.name,
                                          rates[i], est.per_model_e2e_s[i],
                                          report.models[i].mean_e2e_s))
    return rows


def mape(rows: Sequence[ValidationRow]) -> float:
    return float(np.mean([r.ape_pct for r in rows])) if rows else float("nan")


def validation_csv(rows: Sequence[ValidationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(VALIDATION_COLUMNS)
    for r in rows:
        w.writerow([r.cell, r.mix, r.rho, r.strategy, r.model, repr(r.rate), repr(r.predicted_s),
                    repr(r.simulated_s), repr(r.ape_pct)])
    w.writerow(["", "", "", "", "__mape__", "", "", "", repr(mape(rows))])
    return buf.getvalue()


@dataclass
class StrategyOutcome:
    strategy: str
    partitions: tuple
    cores: tuple
    predicted_mean_s: float
    simulated_mean_s: list[float]

    @property
    def simulated(self) -> float:
        return float(np.mean(self.simulated_mean_s))


def compare_strategies(profiles: Sequence[ModelProfile], hw: HardwareSpec, mix: Sequence[str],
                       rho: float, seeds: Sequence[int] = (0, 1, 2),
                       strategies: Sequence[str] = ("greedy", "compiler", "threshold", "alpha-zero"),
                       total_requests: int = 100_000,
                       cache_mode: str = "evict_on_switch") -> dict[str, StrategyOutcome]:
    """Simulated request-weighted mean latency of each strategy on one scenario.

    Every strategy sees the same arrival streams for a given seed.
    """
    models = select_models(profiles, mix)
    rates = solve_rates_for_rho(models, hw, rho)
    out = {}
    seen = {}  # strategies that land on the same configuration share their runs
    for strategy in strategies:
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}")
        result = allocate(strategy, models, rates, hw)
        state = SystemState(models, rates, hw, result.config)
        value, _ = objective(state)
        key = (result.config.partitions, result.config.cores)
        if key not in seen:
            seen[key] = [run_sim(SimConfig(state, cache_mode, s, total_requests)).weighted_mean_e2e_s
                         for s in seeds]
        sims = list(seen[key])
        predicted = value / sum(rates) if math.isfinite(value) else math.inf
        out[strategy] = StrategyOutcome(strategy, result.config.partitions, result.config.cores,
                                        predicted, sims)
    return out
