"""Model, hardware and workload descriptions plus the JSON profile schema."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from scipy.optimize import brentq

SCHEMA_VERSION = 1
MB = 1_000_000


class ProfileError(ValueError):
    """Raised when a profile or workload file fails validation."""


HW_FIELDS = ("sram_capacity_bytes", "bandwidth_bytes_per_s", "max_cores")


@dataclass(frozen=True)
class HardwareSpec:
    sram_capacity_bytes: int = 8 * MB
    bandwidth_bytes_per_s: float = 320 * MB
    max_cores: int = 4

    def __post_init__(self):
        if self.sram_capacity_bytes <= 0:
            raise ProfileError("hardware.sram_capacity_bytes must be > 0")
        if not self.bandwidth_bytes_per_s > 0:
            raise ProfileError("hardware.bandwidth_bytes_per_s must be > 0")
        if self.max_cores < 1:
            raise ProfileError("hardware.max_cores must be >= 1")

    def to_dict(self) -> dict:
        return {
            "sram_capacity_bytes": self.sram_capacity_bytes,
            "bandwidth_bytes_per_s": self.bandwidth_bytes_per_s,
            "max_cores": self.max_cores,
        }


@dataclass(frozen=True)
class ModelProfile:
    """Per-partition-point profile of one model.

    Every sequence has ``num_partition_points + 1`` entries, indexed by the
    partition point ``p``: the first ``p`` blocks run on the accelerator and
    the rest on one CPU core. ``intermediate_bytes[p]`` is the tensor crossing
    the bus after the prefix; at ``p == P`` it is the final output (0 if
    unknown) and at ``p == 0`` it is unused.
    """

    name: str
    input_bytes: int
    prefix_bytes: tuple[int, ...]
    tpu_prefix_s: tuple[float, ...]
    cpu_suffix_s: tuple[float, ...]
    intermediate_bytes: tuple[int, ...]

    def __post_init__(self):
        for attr in ("prefix_bytes", "tpu_prefix_s", "cpu_suffix_s", "intermediate_bytes"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        _validate_model(self)

    @property
    def num_partition_points(self) -> int:
        return len(self.prefix_bytes) - 1

    @property
    def total_bytes(self) -> int:
        return self.prefix_bytes[-1]

    def to_dict(self) -> dict:
        points = []
        for p in range(self.num_partition_points + 1):
            points.append({
                "p": p,
                "prefix_bytes": self.prefix_bytes[p],
                "tpu_prefix_s": self.tpu_prefix_s[p],
                "cpu_suffix_s": self.cpu_suffix_s[p],
                "intermediate_bytes": self.intermediate_bytes[p],
            })
        return {"name": self.name, "input_bytes": self.input_bytes, "points": points}


def _fail(model: str, msg: str):
    raise ProfileError(f"model {model!r}: {msg}")


def _validate_model(m: ModelProfile) -> None:
    if not m.name:
        raise ProfileError("model name must be non-empty")
    n = len(m.prefix_bytes)
    if n < 2:
        _fail(m.name, "num_partition_points must be >= 1")
    for attr in ("tpu_prefix_s", "cpu_suffix_s", "intermediate_bytes"):
        if len(getattr(m, attr)) != n:
            _fail(m.name, f"{attr} has {len(getattr(m, attr))} entries, expected {n}")
    if m.input_bytes < 0:
        _fail(m.name, "input_bytes must be >= 0")
    for attr in ("prefix_bytes", "tpu_prefix_s", "cpu_suffix_s", "intermediate_bytes"):
        for p, v in enumerate(getattr(m, attr)):
            if not (v >= 0 and math.isfinite(v)):
                _fail(m.name, f"{attr}[{p}] = {v!r} must be finite and >= 0")
    if m.prefix_bytes[0] != 0:
        _fail(m.name, f"prefix_bytes[0] = {m.prefix_bytes[0]} must be 0")
    if m.tpu_prefix_s[0] != 0:
        _fail(m.name, f"tpu_prefix_s[0] = {m.tpu_prefix_s[0]} must be 0")
    if m.cpu_suffix_s[-1] != 0:
        _fail(m.name, f"cpu_suffix_s[{n - 1}] = {m.cpu_suffix_s[-1]} must be 0")
    for p in range(1, n):
        if m.prefix_bytes[p] < m.prefix_bytes[p - 1]:
            _fail(m.name, f"prefix_bytes[{p}] decreases (not monotone)")
        if m.tpu_prefix_s[p] < m.tpu_prefix_s[p - 1]:
            _fail(m.name, f"tpu_prefix_s[{p}] decreases (not monotone)")
        if m.cpu_suffix_s[p] > m.cpu_suffix_s[p - 1]:
            _fail(m.name, f"cpu_suffix_s[{p}] increases (not monotone)")


@dataclass(frozen=True)
class WorkloadSpec:
    """Piecewise-constant Poisson rates, one schedule of ``(start_s, rate_rps)`` per model."""

    schedules: Mapping[str, tuple[tuple[float, float], ...]]

    def __post_init__(self):
        fixed = {}
        for name, sched in self.schedules.items():
            sched = tuple((float(t), float(r)) for t, r in sched)
            if not sched:
                raise ProfileError(f"workload {name!r}: empty schedule")
            for j, (t, r) in enumerate(sched):
                if r < 0 or not math.isfinite(r):
                    raise ProfileError(f"workload {name!r}: rate[{j}] = {r} must be >= 0")
                if j and t <= sched[j - 1][0]:
                    raise ProfileError(f"workload {name!r}: start_s[{j}] not strictly increasing")
            fixed[name] = sched
        object.__setattr__(self, "schedules", fixed)

    @classmethod
    def constant(cls, rates: Mapping[str, float]) -> "WorkloadSpec":
        return cls({name: ((0.0, r),) for name, r in rates.items()})

    @property
    def models(self) -> list[str]:
        return list(self.schedules)

    def rates_at(self, t: float) -> dict[str, float]:
        out = {}
        for name, sched in self.schedules.items():
            rate = 0.0
            for start, r in sched:
                if start <= t:
                    rate = r
            out[name] = rate
        return out

    def change_points(self) -> list[float]:
        return sorted({t for sched in self.schedules.values() for t, _ in sched})

    def to_dict(self) -> dict:
        return {"models": [
            {"name": name, "schedule": [{"start_s": t, "rate_rps": r} for t, r in sched]}
            for name, sched in self.schedules.items()
        ]}


@dataclass(frozen=True)
class Configuration:
    """Partition points and core counts, aligned with a model list."""

    partitions: tuple[int, ...]
    cores: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "partitions", tuple(int(p) for p in self.partitions))
        object.__setattr__(self, "cores", tuple(int(k) for k in self.cores))
        if len(self.partitions) != len(self.cores):
            raise ValueError("partitions and cores must have the same length")

    def violations(self, models: Sequence[ModelProfile], max_cores: int) -> list[str]:
        """Return human-readable descriptions of every violated constraint."""
        out = []
        if len(models) != len(self.partitions):
            return [f"configuration covers {len(self.partitions)} models, expected {len(models)}"]
        for m, p, k in zip(models, self.partitions, self.cores):
            big_p = m.num_partition_points
            if not 0 <= p <= big_p:
                out.append(f"{m.name}: partition {p} outside [0, {big_p}]")
            if not 0 <= k <= max_cores:
                out.append(f"{m.name}: cores {k} outside [0, {max_cores}]")
            if p < big_p and k < 1:
                out.append(f"{m.name}: CPU suffix present but no core allocated")
            if p == big_p and k != 0:
                out.append(f"{m.name}: full accelerator execution must have 0 cores")
        if sum(self.cores) > max_cores:
            out.append(f"total cores {sum(self.cores)} exceed max_cores {max_cores}")
        return out

    def is_valid(self, models: Sequence[ModelProfile], max_cores: int) -> bool:
        return not self.violations(models, max_cores)

    def to_dict(self, names: Sequence[str]) -> dict:
        return {
            "partitions": dict(zip(names, self.partitions)),
            "cores": dict(zip(names, self.cores)),
        }

    @classmethod
    def from_dict(cls, data: Mapping, names: Sequence[str]) -> "Configuration":
        try:
            parts = data["partitions"]
            cores = data["cores"]
            return cls(tuple(parts[n] for n in names), tuple(cores[n] for n in names))
        except KeyError as exc:
            raise ProfileError(f"configuration is missing model {exc}") from None


def t_load(m: ModelProfile, p: int, hw: HardwareSpec) -> float:
    """Seconds needed to copy the weights of the first ``p`` blocks to the accelerator."""
    if not 0 <= p <= m.num_partition_points:
        raise ValueError(f"partition {p} outside [0, {m.num_partition_points}]")
    return m.prefix_bytes[p] / hw.bandwidth_bytes_per_s


def synth_profile(
    name: str,
    num_points: int,
    total_bytes: int,
    total_tpu_s: float,
    total_cpu_s: float,
    tpu_speedup_decay: float,
    hw: HardwareSpec,
    input_bytes: int = 150_528,
    intermediate_bytes: int | Sequence[int] = 100_000,
) -> ModelProfile:
    """Build a synthetic profile whose per-block accelerator advantage decays.

    Blocks share bytes and single-core CPU time equally. Block ``j`` (1-based)
    runs ``1 + (R - 1) * decay**(j - 1)`` times faster on the accelerator, with
    ``R`` solved so the compute-only prefix totals ``total_tpu_s``. Prefixes
    larger than the SRAM additionally pay ``(bytes - C) / B`` for streaming the
    overflow during each inference.
    """
    if num_points < 1:
        raise ProfileError("num_points must be >= 1")
    if min(total_bytes, total_tpu_s, total_cpu_s) <= 0:
        raise ProfileError("total_bytes, total_tpu_s and total_cpu_s must be > 0")
    if not 0 < tpu_speedup_decay <= 1:
        raise ProfileError("tpu_speedup_decay must be in (0, 1]")
    if total_tpu_s > total_cpu_s:
        raise ProfileError("total_tpu_s must not exceed total_cpu_s")

    n = num_points
    cpu_block = total_cpu_s / n
    decay = [tpu_speedup_decay ** j for j in range(n)]

    def tpu_total(r: float) -> float:
        return sum(cpu_block / (1.0 + (r - 1.0) * d) for d in decay)

    if math.isclose(total_tpu_s, total_cpu_s, rel_tol=1e-12):
        speedup = 1.0
    else:
        hi = 2.0
        while tpu_total(hi) > total_tpu_s:
            hi *= 2.0
        speedup = brentq(lambda r: tpu_total(r) - total_tpu_s, 1.0, hi, xtol=1e-14, rtol=1e-14)
    tpu_blocks = [cpu_block / (1.0 + (speedup - 1.0) * d) for d in decay]

    base, extra = divmod(int(total_bytes), n)
    block_bytes = [base] * n
    block_bytes[-1] += extra
    prefix_bytes = [0]
    for b in block_bytes:
        prefix_bytes.append(prefix_bytes[-1] + b)

    tpu_prefix = [0.0]
    acc = 0.0
    for p in range(1, n + 1):
        acc += tpu_blocks[p - 1]
        overflow = max(0, prefix_bytes[p] - hw.sram_capacity_bytes)
        tpu_prefix.append(acc + overflow / hw.bandwidth_bytes_per_s)
    cpu_suffix = [cpu_block * (n - p) for p in range(n + 1)]
    cpu_suffix[-1] = 0.0

    if isinstance(intermediate_bytes, int):
        inter = [0] + [intermediate_bytes] * (n - 1) + [0]
    else:
        inter = list(intermediate_bytes)
    return ModelProfile(name, input_bytes, tuple(prefix_bytes), tuple(tpu_prefix),
                        tuple(cpu_suffix), tuple(inter))


def _model_from_dict(d: Mapping) -> ModelProfile:
    try:
        name = d["name"]
        points = sorted(d["points"], key=lambda pt: pt["p"])
        if [pt["p"] for pt in points] != list(range(len(points))):
            raise ProfileError(f"model {name!r}: points must cover p = 0..P exactly once")
        last = len(points) - 1
        inter = []
        for pt in points:
            v = pt.get("intermediate_bytes")
            if v is None:
                if 0 < pt["p"] < last:
                    raise ProfileError(f"model {name!r}: intermediate_bytes[{pt['p']}] missing")
                v = 0
            inter.append(v)
        return ModelProfile(
            name=name,
            input_bytes=d.get("input_bytes", 0),
            prefix_bytes=tuple(pt["prefix_bytes"] for pt in points),
            tpu_prefix_s=tuple(float(pt["tpu_prefix_s"]) for pt in points),
            cpu_suffix_s=tuple(float(pt["cpu_suffix_s"]) for pt in points),
            intermediate_bytes=tuple(inter),
        )
    except (KeyError, TypeError) as exc:
        raise ProfileError(f"malformed model entry: missing or bad field {exc}") from None


def parse_profiles(data: Mapping) -> tuple[HardwareSpec, list[ModelProfile]]:
    if not isinstance(data, Mapping):
        raise ProfileError("profile document must be a JSON object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ProfileError(f"unsupported schema_version {version!r}")
    try:
        section = data["hardware"]
        hw = HardwareSpec(**{k: section[k] for k in HW_FIELDS})
    except (KeyError, TypeError) as exc:
        raise ProfileError(f"bad hardware section: {exc}") from None
    models = [_model_from_dict(m) for m in data.get("models", [])]
    seen = set()
    for m in models:
        if m.name in seen:
            raise ProfileError(f"duplicate model name {m.name!r}")
        seen.add(m.name)
    return hw, models


def load_profiles(path: str | Path) -> tuple[HardwareSpec, list[ModelProfile]]:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ProfileError(f"{path}: not valid JSON ({exc})") from None
    return parse_profiles(data)


def profiles_to_dict(hw: HardwareSpec, models: Iterable[ModelProfile]) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "hardware": hw.to_dict(),
        "models": [m.to_dict() for m in models],
    }


def dump_profiles(path: str | Path, hw: HardwareSpec, models: Iterable[ModelProfile]) -> None:
    Path(path).write_text(json.dumps(profiles_to_dict(hw, models), indent=2) + "\n")


def parse_workload(data: Mapping) -> WorkloadSpec:
    try:
        entries = data["models"]
        schedules = {}
        for e in entries:
            if e["name"] in schedules:
                raise ProfileError(f"workload: duplicate model {e['name']!r}")
            schedules[e["name"]] = tuple((s["start_s"], s["rate_rps"]) for s in e["schedule"])
    except (KeyError, TypeError) as exc:
        raise ProfileError(f"malformed workload: missing or bad field {exc}") from None
    return WorkloadSpec(schedules)


def load_workload(path: str | Path) -> WorkloadSpec:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ProfileError(f"{path}: not valid JSON ({exc})") from None
    return parse_workload(data)


def select_models(models: Sequence[ModelProfile], names: Iterable[str]) -> list[ModelProfile]:
    """Return the profiles named in ``names``, in that order."""
    by_name = {m.name: m for m in models}
    out = []
    for n in names:
        if n not in by_name:
            raise ProfileError(f"no profile for model {n!r}")
        out.append(by_name[n])
    return out
