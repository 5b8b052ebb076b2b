"""Bundled synthetic scenarios.

Model names, sizes and partition-point counts follow published figures for
common vision CNNs; all timings and the 320 MB/s bus bandwidth are synthetic.
Regenerate the JSON files with ``python -m edgepart.bundled``.
"""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .profiles import MB, HardwareSpec, dump_profiles, load_profiles, synth_profile

HARDWARE = HardwareSpec(sram_capacity_bytes=8 * MB, bandwidth_bytes_per_s=320 * MB, max_cores=4)

# name: (partition points, bytes, accelerator compute s, single-core CPU s, speedup decay)
MODEL_TABLE = {
    "SqueezeNet": (2, 1_400_000, 0.0030, 0.0150, 0.9),
    "MobileNetV2": (5, 4_100_000, 0.0035, 0.0200, 0.85),
    "EfficientNet": (6, 6_700_000, 0.0060, 0.0300, 0.85),
    "MnasNet": (7, 7_100_000, 0.0045, 0.0220, 0.8),
    "GPUNet": (5, 12_200_000, 0.0090, 0.0450, 0.85),
    "DenseNet201": (7, 19_700_000, 0.0300, 0.1800, 0.6),
    "ResNet50V2": (8, 25_300_000, 0.0250, 0.2000, 0.6),
    "Xception": (11, 26_100_000, 0.0350, 0.2800, 0.65),
    "InceptionV4": (11, 43_200_000, 0.0900, 0.5000, 0.5),
}

INPUT_BYTES = {"InceptionV4": 268_203, "Xception": 268_203}  # 299x299x3, others 224x224x3

SINGLE_TENANT_MIXES = [["InceptionV4"], ["ResNet50V2"], ["DenseNet201"], ["MobileNetV2"]]
MULTI_TENANT_MIXES = [
    ["MobileNetV2", "SqueezeNet"],
    ["EfficientNet", "GPUNet"],
    ["MnasNet", "InceptionV4"],
    ["MobileNetV2", "SqueezeNet", "ResNet50V2"],
]
OVER_CAPACITY_SUITE = [
    ["InceptionV4"], ["ResNet50V2"],
    ["EfficientNet", "GPUNet"], ["MnasNet", "InceptionV4"],
    ["MobileNetV2", "SqueezeNet", "ResNet50V2"],
]
FITTING_SUITE = [["MobileNetV2"], ["MobileNetV2", "SqueezeNet"]]

DYNAMIC_WORKLOAD = {"models": [
    {"name": "MnasNet", "schedule": [{"start_s": 0.0, "rate_rps": 5.0},
                                     {"start_s": 300.0, "rate_rps": 5.0},
                                     {"start_s": 600.0, "rate_rps": 5.0}]},
    {"name": "InceptionV4", "schedule": [{"start_s": 0.0, "rate_rps": 1.0},
                                         {"start_s": 300.0, "rate_rps": 3.0},
                                         {"start_s": 600.0, "rate_rps": 5.0}]},
]}


def build_models():
    out = []
    for name, (points, size, tpu_s, cpu_s, decay) in MODEL_TABLE.items():
        out.append(synth_profile(name, points, size, tpu_s, cpu_s, decay, HARDWARE,
                                 input_bytes=INPUT_BYTES.get(name, 150_528)))
    return out


def _grid(mixes, rhos, configs):
    return {"cells": [{"mix": mix, "rho": rho, "configs": configs}
                      for mix in mixes for rho in rhos]}


def write_all(directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    models = build_models()
    dump_profiles(directory / "edge_models.json", HARDWARE, models)
    dump_profiles(directory / "inceptionv4_synth.json", HARDWARE,
                  [m for m in models if m.name == "InceptionV4"])
    files = {
        "dynamic_workload.json": DYNAMIC_WORKLOAD,
        "single_tenant_grid.json": _grid(SINGLE_TENANT_MIXES, [0.2, 0.5],
                                         ["compiler", "greedy", "threshold"]),
        "multi_tenant_grid.json": _grid(MULTI_TENANT_MIXES, [0.2, 0.5],
                                        ["compiler", "greedy", "alpha-zero"]),
        "baseline_suite.json": {"over_capacity": OVER_CAPACITY_SUITE,
                                "fitting": FITTING_SUITE, "rhos": [0.2, 0.5]},
    }
    for fname, data in files.items():
        (directory / fname).write_text(json.dumps(data, indent=2) + "\n")


def scenario_path(name: str) -> Path:
    return Path(str(resources.files("edgepart") / "scenarios" / name))


def load_bundled(name: str = "edge_models.json"):
    return load_profiles(scenario_path(name))


if __name__ == "__main__":
    write_all(Path(__file__).parent / "scenarios")
