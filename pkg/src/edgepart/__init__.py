"""Latency modeling, partition/core optimization and simulation for accelerator/CPU
collaborative inference on memory-constrained edge devices."""
from .allocator import (AllocationResult, InfeasibleError, SearchSpaceTooLarge,
                        brute_force_optimize, compiler_baseline, greedy_optimize, prop_alloc,
                        threshold_baseline)
from .analytic import (LatencyEstimate, SystemState, cpu_wait, e2e_latency, objective,
                       tpu_service_moments, tpu_wait, weight_miss_prob)
from .controller import ControllerPolicy, estimate_rates, replay
from .estimator import PartitionAllocator
from .profiles import (Configuration, HardwareSpec, ModelProfile, ProfileError, WorkloadSpec,
                       load_profiles, load_workload, synth_profile, t_load)
from .simulator import SimConfig, SimReport, WeightCache, cache_lookup_and_charge, run_sim

__version__ = "0.1.0"
