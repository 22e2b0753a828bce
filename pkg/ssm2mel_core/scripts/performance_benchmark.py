#!/usr/bin/env python3
"""
Performance benchmarking script for ssm2mel.
Times the three SSM kernels, the selective scan, a full model forward pass and
one gradient step, with memory deltas per iteration.
"""

import json
import statistics
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict

import numpy as np
import psutil

# Add the package directory to the path
src_path = Path(__file__).parent.parent
sys.path.insert(0, str(src_path))

from ssm2mel import numerics as nx  # noqa: E402
from ssm2mel.config import ModelConfig  # noqa: E402
from ssm2mel.model import init_parameters, model_forward  # noqa: E402
from ssm2mel.params import ParamInit, ParamView, count_parameters, frozen  # noqa: E402
from ssm2mel.ssm_core import (  # noqa: E402
    convolve,
    init_selective,
    parallel_scan,
    recurrence,
    selective_params,
    selective_scan,
)
from ssm2mel.selftest import random_discrete  # noqa: E402
from ssm2mel.train import crop_gradients  # noqa: E402


class PerformanceBenchmark:
    """Performance benchmarking for ssm2mel."""

    def __init__(self):
        self.results: Dict[str, Any] = {}
        self.process = psutil.Process()

    def get_memory_usage(self) -> float:
        """Get current memory usage in MB."""
        return self.process.memory_info().rss / 1024 / 1024

    def benchmark_operation(self, operation_name: str, operation_func: Callable[[], Any],
                            iterations: int = 5) -> Dict[str, Any]:
        print(f"Benchmarking: {operation_name}")
        timings = []
        memory_usage = []
        for i in range(iterations):
            memory_before = self.get_memory_usage()
            start_time = time.time()
            try:
                operation_func()
            except Exception as e:
                print(f"    Iteration {i+1} failed: {e}")
            timing = time.time() - start_time
            memory_delta = self.get_memory_usage() - memory_before
            timings.append(timing)
            memory_usage.append(memory_delta)
            print(f"    Iteration {i+1}: {timing:.3f}s, {memory_delta:.1f}MB")

        stats = {
            "operation": operation_name,
            "iterations": iterations,
            "timing": {
                "mean": statistics.mean(timings),
                "median": statistics.median(timings),
                "min": min(timings),
                "max": max(timings),
                "std": statistics.stdev(timings) if len(timings) > 1 else 0,
            },
            "memory": {
                "mean": statistics.mean(memory_usage),
                "max": max(memory_usage),
            },
        }
        print(f"  Results: {stats['timing']['mean']:.3f}s +/- {stats['timing']['std']:.3f}s")
        return stats

    def benchmark_kernels(self) -> Dict[str, Any]:
        """Recurrence vs. scan vs. convolution over growing sequence lengths."""
        rng = np.random.default_rng(0)
        disc = random_discrete(rng, 64, 16)
        results = {}
        for T in (320, 1280, 5120):
            print(f"\nSequence length {T}")
            x = nx.Tensor(rng.standard_normal((T, 64)))
            for name, kernel in (("recurrence", recurrence), ("scan", parallel_scan), ("conv", convolve)):
                results[f"{name}_{T}"] = self.benchmark_operation(
                    f"{name} (T={T}, H=64, N=16)", lambda k=kernel: k(disc, x), iterations=3)
        return {"kernels": results}

    def benchmark_selective_scan(self) -> Dict[str, Any]:
        rng = np.random.default_rng(1)
        init = ParamInit(0)
        init_selective(init, 128, 16)
        params = selective_params(ParamView(init.tensors()))
        x = nx.Tensor(rng.standard_normal((320, 128)))
        return {"selective_scan": {
            method: self.benchmark_operation(f"selective scan ({method}, T=320, H=128)",
                                             lambda m=method: selective_scan(params, x, m), iterations=3)
            for method in ("recurrence", "scan")
        }}

    def benchmark_model(self) -> Dict[str, Any]:
        """Forward pass and one crop gradient at the reference model size."""
        config = ModelConfig()
        params = init_parameters(config, seed=0)
        print(f"\nReference model: {count_parameters(params)} parameters")
        rng = np.random.default_rng(2)
        eeg = rng.standard_normal((config.segment_length, config.n_channels))
        mel = rng.standard_normal((config.segment_length, config.n_mel))
        weights = frozen(params)
        return {"model": {
            "forward": self.benchmark_operation(
                "model forward (5 s segment)", lambda: model_forward(eeg, 0, weights, config), iterations=3),
            "gradient": self.benchmark_operation(
                "forward + backward (5 s segment)", lambda: crop_gradients(params, config, eeg, mel, 0),
                iterations=3),
        }}

    def run_all(self) -> Dict[str, Any]:
        print("ssm2mel performance benchmark")
        print("=" * 50)
        print(f"CPUs: {psutil.cpu_count()}, memory: {psutil.virtual_memory().total / 1024 ** 3:.1f} GB")
        self.results.update(self.benchmark_kernels())
        self.results.update(self.benchmark_selective_scan())
        self.results.update(self.benchmark_model())
        return self.results

    def save_results(self, path: str = "benchmark_results.json") -> None:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.results, handle, indent=2)
        print(f"\nResults saved to {path}")


def main():
    benchmark = PerformanceBenchmark()
    benchmark.run_all()
    benchmark.save_results()


if __name__ == "__main__":
    main()
