"""Benchmark the compiled kernels against the pure-NumPy fallback.

Times the three hot kernels across batch sizes, plus a full joint-sampling
sweep loop through each backend. Run from the repository root:

    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from jointebm import backend
from jointebm.energy import ConditioningSpec, EnergyModel, MlpBackbone
from jointebm.engine import MlpSpec, init_mlp_params
from jointebm.samplers import GibbsConfig, LangevinConfig, SampleBatch, lwg_sample

DIM = 16
HIDDEN = (64, 64)
K = 8
BATCHES = (1, 16, 64, 256)
REPEATS = 200


def _net(rng):
    spec = MlpSpec(input_dim=DIM, hidden=HIDDEN, num_attributes=K)
    params = init_mlp_params(spec, rng)
    ws = [params.theta[f"w{i}"].data for i in range(spec.num_layers)]
    bs = [params.theta[f"b{i}"].data for i in range(spec.num_layers)]
    return spec, params, ws, bs


def _time(fn, repeats=REPEATS):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_kernels():
    rng = np.random.default_rng(0)
    _, _, ws, bs = _net(rng)
    names = ["python"] + (["compiled"] if backend.has_compiled() else [])
    idx = np.array([0, 3], dtype=np.int64)
    val = np.array([1, 0], dtype=np.int64)

    print(f"kernel timings (mean of {REPEATS} calls, microseconds)")
    header = f"{'kernel':<22}{'batch':>6}" + "".join(f"{n:>12}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for label, call in (
        ("mlp_logits", lambda k, x: k.mlp_logits(ws, bs, x)),
        ("joint_energy_grad", lambda k, x: k.joint_energy_grad(ws, bs, x, y)),
        ("semicond_energy_grad", lambda k, x: k.semicond_energy_grad(ws, bs, x, idx, val)),
    ):
        for b in BATCHES:
            x = np.ascontiguousarray(rng.random((b, DIM)))
            y = np.ascontiguousarray(rng.integers(0, 2, (b, K)), dtype=np.int64)
            times = []
            for name in names:
                kern = backend.get_kernels(name)
                times.append(_time(lambda k=kern: call(k, x)) * 1e6)
            row = f"{label:<22}{b:>6}" + "".join(f"{t:>12.1f}" for t in times)
            if len(times) == 2:
                row += f"{times[0] / times[1]:>9.1f}x"
            print(row)


def bench_sampler():
    import os

    print("\nfull joint-sampling run (batch 64, 40 sweeps, seconds per run)")
    rng = np.random.default_rng(1)
    spec, params, ws, bs = _net(rng)
    init = SampleBatch(rng.random((64, DIM)), rng.integers(0, 2, (64, K)))
    gc = GibbsConfig(sweeps=40)
    lc = LangevinConfig()
    names = ["python"] + (["compiled"] if backend.has_compiled() else [])
    results = {}
    for name in names:
        kern = backend.get_kernels(name)

        class _Backbone(MlpBackbone):
            def logits(self, x):
                return kern.mlp_logits(self.ws, self.bs, np.ascontiguousarray(x))

            def joint_energy_grad(self, x, y):
                return kern.joint_energy_grad(
                    self.ws, self.bs, np.ascontiguousarray(x), np.ascontiguousarray(y)
                )

        model = EnergyModel(_Backbone(spec, ws, bs))

        def run():
            lwg_sample(model, init, gc, lc, np.random.default_rng(7))

        results[name] = _time(run, repeats=20)
        print(f"  {name:<10}{results[name] * 1e3:>10.2f} ms")
    if len(results) == 2:
        print(f"  speedup   {results['python'] / results['compiled']:>9.1f}x")


if __name__ == "__main__":
    print(f"active backend: {backend.backend_name()} "
          f"(compiled available: {backend.has_compiled()})")
    bench_kernels()
    bench_sampler()
