"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat 20] [--dtype float32]

Shapes follow the desk configuration: batch 32, 4 heads, 16 clips, 7
neighbours, head width 16 for the gather; a 32x32 batch of 16x32
clip/word matrices for the fine-grained reduction.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from seds import _kernels


def gather_inputs(rng, dtype):
    lead, t, n, d = (32, 4), 16, 7, 16
    seq = rng.normal(size=lead + (t, d)).astype(dtype)
    length = rng.integers(4, t + 1, size=lead)
    pos = (rng.random(lead + (t, n)) * (length[..., None, None] - 1e-3)).astype(dtype)
    g = rng.normal(size=lead + (t, n, d)).astype(dtype)
    return seq, pos, length, g


def fine_inputs(rng, dtype):
    lead, t, l = (32, 32), 16, 32
    sim = rng.normal(size=lead + (t, l)).astype(dtype)
    cm = np.ones(lead + (t,), bool)
    cm[..., 12:] = rng.random(lead + (4,)) < 0.5
    wm = np.arange(l) < rng.integers(3, l + 1, size=lead + (1,))
    g = rng.normal(size=lead + (2,)).astype(dtype)
    return sim, cm, wm, g


def bench(mod, rng, dtype, repeat):
    seq, pos, length, g = gather_inputs(rng, dtype)
    sim, cm, wm, gs = fine_inputs(rng, dtype)
    _, cache = mod.fine_grained_forward(sim, cm, wm)
    cases = {
        "interp_gather fwd": lambda: mod.interp_gather_forward(seq, pos, length),
        "interp_gather bwd": lambda: mod.interp_gather_backward(seq, pos, length, g),
        "fine_grained fwd": lambda: mod.fine_grained_forward(sim, cm, wm),
        "fine_grained bwd": lambda: mod.fine_grained_backward(sim, cm, wm, cache, gs),
    }
    out = {}
    for name, fn in cases.items():
        fn()
        out[name] = min(timeit.repeat(fn, number=1, repeat=repeat))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    args = ap.parse_args(argv)
    dtype = np.dtype(args.dtype)
    backends = _kernels.backends()
    if "compiled" not in backends:
        print("compiled extension not available; only the fallback will be timed")
    results = {name: bench(mod, np.random.default_rng(0), dtype, args.repeat) for name, mod in backends.items()}
    names = list(results["python"])
    print(f"{'kernel':20s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s}")
    for k in names:
        py = results["python"][k] * 1e3
        if "compiled" in results:
            c = results["compiled"][k] * 1e3
            print(f"{k:20s} {py:10.3f} {c:12.3f} {py / c:7.1f}x")
        else:
            print(f"{k:20s} {py:10.3f} {'-':>12s} {'-':>8s}")


if __name__ == "__main__":
    main()
