"""Compare the compiled kernel core against the pure fallback.

Two views:

  * micro: each kernel timed on both backends at sizes the simulator
    actually uses (tiny MLP batches) plus a larger point to show scaling,
    with a bitwise parity check on every output;
  * macro: one full training loop per backend in a subprocess, because the
    backend is frozen at import time (DUALMARKET_PURE=1 forces the
    fallback).

Usage: python3 benchmarks/bench_kernels.py [--repeats N] [--skip-macro]
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from dualmarket._kernels import BACKEND
from dualmarket._kernels import pure

try:
    from dualmarket._kernels import _core
except ImportError:
    _core = None

CASES = [
    # (name, builder) at the simulator's operating sizes and one larger one
    ("matmul 8x16 @ 16x16", lambda r: (r.uniform(-1, 1, (8, 16)), r.uniform(-1, 1, (16, 16)))),
    ("matmul 128x128 @ 128x128", lambda r: (r.uniform(-1, 1, (128, 128)), r.uniform(-1, 1, (128, 128)))),
    ("matmul_at_b 8x16, 8x16", lambda r: (r.uniform(-1, 1, (8, 16)), r.uniform(-1, 1, (8, 16)))),
    ("matmul_a_bt 8x16, 16x16", lambda r: (r.uniform(-1, 1, (8, 16)), r.uniform(-1, 1, (16, 16)))),
    ("colsum 64x16", lambda r: (r.uniform(-1, 1, (64, 16)),)),
    ("sum_all 64x64", lambda r: (r.uniform(-1, 1, (64, 64)),)),
    ("map_tanh 64x64", lambda r: (r.uniform(-1, 1, (64, 64)),)),
]


def _op_name(case_name: str) -> str:
    return case_name.split()[0]


def _best_of(fn, args, repeats: int) -> float:
    """Best per-call time over `repeats` rounds of an adaptive batch."""
    n = 1
    while True:  # grow the batch until one round costs ~1 ms
        t0 = time.perf_counter()
        for _ in range(n):
            fn(*args)
        dt = time.perf_counter() - t0
        if dt > 1e-3 or n >= 1 << 16:
            break
        n *= 4
    best = dt / n
    for _ in range(repeats - 1):
        t0 = time.perf_counter()
        for _ in range(n):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / n)
    return best


def micro(repeats: int) -> None:
    rng = np.random.Generator(np.random.PCG64(7))
    print(f"active backend: {BACKEND}")
    if _core is None:
        print("compiled core not built; timing the pure fallback only\n")
    header = f"{'kernel':28} {'pure':>12} {'compiled':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, build in CASES:
        args = tuple(np.ascontiguousarray(a) for a in build(rng))
        op = _op_name(name)
        t_pure = _best_of(getattr(pure, op), args, repeats)
        if _core is None:
            print(f"{name:28} {t_pure * 1e6:>10.2f}us {'-':>12} {'-':>9}")
            continue
        t_core = _best_of(getattr(_core, op), args, repeats)
        a, b = np.asarray(getattr(pure, op)(*args)), np.asarray(
            getattr(_core, op)(*args)
        )
        bitwise = a.tobytes() == b.tobytes()
        assert bitwise, f"{name}: backends disagree bitwise"
        print(
            f"{name:28} {t_pure * 1e6:>10.2f}us {t_core * 1e6:>10.2f}us "
            f"{t_pure / t_core:>8.1f}x"
        )
    print("\nall outputs bitwise identical across backends")


_MACRO = """
import time
from dualmarket._kernels import BACKEND
from dualmarket.model_split import Model, ModelSpec, make_shards

spec = ModelSpec((8, 16, 16, 4), init_seed=3)
shards = make_shards(1, 16, 8, 8, 4)
model = Model(spec)
t0 = time.perf_counter()
model.train_epochs(shards, 30)
print(BACKEND, time.perf_counter() - t0, model.digest().hex())
"""


def macro() -> None:
    rows = []
    for forced in (None, "1"):
        env = dict(os.environ)
        env.pop("DUALMARKET_PURE", None)
        if forced:
            env["DUALMARKET_PURE"] = forced
        out = subprocess.run(
            [sys.executable, "-c", _MACRO], env=env, capture_output=True,
            text=True, check=True,
        ).stdout.split()
        rows.append((out[0], float(out[1]), out[2]))
    print("\ntraining macro-bench: 30 epochs, 16 shards, (8,16,16,4) net")
    for backend, secs, _digest in rows:
        print(f"  {backend:9} {secs * 1e3:8.1f} ms")
    digests = {d for _, _, d in rows}
    assert len(digests) == 1, "backends trained to different parameters"
    print(f"  parameter digests identical: {digests.pop()[:16]}…")
    if rows[0][0] != rows[1][0]:
        print(f"  speedup: {rows[1][1] / rows[0][1]:.1f}x")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--skip-macro", action="store_true")
    ns = ap.parse_args()
    micro(ns.repeats)
    if not ns.skip_macro:
        macro()


if __name__ == "__main__":
    main()
