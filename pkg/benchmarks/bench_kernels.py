"""Time the hot kernels under numba against the pure-Python/NumPy fallback.

Run directly to get the comparison table; the script re-executes itself in
two subprocesses with GAMMA3_NUMBA=1 and =0 (the flag is read at import
time, so the paths cannot be switched within one process).

    python benchmarks/bench_kernels.py [--decays N] [--events N]

The fallback executes the same kernel source as plain Python, so expect
two to three orders of magnitude between the columns.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def run_workloads(n_decays, n_events):
    from gamma3._accel import JIT_ENABLED
    from gamma3.geometry import DetectorAnnulus, VoxelGrid
    from gamma3.infer import ActivityImage, mlem_step
    from gamma3.physics import PhysicsParams
    from gamma3.simulate import ToyModel, run_simulation
    from gamma3.sysmodel import KernelParams, estimate_sensitivity

    grid = VoxelGrid((19, 19, 24), (5.0, 5.0, 10.0))
    det = DetectorAnnulus()
    phys = PhysicsParams()
    act = np.ones(grid.n_voxels)
    timings = {"jit": JIT_ENABLED}

    # warm-up triggers compilation on the jit path
    run_simulation(grid, act, 256, det, phys, seed=1, collect=False)
    t0 = time.perf_counter()
    run_simulation(grid, act, n_decays, det, phys, seed=2, collect=False)
    timings["transport_decays"] = n_decays
    timings["transport_s"] = time.perf_counter() - t0

    small = VoxelGrid((9, 9, 9), (10.0, 10.0, 10.0))
    per_voxel = max(n_decays // small.n_voxels, 1)
    t0 = time.perf_counter()
    estimate_sensitivity(small, det, phys, per_voxel, seed=3)
    timings["sensitivity_decays"] = per_voxel * small.n_voxels
    timings["sensitivity_s"] = time.perf_counter() - t0

    res = run_simulation(
        grid, act, n_events, det, phys, seed=4, toy=ToyModel(0.8, 0.7), collect=True
    )
    kern = KernelParams()
    events = {"C12": [e for e in res.events if e.class_tag == "C12"]}
    sens = {"C12": np.full(grid.n_voxels, 0.25)}
    lam = ActivityImage.uniform(grid)
    mlem_step(lam, {"C12": events["C12"][:8]}, sens, kernels=kern, class_subset=["C12"])
    t0 = time.perf_counter()
    mlem_step(lam, events, sens, kernels=kern, class_subset=["C12"])
    timings["mlem_events"] = len(events["C12"])
    timings["mlem_voxels"] = grid.n_voxels
    timings["mlem_s"] = time.perf_counter() - t0
    return timings


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--decays", type=int, default=200_000)
    parser.add_argument("--events", type=int, default=20_000)
    parser.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.child:
        print(json.dumps(run_workloads(args.decays, args.events)))
        return

    results = {}
    for flag in ("1", "0"):
        env = dict(os.environ, GAMMA3_NUMBA=flag)
        # the fallback is slow; scale its workload down and normalize after
        scale = 1 if flag == "1" else 50
        cmd = [
            sys.executable, os.path.abspath(__file__), "--child",
            "--decays", str(max(args.decays // scale, 500)),
            "--events", str(max(args.events // scale, 200)),
        ]
        out = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        results[flag] = json.loads(out.stdout.strip().splitlines()[-1])

    jit, py = results["1"], results["0"]
    print(f"{'workload':<30}{'numba':>12}{'fallback':>14}{'speedup':>10}")
    rows = (
        ("transport (per 1e5 decays)", "transport_s", "transport_decays", 1e5),
        ("sensitivity (per 1e5 decays)", "sensitivity_s", "sensitivity_decays", 1e5),
        ("MLEM iteration (per 1e4 ev)", "mlem_s", "mlem_events", 1e4),
    )
    for label, key, norm, unit in rows:
        a = jit[key] / jit[norm] * unit
        b = py[key] / py[norm] * unit
        print(f"{label:<30}{a:>11.3f}s{b:>13.3f}s{b / a:>9.1f}x")


if __name__ == "__main__":
    main()
