"""Time the numba and numpy steppers on the fig-ex1 system.

    python3 benchmarks/bench_kernels.py [--paths 64] [--t-end 550]

Needs numba installed; ``ISORES_DISABLE_NUMBA`` is ignored here because both
kernels are timed in the same process.
"""

import argparse
import time

import numpy as np

from isores.sde import SimConfig, kernels, simulate
from isores.sysdef.presets import ic_ring, resolve
from isores.sysdef.system import cartesian_to_polar


def run(frame, use_numba, paths, t_end):
    kernels.USE_NUMBA = use_numba
    cs = resolve("fig-ex1")
    system = cs if frame == "cartesian" else cartesian_to_polar(cs)
    cfg = SimConfig(50.0, t_end, frame=frame, seed=1, n_paths=paths, record_stride=1000,
                    workers=1)
    ics = ic_ring(1.378, np.pi / 4, 0.1, 8)
    t0 = time.perf_counter()
    out = simulate(system, cfg, ics)
    return time.perf_counter() - t0, np.array([p.final_rho for p in out])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=64)
    ap.add_argument("--t-end", type=float, default=550.0)
    args = ap.parse_args()
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not available (or disabled); nothing to compare")
    for frame in ("cartesian", "polar"):
        run(frame, True, 2, 60.0)  # compile
        t_nb, r_nb = run(frame, True, args.paths, args.t_end)
        t_np, r_np = run(frame, False, args.paths, args.t_end)
        steps = SimConfig(50.0, args.t_end).n_steps() * args.paths
        print(f"{frame:9s} numba {t_nb:7.3f} s  numpy {t_np:7.3f} s  speedup {t_np / t_nb:5.1f}x  "
              f"({steps / t_nb / 1e6:.1f} M path-steps/s)  max |diff| {np.max(np.abs(r_nb - r_np)):.2e}")


if __name__ == "__main__":
    main()
