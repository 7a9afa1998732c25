"""Compare the compiled kernels against the pure-numpy fallback.

The backend is chosen at import time from CURVEDFIBER_NUMBA, so each backend
runs in its own subprocess and the timings are reported side by side.

Usage: python3 benchmarks/bench_kernels.py
"""

from __future__ import annotations

import json
import os
import subprocess
import sys
import time


def _measure() -> dict:
    import numpy as np

    from curvedfiber._accel import backend_name
    from curvedfiber.metrics import TetLocator
    from curvedfiber.models import make_twist_bar
    from curvedfiber.psl import compute_psl_weights
    from curvedfiber.stress import principal_decompose

    sizes = {"numba": (14, 4, 4), "numpy": (7, 2, 2)}
    nx, ny, nz = sizes[backend_name()]
    mesh, tensors = make_twist_bar(nx=nx, ny=ny, nz=nz)
    principal = principal_decompose(tensors)

    # warm-up triggers JIT compilation on the compiled backend
    compute_psl_weights(mesh, principal)
    t0 = time.perf_counter()
    compute_psl_weights(mesh, principal)
    psl_s = time.perf_counter() - t0

    rng = np.random.default_rng(0)
    pts = rng.uniform(mesh.vertices.min(0), mesh.vertices.max(0), (2000, 3))
    locator = TetLocator(mesh)
    locator.locate(pts[:1])
    t0 = time.perf_counter()
    locator.locate(pts)
    loc_s = time.perf_counter() - t0

    return {
        "backend": backend_name(),
        "tets": len(mesh.tets),
        "psl_weights_s": round(psl_s, 4),
        "locate_2000pts_s": round(loc_s, 4),
    }


def main():
    if os.environ.get("_BENCH_CHILD"):
        print(json.dumps(_measure()))
        return
    results = []
    for flag in ("1", "0"):
        env = dict(os.environ, CURVEDFIBER_NUMBA=flag, _BENCH_CHILD="1")
        out = subprocess.run(
            [sys.executable, __file__], env=env, capture_output=True, text=True
        )
        if out.returncode != 0:
            sys.stderr.write(out.stderr)
            raise SystemExit(1)
        results.append(json.loads(out.stdout.strip().splitlines()[-1]))
    print(f"{'backend':>8} {'tets':>7} {'psl_weights':>12} {'locate_2000':>12}")
    for r in results:
        print(
            f"{r['backend']:>8} {r['tets']:>7} "
            f"{r['psl_weights_s']:>11.4f}s {r['locate_2000pts_s']:>11.4f}s"
        )
    print(
        "note: the numpy fallback runs the same loops uncompiled, so it is "
        "benchmarked on a smaller model"
    )


if __name__ == "__main__":
    main()
