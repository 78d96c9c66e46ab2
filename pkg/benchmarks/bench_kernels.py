"""Compare the compiled kernels against the numpy fallback.

Run ``python benchmarks/bench_kernels.py`` after an editable install. Each
kernel is checked for agreement before it is timed.
"""

from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from burnscope import _kernels_py


def _cases(size: int, seed: int):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 4, (size, size))
    mask = rng.random((size, size)) > 0.05
    design = np.abs(rng.standard_normal((40, 3))) + 0.1
    targets = rng.standard_normal((size * size, 40))
    image = rng.exponential(1.0, (size, size))
    return {
        "majority_filter": ((labels, mask, 2, 4), lambda a, b: np.array_equal(a, b)),
        "nnls_batch": ((design, targets), lambda a, b: np.allclose(a, b, atol=1e-10)),
        "window_stats": ((image, 3), lambda a, b: all(np.allclose(x, y, atol=1e-10) for x, y in zip(a, b))),
    }


def run(size: int = 128, repeat: int = 5, seed: int = 0) -> list[dict]:
    try:
        from burnscope import _ckernels
    except ImportError:
        _ckernels = None
    rows = []
    for name, (args, same) in _cases(size, seed).items():
        py = getattr(_kernels_py, name)
        t_py = min(timeit.repeat(lambda: py(*args), number=1, repeat=repeat))
        row = {"kernel": name, "python_s": t_py, "cython_s": None, "speedup": None}
        if _ckernels is not None:
            cy = getattr(_ckernels, name)
            if not same(py(*args), cy(*args)):
                raise SystemExit(f"{name}: compiled and fallback kernels disagree")
            t_cy = min(timeit.repeat(lambda: cy(*args), number=1, repeat=repeat))
            row.update(cython_s=t_cy, speedup=t_py / t_cy)
        rows.append(row)
    return rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=128, help="image side in pixels")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true", help="emit JSON instead of a table")
    args = ap.parse_args()
    rows = run(args.size, args.repeat)
    if args.json:
        print(json.dumps(rows, indent=2))
        return
    print(f"{'kernel':<16}{'python (s)':>12}{'cython (s)':>12}{'speedup':>10}")
    for r in rows:
        cy = "n/a" if r["cython_s"] is None else f"{r['cython_s']:.4f}"
        sp = "n/a" if r["speedup"] is None else f"{r['speedup']:.1f}x"
        print(f"{r['kernel']:<16}{r['python_s']:>12.4f}{cy:>12}{sp:>10}")


if __name__ == "__main__":
    main()
