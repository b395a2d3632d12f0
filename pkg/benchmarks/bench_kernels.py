"""Time the compiled kernels against the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Each kernel is timed on the workload it sees in practice: SE-ARD Gram
matrices of the 900-scenario training set, then force and drag assembly
on the full 321-node cage. Both backends are checked to agree
before timing.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from cagetwin import backend
from cagetwin.sim.topology import cage


def workloads(rng):
    topo = cage()
    pos = topo.rest_positions + 0.2 * rng.normal(size=topo.rest_positions.shape)
    n_edges = topo.edges.shape[0]
    rest = np.full(n_edges, 3.0)
    axial = np.full(n_edges, 2.0e3)
    u = rng.normal(size=(topo.panels.shape[0], 3))
    X = rng.uniform(size=(900, 3))
    w = rng.uniform(0.5, 2.0, size=3)
    return {
        "weighted_sqdist 900x900": lambda k: k.weighted_sqdist(X, X, w),
        "se_ard 900x900": lambda k: k.se_ard(X, X, w, 1.3),
        "edge_forces cage": lambda k: k.edge_forces(pos, topo.edges, rest, axial),
        "panel_drag cage": lambda k: k.panel_drag(pos, topo.panels, topo.panel_weights, u, 0.13, 0.013),
    }


def _flat(result):
    parts = result if isinstance(result, tuple) else (result,)
    return np.concatenate([np.ravel(p) for p in parts])


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20, help="timed calls per kernel and backend")
    parser.add_argument("--json", help="also write the timings here")
    args = parser.parse_args(argv)

    names = backend.available()
    if "cython" not in names:
        print("compiled kernels are not built; timing the numpy fallback only", file=sys.stderr)
    rng = np.random.default_rng(0)
    rows = []
    for label, call in workloads(rng).items():
        results = {name: call(backend.get(name)) for name in names}
        if len(results) == 2:
            a, b = (_flat(r) for r in results.values())
            if not np.allclose(a, b, rtol=1e-10, atol=1e-10):
                raise SystemExit(f"{label}: backends disagree")
        times = {}
        for name in names:
            k = backend.get(name)
            times[name] = min(timeit.repeat(lambda: call(k), number=1, repeat=args.repeat)) * 1e3
        rows.append({"kernel": label, **{f"{n}_ms": t for n, t in times.items()}})

    print(f"{'kernel':<26}" + "".join(f"{n + ' [ms]':>14}" for n in names) + ("     speedup" if len(names) == 2 else ""))
    for row in rows:
        line = f"{row['kernel']:<26}" + "".join(f"{row[n + '_ms']:>14.3f}" for n in names)
        if len(names) == 2:
            line += f"{row['python_ms'] / row['cython_ms']:>11.1f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
