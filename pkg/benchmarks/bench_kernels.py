"""Compiled vs pure-Python kernels: batched env stepping and proprio radius queries.

    python benchmarks/bench_kernels.py [--batch 256] [--repeats 5]

Also checks that both backends agree bitwise on the benchmark inputs.
"""
import argparse
import timeit

import numpy as np

from tacorl import _kernels_py, playtable
from tacorl.datastore import ProprioIndex

try:
    from tacorl import _kernels
except ImportError:  # not built
    _kernels = None


def inputs(batch, n_keys, seed=0):
    rng = np.random.default_rng(seed)
    states = np.stack([playtable.reset(rng) for _ in range(batch)])
    actions = rng.uniform(-1, 1, size=(batch, 3))
    keys = np.column_stack([rng.random((n_keys, 2)), rng.choice([-1.0, 1.0], n_keys)])
    queries = keys[rng.integers(0, n_keys, 200)]
    return states, actions, ProprioIndex(keys), queries


def bench(mod, states, actions, idx, queries, repeats):
    def queries_all():
        for q in queries:
            mod.grid_query(idx.keys, idx.order, idx.cell_start, idx.n_side, idx.cell, q, 0.05)

    step = min(timeit.repeat(lambda: mod.step_batch(states, actions), number=10, repeat=repeats)) / 10
    query = min(timeit.repeat(queries_all, number=1, repeat=repeats)) / len(queries)
    return step, query


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--keys", type=int, default=100_000)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)

    states, actions, idx, queries = inputs(args.batch, args.keys)
    mods = [("python", _kernels_py)] + ([("cython", _kernels)] if _kernels is not None else [])
    rows = {}
    for name, mod in mods:
        rows[name] = bench(mod, states, actions, idx, queries, args.repeats)
        step, query = rows[name]
        print(f"{name:7s} step_batch({args.batch}) {step * 1e3:9.3f} ms   grid_query {query * 1e6:9.1f} us")

    if _kernels is None:
        print("compiled kernels not built; only the fallback was timed")
        return
    same = np.array_equal(_kernels.step_batch(states, actions), _kernels_py.step_batch(states, actions))
    same &= all(np.array_equal(
        _kernels.grid_query(idx.keys, idx.order, idx.cell_start, idx.n_side, idx.cell, q, 0.05),
        _kernels_py.grid_query(idx.keys, idx.order, idx.cell_start, idx.n_side, idx.cell, q, 0.05))
        for q in queries)
    (ps, pq), (cs, cq) = rows["python"], rows["cython"]
    print(f"speedup  step {ps / cs:.1f}x  query {pq / cq:.1f}x  bitwise equal: {same}")


if __name__ == "__main__":
    main()
