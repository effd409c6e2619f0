"""Distance calls per query for bucket size and cascading on/off.

leaf_size=1 is the plain one-record-per-node tree; cascade_depth=0 turns the
ancestor-distance bounds off.  Answers are identical across variants.
"""
import argparse

import numpy as np

from ktsearch import bench
from ktsearch.mtree import CascadingMetricTree


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--n", type=int, default=30_000)
    p.add_argument("--lens", default="10,15,20")
    p.add_argument("--rs", default="0.05,0.10,0.17")
    p.add_argument("--queries", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    variants = [(1, 0), (1, 8), (16, 0), (16, 8), (16, 16)]
    rs = [float(x) for x in args.rs.split(",")]
    print(f"{'len':>4} {'r':>5} " + " ".join(f"B={b:<2}K={k:<3}" for b, k in variants))
    for length in (int(x) for x in args.lens.split(",")):
        pop = bench.generate_population(args.n, length, args.seed)
        queries = bench.pick_queries(pop, args.queries, args.seed)
        trees = [CascadingMetricTree.from_arrays(pop.perms, seed=args.seed, leaf_size=b, cascade_depth=k,
                                                 validate=False) for b, k in variants]
        for r in rs:
            cols = []
            answers = None
            for t in trees:
                res = [t.ball_query(q, r) for q in queries]
                ids = [a for a, _ in res]
                assert answers is None or ids == answers
                answers = ids
                cols.append(np.mean([s.dist_calls for _, s in res]) / args.n)
            print(f"{length:>4} {r:>5.2f} " + " ".join(f"{c:>10.4f}" for c in cols))


if __name__ == "__main__":
    main()
