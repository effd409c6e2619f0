"""Run the (len, N, r) grid and print the three scaling views as tables.

    python scripts/scaling_study.py                # desk grid, ~15 s
    python scripts/scaling_study.py --full         # published grid (hours, ~5 GB)
"""
import argparse
from collections import defaultdict
from pathlib import Path

import numpy as np

from ktsearch import bench


def table(title, header, rows):
    print(f"\n{title}")
    print("  ".join(f"{h:>10}" for h in header))
    for row in rows:
        print("  ".join(f"{v:>10}" for v in row))


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--full", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="results/grid.csv")
    args = p.parse_args()

    cfg = bench.GridConfig.full_grid(seed=args.seed) if args.full else bench.GridConfig(seed=args.seed)
    rows = bench.run_grid(cfg, jobs=args.jobs)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    bench.emit_csv(rows, args.out)

    cell = defaultdict(list)
    for r in rows:
        cell[r.len, r.N, r.r].append(r)

    def mean(key, attr):
        return float(np.mean([getattr(x, attr) for x in cell[key]]))

    r_top = max(cfg.rs)
    table(f"relative distance calls at r={r_top} (rows: N, cols: len)",
          ["N"] + [f"len={n}" for n in cfg.lens],
          [[N] + [f"{mean((n, N, r_top), 'relative_calls'):.4f}" for n in cfg.lens] for N in cfg.Ns])

    N_top = max(cfg.Ns)
    table(f"N={N_top}, r={r_top}: mean n_found and ms/query",
          ["len", "n_found", "ms"],
          [[n, f"{mean((n, N_top, r_top), 'n_found'):.1f}", f"{mean((n, N_top, r_top), 'elapsed_ns') / 1e6:.2f}"]
           for n in cfg.lens])

    table(f"ms/query vs N at r={r_top}",
          ["N"] + [f"len={n}" for n in cfg.lens],
          [[N] + [f"{mean((n, N, r_top), 'elapsed_ns') / 1e6:.2f}" for n in cfg.lens] for N in cfg.Ns])
    print(f"\nwrote {len(rows)} rows to {args.out}")


if __name__ == "__main__":
    main()
