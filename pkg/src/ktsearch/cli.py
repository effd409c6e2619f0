"""``ktsearch`` command line: gen | query | ring | bench | serve."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench
from .kendall import LengthMismatchError, RankListError
from .mtree import CascadingMetricTree

EXIT_USAGE = 2
EXIT_DATA = 3


class UsageError(Exception):
    pass


def _perm_literal(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _unit(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"radius must be in [0, 1], got {v}")
    return v


def _positive(text: str) -> int:
    v = int(float(text))
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ktsearch", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a population of shuffled rank lists")
    g.add_argument("--n", type=_positive, required=True, help="number of lists")
    g.add_argument("--len", dest="length", type=int, required=True, help="items per list")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="-", help="output path (default stdout)")

    def tree_flags(sp):
        sp.add_argument("--dataset", required=True, help="population file, one list per line")
        sp.add_argument("--q", type=_perm_literal, required=True, help="query list, e.g. 3,0,2,1")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--leaf-size", type=_positive, default=16)
        sp.add_argument("--cascade-depth", type=int, default=8)

    q = sub.add_parser("query", help="ball query against a population file")
    tree_flags(q)
    q.add_argument("--r", type=_unit, required=True)

    rg = sub.add_parser("ring", help="ring query against a population file")
    tree_flags(rg)
    rg.add_argument("--r-lo", type=_unit, required=True)
    rg.add_argument("--r-hi", type=_unit, required=True)
    rg.add_argument("--open-lo", action="store_true", help="exclude the lower edge")

    b = sub.add_parser("bench", help="run the (len, N, r) scaling grid and write CSV")
    b.add_argument("--config", help="key=value grid file")
    b.add_argument("--lens", help="comma-separated list lengths")
    b.add_argument("--ns", help="comma-separated population sizes")
    b.add_argument("--rs", help="comma-separated radii")
    b.add_argument("--queries", type=_positive, help="queries per cell (default 5)")
    b.add_argument("--seed", type=int)
    b.add_argument("--leaf-size", type=_positive)
    b.add_argument("--cascade-depth", type=int)
    b.add_argument("--full-table2", action="store_true", help="use the complete published parameter grid")
    b.add_argument("--jobs", type=_positive, default=1)
    b.add_argument("--out", default="bench.csv")

    s = sub.add_parser("serve", help="run the match service")
    s.add_argument("--config", help="key=value service config")
    s.add_argument("--listen")
    s.add_argument("--vocab", help="vocabulary file, one item per line")
    s.add_argument("--threshold", type=_unit, help="inactive fraction that triggers cleanup")
    s.add_argument("--seed", type=int)
    s.add_argument("--snapshot", help="snapshot file (restored at start if present)")
    return p


def cmd_gen(args, out) -> int:
    if args.length < 2:
        raise UsageError("--len must be >= 2 (a list needs at least two items)")
    pop = bench.generate_population(args.n, args.length, args.seed)
    if args.out == "-":
        for row in pop.perms:
            out.write(" ".join(str(int(v)) for v in row) + "\n")
    else:
        bench.write_population(pop.perms, args.out)
    return 0


def _load_tree(args) -> CascadingMetricTree:
    perms = bench.read_population(args.dataset)
    if len(args.q) != perms.shape[1]:
        raise LengthMismatchError(f"query has {len(args.q)} items, dataset lists have {perms.shape[1]}")
    return CascadingMetricTree.from_arrays(
        perms, seed=args.seed, leaf_size=args.leaf_size, cascade_depth=args.cascade_depth, validate=False
    )


def _print_answer(ids, stats, out) -> None:
    for uid in sorted(ids):
        out.write(f"{uid}\n")
    out.write(f"n_found={stats.n_found} dist_calls={stats.dist_calls}\n")


def cmd_query(args, out) -> int:
    tree = _load_tree(args)
    ids, stats = tree.ball_query(args.q, args.r)
    _print_answer(ids, stats, out)
    return 0


def cmd_ring(args, out) -> int:
    if args.r_lo > args.r_hi:
        raise UsageError(f"--r-lo {args.r_lo} exceeds --r-hi {args.r_hi}")
    tree = _load_tree(args)
    ids, stats = tree.ring_query(args.q, args.r_lo, args.r_hi, open_lo=args.open_lo)
    _print_answer(ids, stats, out)
    return 0


def grid_from_args(args) -> bench.GridConfig:
    if args.full_table2:
        kw = dict(lens=bench.FULL_GRID_LENS, Ns=bench.FULL_GRID_NS, rs=bench.FULL_GRID_RS)
    else:
        kw = {}
    if args.config:
        text = Path(args.config).read_text()
        cfg = bench.GridConfig.from_text(text)
        kw = {**{f: getattr(cfg, f) for f in ("lens", "Ns", "rs", "queries_per_cell", "seed",
                                               "leaf_size", "cascade_depth")}, **kw}
    flags = {
        "lens": args.lens, "Ns": args.ns, "rs": args.rs, "queries_per_cell": args.queries,
        "seed": args.seed, "leaf_size": args.leaf_size, "cascade_depth": args.cascade_depth,
    }
    overrides = bench.parse_overrides({k: str(v) for k, v in flags.items() if v is not None})
    if args.full_table2 and overrides.keys() & {"lens", "Ns", "rs"}:
        raise UsageError("--full-table2 cannot be combined with --lens/--ns/--rs")
    return bench.GridConfig(**{**kw, **overrides})


def cmd_bench(args, out) -> int:
    try:
        cfg = grid_from_args(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = bench.run_grid(cfg, jobs=args.jobs)
    bench.emit_csv(rows, args.out)
    worst = max(rows, key=lambda r: r.relative_calls)
    out.write(
        f"cells={len(rows)} max_relative_calls={worst.relative_calls:.4f} "
        f"(len={worst.len} N={worst.N} r={worst.r}) csv={args.out}\n"
    )
    return 0


def cmd_serve(args, out) -> int:
    from .matchd import ServiceConfig, serve

    cfg = ServiceConfig.from_text(Path(args.config).read_text()) if args.config else ServiceConfig()
    for attr, flag in (("listen", "listen"), ("vocabulary", "vocab"), ("cleanup_threshold", "threshold"),
                       ("seed", "seed"), ("snapshot", "snapshot")):
        if getattr(args, flag) is not None:
            setattr(cfg, attr, getattr(args, flag))
    if not cfg.vocabulary and not cfg.snapshot:
        raise UsageError("serve needs --vocab (or a config/snapshot providing one)")
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    serve(cfg)
    return 0


COMMANDS = {"gen": cmd_gen, "query": cmd_query, "ring": cmd_ring, "bench": cmd_bench, "serve": cmd_serve}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        parser.error(str(exc))
    except (RankListError, LengthMismatchError, ValueError, OSError, bench.GridCellError) as exc:
        print(f"ktsearch {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
