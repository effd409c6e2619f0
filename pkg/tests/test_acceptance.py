"""Exit criteria for the build; each test prints one PASS/FAIL line in the summary."""
import numpy as np
import pytest

from ktsearch import bench
from ktsearch.bench import GridConfig
from ktsearch.kendall import kt_distance, kt_distance_oracle, normalize
from ktsearch.matchd import MatchService
from ktsearch.mtree import CascadingMetricTree, _radius_to_raw_lower, radius_to_raw

from _oracle import random_perms, scan, scan_tree

pytestmark = pytest.mark.slow


def test_c01_worked_example(criterion):
    d = kt_distance([0, 1, 2, 3], [2, 3, 0, 1])
    x = normalize(d, 4)
    ok = d == 4 and x == 2 / 3
    criterion(1, "worked example: d=4, normalized 2/3", ok, f"d={d} normalized={x!r}")
    assert ok


def test_c02_distance_oracle_equivalence(criterion):
    rng = np.random.default_rng(2)
    mismatches = 0
    for n in range(2, 13):
        for _ in range(10_000):
            a, b = rng.permutation(n), rng.permutation(n)
            mismatches += kt_distance(a, b) != kt_distance_oracle(a, b)
    criterion(2, "merge sort == pair enumeration, 10k pairs per n in 2..12", mismatches == 0,
              f"{mismatches} mismatches")
    assert mismatches == 0


def test_c03_metric_axioms(criterion):
    rng = np.random.default_rng(3)
    violations = 0
    for _ in range(10_000):
        a, b, c = (rng.permutation(10) for _ in range(3))
        dab, dba, dac, dbc = kt_distance(a, b), kt_distance(b, a), kt_distance(a, c), kt_distance(b, c)
        violations += dab < 0
        violations += dab != dba
        violations += (dab == 0) != np.array_equal(a, b)
        violations += kt_distance(a, a) != 0
        violations += dac > dab + dbc
    criterion(3, "metric axioms on 10k triples, n=10", violations == 0, f"{violations} violations")
    assert violations == 0


# radii are drawn from the published operating range, 0 to 0.17
R_MAX = max(bench.FULL_GRID_RS)


def _search_trees():
    for i in range(20):
        N = (100, 2000, 20_000)[i % 3]
        n = (10, 15)[(i // 3) % 2]
        yield i, N, n


@pytest.fixture(scope="module")
def search_runs():
    """Criterion 4/5 data: every query with and without cascading, plus the oracle answer."""
    runs = []
    for i, N, n in _search_trees():
        rng = np.random.default_rng(400 + i)
        perms = random_perms(rng, N, n)
        tree = CascadingMetricTree.from_arrays(perms, seed=i)
        ids, ones = range(N), np.ones(N)
        for k in range(100):
            q = perms[rng.integers(N)] if k % 2 else rng.permutation(n).astype(np.int16)
            if k < 50:
                r = float(rng.uniform(0, R_MAX))
                lo, hi = 0, radius_to_raw(r, n)
                got, st = tree.ball_query(q, r)
                plain, st_plain = tree.ball_query(q, r, cascade=False)
            else:
                r_lo, r_hi = sorted(float(x) for x in rng.uniform(0, R_MAX, 2))
                lo, hi = _radius_to_raw_lower(r_lo, n), radius_to_raw(r_hi, n)
                got, st = tree.ring_query(q, r_lo, r_hi)
                plain, st_plain = tree.ring_query(q, r_lo, r_hi, cascade=False)
            want = scan(perms, ids, ones, q, lo, hi)
            runs.append((N, got, plain, want, st, st_plain))
    return runs


def test_c04_search_oracle_equivalence(criterion, search_runs):
    bad = sum(got != want for _, got, _, want, _, _ in search_runs)
    ok = bad == 0 and len(search_runs) == 20 * 100
    criterion(4, "20 trees x (50 ball + 50 ring) == linear scan", ok,
              f"{len(search_runs)} queries, {bad} mismatches")
    assert ok


def test_c05_pruning_effectiveness(criterion, search_runs):
    not_pruned = sum(st.dist_calls >= N for N, _, _, _, st, _ in search_runs if N >= 2000)
    changed = sum(plain != got for _, got, plain, _, _, _ in search_runs)
    worse = sum(st.dist_calls > sp.dist_calls for _, _, _, _, st, sp in search_runs)
    big = [st.dist_calls / N for N, _, _, _, st, _ in search_runs if N >= 2000]
    ok = not_pruned == 0 and changed == 0 and worse == 0
    criterion(5, "dist_calls < N for N>=2000; cascading changes no answers, never adds calls", ok,
              f"{not_pruned} unpruned, {changed} answer changes, {worse} call increases, "
              f"max relative calls {max(big):.3f}")
    assert ok


def test_c06_relative_calls_fall_with_N(criterion):
    rows = bench.run_grid(GridConfig(lens=[10], Ns=[5_000, 30_000, 100_000], rs=[0.10], seed=0))
    means = [float(np.mean([r.relative_calls for r in rows if r.N == N])) for N in (5_000, 30_000, 100_000)]
    ok = means[0] > means[1] > means[2]
    criterion(6, "mean dist_calls/N strictly decreasing over N=5e3,3e4,1e5 (len=10, r=0.10)", ok,
              " > ".join(f"{m:.5f}" for m in means))
    assert ok


def test_c07_len30_sparsity(criterion):
    rows = bench.run_grid(GridConfig(lens=[30], Ns=[100_000], rs=[0.17], seed=0))
    found = [r.n_found for r in rows]
    ok = len(found) == 5 and all(f == 1 for f in found)
    criterion(7, "len=30, r=0.17, N=1e5: each query finds only itself", ok, f"n_found={found}")
    assert ok


def test_c08_update_flow(criterion):
    rng = np.random.default_rng(8)
    vocab = [f"item{i}" for i in range(10)]
    svc = MatchService(vocab, seed=8)
    for i in range(10_000):
        svc.register(f"user{i:05d}", [vocab[j] for j in rng.permutation(10)])
    for _ in range(1000):
        uid = f"user{rng.integers(10_000):05d}"
        svc.update(uid, [vocab[j] for j in rng.permutation(10)])
    assert svc.tree.n_inactive == 1000 and svc.cleanups == 0

    probes = [(f"user{u:05d}", float(rng.uniform(0, 0.25))) for u in rng.choice(10_000, 300, replace=False)]

    def check():
        bad = 0
        answers = []
        for uid, r in probes:
            got = svc.match(uid, r)
            want = scan_tree(svc.tree, svc.tree.list_of(uid), 0, radius_to_raw(r, 10)) - {uid}
            bad += {h[0] for h in got} != want
            answers.append(got)
        return bad, answers

    bad_before, before = check()
    svc.cleanup()
    bad_after, after = check()
    ok = (bad_before == 0 and bad_after == 0 and before == after
          and svc.tree.size == svc.tree.n_active == 10_000)
    criterion(8, "1000 updates on 10k users match the scan; cleanup keeps answers, node count == active",
              ok, f"mismatches {bad_before}/{bad_after}, nodes={svc.tree.size}, active={svc.tree.n_active}")
    assert ok


def test_c09_ring_tiling(criterion):
    rng = np.random.default_rng(9)
    perms = random_perms(rng, 20_000, 10)
    tree = CascadingMetricTree.from_arrays(perms, seed=9)
    bad = 0
    for _ in range(100):
        q = perms[rng.integers(20_000)] if rng.random() < 0.5 else rng.permutation(10)
        a = tree.ring_query(q, 0.0, 0.05)[0]
        b = tree.ring_query(q, 0.05, 0.10, open_lo=True)[0]
        c = tree.ring_query(q, 0.10, 0.17, open_lo=True)[0]
        ball = tree.ball_query(q, 0.17)[0]
        disjoint = not (a & b or a & c or b & c)
        bad += not (disjoint and a | b | c == ball
                    and ball == scan(perms, range(20_000), np.ones(20_000), q, 0, radius_to_raw(0.17, 10)))
    criterion(9, "rings [0,.05], (.05,.10], (.10,.17] are disjoint and tile the 0.17 ball", bad == 0,
              f"{bad} failures in 100 queries")
    assert bad == 0


def test_c10_wallclock_report(criterion, tmp_path):
    rows = bench.run_grid(GridConfig(lens=[10, 15, 20], Ns=[100_000], rs=[0.17], seed=0))
    out = tmp_path / "wallclock.csv"
    bench.emit_csv(rows, out)
    per_len = {n: max(r.elapsed_ns for r in rows if r.len == n) / 1e6 for n in (10, 15, 20)}
    criterion(10, "wall-clock at N=1e5, r=0.17 (reported only)", True,
              ", ".join(f"len={n}: max {ms:.1f} ms/query" for n, ms in per_len.items()))
