"""Cascading metric tree over rank lists.

Every node either holds a vantage record and two children (near half /
far half of its subtree by distance to the vantage) or is a flat bucket of
at most ``leaf_size`` records.  Each stored record also remembers its raw
distances to up to ``cascade_depth`` of its nearest ancestor vantages; at
query time those give triangle-inequality bounds that can settle a record,
or a whole node visit, without evaluating the distance.

All arithmetic inside the tree is on integer discordant counts.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

import numpy as np
from numba import njit

from .kendall import (
    LengthMismatchError,
    RankListError,
    _count_inversions,
    _inverse,
    _kt_many,
    as_ranklist,
    max_pairs,
)

_EPS = 1e-9


@dataclass
class UserRecord:
    user_id: Hashable
    ranks: Sequence[int]
    active: bool = True


@dataclass(frozen=True)
class QueryStats:
    n_found: int
    dist_calls: int
    elapsed_ns: int


class DuplicateUserError(ValueError):
    pass


class UnknownUserError(KeyError):
    pass


def radius_to_raw(r: float, n: int) -> int:
    """Largest raw distance whose normalized value is still <= ``r``."""
    if n < 2:
        raise ValueError(f"list length must be >= 2, got {n}")
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"radius {r} outside [0, 1]")
    return int(math.floor(r * max_pairs(n) + _EPS))


def _radius_to_raw_lower(r: float, n: int) -> int:
    # smallest raw distance whose normalized value is >= r
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"radius {r} outside [0, 1]")
    return int(math.ceil(r * max_pairs(n) - _EPS))


@njit(cache=True, inline="always")
def _decide(blo, bhi, a, b):
    # 1: every d in [blo, bhi] lies in [a, b]; 0: none does; -1: unknown
    if blo >= a and bhi <= b:
        return 1
    if bhi < a or blo > b:
        return 0
    return -1


@njit(cache=True)
def _bounds(x, t, qd, rec_anc, rec_anc_n, pmax):
    lo = 0
    hi = pmax
    for j in range(rec_anc_n[x]):
        a = qd[t - 1 - j]
        if a < 0:
            continue
        dx = rec_anc[x, j]
        if a > dx:
            if a - dx > lo:
                lo = a - dx
        elif dx - a > lo:
            lo = dx - a
        if a + dx < hi:
            hi = a + dx
    return lo, hi


@njit(cache=True)
def _search(
    perms, active, rec_anc, rec_anc_n,
    vantage, rmin, rmax, rinner, router, inner, outer, bucket, bucket_n,
    root, max_depth, n_slots, q, lo, hi, cascade, pmax,
):
    n = q.shape[0]
    pos = np.empty(n, np.int32)
    _inverse(q, pos)
    seq = np.empty(n, np.int32)
    buf = np.empty(n, np.int32)
    qd = np.full(max_depth + 2, -1, np.int32)
    found = np.empty(n_slots, np.int32)
    n_found = 0
    calls = 0
    if root < 0:
        return found[:0], 0
    stack_u = np.empty(2 * max_depth + 8, np.int32)
    stack_t = np.empty(2 * max_depth + 8, np.int32)
    sp = 0
    stack_u[0] = root
    stack_t[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        u = stack_u[sp]
        t = stack_t[sp]
        v = vantage[u]
        if v >= 0:
            if cascade:
                blo, bhi = _bounds(v, t, qd, rec_anc, rec_anc_n, pmax)
            else:
                blo, bhi = 0, pmax
            take = _decide(blo, bhi, lo, hi)
            go_in = 0
            go_out = 0
            a_in = 0
            a_out = 0
            if inner[u] >= 0:
                a_in = max(rmin[u] - hi, lo - rinner[u])
                go_in = _decide(blo, bhi, a_in, rinner[u] + hi)
            if outer[u] >= 0:
                a_out = max(router[u] - hi, lo - rmax[u])
                go_out = _decide(blo, bhi, a_out, rmax[u] + hi)
            if cascade and take >= 0 and go_in >= 0 and go_out >= 0:
                qd[t] = -1
            else:
                for i in range(n):
                    seq[i] = pos[perms[v, i]]
                d = _count_inversions(seq, buf)
                calls += 1
                qd[t] = d
                take = 1 if lo <= d <= hi else 0
                if inner[u] >= 0:
                    go_in = 1 if a_in <= d <= rinner[u] + hi else 0
                if outer[u] >= 0:
                    go_out = 1 if a_out <= d <= rmax[u] + hi else 0
            if take == 1 and active[v]:
                found[n_found] = v
                n_found += 1
            if go_out == 1:
                stack_u[sp] = outer[u]
                stack_t[sp] = t + 1
                sp += 1
            if go_in == 1:
                stack_u[sp] = inner[u]
                stack_t[sp] = t + 1
                sp += 1
        else:
            for k in range(bucket_n[u]):
                x = bucket[u, k]
                if not active[x]:
                    continue
                if cascade:
                    blo, bhi = _bounds(x, t, qd, rec_anc, rec_anc_n, pmax)
                    take = _decide(blo, bhi, lo, hi)
                    if take == 0:
                        continue
                    if take == 1:
                        found[n_found] = x
                        n_found += 1
                        continue
                for i in range(n):
                    seq[i] = pos[perms[x, i]]
                d = _count_inversions(seq, buf)
                calls += 1
                if lo <= d <= hi:
                    found[n_found] = x
                    n_found += 1
    return found[:n_found], calls


def _grow(arr: np.ndarray, size: int, fill=0) -> np.ndarray:
    if arr.shape[0] >= size:
        return arr
    new_cap = max(size, 2 * arr.shape[0], 16)
    out = np.full((new_cap,) + arr.shape[1:], fill, dtype=arr.dtype)
    out[: arr.shape[0]] = arr
    return out


class CascadingMetricTree:
    """Metric tree over equal-length rank lists with ball and ring queries.

    Build with :meth:`build` (records) or :meth:`from_arrays` (a bulk
    ``(N, n)`` permutation array).  ``leaf_size=1`` gives a pure vantage
    tree with one record per node; ``cascade_depth=0`` disables ancestor
    bounds entirely.
    """

    def __init__(self, n: int, *, seed: int = 0, leaf_size: int = 16, cascade_depth: int = 8):
        if n < 2:
            raise ValueError(f"list length must be >= 2, got {n}")
        if leaf_size < 1:
            raise ValueError("leaf_size must be >= 1")
        if cascade_depth < 0:
            raise ValueError("cascade_depth must be >= 0")
        self.n = n
        self.pmax = max_pairs(n)
        self.empty_radius = self.pmax + 1
        self.seed = seed
        self.leaf_size = leaf_size
        self.cascade_depth = cascade_depth
        self._rng = np.random.default_rng(seed)

        self.ids: list = []
        self._slot_of: dict = {}
        self.perms = np.zeros((0, n), np.int16)
        self.active = np.zeros(0, np.bool_)
        self.rec_anc = np.zeros((0, max(cascade_depth, 1)), np.int32)
        self.rec_anc_n = np.zeros(0, np.int32)
        self.n_slots = 0
        self.n_inactive = 0

        self.vantage = np.zeros(0, np.int32)
        self.rmin = np.zeros(0, np.int32)
        self.rmax = np.zeros(0, np.int32)
        self.rinner = np.zeros(0, np.int32)
        self.router = np.zeros(0, np.int32)
        self.inner = np.zeros(0, np.int32)
        self.outer = np.zeros(0, np.int32)
        self.bucket = np.zeros((0, leaf_size), np.int32)
        self.bucket_n = np.zeros(0, np.int32)
        self.n_nodes = 0
        self.root = -1
        self.max_depth = 0
        self.build_calls = 0
        self.insert_calls = 0

    # ------------------------------------------------------------------ build

    @classmethod
    def build(
        cls,
        records: Iterable[UserRecord | tuple],
        seed: int = 0,
        *,
        leaf_size: int = 16,
        cascade_depth: int = 8,
    ) -> "CascadingMetricTree":
        recs = [r if isinstance(r, UserRecord) else UserRecord(*r) for r in records]
        if not recs:
            raise ValueError("cannot build a tree from an empty collection")
        lists = [as_ranklist(r.ranks) for r in recs]
        n = lists[0].shape[0]
        for r, lst in zip(recs, lists):
            if lst.shape[0] != n:
                raise LengthMismatchError(
                    f"user {r.user_id!r} has a list of length {lst.shape[0]}, expected {n}"
                )
        return cls.from_arrays(
            np.stack(lists),
            [r.user_id for r in recs],
            active=[bool(r.active) for r in recs],
            seed=seed,
            leaf_size=leaf_size,
            cascade_depth=cascade_depth,
            validate=False,
        )

    @classmethod
    def from_arrays(
        cls,
        perms: np.ndarray,
        ids: Sequence | None = None,
        *,
        active: Sequence[bool] | None = None,
        seed: int = 0,
        leaf_size: int = 16,
        cascade_depth: int = 8,
        validate: bool = True,
    ) -> "CascadingMetricTree":
        perms = np.ascontiguousarray(perms, dtype=np.int16)
        if perms.ndim != 2 or perms.shape[0] == 0:
            raise ValueError("need a non-empty (N, n) array of permutations")
        N, n = perms.shape
        if validate:
            ok = (np.sort(perms, axis=1) == np.arange(n, dtype=np.int16)).all(axis=1)
            if not ok.all():
                bad = int(np.flatnonzero(~ok)[0])
                raise RankListError(f"row {bad} is not a permutation of 0..{n - 1}")
        ids = list(range(N)) if ids is None else list(ids)
        if len(ids) != N:
            raise ValueError("ids and perms differ in length")
        act = np.ones(N, np.bool_) if active is None else np.asarray(active, np.bool_)

        tree = cls(n, seed=seed, leaf_size=leaf_size, cascade_depth=cascade_depth)
        for i, uid in enumerate(ids):
            if act[i]:
                if uid in tree._slot_of:
                    raise DuplicateUserError(f"duplicate active user_id {uid!r}")
                tree._slot_of[uid] = i
        tree.ids = ids
        tree.perms = perms.copy()
        tree.active = act.copy()
        tree.rec_anc = np.zeros((N, max(cascade_depth, 1)), np.int32)
        tree.rec_anc_n = np.zeros(N, np.int32)
        tree.n_slots = N
        tree.n_inactive = int(N - act.sum())
        tree.root = tree._make(np.arange(N, dtype=np.int32), 0)
        return tree

    @classmethod
    def empty(cls, n: int, **kw) -> "CascadingMetricTree":
        return cls(n, **kw)

    def _new_node(self) -> int:
        u = self.n_nodes
        self.n_nodes += 1
        if u >= self.vantage.shape[0]:
            size = u + 1
            self.vantage = _grow(self.vantage, size, -1)
            self.rmin = _grow(self.rmin, size)
            self.rmax = _grow(self.rmax, size)
            self.rinner = _grow(self.rinner, size)
            self.router = _grow(self.router, size)
            self.inner = _grow(self.inner, size, -1)
            self.outer = _grow(self.outer, size, -1)
            self.bucket = _grow(self.bucket, size, -1)
            self.bucket_n = _grow(self.bucket_n, size)
        self.vantage[u] = -1
        self.inner[u] = -1
        self.outer[u] = -1
        self.bucket_n[u] = 0
        # empty-shell sentinels: no descendant can satisfy them
        self.rmin[u] = self.empty_radius
        self.rmax[u] = -1
        self.rinner[u] = -1
        self.router[u] = self.empty_radius
        return u

    def _push_ancestor(self, slots: np.ndarray, dists: np.ndarray) -> None:
        k = self.cascade_depth
        if k == 0:
            return
        if k > 1:
            self.rec_anc[slots, 1:] = self.rec_anc[slots, :-1]
        self.rec_anc[slots, 0] = dists
        self.rec_anc_n[slots] = np.minimum(self.rec_anc_n[slots] + 1, k)

    def _make(self, slots: np.ndarray, depth: int) -> int:
        self.max_depth = max(self.max_depth, depth)
        m = slots.shape[0]
        u = self._new_node()
        if m == 1:
            self.vantage[u] = slots[0]
            return u
        if m <= self.leaf_size:
            self.bucket[u, :m] = slots
            self.bucket_n[u] = m
            return u
        pick = int(self._rng.integers(m))
        v = int(slots[pick])
        rest = np.delete(slots, pick)
        d = _kt_many(self.perms[v], self.perms[rest])
        self.build_calls += rest.shape[0]
        self._push_ancestor(rest, d)
        order = np.argsort(d, kind="stable")
        k = (rest.shape[0] + 1) // 2
        in_idx, out_idx = order[:k], order[k:]
        self.vantage[u] = v
        self.rmin[u] = d[order[0]]
        self.rmax[u] = d[order[-1]]
        self.rinner[u] = d[in_idx[-1]]
        if out_idx.shape[0]:
            self.router[u] = d[out_idx[0]]
        child = self._make(rest[in_idx], depth + 1)
        self.inner[u] = child
        if out_idx.shape[0]:
            child = self._make(rest[out_idx], depth + 1)
            self.outer[u] = child
        return u

    # ---------------------------------------------------------------- queries

    @property
    def size(self) -> int:
        """Number of records stored in the tree, active or not."""
        return self.n_slots

    @property
    def n_active(self) -> int:
        return self.n_slots - self.n_inactive

    def __len__(self) -> int:
        return self.n_active

    def __contains__(self, user_id) -> bool:
        return user_id in self._slot_of

    def list_of(self, user_id) -> np.ndarray:
        try:
            return self.perms[self._slot_of[user_id]].copy()
        except KeyError:
            raise UnknownUserError(user_id) from None

    def active_items(self):
        """Yield ``(user_id, ranks)`` for every active record in slot order."""
        for s in np.flatnonzero(self.active[: self.n_slots]):
            yield self.ids[s], self.perms[s]

    def _query_list(self, q) -> np.ndarray:
        q = as_ranklist(q)
        if q.shape[0] != self.n:
            raise LengthMismatchError(f"query has length {q.shape[0]}, tree holds {self.n}")
        return q

    def search_raw(self, q, lo: int, hi: int, *, cascade: bool = True) -> tuple[np.ndarray, QueryStats]:
        """Slots of active records with ``lo <= raw distance <= hi``."""
        q = self._query_list(q)
        t0 = time.perf_counter_ns()
        if lo > hi or hi < 0 or lo > self.pmax:
            slots, calls = np.zeros(0, np.int32), 0
        else:
            slots, calls = _search(
                self.perms, self.active, self.rec_anc, self.rec_anc_n,
                self.vantage, self.rmin, self.rmax, self.rinner, self.router,
                self.inner, self.outer, self.bucket, self.bucket_n,
                self.root, self.max_depth, self.n_slots,
                q, max(lo, 0), min(hi, self.pmax), bool(cascade and self.cascade_depth), self.pmax,
            )
        elapsed = time.perf_counter_ns() - t0
        return slots, QueryStats(int(slots.shape[0]), int(calls), elapsed)

    def ball_query(self, q, r: float, *, cascade: bool = True) -> tuple[set, QueryStats]:
        """Active users whose normalized distance to ``q`` is at most ``r``."""
        slots, stats = self.search_raw(q, 0, radius_to_raw(r, self.n), cascade=cascade)
        return {self.ids[s] for s in slots}, stats

    def ring_query(
        self, q, r_lo: float, r_hi: float, *, open_lo: bool = False, cascade: bool = True
    ) -> tuple[set, QueryStats]:
        """Active users with ``r_lo <= distance <= r_hi``.

        ``open_lo=True`` makes the lower edge exclusive, so consecutive
        rings ``[0, a], (a, b], (b, c]`` partition the ball of radius ``c``.
        """
        if r_lo > r_hi:
            raise ValueError(f"r_lo={r_lo} exceeds r_hi={r_hi}")
        hi = radius_to_raw(r_hi, self.n)
        if open_lo:
            lo = radius_to_raw(r_lo, self.n) + 1
        else:
            lo = _radius_to_raw_lower(r_lo, self.n)
        slots, stats = self.search_raw(q, lo, hi, cascade=cascade)
        return {self.ids[s] for s in slots}, stats

    # -------------------------------------------------------------- mutation

    def _new_slot(self, user_id, ranks: np.ndarray) -> int:
        s = self.n_slots
        size = s + 1
        self.perms = _grow(self.perms, size)
        self.active = _grow(self.active, size, False)
        self.rec_anc = _grow(self.rec_anc, size)
        self.rec_anc_n = _grow(self.rec_anc_n, size)
        self.perms[s] = ranks
        self.active[s] = True
        self.rec_anc_n[s] = 0
        self.ids.append(user_id)
        self._slot_of[user_id] = s
        self.n_slots = size
        return s

    def insert(self, record: UserRecord | tuple) -> None:
        """Route a record down by the existing split radii and attach it."""
        if not isinstance(record, UserRecord):
            record = UserRecord(*record)
        ranks = as_ranklist(record.ranks)
        if ranks.shape[0] != self.n:
            raise LengthMismatchError(f"list length {ranks.shape[0]} != tree length {self.n}")
        if record.user_id in self._slot_of:
            raise DuplicateUserError(f"user_id {record.user_id!r} is already active")
        x = self._new_slot(record.user_id, ranks)

        if self.root < 0:
            self.root = self._make(np.array([x], np.int32), 0)
            return

        path: list[int] = []
        u, parent, side, t = self.root, -1, 0, 0
        while True:
            v = self.vantage[u]
            if v < 0:
                self._set_cascade(x, path)
                m = self.bucket_n[u]
                if m < self.leaf_size:
                    self.bucket[u, m] = x
                    self.bucket_n[u] = m + 1
                    return
                slots = np.append(self.bucket[u, :m], np.int32(x))
                self._replace_child(parent, side, self._make(slots, t))
                return
            d = int(_kt_many(self.perms[v], self.perms[x : x + 1])[0])
            self.insert_calls += 1
            path.append(d)
            self.rmin[u] = min(self.rmin[u], d)
            self.rmax[u] = max(self.rmax[u], d)
            if self.inner[u] < 0 or d <= self.rinner[u]:
                side = 0
                self.rinner[u] = max(self.rinner[u], d)
                child = self.inner[u]
            else:
                side = 1
                self.router[u] = min(self.router[u], d)
                child = self.outer[u]
            if child < 0:
                self._set_cascade(x, path)
                self._replace_child(u, side, self._make(np.array([x], np.int32), t + 1))
                return
            parent, u, t = u, child, t + 1

    def _set_cascade(self, x: int, path: list[int]) -> None:
        k = min(self.cascade_depth, len(path))
        if k:
            self.rec_anc[x, :k] = path[::-1][:k]
        self.rec_anc_n[x] = k

    def _replace_child(self, parent: int, side: int, child: int) -> None:
        if parent < 0:
            self.root = child
        elif side == 0:
            self.inner[parent] = child
        else:
            self.outer[parent] = child

    def deactivate(self, user_id) -> None:
        """Hide a user from answers; the record keeps its routing role."""
        try:
            s = self._slot_of.pop(user_id)
        except KeyError:
            raise UnknownUserError(f"no active user {user_id!r}") from None
        self.active[s] = False
        self.n_inactive += 1

    def cleanup(self, seed: int | None = None) -> "CascadingMetricTree":
        """Fresh tree over the active records only."""
        seed = self.seed if seed is None else seed
        keep = np.flatnonzero(self.active[: self.n_slots])
        kw = dict(seed=seed, leaf_size=self.leaf_size, cascade_depth=self.cascade_depth)
        if keep.shape[0] == 0:
            return CascadingMetricTree(self.n, **kw)
        return CascadingMetricTree.from_arrays(
            self.perms[keep], [self.ids[s] for s in keep], validate=False, **kw
        )

    # ---------------------------------------------------------- inspection

    def _walk(self):
        # preorder (node, depth), inner side first
        if self.root < 0:
            return
        stack = [(self.root, 0)]
        while stack:
            u, t = stack.pop()
            yield u, t
            if self.outer[u] >= 0:
                stack.append((self.outer[u], t + 1))
            if self.inner[u] >= 0:
                stack.append((self.inner[u], t + 1))

    def _subtree_slots(self, u: int) -> list[int]:
        out = []
        stack = [u]
        while stack:
            w = stack.pop()
            if self.vantage[w] >= 0:
                out.append(int(self.vantage[w]))
                stack.extend(c for c in (self.inner[w], self.outer[w]) if c >= 0)
            else:
                out.extend(int(s) for s in self.bucket[w, : self.bucket_n[w]])
        return out

    def dump(self) -> str:
        """Deterministic text dump, one node per line.

        Vantage nodes: ``depth user_id r_min r_inner r_outer r_max``, radii
        taken over the non-vantage records below the node, ``-`` when that
        side is empty.  Buckets: ``depth [id,id,...]``.
        """
        lines = ["# depth user_id r_min r_inner r_outer r_max"]
        for u, t in self._walk():
            v = self.vantage[u]
            if v < 0:
                ids = ",".join(str(self.ids[s]) for s in self.bucket[u, : self.bucket_n[u]])
                lines.append(f"{t} [{ids}]")
                continue
            def fmt(val):
                return "-" if val < 0 or val > self.pmax else str(int(val))
            lines.append(
                f"{t} {self.ids[v]} {fmt(self.rmin[u])} {fmt(self.rinner[u])} "
                f"{fmt(self.router[u])} {fmt(self.rmax[u])}"
            )
        return "\n".join(lines) + "\n"

    def verify(self) -> None:
        """Recompute every stored radius and cascade entry; raise on mismatch."""
        from .kendall import kt_distance

        seen = 0
        for u, t in self._walk():
            v = self.vantage[u]
            if v < 0:
                seen += int(self.bucket_n[u])
                continue
            seen += 1
            for side, child in ((0, self.inner[u]), (1, self.outer[u])):
                if child < 0:
                    continue
                for s in self._subtree_slots(child):
                    d = kt_distance(self.perms[v], self.perms[s])
                    assert self.rmin[u] <= d <= self.rmax[u], (u, s, d)
                    if side == 0:
                        assert d <= self.rinner[u], (u, s, d)
                    else:
                        assert d >= self.router[u], (u, s, d)
            if self.inner[u] >= 0 and self.outer[u] >= 0:
                assert self.rmin[u] <= self.rinner[u] <= self.router[u] <= self.rmax[u], u
        assert seen == self.n_slots, (seen, self.n_slots)
        self._verify_cascade()

    def _verify_cascade(self) -> None:
        from .kendall import kt_distance

        def visit(u, path):
            v = self.vantage[u]
            if v < 0:
                members = [int(s) for s in self.bucket[u, : self.bucket_n[u]]]
            else:
                members = [int(v)]
            for s in members:
                k = int(self.rec_anc_n[s])
                assert k == min(self.cascade_depth, len(path)), (s, k, len(path))
                for j in range(k):
                    anc = path[-1 - j]
                    assert self.rec_anc[s, j] == kt_distance(self.perms[anc], self.perms[s])
            if v >= 0:
                for c in (self.inner[u], self.outer[u]):
                    if c >= 0:
                        visit(c, path + [int(v)])

        if self.root >= 0:
            visit(self.root, [])
