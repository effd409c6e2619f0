"""Compatibility-match service over a cascading metric tree.

Users register a ranking of a fixed item vocabulary.  Updating a ranking
soft-deletes the old record and inserts a new one; once the share of
inactive records passes ``cleanup_threshold`` the tree is rebuilt.

Wire protocol: one request per line, tab-separated fields, one response line.

    REGISTER <uid> <item> <item> ...     -> OK
    UPDATE   <uid> <item> <item> ...     -> OK
    MATCH    <uid> <r>                   -> OK <count> (<uid> <dist>)*
    RING     <uid> <r_lo> <r_hi> [open]  -> OK <count> (<uid> <dist>)*
    SNAPSHOT [<path>]                    -> OK <path>
    STATS                                -> OK <active> <inactive>

Errors come back as ``ERR <code> <message>``.
"""
from __future__ import annotations

import logging
import os
import socketserver
import tempfile
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .kendall import _kt_many, max_pairs
from .mtree import (
    CascadingMetricTree,
    DuplicateUserError,
    UnknownUserError,
    UserRecord,
    _radius_to_raw_lower,
    radius_to_raw,
)

log = logging.getLogger(__name__)

SNAPSHOT_MAGIC = "ktsearch-snapshot"
SNAPSHOT_VERSION = 1


class ServiceError(Exception):
    code = "error"


class BadListError(ServiceError):
    code = "bad_list"


class UnknownUser(ServiceError):
    code = "unknown_user"


class DuplicateUser(ServiceError):
    code = "duplicate_user"


class BadRequest(ServiceError):
    code = "bad_request"


class CorruptSnapshot(ServiceError):
    code = "corrupt_snapshot"


class RWLock:
    """Many concurrent readers or one writer."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writing = False

    @contextmanager
    def read(self):
        with self._cond:
            while self._writing:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if not self._readers:
                    self._cond.notify_all()

    @contextmanager
    def write(self):
        with self._cond:
            while self._writing or self._readers:
                self._cond.wait()
            self._writing = True
        try:
            yield
        finally:
            with self._cond:
                self._writing = False
                self._cond.notify_all()


def _check_token(value: str, what: str) -> str:
    if not value or value != value.strip() or any(c in value for c in "\t\n\r"):
        raise BadRequest(f"invalid {what} {value!r}")
    return value


@dataclass
class ServiceConfig:
    listen: str = "127.0.0.1:7878"
    vocabulary: str = ""
    cleanup_threshold: float = 0.25
    seed: int = 0
    snapshot: str = ""

    @classmethod
    def from_text(cls, text: str) -> "ServiceConfig":
        kw = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"expected key=value, got {raw!r}")
            kw[key.strip()] = value.strip()
        if "cleanup_threshold" in kw:
            kw["cleanup_threshold"] = float(kw["cleanup_threshold"])
        if "seed" in kw:
            kw["seed"] = int(kw["seed"])
        return cls(**kw)

    @property
    def address(self) -> tuple[str, int]:
        host, _, port = self.listen.rpartition(":")
        return host or "127.0.0.1", int(port)


def read_vocabulary(path) -> list[str]:
    return [line.rstrip("\n") for line in Path(path).read_text().splitlines() if line.strip()]


class MatchService:
    def __init__(
        self,
        vocabulary: Sequence[str],
        *,
        cleanup_threshold: float = 0.25,
        seed: int = 0,
        snapshot_path: str | os.PathLike | None = None,
        leaf_size: int = 16,
        cascade_depth: int = 8,
    ):
        vocabulary = [_check_token(v, "item name") for v in vocabulary]
        if len(vocabulary) < 2:
            raise ValueError("vocabulary needs at least 2 items")
        if len(set(vocabulary)) != len(vocabulary):
            raise ValueError("vocabulary has duplicate items")
        if not 0.0 <= cleanup_threshold <= 1.0:
            raise ValueError("cleanup_threshold must be in [0, 1]")
        self.vocabulary = list(vocabulary)
        self._index = {name: i for i, name in enumerate(self.vocabulary)}
        self.cleanup_threshold = cleanup_threshold
        self.seed = seed
        self.snapshot_path = snapshot_path
        self._tree_kw = dict(seed=seed, leaf_size=leaf_size, cascade_depth=cascade_depth)
        self.tree = CascadingMetricTree(len(self.vocabulary), **self._tree_kw)
        self.cleanups = 0
        self._lock = RWLock()

    # ---------------------------------------------------------------- state

    @property
    def n(self) -> int:
        return len(self.vocabulary)

    @property
    def inactive_fraction(self) -> float:
        return self.tree.n_inactive / self.tree.size if self.tree.size else 0.0

    def records(self) -> list[UserRecord]:
        t = self.tree
        return [UserRecord(t.ids[s], t.perms[s].copy(), bool(t.active[s])) for s in range(t.size)]

    def ranks_of(self, names: Sequence[str]) -> np.ndarray:
        """Translate a ranked list of item names into an index permutation."""
        try:
            idx = [self._index[name] for name in names]
        except KeyError as exc:
            raise BadListError(f"unknown item {exc.args[0]!r}") from None
        if len(set(idx)) != len(idx):
            raise BadListError("an item is listed more than once")
        if len(idx) != self.n:
            missing = sorted(set(self.vocabulary) - set(names))
            raise BadListError(f"list must rank all {self.n} items; missing {missing}")
        return np.asarray(idx, dtype=np.int16)

    # ----------------------------------------------------------- mutations

    def register(self, user_id: str, names: Sequence[str]) -> None:
        user_id = _check_token(str(user_id), "user id")
        ranks = self.ranks_of(names)
        with self._lock.write():
            try:
                self.tree.insert(UserRecord(user_id, ranks))
            except DuplicateUserError:
                raise DuplicateUser(f"user {user_id!r} already registered") from None
            self._persist()

    def update(self, user_id: str, names: Sequence[str]) -> None:
        ranks = self.ranks_of(names)
        with self._lock.write():
            try:
                self.tree.deactivate(user_id)
            except UnknownUserError:
                raise UnknownUser(f"no active user {user_id!r}") from None
            self.tree.insert(UserRecord(user_id, ranks))
            if self.inactive_fraction > self.cleanup_threshold:
                self._cleanup()
            self._persist()

    def cleanup(self) -> None:
        with self._lock.write():
            self._cleanup()
            self._persist()

    def _cleanup(self) -> None:
        before = self.tree.size
        self.tree = self.tree.cleanup()
        self.cleanups += 1
        log.info("cleanup: %d -> %d records", before, self.tree.size)

    # -------------------------------------------------------------- queries

    def match(
        self,
        user_id: str,
        r: float | None = None,
        *,
        r_lo: float = 0.0,
        r_hi: float | None = None,
        open_lo: bool = False,
    ) -> list[tuple[str, float]]:
        """Other users within ``r`` (or the ring ``[r_lo, r_hi]``) of ``user_id``.

        Sorted by distance, then user id.
        """
        if r_hi is None:
            r_hi = r
        if r_hi is None:
            raise BadRequest("a radius is required")
        if r is not None and r_lo != 0.0:
            raise BadRequest("give either r or r_lo/r_hi")
        try:
            if r_lo > r_hi:
                raise ValueError(f"r_lo={r_lo} exceeds r_hi={r_hi}")
            hi = radius_to_raw(r_hi, self.n)
            lo = radius_to_raw(r_lo, self.n) + 1 if open_lo else _radius_to_raw_lower(r_lo, self.n)
        except ValueError as exc:
            raise BadRequest(str(exc)) from None
        with self._lock.read():
            tree = self.tree
            if user_id not in tree:
                raise UnknownUser(f"no active user {user_id!r}")
            q = tree.list_of(user_id)
            slots, _ = tree.search_raw(q, lo, hi)
            slots = slots[[tree.ids[s] != user_id for s in slots]] if slots.size else slots
            raw = _kt_many(q, tree.perms[slots]) if slots.size else np.zeros(0, np.int32)
            hits = sorted((int(d), tree.ids[s]) for d, s in zip(raw, slots))
        total = max_pairs(self.n)
        return [(uid, d / total) for d, uid in hits]

    # ----------------------------------------------------------- persistence

    def snapshot_text(self) -> str:
        with self._lock.read():
            return self._snapshot_text()

    def _snapshot_text(self) -> str:
        lines = [f"{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION}", f"vocabulary {self.n}"]
        lines.extend(self.vocabulary)
        t = self.tree
        lines.append(f"records {t.size}")
        for s in range(t.size):
            perm = " ".join(str(int(v)) for v in t.perms[s])
            lines.append(f"{t.ids[s]}\t{int(t.active[s])}\t{perm}")
        return "\n".join(lines) + "\n"

    def snapshot(self, path=None) -> str:
        path = path or self.snapshot_path
        if not path:
            raise BadRequest("no snapshot path configured")
        with self._lock.read():
            _atomic_write(path, self._snapshot_text())
        return str(path)

    def _persist(self) -> None:
        if self.snapshot_path:
            _atomic_write(self.snapshot_path, self._snapshot_text())

    @classmethod
    def restore(cls, path, **kw) -> "MatchService":
        return cls.from_snapshot_text(Path(path).read_text(), snapshot_path=kw.pop("snapshot_path", path), **kw)

    @classmethod
    def from_snapshot_text(cls, text: str, **kw) -> "MatchService":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        try:
            magic, version = lines[0].split(" ")
            if magic != SNAPSHOT_MAGIC or int(version) != SNAPSHOT_VERSION:
                raise CorruptSnapshot(f"unsupported snapshot header {lines[0]!r}")
            tag, k = lines[1].split(" ")
            if tag != "vocabulary":
                raise CorruptSnapshot("missing vocabulary block")
            k = int(k)
            vocab = lines[2 : 2 + k]
            tag, m = lines[2 + k].split(" ")
            if tag != "records":
                raise CorruptSnapshot("missing records block")
            m = int(m)
            body = lines[3 + k :]
            if len(body) != m:
                raise CorruptSnapshot(f"expected {m} records, found {len(body)}")
            ids, perms, active = [], [], []
            for row in body:
                uid, flag, perm = row.split("\t")
                if flag not in ("0", "1"):
                    raise CorruptSnapshot(f"bad active flag {flag!r}")
                ids.append(uid)
                active.append(flag == "1")
                perms.append([int(v) for v in perm.split(" ")])
        except CorruptSnapshot:
            raise
        except (ValueError, IndexError) as exc:
            raise CorruptSnapshot(f"unreadable snapshot: {exc}") from None

        svc = cls(vocab, **kw)
        if m:
            arr = np.asarray(perms, dtype=np.int64)
            if arr.shape[1] != k:
                raise CorruptSnapshot("record length does not match vocabulary")
            try:
                svc.tree = CascadingMetricTree.from_arrays(arr, ids, active=active, **svc._tree_kw)
            except ValueError as exc:
                raise CorruptSnapshot(str(exc)) from None
        return svc

    # -------------------------------------------------------------- protocol

    def handle(self, line: str) -> str:
        """Answer one protocol request line (without trailing newline)."""
        parts = line.rstrip("\r\n").split("\t")
        verb = parts[0].upper()
        try:
            if verb in ("REGISTER", "UPDATE"):
                if len(parts) < 3:
                    raise BadRequest(f"usage: {verb} <uid> <item>...")
                (self.register if verb == "REGISTER" else self.update)(parts[1], parts[2:])
                return "OK"
            if verb == "MATCH":
                if len(parts) != 3:
                    raise BadRequest("usage: MATCH <uid> <r>")
                return _format_hits(self.match(parts[1], _radius(parts[2])))
            if verb == "RING":
                if len(parts) not in (4, 5) or (len(parts) == 5 and parts[4] != "open"):
                    raise BadRequest("usage: RING <uid> <r_lo> <r_hi> [open]")
                hits = self.match(parts[1], r_lo=_radius(parts[2]), r_hi=_radius(parts[3]),
                                  open_lo=len(parts) == 5)
                return _format_hits(hits)
            if verb == "SNAPSHOT":
                if len(parts) > 2:
                    raise BadRequest("usage: SNAPSHOT [<path>]")
                return "OK\t" + self.snapshot(parts[1] if len(parts) == 2 else None)
            if verb == "STATS":
                with self._lock.read():
                    return f"OK\t{self.tree.n_active}\t{self.tree.n_inactive}"
            raise BadRequest(f"unknown verb {parts[0]!r}")
        except ServiceError as exc:
            return f"ERR\t{exc.code}\t{exc}"


def _radius(tok: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise BadRequest(f"not a number: {tok!r}") from None


def _format_hits(hits) -> str:
    fields = ["OK", str(len(hits))]
    for uid, d in hits:
        fields.extend((uid, repr(d)))
    return "\t".join(fields)


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").rstrip("\r\n")
            if not line:
                continue
            reply = self.server.service.handle(line)
            self.wfile.write((reply + "\n").encode("utf-8"))
            self.wfile.flush()


class MatchServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, service: MatchService):
        self.service = service
        super().__init__(address, _Handler)


def service_from_config(cfg: ServiceConfig) -> MatchService:
    kw = dict(cleanup_threshold=cfg.cleanup_threshold, seed=cfg.seed)
    if cfg.snapshot and Path(cfg.snapshot).exists():
        svc = MatchService.restore(cfg.snapshot, **kw)
        if cfg.vocabulary and read_vocabulary(cfg.vocabulary) != svc.vocabulary:
            raise ValueError("snapshot vocabulary differs from the configured vocabulary")
        return svc
    if not cfg.vocabulary:
        raise ValueError("a vocabulary file is required")
    return MatchService(read_vocabulary(cfg.vocabulary), snapshot_path=cfg.snapshot or None, **kw)


def serve(cfg: ServiceConfig) -> None:
    svc = service_from_config(cfg)
    with MatchServer(cfg.address, svc) as server:
        log.info("listening on %s:%d", *server.server_address)
        server.serve_forever()
