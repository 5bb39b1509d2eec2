"""Continuous-time dynamic graphs made only of add-edge events.

An :class:`EventLog` stores its events column-wise (numpy arrays) so that
splits, negative sampling and neighbor lookups stay vectorized.  Every event
keeps the ordinal ``idx`` it received in the full, time-sorted log; subsets
(splits, remaining data, unlearning requests) keep those ordinals, which is
how events are identified across the package.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class ParseError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class Event:
    src: int
    dst: int
    time: float
    feat: tuple[float, ...] = ()
    idx: int = -1


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


class EventLog:
    """Time-sorted add-edge events over ``num_nodes`` nodes.

    For bipartite logs, nodes ``[0, num_users)`` are sources and
    ``[num_users, num_nodes)`` are destinations.
    """

    def __init__(
        self,
        src,
        dst,
        time,
        feat=None,
        idx=None,
        num_nodes: int | None = None,
        bipartite: bool = False,
        num_users: int = 0,
        feat_dim: int | None = None,
    ):
        src = np.asarray(src, dtype=np.int64).reshape(-1)
        dst = np.asarray(dst, dtype=np.int64).reshape(-1)
        time = np.asarray(time, dtype=np.float64).reshape(-1)
        n = len(src)
        if feat is None:
            feat = np.zeros((n, feat_dim or 0))
        feat = np.asarray(feat, dtype=np.float64).reshape(n, -1) if n else np.zeros((0, feat_dim or 0))
        if idx is None:
            idx = np.arange(n)
        idx = np.asarray(idx, dtype=np.int64).reshape(-1)
        if not (len(dst) == len(time) == len(idx) == n):
            raise ValueError("event columns have different lengths")
        if n and np.any(src == dst):
            raise DomainError("self-loop events (src == dst) are not allowed")
        if n and np.any(time < 0):
            raise DomainError("timestamps must be non-negative")
        if n and (np.any(np.diff(time) < 0) or np.any(np.diff(idx) <= 0)):
            raise ValueError("events must be sorted by time with strictly increasing idx")
        if num_nodes is None:
            num_nodes = int(max(src.max(initial=-1), dst.max(initial=-1)) + 1)
        if n and max(src.max(), dst.max()) >= num_nodes:
            raise DomainError("node id out of range")
        self.src = _frozen(src)
        self.dst = _frozen(dst)
        self.time = _frozen(time)
        self.feat = _frozen(feat)
        self.idx = _frozen(idx)
        self.num_nodes = int(num_nodes)
        self.bipartite = bool(bipartite)
        self.num_users = int(num_users)

    @property
    def feat_dim(self) -> int:
        return self.feat.shape[1]

    def __len__(self) -> int:
        return len(self.src)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.src[i]), int(self.dst[i]), float(self.time[i]),
                     tuple(float(x) for x in self.feat[i]), int(self.idx[i]))

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventLog):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and self.bipartite == other.bipartite
            and self.num_users == other.num_users
            and self.feat_dim == other.feat_dim
            and all(np.array_equal(getattr(self, c), getattr(other, c))
                    for c in ("src", "dst", "time", "feat", "idx"))
        )

    def __repr__(self) -> str:
        return (f"EventLog(n={len(self)}, num_nodes={self.num_nodes}, "
                f"feat_dim={self.feat_dim}, bipartite={self.bipartite})")

    def _like(self, src, dst, time, feat, idx) -> "EventLog":
        return EventLog(src, dst, time, feat, idx, num_nodes=self.num_nodes,
                        bipartite=self.bipartite, num_users=self.num_users,
                        feat_dim=self.feat_dim)

    def take(self, positions) -> "EventLog":
        """Sub-log at the given positions (a boolean mask or sorted positions)."""
        p = np.asarray(positions)
        if p.dtype != bool:
            p = np.sort(p.astype(np.int64))
        return self._like(self.src[p], self.dst[p], self.time[p], self.feat[p], self.idx[p])

    def without(self, idx: Iterable[int]) -> "EventLog":
        drop = np.fromiter(idx, dtype=np.int64)
        return self.take(~np.isin(self.idx, drop))

    def only(self, idx: Iterable[int]) -> "EventLog":
        keep = np.fromiter(idx, dtype=np.int64)
        return self.take(np.isin(self.idx, keep))

    def with_dst(self, dst) -> "EventLog":
        """Same events with destinations replaced (used for negative instances)."""
        return EventLog(self.src, dst, self.time, self.feat, self.idx, num_nodes=self.num_nodes,
                        bipartite=self.bipartite, num_users=self.num_users, feat_dim=self.feat_dim)

    @classmethod
    def concat(cls, logs: Sequence["EventLog"]) -> "EventLog":
        first = logs[0]
        order_src = [np.concatenate([getattr(lg, c) for lg in logs]) for c in ("src", "dst", "time", "feat", "idx")]
        src, dst, time, feat, idx = order_src
        order = np.lexsort((idx, time))
        return EventLog(src[order], dst[order], time[order], feat[order], idx[order],
                        num_nodes=first.num_nodes, bipartite=first.bipartite,
                        num_users=first.num_users, feat_dim=first.feat_dim)

    def triples(self) -> set[tuple[int, int, float]]:
        return set(zip(self.src.tolist(), self.dst.tolist(), self.time.tolist()))

    def dst_candidates(self) -> np.ndarray:
        if self.bipartite:
            return np.arange(self.num_users, self.num_nodes)
        return np.arange(self.num_nodes)

    # -- text round-trip -------------------------------------------------

    def to_tsv(self) -> str:
        lines = [
            f"# num_nodes={self.num_nodes}\tfeat_dim={self.feat_dim}"
            f"\tbipartite={int(self.bipartite)}\tnum_users={self.num_users}"
        ]
        for i in range(len(self)):
            cols = [str(int(self.idx[i])), str(int(self.src[i])), str(int(self.dst[i])),
                    repr(float(self.time[i]))]
            cols += [repr(float(x)) for x in self.feat[i]]
            lines.append("\t".join(cols))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "EventLog":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#"):
            raise ParseError("line 1: missing metadata header")
        meta = dict(kv.split("=") for kv in lines[0][1:].strip().split("\t"))
        rows = [ln.split("\t") for ln in lines[1:] if ln]
        fd = int(meta["feat_dim"])
        if rows:
            arr = np.array([[float(x) for x in r] for r in rows])
        else:
            arr = np.zeros((0, 4 + fd))
        return cls(arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4:], arr[:, 0],
                   num_nodes=int(meta["num_nodes"]), bipartite=meta["bipartite"] == "1",
                   num_users=int(meta["num_users"]), feat_dim=fd)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_tsv())

    @classmethod
    def load(cls, path: str | Path) -> "EventLog":
        return cls.from_tsv(Path(path).read_text())


def from_events(events: Sequence[Event], num_nodes: int | None = None, bipartite: bool = False,
                num_users: int = 0, feat_dim: int | None = None) -> EventLog:
    """Build a log from Event records, sorting stably by time and renumbering idx."""
    events = list(events)
    if feat_dim is None:
        feat_dim = len(events[0].feat) if events else 0
    order = sorted(range(len(events)), key=lambda i: events[i].time)
    ev = [events[i] for i in order]
    feat = np.array([e.feat for e in ev], dtype=np.float64).reshape(len(ev), feat_dim)
    return EventLog([e.src for e in ev], [e.dst for e in ev], [e.time for e in ev], feat,
                    num_nodes=num_nodes, bipartite=bipartite, num_users=num_users, feat_dim=feat_dim)


def parse_event_csv(path: str | Path, format: str = "generic", bipartite: bool | None = None) -> EventLog:  # noqa: A002
    """Read a CSV event file.

    ``jodie`` rows are ``user_id,item_id,timestamp,state_label,f0,f1,...``
    (the state label is ignored); ``generic`` rows are ``src,dst,time[,f0,...]``.
    Jodie logs are bipartite by default, with item ids shifted past the users.
    """
    if format not in ("jodie", "generic"):
        raise ValueError(f"unknown format {format!r}")
    lead = 4 if format == "jodie" else 3
    if bipartite is None:
        bipartite = format == "jodie"
    src, dst, time, feats = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("line 1: missing header row") from None
        width = None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < lead:
                raise ParseError(f"line {lineno}: expected at least {lead} columns, got {len(row)}")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(f"line {lineno}: expected {width} columns, got {len(row)}")
            try:
                s, d = int(float(row[0])), int(float(row[1]))
                t = float(row[2])
                f = [float(x) for x in row[lead:]]
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            if not math.isfinite(t):
                raise ParseError(f"line {lineno}: non-finite timestamp")
            if t < 0:
                raise DomainError(f"line {lineno}: negative timestamp {t}")
            if s < 0 or d < 0:
                raise DomainError(f"line {lineno}: negative node id")
            src.append(s)
            dst.append(d)
            time.append(t)
            feats.append(f)
    feat_dim = (width if width is not None else len(header)) - lead
    feat_dim = max(feat_dim, 0)
    src = np.array(src, dtype=np.int64)
    dst = np.array(dst, dtype=np.int64)
    num_users = 0
    if bipartite and len(src):
        num_users = int(src.max()) + 1
        dst = dst + num_users
    num_nodes = int(max(src.max(initial=-1), dst.max(initial=-1)) + 1)
    time = np.array(time, dtype=np.float64)
    feat = np.array(feats, dtype=np.float64).reshape(len(src), feat_dim)
    order = np.argsort(time, kind="stable")
    return EventLog(src[order], dst[order], time[order], feat[order],
                    num_nodes=num_nodes, bipartite=bipartite, num_users=num_users, feat_dim=feat_dim)


# -- splitting -------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train: EventLog
    val: EventLog
    test: EventLog
    boundaries: tuple[float, float]


def chronological_split(log: EventLog, ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)) -> SplitSpec:
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    n = len(log)
    if n < 3:
        raise ValueError(f"need at least 3 events to split, got {n}")
    n_train = math.floor(ratios[0] * n)
    n_val = math.floor(ratios[1] * n)
    if n_train == 0 or n_val == 0 or n - n_train - n_val == 0:
        raise ValueError(f"ratios {ratios} leave an empty split for {n} events")
    pos = np.arange(n)
    train = log.take(pos[:n_train])
    val = log.take(pos[n_train:n_train + n_val])
    test = log.take(pos[n_train + n_val:])
    return SplitSpec(train, val, test, (float(val.time[0]), float(test.time[0])))


# -- temporal neighbors ----------------------------------------------------

class TemporalNeighborIndex:
    """Per-node interaction history, both directions, sorted by (time, idx)."""

    def __init__(self, log: EventLog, exclude: Iterable[int] = ()):
        exclude = np.fromiter(exclude, dtype=np.int64)
        keep = ~np.isin(log.idx, exclude) if len(exclude) else np.ones(len(log), dtype=bool)
        src, dst, t = log.src[keep], log.dst[keep], log.time[keep]
        eidx, feat = log.idx[keep], log.feat[keep]
        node = np.concatenate([src, dst])
        nbr = np.concatenate([dst, src])
        tt = np.concatenate([t, t])
        ee = np.concatenate([eidx, eidx])
        row = np.concatenate([np.arange(len(src)), np.arange(len(src))])
        order = np.lexsort((ee, tt, node))
        node, nbr, tt, ee, row = node[order], nbr[order], tt[order], ee[order], row[order]
        self.feat_dim = log.feat_dim
        self.num_nodes = log.num_nodes
        self._hist: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = {}
        if len(node):
            cuts = np.flatnonzero(np.diff(node)) + 1
            for chunk in np.split(np.arange(len(node)), cuts):
                n = int(node[chunk[0]])
                self._hist[n] = (tt[chunk], nbr[chunk], ee[chunk], feat[row[chunk]])
        self.excluded = frozenset(exclude.tolist())
        self.size = int(keep.sum())

    def history(self, node: int):
        return self._hist.get(int(node))

    def recent(self, node: int, t: float, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Arrays (times, nbrs, eidx, feats) of up to ``k`` records before ``t``, newest first."""
        h = self._hist.get(int(node))
        if h is None:
            empty = np.zeros(0)
            return empty, empty.astype(np.int64), empty.astype(np.int64), np.zeros((0, self.feat_dim))
        times, nbrs, eidx, feats = h
        hi = int(np.searchsorted(times, t, side="left"))
        lo = max(0, hi - k)
        return times[lo:hi][::-1], nbrs[lo:hi][::-1], eidx[lo:hi][::-1], feats[lo:hi][::-1]


def recent_neighbors(index: TemporalNeighborIndex, node: int, t: float, k: int) -> list[tuple[int, float, int]]:
    """Up to ``k`` (neighbor, time, event idx) records strictly before ``t``, newest first."""
    if k < 1:
        raise ValueError("K must be >= 1")
    times, nbrs, eidx, _ = index.recent(node, t, k)
    return [(int(n), float(tt), int(e)) for n, tt, e in zip(nbrs, times, eidx)]


# -- sampling --------------------------------------------------------------

def _draw_destinations(log: EventLog, rng: np.random.Generator, avoid: np.ndarray) -> np.ndarray:
    cand = log.dst_candidates()
    n = len(log)
    out = cand[rng.integers(0, len(cand), size=n)]
    bad = (out == avoid) | (out == log.src)
    while bad.any():
        out[bad] = cand[rng.integers(0, len(cand), size=int(bad.sum()))]
        bad = (out == avoid) | (out == log.src)
    return out


def sample_negatives(log: EventLog, seed) -> EventLog:
    """One negative per event: same src and time, uniformly resampled dst."""
    if log.num_nodes < 2:
        raise DomainError("negative sampling needs at least two nodes")
    cand = log.dst_candidates()
    min_choices = len(cand) - 1 if log.bipartite else len(cand) - 2
    if min_choices < 1:
        raise DomainError("only one possible destination; cannot sample negatives")
    rng = np.random.default_rng(seed)
    return log.with_dst(_draw_destinations(log, rng, log.dst))


@dataclass(frozen=True)
class UnlearnRequest:
    """Events to forget (``ul``), what remains of training (``re``), the
    sampled seeds, and never-occurred counterpart events."""

    ul: EventLog
    re: EventLog
    initial: EventLog
    counterparts: EventLog | None = None
    skipped_counterparts: int = 0
    params: dict = field(default_factory=dict)

    @property
    def ul_idx(self) -> frozenset[int]:
        return frozenset(self.ul.idx.tolist())


def ul_closure(train: EventLog, seed_idx: Iterable[int], depth: int, k: int,
               index: TemporalNeighborIndex | None = None) -> set[int]:
    """Seeds plus ``depth`` rounds of recent-``k`` neighbor events of every endpoint."""
    index = index or TemporalNeighborIndex(train)
    pos_of = {int(e): p for p, e in enumerate(train.idx)}
    ul = set(int(i) for i in seed_idx)
    frontier = sorted(ul)
    for _ in range(depth):
        new: set[int] = set()
        for e in frontier:
            p = pos_of[e]
            t = float(train.time[p])
            for node in (train.src[p], train.dst[p]):
                _, _, eidx, _ = index.recent(int(node), t, k)
                new.update(int(x) for x in eidx)
        new -= ul
        if not new:
            break
        ul |= new
        frontier = sorted(new)
    return ul


def sample_unlearning_request(train: EventLog, m: int, depth: int = 1, k: int = 10, seed=0) -> UnlearnRequest:
    if not 1 <= m <= len(train):
        raise ValueError(f"m must lie in [1, {len(train)}], got {m}")
    if depth < 0:
        raise ValueError("depth must be >= 0")
    rng = np.random.default_rng(seed)
    seeds = np.sort(rng.choice(len(train), size=m, replace=False))
    seed_idx = train.idx[seeds]
    ul = ul_closure(train, seed_idx.tolist(), depth, k)
    return UnlearnRequest(
        ul=train.only(ul),
        re=train.without(ul),
        initial=train.take(seeds),
        params={"m": m, "depth": depth, "K": k},
    )


def sample_counterparts(req: UnlearnRequest, log: EventLog, seed) -> tuple[EventLog, int]:
    """One never-occurred event per unlearned event: keep src and time,
    resample dst.  Returns the counterparts and how many events were skipped
    after ``num_nodes`` failed attempts."""
    cand = log.dst_candidates()
    if len(cand) < 2:
        raise DomainError("counterpart sampling needs at least two candidate destinations")
    seen = log.triples()
    rng = np.random.default_rng(seed)
    ul = req.ul
    keep, dsts, skipped = [], [], 0
    for p in range(len(ul)):
        s, t = int(ul.src[p]), float(ul.time[p])
        for _ in range(log.num_nodes):
            d = int(cand[rng.integers(len(cand))])
            if d != s and (s, d, t) not in seen:
                keep.append(p)
                dsts.append(d)
                break
        else:
            skipped += 1
    if skipped:
        logger.warning("%d unlearned events had no valid counterpart", skipped)
    keep = np.array(keep, dtype=np.int64)
    sub = ul.take(keep) if len(keep) else ul.take(np.zeros(len(ul), dtype=bool))
    return sub.with_dst(np.array(dsts, dtype=np.int64)), skipped


def with_counterparts(req: UnlearnRequest, log: EventLog, seed) -> UnlearnRequest:
    cp, skipped = sample_counterparts(req, log, seed)
    return UnlearnRequest(req.ul, req.re, req.initial, cp, skipped, dict(req.params))
