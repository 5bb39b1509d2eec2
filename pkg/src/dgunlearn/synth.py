"""Planted triadic-closure event streams.

Event ``i`` happens at time ``i``.  With probability ``p_closure`` it closes
a triangle: a node ``c`` that met at least two distinct partners during the
last ``window`` time units is picked, and two of those partners are linked.
Otherwise a uniformly random pair is linked.  Closure edges connect nodes
that were both active very recently, which a recency-aware encoder can
learn and which generalizes from remaining data to unlearned events.
"""
from __future__ import annotations

from collections import deque

import numpy as np

from . import seeding
from .ctdg import EventLog


def planted_triadic(
    num_nodes: int = 50,
    num_events: int = 2000,
    seed: int = 7,
    window: float = 6.0,
    p_closure: float = 0.85,
    feat_dim: int = 0,
) -> EventLog:
    if num_nodes < 3:
        raise ValueError("need at least 3 nodes")
    rng = seeding.rng(seed, "synth")
    recent: deque[tuple[int, int, float]] = deque()
    src = np.empty(num_events, dtype=np.int64)
    dst = np.empty(num_events, dtype=np.int64)
    for i in range(num_events):
        t = float(i)
        while recent and recent[0][2] < t - window:
            recent.popleft()
        pair = None
        if rng.random() < p_closure and recent:
            partners: dict[int, set[int]] = {}
            for a, b, _ in recent:
                partners.setdefault(a, set()).add(b)
                partners.setdefault(b, set()).add(a)
            hubs = sorted(c for c, ps in partners.items() if len(ps) >= 2)
            if hubs:
                c = hubs[rng.integers(len(hubs))]
                ps = sorted(partners[c])
                u, v = rng.choice(len(ps), size=2, replace=False)
                pair = (ps[u], ps[v])
        if pair is None:
            u, v = rng.choice(num_nodes, size=2, replace=False)
            pair = (int(u), int(v))
        src[i], dst[i] = pair
        recent.append((pair[0], pair[1], t))
    feat = rng.normal(size=(num_events, feat_dim)) if feat_dim else None
    return EventLog(src, dst, np.arange(num_events, dtype=np.float64), feat,
                    num_nodes=num_nodes, feat_dim=feat_dim)
