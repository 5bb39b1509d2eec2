import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_log
from dgunlearn.ctdg import (DomainError, Event, EventLog, ParseError, TemporalNeighborIndex,
                            UnlearnRequest, chronological_split, from_events, parse_event_csv,
                            recent_neighbors, sample_counterparts, sample_negatives,
                            sample_unlearning_request, ul_closure, with_counterparts)


def write(tmp_path, text, name="events.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- parsing -------------------------------------------------------------------

def test_parse_single_generic_row(tmp_path):
    log = parse_event_csv(write(tmp_path, "src,dst,time,f0\n0,100,5.0,0.5\n"))
    assert len(log) == 1
    e = log[0]
    assert (e.src, e.dst, e.time, e.feat) == (0, 100, 5.0, (0.5,))


def test_parse_header_only_infers_feat_dim(tmp_path):
    log = parse_event_csv(write(tmp_path, "src,dst,time,f0,f1\n"))
    assert len(log) == 0
    assert log.feat_dim == 2


def test_parse_sorts_stably_by_time(tmp_path):
    log = parse_event_csv(write(tmp_path, "src,dst,time\n0,1,5.0\n2,3,3.0\n1,2,5.0\n"))
    assert log.time.tolist() == [3.0, 5.0, 5.0]
    assert [(e.src, e.dst) for e in log] == [(2, 3), (0, 1), (1, 2)]


def test_parse_keeps_duplicate_rows(tmp_path):
    log = parse_event_csv(write(tmp_path, "src,dst,time\n0,1,2.0\n0,1,2.0\n"))
    assert len(log) == 2


def test_parse_malformed_row_reports_line(tmp_path):
    with pytest.raises(ParseError, match="line 3"):
        parse_event_csv(write(tmp_path, "src,dst,time\n0,1,2.0\n0,x,3.0\n"))


def test_parse_negative_timestamp_is_domain_error(tmp_path):
    with pytest.raises(DomainError):
        parse_event_csv(write(tmp_path, "src,dst,time\n0,1,-2.0\n"))


def test_parse_jodie_offsets_items(tmp_path):
    text = "user_id,item_id,timestamp,state_label,f0\n0,0,1.0,0,0.1\n1,1,2.0,0,0.2\n1,0,3.0,1,0.3\n"
    log = parse_event_csv(write(tmp_path, text), format="jodie")
    assert log.bipartite and log.num_users == 2
    assert log.dst.tolist() == [2, 3, 2]
    assert log.num_nodes == 4
    assert log.feat[:, 0].tolist() == [0.1, 0.2, 0.3]


def test_eventlog_rejects_self_loops_and_unsorted():
    with pytest.raises(DomainError):
        EventLog([0], [0], [1.0])
    with pytest.raises(ValueError):
        EventLog([0, 1], [1, 2], [2.0, 1.0])


def test_tsv_round_trip(small_log):
    assert EventLog.from_tsv(small_log.to_tsv()) == small_log


# -- splitting -------------------------------------------------------------------

@pytest.mark.parametrize("n, sizes", [(100, (70, 15, 15)), (10, (7, 1, 2))])
def test_split_sizes(n, sizes):
    sp = chronological_split(random_log(n, 5))
    assert (len(sp.train), len(sp.val), len(sp.test)) == sizes


def test_split_too_small():
    with pytest.raises(ValueError):
        chronological_split(random_log(2, 5))


@given(st.integers(3, 200), st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_split_partition(n, seed):
    log = random_log(n, 6, seed=seed)
    try:
        sp = chronological_split(log)
    except ValueError:
        assert n < 10
        return
    joined = np.concatenate([sp.train.idx, sp.val.idx, sp.test.idx])
    assert joined.tolist() == log.idx.tolist()
    assert sp.train.time.max() <= sp.val.time.min() <= sp.val.time.max() <= sp.test.time.min()


# -- neighbors -------------------------------------------------------------------

@pytest.fixture
def star():
    # a=0 meets b=1, c=2, d=3 at times 1, 2, 3
    return EventLog([0, 0, 0], [1, 2, 3], [1.0, 2.0, 3.0])


def test_recent_neighbors_newest_first(star):
    idx = TemporalNeighborIndex(star)
    assert [(n, t) for n, t, _ in recent_neighbors(idx, 0, 3.5, 2)] == [(3, 3.0), (2, 2.0)]


def test_recent_neighbors_strict(star):
    assert recent_neighbors(TemporalNeighborIndex(star), 0, 1.0, 2) == []


def test_recent_neighbors_k_exceeds_supply(star):
    assert len(recent_neighbors(TemporalNeighborIndex(star), 0, 10.0, 99)) == 3


def test_recent_neighbors_unknown_node(star):
    assert recent_neighbors(TemporalNeighborIndex(star), 42, 10.0, 3) == []


def test_index_exclusion(star):
    idx = TemporalNeighborIndex(star, exclude=[2])
    assert [n for n, _, _ in recent_neighbors(idx, 0, 10.0, 5)] == [2, 1]


@given(st.integers(0, 10_000), st.floats(0, 60), st.integers(1, 12))
@settings(max_examples=50, deadline=None)
def test_recent_neighbors_matches_brute_force(seed, t, k):
    log = random_log(40, 6, seed=seed, integer_times=False)
    idx = TemporalNeighborIndex(log)
    node = seed % 6
    brute = sorted(((e.time, e.idx, e.dst if e.src == node else e.src) for e in log
                    if node in (e.src, e.dst) and e.time < t), reverse=True)[:k]
    got = recent_neighbors(idx, node, t, k)
    assert [(n, tt, i) for tt, i, n in brute] == got


# -- negatives -----------------------------------------------------------------

def test_negative_avoids_true_dst():
    log = EventLog([0], [1], [1.0], num_nodes=4)
    neg = sample_negatives(log, 5)
    assert neg.dst[0] not in (0, 1)
    assert neg.src[0] == 0 and neg.time[0] == 1.0


def test_negatives_deterministic(small_log):
    assert sample_negatives(small_log, 3) == sample_negatives(small_log, 3)


def test_negatives_bipartite_draws_items():
    log = EventLog([0, 1, 2, 0], [3, 4, 5, 6], [0.0, 1.0, 2.0, 3.0], num_nodes=7,
                   bipartite=True, num_users=3)
    neg = sample_negatives(log, 0)
    assert np.all(neg.dst >= 3)
    assert np.all(neg.dst != log.dst)


def test_negatives_single_destination_is_error():
    log = EventLog([0], [1], [0.0], num_nodes=2, bipartite=True, num_users=1)
    with pytest.raises(DomainError):
        sample_negatives(log, 0)


# -- unlearning requests ---------------------------------------------------------

def test_depth_zero_is_seeds(small_log):
    req = sample_unlearning_request(small_log, 5, depth=0, k=3, seed=1)
    assert req.ul == req.initial and len(req.ul) == 5


def test_chain_closure():
    # chain (a,b,1), (b,c,2), (c,d,3)
    chain = EventLog([0, 1, 2], [1, 2, 3], [1.0, 2.0, 3.0])
    assert ul_closure(chain, [2], depth=1, k=2) == {2, 1}


def brute_closure(log: EventLog, seeds, depth, k):
    ul = set(seeds)
    for _ in range(depth):
        new = set(ul)
        for e in [log[i] for i in range(len(log)) if log.idx[i] in ul]:
            for node in (e.src, e.dst):
                hist = sorted(((o.time, o.idx) for o in log if node in (o.src, o.dst) and o.time < e.time),
                              reverse=True)[:k]
                new.update(i for _, i in hist)
        ul = new
    return ul


@given(st.integers(0, 10_000), st.integers(0, 3), st.integers(1, 4))
@settings(max_examples=30, deadline=None)
def test_closure_matches_brute_force(seed, depth, k):
    log = random_log(30, 6, seed=seed)
    seeds = np.random.default_rng(seed).choice(30, size=3, replace=False).tolist()
    assert ul_closure(log, seeds, depth, k) == brute_closure(log, seeds, depth, k)


def test_closure_reaches_fixed_point():
    log = random_log(20, 5, seed=4)
    sizes = [len(ul_closure(log, [19], d, 2)) for d in range(25)]
    assert sizes == sorted(sizes)
    assert sizes[-1] == sizes[-2] == sizes[-5]
    assert ul_closure(log, [19], 100, 2) == ul_closure(log, [19], 24, 2)


@given(st.integers(0, 10_000), st.integers(0, 3))
@settings(max_examples=25, deadline=None)
def test_request_partition_and_monotonicity(seed, depth):
    log = random_log(50, 7, seed=seed)
    req = sample_unlearning_request(log, 4, depth=depth, k=3, seed=seed)
    deeper = sample_unlearning_request(log, 4, depth=depth + 1, k=3, seed=seed)
    assert len(req.ul) + len(req.re) == len(log)
    assert not set(req.ul.idx.tolist()) & set(req.re.idx.tolist())
    assert set(req.ul.idx.tolist()) <= set(deeper.ul.idx.tolist())


def test_request_m_out_of_range(small_log):
    with pytest.raises(ValueError):
        sample_unlearning_request(small_log, len(small_log) + 1)


# -- counterparts ----------------------------------------------------------------

def test_counterpart_rejection():
    # u=0, v=1, w=2; bipartite so the candidates are exactly {v, w}
    log = EventLog([0], [1], [6.0], num_nodes=3, bipartite=True, num_users=1)
    req = UnlearnRequest(log, log.take([]), log)
    cp, skipped = sample_counterparts(req, log, 0)
    assert skipped == 0
    assert (cp[0].src, cp[0].dst, cp[0].time) == (0, 2, 6.0)


def test_counterpart_skipped_when_impossible(caplog):
    log = EventLog([0, 0], [1, 2], [6.0, 6.0], num_nodes=3, bipartite=True, num_users=1)
    req = UnlearnRequest(log.take([0]), log.take([1]), log.take([0]))
    with caplog.at_level(logging.WARNING):
        cp, skipped = sample_counterparts(req, log, 0)
    assert len(cp) == 0 and skipped == 1
    assert "no valid counterpart" in caplog.text


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_counterparts_absent_and_bounded(seed):
    log = random_log(60, 6, seed=seed)
    req = with_counterparts(sample_unlearning_request(log, 5, 1, 3, seed=seed), log, seed)
    cp = req.counterparts
    assert len(cp) + req.skipped_counterparts == len(req.ul)
    seen = log.triples()
    ul = {int(i): (int(s), float(t)) for i, s, t in zip(req.ul.idx, req.ul.src, req.ul.time)}
    for e in cp:
        assert (e.src, e.dst, e.time) not in seen
        assert ul[e.idx] == (e.src, e.time)
    again = with_counterparts(sample_unlearning_request(log, 5, 1, 3, seed=seed), log, seed)
    assert again.counterparts == cp


def test_from_events_sorts():
    log = from_events([Event(0, 1, 5.0), Event(1, 2, 3.0)])
    assert log.time.tolist() == [3.0, 5.0]
