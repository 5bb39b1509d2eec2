import numpy as np
import pytest

from conftest import random_log
from dgunlearn.ctdg import EventLog, TemporalNeighborIndex, chronological_split, sample_negatives
from dgunlearn.evalkit import auc
from dgunlearn.model import (BackboneConfig, TrainedModel, encode_node, init_params, predict_link,
                             predict_proba, time_encode, token_matrices, train_from_scratch)

SMALL = BackboneConfig(K=4, d_time=4, d_hidden=8, epochs=3, batch_size=16, patience=3)


def test_time_encode_zero_is_ones():
    assert time_encode(0.0, 16).tolist() == [1.0] * 16


def test_time_encode_rejects_negative():
    with pytest.raises(ValueError):
        time_encode(-1.0, 4)


def test_token_matrix_padding():
    log = EventLog([0, 0], [1, 2], [1.0, 2.0], feat=[[0.5], [-0.5]], feat_dim=1)
    tok = token_matrices(TemporalNeighborIndex(log), [0], [3.0], K=3, d_time=2)
    assert tok.shape == (1, 3, 3)
    # newest first: dt=1 then dt=2, then one all-zero padding row
    assert tok[0, 0, 2] == -0.5 and tok[0, 1, 2] == 0.5
    assert not tok[0, 2].any()


def test_history_free_node_embedding_is_constant(small_log):
    params = init_params(SMALL, small_log.feat_dim, seed=0)
    idx = TemporalNeighborIndex(small_log)
    a = encode_node(99, 5.0, idx, params, SMALL)
    b = encode_node(98, 50.0, idx, params, SMALL)
    assert np.array_equal(a, b)


def test_embedding_is_pure(small_log):
    params = init_params(SMALL, small_log.feat_dim, seed=0)
    idx = TemporalNeighborIndex(small_log)
    assert np.array_equal(encode_node(3, 20.0, idx, params, SMALL),
                          encode_node(3, 20.0, idx, params, SMALL))


def test_deleting_a_neighbor_changes_embedding(small_log):
    params = init_params(SMALL, small_log.feat_dim, seed=0)
    node, t = int(small_log.src[-1]), float(small_log.time[-1]) + 1
    full = TemporalNeighborIndex(small_log)
    _, _, last, _ = full.recent(node, t, 1)
    cut = TemporalNeighborIndex(small_log, exclude=[int(last[0])])
    assert not np.array_equal(encode_node(node, t, full, params, SMALL),
                              encode_node(node, t, cut, params, SMALL))


def test_predict_link_deterministic(small_log):
    model = TrainedModel(init_params(SMALL, 2, seed=1), SMALL, 2)
    idx = TemporalNeighborIndex(small_log)
    assert predict_link(1, 2, 30.0, model, idx) == predict_link(1, 2, 30.0, model, idx)


def test_untrained_auc_near_half():
    log = random_log(200, 30, seed=5, feat_dim=2)
    idx = TemporalNeighborIndex(log)
    model = TrainedModel(init_params(BackboneConfig(), 2, seed=3), BackboneConfig(), 2)
    pos = predict_proba(model, log, idx)
    neg = predict_proba(model, sample_negatives(log, 1), idx)
    assert abs(auc(pos, neg) - 0.5) <= 0.1


def test_causality_bit_exact():
    log = random_log(80, 10, seed=2, feat_dim=2, integer_times=False)
    model = TrainedModel(init_params(SMALL, 2, seed=4), SMALL, 2)
    t = float(log.time[50])
    early = log.take(np.flatnonzero(log.time < t))
    queries = [(int(log.src[i]), int(log.dst[i])) for i in range(50, 60)]
    full, trunc = TemporalNeighborIndex(log), TemporalNeighborIndex(early)
    for u, v in queries:
        assert predict_link(u, v, t, model, full) == predict_link(u, v, t, model, trunc)


@pytest.fixture(scope="module")
def trained_pair():
    log = random_log(300, 12, seed=7, feat_dim=2)
    sp = chronological_split(log)
    cfg = BackboneConfig(K=4, d_time=4, d_hidden=8, epochs=3, patience=10, lr=1e-2, batch_size=32)
    return sp, cfg, train_from_scratch(sp.train, sp.val, cfg), train_from_scratch(sp.train, sp.val, cfg)


def test_training_loss_decreases(trained_pair):
    losses = [h["loss"] for h in trained_pair[2].history]
    assert len(losses) == 3 and losses[-1] < losses[0]


def test_training_deterministic(trained_pair):
    assert trained_pair[2].params.equals(trained_pair[3].params)


def test_param_count_and_manifest():
    cfg = BackboneConfig(K=4, d_time=4, d_hidden=8, n_mixer_blocks=1)
    p = init_params(cfg, feat_dim=2)
    ch, tok = 6, 2  # channels = d_time + feat_dim; token width = K // 2
    block = 4 * ch + 2 * 4 * tok + 2 * ch * 8
    head = (ch * 8 + 8) + (16 * 8 + 8) + (8 + 1)
    assert p.size == block + head
    names = [name for name, _ in p.manifest]
    assert names[0] == "enc0.ln1_g" and names[-2:] == ["dec2.w", "dec2.b"]


def test_save_load_round_trip(tmp_path, trained_pair):
    model = trained_pair[2]
    model.save(tmp_path / "m.bin")
    back = TrainedModel.load(tmp_path / "m.bin")
    assert back.params.equals(model.params) and back.config == model.config


def test_planted_original_auc(planted_runs):
    # the trained backbone on the planted graph, fixed seed 0
    assert planted_runs[0].scores["original"]["auc_te"] >= 0.9
