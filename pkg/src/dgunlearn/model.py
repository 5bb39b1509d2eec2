"""GraphMixer-style continuous-time link predictor.

A node at time ``t`` is described by its ``K`` most recent interactions
before ``t``: each becomes a token ``[cos(dt * w) || edge features]`` and the
(K x channels) token matrix goes through mixer blocks, a row mean and a
linear projection.  A two-layer MLP on the concatenated endpoint embeddings
gives the link logit.

Forward functions take a mapping of parameter name to tensor (or array), so
the same code runs on leaf parameters during training and on
``theta* + delta`` expressions inside the unlearner.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import seeding
from .ctdg import EventLog, TemporalNeighborIndex, sample_negatives
from .diffcore import Adam, ParamStore, Tape, glorot_uniform, ops
from .mixer import init_block, mixer_block

logger = logging.getLogger(__name__)

EVAL_CHUNK = 1024


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class BackboneConfig:
    K: int = 10
    d_time: int = 16
    d_hidden: int = 32
    n_mixer_blocks: int = 2
    lr: float = 1e-4
    epochs: int = 50
    batch_size: int = 64
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        for name in ("K", "d_time", "d_hidden", "n_mixer_blocks", "epochs", "batch_size", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainedModel:
    params: ParamStore
    config: BackboneConfig
    feat_dim: int
    history: list[dict] = field(default_factory=list)

    def with_params(self, params: ParamStore) -> "TrainedModel":
        if params.manifest != self.params.manifest:
            raise ValueError("parameter manifest differs from the model's")
        return TrainedModel(params, self.config, self.feat_dim, [])

    def save(self, path: str | Path) -> None:
        """Write ``<path>`` (binary parameters) and ``<path>.json`` (config sidecar)."""
        path = Path(path)
        self.params.save(path)
        sidecar = {"config": self.config.to_dict(), "feat_dim": self.feat_dim, "history": self.history}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "TrainedModel":
        path = Path(path)
        sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        return cls(ParamStore.load(path), BackboneConfig(**sidecar["config"]),
                   sidecar["feat_dim"], sidecar.get("history", []))


# -- features ---------------------------------------------------------------

def time_frequencies(d_time: int) -> np.ndarray:
    """``w_i = alpha ** (-(i - 1) / beta)`` with ``alpha = beta = sqrt(d_time)``."""
    a = math.sqrt(d_time)
    return a ** (-np.arange(d_time) / a)


def time_encode(dt, d_time: int) -> np.ndarray:
    dt = np.asarray(dt, dtype=np.float64)
    if np.any(dt < 0):
        raise ValueError("dt must be non-negative")
    return np.cos(dt[..., None] * time_frequencies(d_time))


def token_matrices(index: TemporalNeighborIndex, nodes, times, K: int, d_time: int) -> np.ndarray:
    """(B, K, d_time + feat_dim) token tensors, newest neighbor first, zero padded."""
    nodes = np.asarray(nodes, dtype=np.int64)
    times = np.asarray(times, dtype=np.float64)
    B, fd = len(nodes), index.feat_dim
    dt = np.zeros((B, K))
    mask = np.zeros((B, K), dtype=bool)
    feats = np.zeros((B, K, fd))
    for b in range(B):
        t_nbr, _, _, f = index.recent(nodes[b], times[b], K)
        c = len(t_nbr)
        if c:
            dt[b, :c] = times[b] - t_nbr
            mask[b, :c] = True
            if fd:
                feats[b, :c] = f
    tok = np.empty((B, K, d_time + fd))
    tok[..., :d_time] = time_encode(dt, d_time) * mask[..., None]
    tok[..., d_time:] = feats
    return tok


@dataclass
class LinkTokens:
    """Precomputed endpoint tokens for a batch of link instances."""

    src: np.ndarray
    dst: np.ndarray

    def __len__(self) -> int:
        return len(self.src)

    def take(self, sel) -> "LinkTokens":
        return LinkTokens(self.src[sel], self.dst[sel])

    @classmethod
    def cat(cls, parts) -> "LinkTokens":
        return cls(np.concatenate([p.src for p in parts]), np.concatenate([p.dst for p in parts]))


def link_tokens(index: TemporalNeighborIndex, log: EventLog, config: BackboneConfig,
                src_tokens: np.ndarray | None = None) -> LinkTokens:
    if src_tokens is None:
        src_tokens = token_matrices(index, log.src, log.time, config.K, config.d_time)
    dst_tokens = token_matrices(index, log.dst, log.time, config.K, config.d_time)
    return LinkTokens(src_tokens, dst_tokens)


# -- parameters and forward -------------------------------------------------

def token_hidden(config: BackboneConfig) -> int:
    """Token-mixing width: half the token count, as in GraphMixer."""
    return max(1, config.K // 2)


def init_params(config: BackboneConfig, feat_dim: int, seed=None) -> ParamStore:
    rng = seeding.rng(config.seed if seed is None else seed, "init")
    ch = config.d_time + feat_dim
    h = config.d_hidden
    store = ParamStore()
    for b in range(config.n_mixer_blocks):
        for k, v in init_block(rng, config.K, ch, token_hidden(config), h).items():
            store[f"enc{b}.{k}"] = v
    store["proj.w"] = glorot_uniform(rng, (ch, h))
    store["proj.b"] = np.zeros(h)
    store["dec1.w"] = glorot_uniform(rng, (2 * h, h))
    store["dec1.b"] = np.zeros(h)
    store["dec2.w"] = glorot_uniform(rng, (h, 1))
    store["dec2.b"] = np.zeros(1)
    return store


def encode(params: Mapping, tokens, config: BackboneConfig):
    """Node embeddings (B, d_hidden) from token tensors (B, K, channels)."""
    h = tokens
    for b in range(config.n_mixer_blocks):
        h = mixer_block(h, params, prefix=f"enc{b}.")
    return ops.linear(ops.mean_rows(h), params["proj.w"], params["proj.b"])


def decode(params: Mapping, emb_u, emb_v):
    z = ops.concat([emb_u, emb_v], axis=-1)
    z = ops.gelu(ops.linear(z, params["dec1.w"], params["dec1.b"]))
    z = ops.linear(z, params["dec2.w"], params["dec2.b"])
    return ops.reshape(z, (z.shape[0],))


def shared_src_logits(params: Mapping, src_tokens, dst_tokens: list, config: BackboneConfig):
    """Logits for several destination sets against one source set; the
    sources are encoded once.  Returns one (B,) tensor per destination set."""
    B = len(src_tokens)
    emb = encode(params, np.concatenate([src_tokens, *dst_tokens]), config)
    emb_u = emb[:B]
    return [decode(params, emb_u, emb[B * (i + 1):B * (i + 2)]) for i in range(len(dst_tokens))]


def link_logits(params: Mapping, tokens: LinkTokens, config: BackboneConfig):
    """Logits (B,) for the instances described by ``tokens``."""
    return shared_src_logits(params, tokens.src, [tokens.dst], config)[0]


def flatten_params(model: TrainedModel) -> np.ndarray:
    return model.params.flatten()


def unflatten_params(vec: np.ndarray, manifest) -> ParamStore:
    return ParamStore.unflatten(vec, manifest)


def predict_logits(params: ParamStore, tokens: LinkTokens, config: BackboneConfig) -> np.ndarray:
    out = []
    for i in range(0, len(tokens), EVAL_CHUNK):
        out.append(link_logits(params, tokens.take(slice(i, i + EVAL_CHUNK)), config).value)
    return np.concatenate(out) if out else np.zeros(0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x)))


def predict_proba(model: TrainedModel, log: EventLog, index: TemporalNeighborIndex) -> np.ndarray:
    return sigmoid(predict_logits(model.params, link_tokens(index, log, model.config), model.config))


def predict_link(u: int, v: int, t: float, model: TrainedModel, index: TemporalNeighborIndex) -> float:
    cfg = model.config
    tok = LinkTokens(token_matrices(index, [u], [t], cfg.K, cfg.d_time),
                     token_matrices(index, [v], [t], cfg.K, cfg.d_time))
    return float(predict_logits(model.params, tok, cfg)[0])


def encode_node(node: int, t: float, index: TemporalNeighborIndex, params: Mapping,
                config: BackboneConfig) -> np.ndarray:
    tok = token_matrices(index, [node], [t], config.K, config.d_time)
    return np.asarray(encode(params, tok, config).value)[0]


# -- training ---------------------------------------------------------------

def paired_logits(params: Mapping, pos: LinkTokens, neg_dst: np.ndarray, config: BackboneConfig):
    """Logits (2B,) of positives followed by their same-source negatives."""
    lp, ln = shared_src_logits(params, pos.src, [pos.dst, neg_dst], config)
    return ops.concat([lp, ln], axis=0)


def paired_bce(params: Mapping, pos: LinkTokens, neg_dst: np.ndarray, config: BackboneConfig):
    B = len(pos)
    labels = np.concatenate([np.ones(B), np.zeros(B)])
    return ops.bce_with_logits(paired_logits(params, pos, neg_dst, config), labels)


def auc_of(params: ParamStore, pos: LinkTokens, neg: LinkTokens, config: BackboneConfig) -> float:
    from .evalkit import auc
    return auc(predict_logits(params, pos, config), predict_logits(params, neg, config))


def train_from_scratch(
    train: EventLog,
    val: EventLog,
    config: BackboneConfig,
    index: TemporalNeighborIndex | None = None,
    eval_seed=0,
) -> TrainedModel:
    """Mini-batch BCE training with one negative per positive and early
    stopping on validation AUC; returns the best-validation checkpoint.

    ``index`` provides neighbor histories for both training and validation
    queries (defaults to train + val).  Lookups are strictly causal, so a
    larger index never leaks later events.
    """
    if len(train) == 0:
        raise ValueError("training log is empty")
    if index is None:
        index = TemporalNeighborIndex(EventLog.concat([train, val]))
    params = init_params(config, train.feat_dim)
    opt = Adam(lr=config.lr)

    train_tok = link_tokens(index, train, config)
    val_tok = link_tokens(index, val, config)
    val_neg = link_tokens(index, sample_negatives(val, seeding.derive(eval_seed, "val-neg")),
                          config, src_tokens=val_tok.src)

    best, best_auc, bad_epochs = params.copy(), -math.inf, 0
    history: list[dict] = []
    n = len(train)
    for epoch in range(config.epochs):
        neg = sample_negatives(train, seeding.derive(config.seed, "train-neg", epoch))
        neg_tok = link_tokens(index, neg, config, src_tokens=train_tok.src)
        losses = []
        for start in range(0, n, config.batch_size):
            sel = slice(start, start + config.batch_size)
            with Tape() as tape:
                leaves = params.tensors()
                loss = paired_bce(leaves, train_tok.take(sel), neg_tok.dst[sel], config)
            lv = float(loss.value)
            if not math.isfinite(lv):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            grads = tape.backward(loss, leaves.values())
            opt.step(params, dict(zip(leaves, grads)))
            losses.append(lv)
        val_auc = auc_of(params, val_tok, val_neg, config)
        history.append({"epoch": epoch, "loss": float(np.mean(losses)), "val_auc": val_auc})
        logger.debug("epoch %d loss %.4f val_auc %.4f", epoch, history[-1]["loss"], val_auc)
        if val_auc > best_auc:
            best, best_auc, bad_epochs = params.copy(), val_auc, 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break
    return TrainedModel(best, config, train.feat_dim, history)
