"""Gradient Transformation unlearning.

The gradient of the unlearning loss at the trained parameters is computed
once, laid out as a (rows x C) matrix and passed through two mixer blocks
whose output is the parameter update.  Only the mixer weights are trained;
the trained parameters stay fixed and the update enters the link predictor
as ``theta* + delta``::

    grad  = d/dtheta  sum_{o in S_ul} BCE(f_theta*(o), desired)
    delta = unpad(U_phi(reshape(grad, C)))
    loss  = l_re + alpha * l_reg + beta * l_ul + gamma * l_ulg

``l_re`` is link-prediction BCE on remaining events with paired negatives,
``l_ul`` pushes unlearned events towards the desired label, ``l_reg`` is
the central moment discrepancy between predictions on remaining and
validation instances, and ``l_ulg`` the discrepancy between the desired
labels and predictions on counterpart (never-occurred) events.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import seeding
from .ctdg import EventLog, TemporalNeighborIndex, UnlearnRequest, sample_negatives
from .diffcore import Adam, ParamStore, ShapeError, Tape, Tensor, ops
from .diffcore.params import manifest_slices
from .mixer import init_block, mixer_block
from .model import (LinkTokens, TrainedModel, decode, encode, link_tokens, paired_logits,
                    shared_src_logits, token_matrices)

logger = logging.getLogger(__name__)

N_BLOCKS = 2
TRACE_FIELDS = ("step", "l_re", "l_reg", "l_ul", "l_ulg", "total")


class UnlearnError(RuntimeError):
    pass


@dataclass(frozen=True)
class UnlearnConfig:
    alpha: float = 1.0
    beta: float = 0.1
    gamma: float = 0.1
    k: int = 2
    C: int = 32
    d_tok: int = 32
    d_cha: int = 32
    lr: float = 1e-3
    steps: int = 100
    seed: int = 0
    desired_label: float = 0.0
    # "desired": compare the constant desired labels with counterpart
    # predictions; "predicted": use the model's predictions on S_ul instead.
    ulg_target: str = "desired"
    grad_reduction: str = "mean"
    # multiplier on the frozen gradient before it enters the mixer
    grad_scale: float = 0.01
    # neighbor index used when scoring unlearned and counterpart events in the
    # loss: "pre_removal" (full log) or "post_removal" (remaining data)
    ul_scoring: str = "pre_removal"
    # instances per step for every loss term; None uses full sets up to max_items
    batch_size: int | None = 64
    max_items: int = 4096

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.k < 1 or self.C < 1 or self.d_tok < 1 or self.d_cha < 1:
            raise ValueError("k, C and mixer widths must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.ulg_target not in ("desired", "predicted"):
            raise ValueError(f"unknown ulg_target {self.ulg_target!r}")
        if self.grad_reduction not in ("sum", "mean"):
            raise ValueError(f"unknown grad_reduction {self.grad_reduction!r}")
        if self.ul_scoring not in ("pre_removal", "post_removal"):
            raise ValueError(f"unknown ul_scoring {self.ul_scoring!r}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 or None")
        if not (math.isfinite(self.grad_scale) and self.grad_scale > 0):
            raise ValueError("grad_scale must be a positive finite number")
        if not 0.0 <= self.desired_label <= 1.0:
            raise ValueError("desired_label must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


# -- initial gradient and layout ---------------------------------------------

@dataclass
class InitialGradient:
    flat: np.ndarray
    token_matrix: np.ndarray
    pad: int

    def unflatten(self, manifest) -> ParamStore:
        return ParamStore.unflatten(unshape_gradient(self.token_matrix, self.pad), manifest)


def reshape_gradient(flat: np.ndarray, C: int) -> tuple[np.ndarray, int]:
    """Zero-pad to a multiple of ``C`` and reshape row-major to (ceil(n/C), C)."""
    if C < 1:
        raise ValueError("C must be >= 1")
    flat = np.asarray(flat, dtype=np.float64).ravel()
    rows = max(1, math.ceil(flat.size / C))
    pad = rows * C - flat.size
    return np.concatenate([flat, np.zeros(pad)]).reshape(rows, C), pad


def unshape_gradient(mat: np.ndarray, pad: int) -> np.ndarray:
    flat = np.asarray(mat).reshape(-1)
    return flat[: flat.size - pad] if pad else flat.copy()


def unlearning_bce(params, tokens: LinkTokens, desired: float, config, reduction: str = "mean"):
    """BCE of unlearned events against the desired label (a tensor)."""
    logits = shared_src_logits(params, tokens.src, [tokens.dst], config)[0]
    loss = ops.bce_with_logits(logits, np.full(len(tokens), desired))
    return ops.mul(loss, float(len(tokens))) if reduction == "sum" else loss


def initial_gradient(model: TrainedModel, ul: EventLog, desired_label: float,
                     index: TemporalNeighborIndex, C: int = 32,
                     reduction: str = "sum") -> InitialGradient:
    """Gradient at the trained parameters of the unlearning loss over ``ul``.

    ``index`` should already exclude the unlearned events.
    """
    if len(ul) == 0:
        raise ValueError("unlearning set is empty")
    tokens = link_tokens(index, ul, model.config)
    with Tape() as tape:
        leaves = model.params.tensors()
        loss = unlearning_bce(leaves, tokens, desired_label, model.config, reduction)
    grads = tape.backward(loss, leaves.values())
    flat = np.concatenate([g.ravel() for g in grads])
    if not np.all(np.isfinite(flat)):
        raise UnlearnError("initial gradient is not finite")
    mat, pad = reshape_gradient(flat, C)
    return InitialGradient(flat, mat, pad)


# -- transformation network --------------------------------------------------

def init_unlearner(n_rows: int, config: UnlearnConfig) -> ParamStore:
    """Mixer weights; the second projections start at zero (identity map)."""
    rng = seeding.rng(config.seed, "phi")
    phi = ParamStore()
    for b in range(N_BLOCKS):
        for k, v in init_block(rng, n_rows, config.C, config.d_tok, config.d_cha, zero_second=True).items():
            phi[f"b{b}.{k}"] = v
    return phi


def phi_shape(phi) -> tuple[int, int]:
    tok1 = phi["b0.tok1"]
    return tok1.shape[1], phi["b0.ln1_g"].shape[0]


def gradient_transform(h_in, phi):
    """Two token/channel mixing blocks with residuals; output shape = input shape."""
    rows, C = phi_shape(phi)
    shape = h_in.shape
    if tuple(shape) != (rows, C):
        raise ShapeError(f"gradient_transform: input {tuple(shape)} does not match mixer {(rows, C)}")
    h = h_in
    for b in range(N_BLOCKS):
        h = mixer_block(h, phi, prefix=f"b{b}.")
    return h


def cmd(a, b, k: int = 2):
    """Central moment discrepancy of two 1-D prediction batches, orders 1..k."""
    a, b = ops.as_tensor(a), ops.as_tensor(b)
    if a.value.size == 0 or b.value.size == 0:
        raise ValueError("cmd needs non-empty batches")
    if k < 1:
        raise ValueError("k must be >= 1")
    a, b = ops.reshape(a, (-1,)), ops.reshape(b, (-1,))
    ma, mb = ops.mean(a), ops.mean(b)
    out = ops.absolute(ops.sub(ma, mb))
    ca, cb = ops.sub(a, ma), ops.sub(b, mb)
    for i in range(2, k + 1):
        out = ops.add(out, ops.absolute(ops.sub(ops.mean(ops.power(ca, i)), ops.mean(ops.power(cb, i)))))
    return out


def theta_plus(theta: ParamStore, delta_flat) -> dict:
    """Per-parameter tensors ``theta* + delta`` with gradients flowing into delta."""
    out = {}
    for name, shape, sl in manifest_slices(theta.manifest):
        out[name] = ops.add(theta[name], ops.reshape(ops.getitem(delta_flat, sl), shape))
    return out


def transform_delta(grad: InitialGradient, phi, n: int, scale: float = 1.0):
    """Flat update (tensor when phi holds tensors) from the frozen gradient."""
    h_in = grad.token_matrix if scale == 1.0 else grad.token_matrix * scale
    h = gradient_transform(h_in, phi)
    return ops.getitem(ops.reshape(h, (-1,)), slice(0, n))


# -- loss ----------------------------------------------------------------------

def combine(components: dict, config: UnlearnConfig):
    """``l_re + alpha*l_reg + beta*l_ul + gamma*l_ulg`` (tensors or floats)."""
    return ops.add(
        ops.add(components["l_re"], ops.mul(components["l_reg"], config.alpha)),
        ops.add(ops.mul(components["l_ul"], config.beta), ops.mul(components["l_ulg"], config.gamma)),
    )


@dataclass
class LossData:
    """Precomputed tokens for every loss term, against the post-removal index."""

    re: LinkTokens
    re_log: EventLog
    ul: LinkTokens
    cp_dst: np.ndarray | None
    cp_pos: np.ndarray | None
    val: LinkTokens
    val_neg_dst: np.ndarray
    index: TemporalNeighborIndex

    @classmethod
    def build(cls, model: TrainedModel, req: UnlearnRequest, val: EventLog,
              index: TemporalNeighborIndex, seed, max_items: int = 4096,
              ul_index: TemporalNeighborIndex | None = None) -> "LossData":
        cfg = model.config
        ul_index = index if ul_index is None else ul_index
        rng = seeding.rng(seed, "loss-data")

        def cap(log: EventLog) -> EventLog:
            if len(log) <= max_items:
                return log
            return log.take(np.sort(rng.choice(len(log), size=max_items, replace=False)))

        ul = cap(req.ul)
        cp_dst = cp_pos = None
        cp = req.counterparts
        if cp is not None and len(cp):
            cp = cp.only(ul.idx.tolist())
            cp_pos = np.searchsorted(ul.idx, cp.idx)
            cp_dst = token_matrices(ul_index, cp.dst, cp.time, cfg.K, cfg.d_time)
        val = cap(val)
        val_tok = link_tokens(index, val, cfg)
        val_neg = sample_negatives(val, seeding.derive(seed, "val-neg"))
        val_neg_dst = token_matrices(index, val_neg.dst, val_neg.time, cfg.K, cfg.d_time)
        return cls(link_tokens(index, req.re, cfg), req.re, link_tokens(ul_index, ul, cfg),
                   cp_dst, cp_pos, val_tok, val_neg_dst, index)

    def sample_re(self, rng: np.random.Generator, size: int, config) -> tuple[LinkTokens, np.ndarray]:
        n = len(self.re)
        sel = np.sort(rng.choice(n, size=min(size, n), replace=False))
        sub = self.re_log.take(sel)
        neg = sample_negatives(sub, int(rng.integers(2**31)))
        neg_dst = token_matrices(self.index, neg.dst, neg.time, config.K, config.d_time)
        return self.re.take(sel), neg_dst


def loss_components(params, data: LossData, config: UnlearnConfig, backbone,
                    rng: np.random.Generator, batch_size: int | None) -> dict:
    """The four loss terms at ``params`` (tensors), one mini-batch each."""
    def pick(n: int) -> np.ndarray:
        if batch_size is None or n <= batch_size:
            return np.arange(n)
        return np.sort(rng.choice(n, size=batch_size, replace=False))

    re_pos, re_neg = data.sample_re(rng, batch_size or backbone.batch_size, backbone)
    re_logits = paired_logits(params, re_pos, re_neg, backbone)
    labels = np.concatenate([np.ones(len(re_pos)), np.zeros(len(re_pos))])
    l_re = ops.bce_with_logits(re_logits, labels)

    vsel = pick(len(data.val))
    val_logits = paired_logits(params, data.val.take(vsel), data.val_neg_dst[vsel], backbone)
    l_reg = cmd(ops.sigmoid(re_logits), ops.sigmoid(val_logits), config.k)

    usel = pick(len(data.ul))
    ul = data.ul.take(usel)
    dsts = [ul.dst]
    cp_rows = None
    if data.cp_dst is not None:
        keep = np.isin(data.cp_pos, usel)
        if keep.any():
            cp_rows = np.searchsorted(usel, data.cp_pos[keep])
            dsts.append(data.cp_dst[keep])
    B = len(ul)
    emb = encode(params, np.concatenate([ul.src, *dsts]), backbone)
    emb_u = ops.getitem(emb, slice(0, B))
    ul_logits = decode(params, emb_u, ops.getitem(emb, slice(B, 2 * B)))
    l_ul = ops.bce_with_logits(ul_logits, np.full(B, config.desired_label))

    if cp_rows is None:
        logger.warning("no counterpart events; l_ulg set to 0")
        l_ulg = Tensor(0.0)
    else:
        cp_logits = decode(params, ops.take(emb_u, cp_rows), ops.getitem(emb, slice(2 * B, None)))
        if config.ulg_target == "desired":
            target = np.full(B, config.desired_label)
        else:
            target = ops.sigmoid(ul_logits)
        l_ulg = cmd(target, ops.sigmoid(cp_logits), config.k)
    return {"l_re": l_re, "l_reg": l_reg, "l_ul": l_ul, "l_ulg": l_ulg}


def total_loss(params, data: LossData, config: UnlearnConfig, backbone,
               rng: np.random.Generator, batch_size: int | None = None):
    comps = loss_components(params, data, config, backbone, rng, batch_size)
    return combine(comps, config), comps


# -- training and inference ----------------------------------------------------

@dataclass
class UnlearnedModel:
    delta: np.ndarray
    params: ParamStore
    phi: ParamStore
    grad: InitialGradient
    trace: list[dict] = field(default_factory=list)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=TRACE_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in self.trace:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def save(self, directory: str | Path, stem: str = "gradtrans") -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.params.save(d / f"{stem}.params.bin")
        self.phi.save(d / f"{stem}.phi.bin")
        (d / f"{stem}.trace.csv").write_text(self.trace_csv())


def _compose(theta: ParamStore, delta: np.ndarray) -> ParamStore:
    return ParamStore.unflatten(theta.flatten() + delta, theta.manifest)


def train_unlearner(model: TrainedModel, req: UnlearnRequest, val: EventLog,
                    config: UnlearnConfig, index: TemporalNeighborIndex,
                    pre_index: TemporalNeighborIndex | None = None,
                    grad: InitialGradient | None = None) -> UnlearnedModel:
    """Fit the transformation network on one request; keep the best-loss weights.

    ``index`` must exclude the unlearned events; it serves the initial
    gradient and the remaining/validation terms.  ``pre_index`` (the full
    log) is required when ``config.ul_scoring == "pre_removal"``.  The
    trained parameters are never modified.
    """
    if config.ul_scoring == "pre_removal":
        if pre_index is None:
            raise ValueError("ul_scoring='pre_removal' needs pre_index")
        ul_index = pre_index
    else:
        ul_index = index
    theta = model.params
    n = theta.size
    if grad is None:
        grad = initial_gradient(model, req.ul, config.desired_label, index, config.C,
                                config.grad_reduction)
    phi = init_unlearner(grad.token_matrix.shape[0], config)
    data = LossData.build(model, req, val, index, seeding.derive(config.seed, "data"), config.max_items,
                          ul_index)
    rng = seeding.rng(config.seed, "steps")
    opt = Adam(lr=config.lr)
    best_phi, best_total = phi.copy(), math.inf
    trace: list[dict] = []
    for step in range(config.steps):
        with Tape() as tape:
            leaves = phi.tensors()
            delta = transform_delta(grad, leaves, n, config.grad_scale)
            total, comps = total_loss(theta_plus(theta, delta), data, config, model.config,
                                      rng, config.batch_size)
        row = {"step": step, **{k: float(v.value) for k, v in comps.items()}, "total": float(total.value)}
        if not all(math.isfinite(v) for v in row.values()):
            raise UnlearnError(f"non-finite loss at step {step}: {row}")
        trace.append(row)
        # phi as it was when this loss was measured
        if row["total"] < best_total:
            best_total, best_phi = row["total"], phi.copy()
        grads = tape.backward(total, leaves.values())
        opt.step(phi, dict(zip(leaves, grads)))
    delta = np.asarray(transform_delta(grad, best_phi, n, config.grad_scale).value)
    return UnlearnedModel(delta, _compose(theta, delta), best_phi, grad, trace)


def apply_future_request(phi: ParamStore, model: TrainedModel, ul_new: EventLog,
                         index: TemporalNeighborIndex, config: UnlearnConfig) -> UnlearnedModel:
    """One forward pass of a trained transformation network on a new request."""
    if len(ul_new) == 0:
        raise ValueError("unlearning set is empty")
    rows, C = phi_shape(phi)
    n = model.params.size
    if C != config.C or rows != max(1, math.ceil(n / C)):
        raise ShapeError(f"transformation network expects ({rows}, {C}) but the model has {n} parameters")
    grad = initial_gradient(model, ul_new, config.desired_label, index, C, config.grad_reduction)
    delta = np.asarray(transform_delta(grad, phi, n, config.grad_scale).value)
    return UnlearnedModel(delta, _compose(model.params, delta), phi, grad, [])


__all__ = [
    "InitialGradient",
    "UnlearnConfig",
    "UnlearnedModel",
    "apply_future_request",
    "cmd",
    "combine",
    "gradient_transform",
    "initial_gradient",
    "init_unlearner",
    "reshape_gradient",
    "train_unlearner",
    "unshape_gradient",
]
