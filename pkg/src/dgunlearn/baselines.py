"""Comparison methods: retraining from scratch and two fine-tuning variants.

``finetune`` minimizes ``l_re + l_ul`` directly on the backbone parameters,
``finetune_ul`` minimizes ``l_ul`` alone.  Both start from the trained
parameters and use the same per-step batching as the unlearner so that
timings are comparable.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import seeding
from .ctdg import EventLog, TemporalNeighborIndex, UnlearnRequest, sample_negatives
from .diffcore import Adam, ParamStore, Tape, ops
from .model import BackboneConfig, TrainedModel, link_tokens, paired_logits, train_from_scratch
from .unlearner import UnlearnError, unlearning_bce

METHODS = ("retrain", "finetune", "finetune_ul")


@dataclass(frozen=True)
class FinetuneConfig:
    lr: float = 1e-4
    steps: int = 100
    batch_size: int = 64
    seed: int = 0
    desired_label: float = 0.0
    ul_scoring: str = "post_removal"

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("steps must be >= 0, batch_size >= 1 and lr > 0")
        if self.ul_scoring not in ("pre_removal", "post_removal"):
            raise ValueError(f"unknown ul_scoring {self.ul_scoring!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BaselineResult:
    method: str
    params: ParamStore
    seconds: float
    trace: list[dict] = field(default_factory=list)

    def trace_csv(self) -> str:
        if not self.trace:
            return ""
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(self.trace[0]), lineterminator="\n")
        w.writeheader()
        for row in self.trace:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()


def retrain(re: EventLog, val: EventLog, config: BackboneConfig,
            index: TemporalNeighborIndex, seed=None) -> BaselineResult:
    """Train from scratch on the remaining events; ``index`` must exclude S_ul.

    ``seed`` overrides the backbone seed; by default the original training
    seed is reused so an empty request reproduces the original run.
    """
    if len(re) == 0:
        raise ValueError("remaining log is empty")
    if seed is not None:
        config = replace(config, seed=seed)
    t0 = time.perf_counter()
    model = train_from_scratch(re, val, config, index=index)
    seconds = time.perf_counter() - t0
    return BaselineResult("retrain", model.params, seconds, list(model.history))


def _finetune(method: str, model: TrainedModel, req: UnlearnRequest, config: FinetuneConfig,
              index: TemporalNeighborIndex, pre_index: TemporalNeighborIndex | None) -> BaselineResult:
    if config.ul_scoring == "pre_removal":
        if pre_index is None:
            raise ValueError("ul_scoring='pre_removal' needs pre_index")
        ul_index = pre_index
    else:
        ul_index = index
    use_re = method == "finetune"
    bb = model.config
    t0 = time.perf_counter()
    params = model.params.copy()
    ul_tok = link_tokens(ul_index, req.ul, bb)
    if use_re:
        if len(req.re) == 0:
            raise ValueError("remaining log is empty")
        re_tok = link_tokens(index, req.re, bb)
    rng = seeding.rng(config.seed, method)
    opt = Adam(lr=config.lr)
    trace: list[dict] = []
    for step in range(config.steps):
        usel = np.sort(rng.choice(len(ul_tok), size=min(config.batch_size, len(ul_tok)), replace=False))
        if use_re:
            rsel = np.sort(rng.choice(len(req.re), size=min(config.batch_size, len(req.re)), replace=False))
            neg = sample_negatives(req.re.take(rsel), int(rng.integers(2**31)))
            neg_dst = link_tokens(index, neg, bb, src_tokens=re_tok.src[rsel]).dst
        with Tape() as tape:
            leaves = params.tensors()
            l_ul = unlearning_bce(leaves, ul_tok.take(usel), config.desired_label, bb)
            row = {"step": step, "l_ul": float(l_ul.value)}
            loss = l_ul
            if use_re:
                logits = paired_logits(leaves, re_tok.take(rsel), neg_dst, bb)
                labels = np.r_[np.ones(len(rsel)), np.zeros(len(rsel))]
                l_re = ops.bce_with_logits(logits, labels)
                row = {"step": step, "l_re": float(l_re.value), "l_ul": row["l_ul"]}
                loss = ops.add(l_re, l_ul)
        row["total"] = float(loss.value)
        if not all(math.isfinite(v) for v in row.values()):
            raise UnlearnError(f"non-finite loss at step {step}: {row}")
        trace.append(row)
        grads = tape.backward(loss, leaves.values())
        opt.step(params, dict(zip(leaves, grads)))
    return BaselineResult(method, params, time.perf_counter() - t0, trace)


def finetune(model: TrainedModel, req: UnlearnRequest, config: FinetuneConfig,
             index: TemporalNeighborIndex, pre_index: TemporalNeighborIndex | None = None) -> BaselineResult:
    """Adam on the backbone from the trained point with ``l_re + l_ul``."""
    return _finetune("finetune", model, req, config, index, pre_index)


def finetune_ul(model: TrainedModel, req: UnlearnRequest, config: FinetuneConfig,
                index: TemporalNeighborIndex, pre_index: TemporalNeighborIndex | None = None) -> BaselineResult:
    """Adam on the backbone from the trained point with ``l_ul`` only."""
    return _finetune("finetune_ul", model, req, config, index, pre_index)


__all__ = ["BaselineResult", "FinetuneConfig", "METHODS", "finetune", "finetune_ul", "retrain"]
