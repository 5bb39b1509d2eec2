"""End-to-end comparison of unlearning methods on one request.

Evaluation uses two neighbor indices: the original model answers queries
against the full event log, every other method against the log with the
unlearned events removed.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import seeding
from .baselines import BaselineResult, FinetuneConfig, finetune, finetune_ul, retrain
from .ctdg import (EventLog, SplitSpec, TemporalNeighborIndex, UnlearnRequest, chronological_split,
                   sample_negatives, sample_unlearning_request, with_counterparts)
from .evalkit import (EvalReport, MethodMetrics, acc_unlearn, accuracy_split, auc_split,
                      classify_unlearned, fingerprint, timing_report)
from .model import BackboneConfig, TrainedModel, predict_proba, train_from_scratch
from .unlearner import UnlearnConfig, UnlearnedModel, apply_future_request, train_unlearner

METHOD_ORDER = ("original", "retrain", "gradtrans", "finetune", "finetune_ul")


@dataclass(frozen=True)
class RequestConfig:
    m: int = 20
    depth: int = 1
    K: int = 10

    def __post_init__(self):
        if self.m < 1 or self.depth < 0 or self.K < 1:
            raise ValueError("request needs m >= 1, depth >= 0, K >= 1")


@dataclass(frozen=True)
class Seeds:
    data: int = 0
    model: int = 0
    unlearn: int = 0
    eval: int = 0


@dataclass
class Prepared:
    """Everything the methods share for one request."""

    log: EventLog
    split: SplitSpec
    full_index: TemporalNeighborIndex
    rest_index: TemporalNeighborIndex
    model: TrainedModel
    req: UnlearnRequest


def make_request(log: EventLog, train: EventLog, request: RequestConfig, seeds: Seeds) -> UnlearnRequest:
    """Sample a request from the training events and attach counterparts."""
    req = sample_unlearning_request(train, request.m, request.depth, request.K,
                                    seed=seeding.derive(seeds.data, "request"))
    return with_counterparts(req, log, seeding.derive(seeds.data, "counterparts"))


def prepare(log: EventLog, backbone: BackboneConfig, request: RequestConfig, seeds: Seeds,
            model: TrainedModel | None = None, ratios=(0.70, 0.15, 0.15)) -> Prepared:
    split = chronological_split(log, ratios)
    full = TemporalNeighborIndex(log)
    if model is None:
        model = train_from_scratch(split.train, split.val, backbone, index=full,
                                   eval_seed=seeds.eval)
    req = make_request(log, split.train, request, seeds)
    rest = TemporalNeighborIndex(log, exclude=req.ul_idx)
    return Prepared(log, split, full, rest, model, req)


def _test_labels(model: TrainedModel, test: EventLog, index: TemporalNeighborIndex, seed) -> np.ndarray:
    neg = sample_negatives(test, seed)
    probs = np.r_[predict_proba(model, test, index), predict_proba(model, neg, index)]
    return (probs >= 0.5).astype(np.int8)


def evaluate(model: TrainedModel, prep: Prepared, index: TemporalNeighborIndex, eval_seed) -> dict:
    s = seeding.derive(eval_seed, "eval-neg")
    return {
        "acc_re": accuracy_split(model, prep.req.re, index, s),
        "acc_ul": acc_unlearn(model, prep.req.ul, index),
        "auc_te": auc_split(model, prep.split.test, index, s),
        "labels": _test_labels(model, prep.split.test, index, s),
    }


@dataclass
class Comparison:
    report: EvalReport
    models: dict[str, TrainedModel]
    results: dict[str, BaselineResult | UnlearnedModel]
    seconds: dict[str, float]
    prep: Prepared
    scores: dict[str, dict] = field(default_factory=dict)
    future: dict | None = None


def compare_methods(prep: Prepared, ucfg: UnlearnConfig, fcfg: FinetuneConfig, seeds: Seeds,
                    methods=("retrain", "gradtrans", "finetune", "finetune_ul")) -> Comparison:
    """Run the requested methods on one prepared request and score them."""
    if "retrain" not in methods:
        raise ValueError("retrain is the reference and must be included")
    model, req = prep.model, prep.req
    models: dict[str, TrainedModel] = {"original": model}
    results: dict = {}
    seconds: dict[str, float] = {}
    for method in methods:
        if method == "retrain":
            res = retrain(req.re, prep.split.val, model.config, prep.rest_index)
            secs = res.seconds
        elif method == "gradtrans":
            t0 = time.perf_counter()
            res = train_unlearner(model, req, prep.split.val, ucfg, prep.rest_index, prep.full_index)
            secs = time.perf_counter() - t0
        elif method in ("finetune", "finetune_ul"):
            fn = finetune if method == "finetune" else finetune_ul
            res = fn(model, req, fcfg, prep.rest_index, prep.full_index)
            secs = res.seconds
        else:
            raise ValueError(f"unknown method {method!r}")
        results[method] = res
        seconds[method] = secs
        models[method] = model.with_params(res.params)

    scores = {name: evaluate(m, prep, prep.full_index if name == "original" else prep.rest_index,
                             seeds.eval)
              for name, m in models.items()}
    timing = timing_report(list(seconds.items()))
    ref = scores["retrain"]
    rows = []
    for name in METHOD_ORDER:
        if name not in scores:
            continue
        sc = scores[name]
        verdict = "" if name in ("original", "retrain") else classify_unlearned(
            sc["labels"], scores["original"]["labels"], ref["labels"])
        rows.append(MethodMetrics(
            method=name, acc_re=sc["acc_re"], acc_ul=sc["acc_ul"], auc_te=sc["auc_te"],
            delta_acc_re=sc["acc_re"] - ref["acc_re"],
            abs_delta_acc_ul=abs(sc["acc_ul"] - ref["acc_ul"]),
            delta_auc_te=sc["auc_te"] - ref["auc_te"],
            seconds=seconds.get(name, 0.0), speedup=timing.speedup.get(name, 0.0),
            verdict=verdict,
        ))
    config = {"backbone": model.config.to_dict(), "unlearn": ucfg.to_dict(),
              "finetune": fcfg.to_dict(), "request": dict(req.params)}
    report = EvalReport(rows, asdict(seeds), fingerprint(config),
                        {"n_ul": len(req.ul), "n_re": len(req.re),
                         "skipped_counterparts": req.skipped_counterparts})
    return Comparison(report, models, results, seconds, prep, scores)


def future_request(prep: Prepared, phi, ucfg: UnlearnConfig, request: RequestConfig, seeds: Seeds) -> dict:
    """Replay a trained transformation network on fresh initial events.

    The new request is ``request.m`` events drawn from the remaining data
    (so none were seen while fitting the network); its oracle is a retrain
    without them.
    """
    train = prep.split.train
    rest = prep.req.re
    rng = seeding.rng(seeds.data, "future")
    pick = rest.idx[np.sort(rng.choice(len(rest), size=min(request.m, len(rest)), replace=False))]
    ul_new = train.only(pick.tolist())
    re_new = train.without(pick.tolist())
    index_new = TemporalNeighborIndex(prep.log, exclude=pick)

    t0 = time.perf_counter()
    out = apply_future_request(phi, prep.model, ul_new, index_new, ucfg)
    t_ours = time.perf_counter() - t0
    ret = retrain(re_new, prep.split.val, prep.model.config, index_new)
    ours = prep.model.with_params(out.params)
    oracle = prep.model.with_params(ret.params)
    acc_ours = acc_unlearn(ours, ul_new, index_new)
    acc_ret = acc_unlearn(oracle, ul_new, index_new)
    s = seeding.derive(seeds.eval, "eval-neg")
    return {
        "n_ul": len(ul_new),
        "seconds": t_ours,
        "retrain_seconds": ret.seconds,
        "speedup": ret.seconds / t_ours,
        "acc_ul": acc_ours,
        "acc_ul_retrain": acc_ret,
        "abs_delta_acc_ul": abs(acc_ours - acc_ret),
        "auc_te": auc_split(ours, prep.split.test, index_new, s),
        "auc_te_retrain": auc_split(oracle, prep.split.test, index_new, s),
        "params": out.params,
    }


__all__ = ["Comparison", "Prepared", "RequestConfig", "Seeds", "compare_methods", "evaluate",
           "future_request", "make_request", "prepare"]
