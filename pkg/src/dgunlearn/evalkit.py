"""Effectiveness and efficiency metrics for unlearned link predictors."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .ctdg import EventLog, TemporalNeighborIndex, sample_negatives
from .model import TrainedModel, predict_proba

ORIGINAL = "original"
UNLEARNED = "unlearned"


def auc(pos_scores, neg_scores) -> float:
    """Exact pairwise AUC: P(pos > neg) + 0.5 P(pos == neg).

    Computed from ranks in O((P + N) log(P + N)); ties share the midrank.
    """
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("auc needs at least one positive and one negative score")
    allv = np.concatenate([pos, neg])
    order = np.argsort(allv, kind="mergesort")
    sorted_v = allv[order]
    ranks = np.empty(len(allv))
    # midranks over runs of equal values
    starts = np.flatnonzero(np.r_[True, sorted_v[1:] != sorted_v[:-1]])
    ends = np.r_[starts[1:], len(allv)]
    mid = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(mid, ends - starts)
    P, N = len(pos), len(neg)
    return float((ranks[:P].sum() - P * (P + 1) / 2.0) / (P * N))


def accuracy(probs, labels, threshold: float = 0.5) -> float:
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    return float(np.mean((probs >= threshold).astype(int) == labels))


def accuracy_split(model: TrainedModel, split: EventLog, index: TemporalNeighborIndex,
                   seed, threshold: float = 0.5) -> float:
    """Accuracy over the split's events (label 1) and one seeded negative each (label 0)."""
    if len(split) == 0:
        raise ValueError("split is empty")
    neg = sample_negatives(split, seed)
    p_pos = predict_proba(model, split, index)
    p_neg = predict_proba(model, neg, index)
    return accuracy(np.r_[p_pos, p_neg], np.r_[np.ones(len(split)), np.zeros(len(neg))], threshold)


def auc_split(model: TrainedModel, split: EventLog, index: TemporalNeighborIndex, seed) -> float:
    neg = sample_negatives(split, seed)
    return auc(predict_proba(model, split, index), predict_proba(model, neg, index))


def acc_unlearn(model: TrainedModel, ul: EventLog, index: TemporalNeighborIndex,
                threshold: float = 0.5) -> float:
    """Fraction of unlearned events predicted as non-edges."""
    if len(ul) == 0:
        raise ValueError("unlearning set is empty")
    return float(np.mean(predict_proba(model, ul, index) < threshold))


def agreement(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"prediction vectors differ in length: {a.shape} vs {b.shape}")
    return float(np.mean(a == b))


def classify_unlearned(y_our, y_ori, y_ret) -> str:
    """1-nearest-center verdict on thresholded test predictions; ties go to original."""
    y_our, y_ori, y_ret = (np.asarray(y) for y in (y_our, y_ori, y_ret))
    if not (y_our.shape == y_ori.shape == y_ret.shape):
        raise ValueError("prediction vectors must have equal length")
    return UNLEARNED if agreement(y_our, y_ret) > agreement(y_our, y_ori) else ORIGINAL


@dataclass
class TimingReport:
    raw: dict[str, list[float]]
    mean_seconds: dict[str, float]
    speedup: dict[str, float]


def timing_report(runs: Sequence[tuple[str, float]], baseline: str = "retrain") -> TimingReport:
    """Mean wall-clock per method and speed-up ``t_retrain / t_method``."""
    raw: dict[str, list[float]] = {}
    for method, seconds in runs:
        raw.setdefault(method, []).append(float(seconds))
    if baseline not in raw:
        raise ValueError(f"no {baseline!r} run to compare against")
    mean = {m: float(np.mean(v)) for m, v in raw.items()}
    speed = {m: mean[baseline] / t if t > 0 else float("inf") for m, t in mean.items()}
    return TimingReport(raw, mean, speed)


# -- reports ------------------------------------------------------------------

def fingerprint(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class MethodMetrics:
    method: str
    acc_re: float
    acc_ul: float
    auc_te: float
    delta_acc_re: float = 0.0
    abs_delta_acc_ul: float = 0.0
    delta_auc_te: float = 0.0
    seconds: float = 0.0
    speedup: float = 1.0
    verdict: str = ""


@dataclass
class EvalReport:
    methods: list[MethodMetrics]
    seeds: dict
    config_fingerprint: str
    extra: dict = field(default_factory=dict)

    def metric_rows(self, dataset: str = "") -> list[tuple[str, str, str, float]]:
        """(method, dataset, metric, value) rows for plotting."""
        rows = []
        for m in self.methods:
            for k, v in asdict(m).items():
                if k in ("method", "verdict"):
                    continue
                rows.append((m.method, dataset, k, float(v)))
        return rows

    def to_json(self, timings: bool = True) -> str:
        d = asdict(self)
        if not timings:
            for m in d["methods"]:
                m.pop("seconds")
                m.pop("speedup")
        return json.dumps(d, indent=2, sort_keys=True)

    def to_csv(self, timings: bool = True) -> str:
        buf = io.StringIO()
        cols = [f for f in MethodMetrics.__dataclass_fields__ if timings or f not in ("seconds", "speedup")]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["config_fingerprint", *cols])
        for m in self.methods:
            d = asdict(m)
            w.writerow([self.config_fingerprint, *(d[c] for c in cols)])
        return buf.getvalue()

    def plot_csv(self, dataset: str = "") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "dataset", "metric", "value"])
        w.writerows(self.metric_rows(dataset))
        return buf.getvalue()
