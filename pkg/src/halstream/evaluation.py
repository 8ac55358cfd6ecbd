"""NDCG@K ranking quality and split evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .model import forward


def _discounts(K: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, K + 2))


def ndcg_at_k(pred, truth, K: int = 10) -> float:
    """NDCG@K of the ranking induced by ``pred`` against affinity ``truth``.

    Categories are ranked by descending score, ties broken by ascending
    index. The gain is the raw truth weight. Returns 1.0 when the ideal DCG
    is zero.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValidationError(f"length mismatch: pred {pred.shape} vs truth {truth.shape}")
    if K < 1 or pred.size < 1:
        raise ValidationError("need K >= 1 and at least one category")
    return float(ndcg_at_k_batch(pred[None], truth[None], K)[0])


def ndcg_at_k_batch(pred, truth, K: int = 10) -> np.ndarray:
    """Row-wise :func:`ndcg_at_k` for ``(m, n)`` arrays."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 2:
        raise ValidationError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    m, n = pred.shape
    kk = min(K, n)
    disc = _discounts(kk)
    order = np.argsort(-pred, axis=1, kind="stable")[:, :kk]
    dcg = (np.take_along_axis(truth, order, axis=1) * disc).sum(axis=1)
    ideal = -np.sort(-truth, axis=1)[:, :kk]
    idcg = (ideal * disc).sum(axis=1)
    out = np.ones(m)
    pos = idcg > 0
    out[pos] = dcg[pos] / idcg[pos]
    return out


@dataclass
class EvalReport:
    ndcg_at_10: float
    per_event: np.ndarray = field(default_factory=lambda: np.zeros(0))
    steps: int = 0
    wall_time_s: float = 0.0
    best_epoch: int = -1

    @property
    def undefined(self) -> bool:
        return self.per_event.size == 0


def score_labels(C, memory, split, K: int = 10, batch_edges: int | None = None) -> np.ndarray:
    """Replay ``split`` through ``memory`` (mutated) and score every label event.

    A label at time ``t`` is predicted from the memory state after all edges
    strictly earlier than ``t``. Labels whose truth has no mass are skipped.
    """
    t = split.t
    n_labels = split.n_labels
    if n_labels == 0:
        memory.update(split.src, split.dst, split.t, split.features)
        return np.zeros(0)
    cut = np.searchsorted(t, split.label_t, side="left")
    scores = []
    done = 0
    # labels are sorted by time, so cut points are non-decreasing
    bounds = np.flatnonzero(np.diff(cut)) + 1
    for grp in np.split(np.arange(n_labels), bounds):
        c = int(cut[grp[0]])
        if c > done:
            memory.update(split.src[done:c], split.dst[done:c], split.t[done:c], split.features[done:c])
            done = c
        ys = split.label_target[grp]
        keep = ys.sum(axis=1) > 0
        if not np.any(keep):
            continue
        e = memory.embedding(split.label_node[grp][keep])
        p = forward(C, e)
        scores.append(ndcg_at_k_batch(p, ys[keep], K))
    if done < split.n_edges:
        memory.update(split.src[done:], split.dst[done:], split.t[done:], split.features[done:])
    return np.concatenate(scores) if scores else np.zeros(0)


def evaluate_split(C, memory, split, K: int = 10) -> EvalReport:
    """Mean NDCG@K over the split's label events; ``memory`` is advanced in place.

    ``C`` is only read. With no scorable label the report's ``ndcg_at_10``
    is NaN and :attr:`EvalReport.undefined` is true.
    """
    per = score_labels(np.asarray(C), memory, split, K)
    mean = float(per.mean()) if per.size else float("nan")
    return EvalReport(ndcg_at_10=mean, per_event=per)
