"""Seen/unseen bias sweep, long-tail groups and cumulative accuracy."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .space import CompositionSpace


class MetricError(ValueError):
    pass


def _get(rec, name):
    return rec[name] if isinstance(rec, Mapping) else getattr(rec, name)


def _pair(value) -> Optional[tuple]:
    return None if value is None else (int(value[0]), int(value[1]))


@dataclass
class BiasCurve:
    points: list  # (bias, seen_accuracy, unseen_accuracy), ascending bias
    auc: float
    best_hm: float
    seen_best: float
    unseen_best: float
    best_hm_bias: float = 0.0

    def to_dict(self, with_points: bool = True) -> dict:
        out = {
            "auc": self.auc,
            "best_hm": self.best_hm,
            "best_hm_bias": self.best_hm_bias,
            "seen": self.seen_best,
            "unseen": self.unseen_best,
        }
        if with_points:
            out["curve"] = [list(p) for p in self.points]
        return out


def _split(records, space: CompositionSpace):
    """Gaps and per-side correctness for seen-true and unseen-true records."""
    seen_gap, seen_ok, unseen_gap, unseen_ok = [], [], [], []
    for rec in records:
        true = _pair(_get(rec, "true_pair"))
        if true is None:
            raise MetricError(f"record {_get(rec, 'sample_index')} has no true pair")
        bs, bu = _get(rec, "best_seen_logit"), _get(rec, "best_unseen_logit")
        if bs is None or bu is None:
            raise MetricError("records need both best_seen_logit and best_unseen_logit")
        gap = float(bs) - float(bu)
        if space.is_seen(true):
            seen_gap.append(gap)
            seen_ok.append(_pair(_get(rec, "best_seen_pair")) == true)
        elif space.is_unseen(true):
            unseen_gap.append(gap)
            unseen_ok.append(_pair(_get(rec, "best_unseen_pair")) == true)
        else:
            raise MetricError(f"true pair {list(true)} is neither seen nor unseen")
    return (np.array(seen_gap), np.array(seen_ok, bool), np.array(unseen_gap), np.array(unseen_ok, bool))


def bias_sweep(records: Sequence, space: CompositionSpace) -> BiasCurve:
    """Trace seen/unseen accuracy as a bias on unseen logits sweeps -inf..+inf.

    At bias ``b`` a record predicts its best seen pair when
    ``best_seen_logit >= best_unseen_logit + b``.
    """
    if len(records) == 0:
        raise MetricError("bias sweep needs at least one record")
    seen_gap, seen_ok, unseen_gap, unseen_ok = _split(records, space)
    if seen_gap.size == 0:
        raise MetricError("bias sweep undefined: no seen-true records")
    if unseen_gap.size == 0:
        raise MetricError("bias sweep undefined: no unseen-true records")

    gaps = np.unique(np.concatenate([seen_gap, unseen_gap]))
    biases = np.concatenate([[gaps[0] - 1.0], gaps, [gaps[-1] + 1.0]])

    # seen-true correct iff best seen right and gap >= b; unseen-true iff best unseen right and gap < b
    ok_s = np.sort(seen_gap[seen_ok])
    ok_u = np.sort(unseen_gap[unseen_ok])
    seen_acc = (ok_s.size - np.searchsorted(ok_s, biases, side="left")) / seen_gap.size
    unseen_acc = np.searchsorted(ok_u, biases, side="left") / unseen_gap.size
    assert np.all(np.diff(seen_acc) <= 0) and np.all(np.diff(unseen_acc) >= 0)

    points = [(float(b), float(s), float(u)) for b, s, u in zip(biases, seen_acc, unseen_acc)]
    denom = seen_acc + unseen_acc
    hm = np.divide(2 * seen_acc * unseen_acc, denom, out=np.zeros_like(denom), where=denom > 0)
    best = int(np.argmax(hm))
    return BiasCurve(
        points=points,
        auc=_curve_area(seen_acc, unseen_acc),
        best_hm=float(hm[best]),
        seen_best=float(seen_acc[0]),
        unseen_best=float(unseen_acc[-1]),
        best_hm_bias=float(biases[best]),
    )


def _curve_area(seen_acc: np.ndarray, unseen_acc: np.ndarray) -> float:
    # plateaus collapse to single points; integrate unseen over seen, seen descending
    pts = sorted(set(zip(seen_acc.tolist(), unseen_acc.tolist())), key=lambda p: (-p[0], p[1]))
    s = np.array([p[0] for p in pts])
    u = np.array([p[1] for p in pts])
    area = float(np.sum((s[:-1] - s[1:]) * (u[:-1] + u[1:]) / 2.0))
    return min(max(area, 0.0), 1.0)


@dataclass
class LongTailReport:
    head_acc: float
    body_acc: float
    tail_acc: float
    all_acc: float
    all_std: float
    groups: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "head_acc": self.head_acc,
            "body_acc": self.body_acc,
            "tail_acc": self.tail_acc,
            "all_acc": self.all_acc,
            "all_std": self.all_std,
            "groups": {k: [list(p) for p in v] for k, v in self.groups.items()},
        }


def group_sizes(n: int) -> tuple[int, int, int]:
    head = tail = (3 * n) // 10
    return head, n - head - tail, tail


def long_tail_metrics(
    records: Sequence,
    per_class_test_counts: Optional[Mapping] = None,
    space: Optional[CompositionSpace] = None,
) -> LongTailReport:
    """Head/body/tail split of classes ordered by test frequency.

    Counts default to the true-label histogram of ``records``. Classes are
    ranked by count (descending) then candidate index; accuracy is the raw
    exact-pair accuracy of each record's final prediction.
    """
    truth = [_pair(_get(r, "true_pair")) for r in records]
    if per_class_test_counts is None:
        per_class_test_counts = Counter(truth)
    counts = {_pair(k): int(v) for k, v in per_class_test_counts.items() if int(v) >= 1}
    classes = list(counts)
    if len(classes) < 3:
        raise MetricError(f"long-tail groups need at least 3 classes, got {len(classes)}")

    total = Counter()
    correct = Counter()
    for rec, true in zip(records, truth):
        total[true] += 1
        correct[true] += _pair(_get(rec, "pred_pair")) == true
    missing = [c for c in classes if total[c] == 0]
    if missing:
        raise MetricError(f"class {list(missing[0])} has a test count but no records")

    order_key = (lambda c: space.index_of(c)) if space is not None else (lambda c: c)
    ranked = sorted(classes, key=lambda c: (-counts[c], order_key(c)))
    acc = np.array([correct[c] / total[c] for c in ranked])
    n_head, n_body, _ = group_sizes(len(ranked))
    head, body, tail = acc[:n_head], acc[n_head : n_head + n_body], acc[n_head + n_body :]
    return LongTailReport(
        head_acc=float(head.mean()),
        body_acc=float(body.mean()),
        tail_acc=float(tail.mean()),
        all_acc=float(acc.mean()),
        all_std=float(acc.std()),
        groups={
            "head": ranked[:n_head],
            "body": ranked[n_head : n_head + n_body],
            "tail": ranked[n_head + n_body :],
        },
    )


def cumulative_accuracy(
    records: Sequence,
    stride: int = 1,
    space: Optional[CompositionSpace] = None,
    subset: Optional[str] = None,
) -> list[tuple[int, float]]:
    """Prefix accuracy of the final prediction along the stream.

    Entries are ``(samples_seen, accuracy)`` every ``stride`` samples plus the
    last one. With ``subset`` ("seen"/"unseen") only records of that group
    count toward the accuracy; prefixes without any of them are skipped.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if subset is not None and space is None:
        raise ValueError("subset filtering needs the composition space")
    hits = n = 0
    out = []
    total = len(records)
    for i, rec in enumerate(records, start=1):
        true = _pair(_get(rec, "true_pair"))
        if subset is None or (space.is_seen(true) if subset == "seen" else space.is_unseen(true)):
            n += 1
            hits += _pair(_get(rec, "pred_pair")) == true
        if (i % stride == 0 or i == total) and n:
            out.append((i, hits / n))
    return out


def raw_accuracy(records: Sequence, space: Optional[CompositionSpace] = None, subset: Optional[str] = None) -> float:
    series = cumulative_accuracy(records, stride=max(len(records), 1), space=space, subset=subset)
    return series[-1][1] if series else float("nan")


def compute_metrics(records: Sequence, space: CompositionSpace, stride: int = 10) -> dict:
    """The metrics document written by ``run`` and ``eval``."""
    curve = bias_sweep(records, space)
    try:
        long_tail = long_tail_metrics(records, space=space).to_dict()
    except MetricError:
        long_tail = None
    return {
        "n_records": len(records),
        "bias_sweep": curve.to_dict(),
        "accuracy": {
            "all": raw_accuracy(records),
            "seen": raw_accuracy(records, space, "seen"),
            "unseen": raw_accuracy(records, space, "unseen"),
        },
        "long_tail": long_tail,
        "cumulative_accuracy": [list(p) for p in cumulative_accuracy(records, stride)],
    }
