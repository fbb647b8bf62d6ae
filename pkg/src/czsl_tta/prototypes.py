"""Textual/visual prototypes, confidence queues and queue warm-start."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import log_softmax, softmax

from .config import EngineConfig
from .space import CompositionSpace, Pair, l2_normalize

logger = logging.getLogger(__name__)


def prediction_entropy(f: np.ndarray, prototypes: np.ndarray, tau: float):
    """Entropy of the temperature-scaled cosine softmax over prototypes.

    ``f`` may be one feature ``(d,)`` or a batch ``(n, d)``; the return
    value is ``(h, p)`` with matching leading shape.
    """
    f = np.asarray(f, dtype=np.float64)
    prototypes = np.asarray(prototypes, dtype=np.float64)
    if tau <= 0:
        raise ValueError("tau must be positive")
    if f.shape[-1] != prototypes.shape[1]:
        raise ValueError(f"dimension mismatch: feature {f.shape[-1]} vs prototypes {prototypes.shape[1]}")
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(prototypes))):
        raise ValueError("non-finite input to prediction_entropy")
    z = (f @ prototypes.T) / tau
    logp = log_softmax(z, axis=-1)
    p = np.exp(logp)
    h = -np.sum(np.where(p > 0, p * logp, 0.0), axis=-1)
    h = np.clip(h, 0.0, np.log(prototypes.shape[0]))
    return (float(h), p) if np.ndim(h) == 0 else (h, p)


def compute_mapping_matrix(t_seen: np.ndarray, t_unseen: np.ndarray, tau_M: float) -> np.ndarray:
    """Seen x unseen mapping; each column is a softmax over the seen axis."""
    t_seen = np.atleast_2d(np.asarray(t_seen, dtype=np.float64))
    t_unseen = np.atleast_2d(np.asarray(t_unseen, dtype=np.float64))
    if t_seen.shape[0] == 0 or t_unseen.shape[0] == 0 or t_seen.size == 0 or t_unseen.size == 0:
        raise ValueError("mapping matrix needs at least one seen and one unseen prototype")
    if tau_M <= 0:
        raise ValueError("tau_M must be positive")
    if t_seen.shape[1] != t_unseen.shape[1]:
        raise ValueError("seen and unseen prototypes differ in dimension")
    return softmax((t_seen @ t_unseen.T) / tau_M, axis=0)


def generate_unseen_visual_prototypes(M: np.ndarray, v_seen: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    v_seen = np.asarray(v_seen, dtype=np.float64)
    if M.ndim != 2 or v_seen.ndim != 2 or M.shape[0] != v_seen.shape[0]:
        raise ValueError(f"dimension mismatch: mapping {M.shape} vs seen prototypes {v_seen.shape}")
    return l2_normalize(M.T @ v_seen)


@dataclass
class QueueEntry:
    h: float
    f: np.ndarray
    sentinel: bool = False
    arrival: int = 0

    @property
    def key(self):
        # sentinels sort above every real entropy; ties keep the earlier arrival first
        return (self.sentinel, 0.0 if self.sentinel else self.h, self.arrival)


@dataclass
class ConfidenceQueue:
    """Bounded list of (entropy, feature) pairs, lowest entropy first."""

    capacity: int
    entries: list = field(default_factory=list)
    _offers: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("queue capacity must be >= 1")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def full(self) -> bool:
        return len(self.entries) >= self.capacity

    @property
    def entropies(self) -> list[float]:
        return [float("inf") if e.sentinel else e.h for e in self.entries]

    @property
    def features(self) -> np.ndarray:
        return np.stack([e.f for e in self.entries])

    def insert(self, h: float, f: np.ndarray) -> bool:
        """Offer a sample; return True if it was stored."""
        if not np.isfinite(h):
            raise ValueError("entropy must be finite")
        return self._offer(QueueEntry(float(h), np.asarray(f, dtype=np.float64), False, self._offers))

    def insert_sentinel(self, f: np.ndarray) -> bool:
        return self._offer(QueueEntry(0.0, np.asarray(f, dtype=np.float64), True, self._offers))

    def _offer(self, entry: QueueEntry) -> bool:
        self._offers += 1
        if not self.full:
            self.entries.append(entry)
        elif entry.key < self.entries[-1].key:
            self.entries[-1] = entry
        else:
            return False
        self.entries.sort(key=lambda e: e.key)
        return True

    def snapshot(self) -> "ConfidenceQueue":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "entries": [
                {"h": None if e.sentinel else e.h, "sentinel": e.sentinel, "f": e.f.tolist()}
                for e in self.entries
            ],
        }


def queue_insert(q: ConfidenceQueue, h: float, f: np.ndarray) -> ConfidenceQueue:
    q.insert(h, f)
    return q


def visual_prototype(q: ConfidenceQueue) -> Optional[np.ndarray]:
    """Normalized mean of the stored features, or None for an empty queue."""
    if len(q) == 0:
        return None
    mean = q.features.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0:
        return None
    return mean / norm


def visual_prototypes(queues: Sequence[ConfidenceQueue], fallback: np.ndarray):
    """Stack per-class visual prototypes.

    Classes without a usable queue take their row of ``fallback`` (the text
    prototypes). Returns ``(v, fell_back)`` where ``fell_back`` is a bool mask.
    """
    v = np.array(fallback, dtype=np.float64, copy=True)
    fell_back = np.zeros(len(queues), dtype=bool)
    for c, q in enumerate(queues):
        proto = visual_prototype(q)
        if proto is None:
            fell_back[c] = True
        else:
            v[c] = proto
    return v, fell_back


def _group_by_label(space: CompositionSpace, features: np.ndarray, labels: Sequence[Pair]):
    groups: dict[Pair, list[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault((int(lab[0]), int(lab[1])), []).append(i)
    return groups


def warm_start_queues(
    space: CompositionSpace,
    t: np.ndarray,
    train_features,
    config: EngineConfig,
    train_labels: Optional[Sequence[Pair]] = None,
) -> list[ConfidenceQueue]:
    """Build one confidence queue per candidate class.

    ``train_features`` is either a mapping ``pair -> (n, d) array`` or a
    single ``(n, d)`` array accompanied by ``train_labels``.
    """
    K = config.K
    sw = config.switches
    queues = [ConfidenceQueue(K) for _ in range(space.n_candidates)]

    if isinstance(train_features, Mapping):
        per_class = {tuple(k): np.atleast_2d(np.asarray(v, dtype=np.float64)) for k, v in train_features.items()}
    else:
        feats = np.asarray(train_features, dtype=np.float64)
        if train_labels is None:
            raise ValueError("train_labels are required with a feature array")
        groups = _group_by_label(space, feats, train_labels)
        per_class = {k: feats[idx] for k, idx in groups.items()}

    if sw.warmstart_seen:
        for pair in space.seen_pairs:
            c = space.index_of(pair)
            feats = per_class.get(pair)
            if feats is None or feats.size == 0:
                logger.warning("seen class %s has no training features; using its text prototype", list(pair))
                continue
            h, _ = prediction_entropy(feats, t, config.tau)
            h = np.atleast_1d(h)
            for i in np.argsort(h, kind="stable")[:K]:
                queues[c].insert(float(h[i]), feats[i])

    if sw.warmstart_unseen:
        seen_idx = space.seen_indices
        other_idx = np.flatnonzero(~space.seen_mask)
        if other_idx.size:
            v_seen, _ = visual_prototypes([queues[i] for i in seen_idx], t[seen_idx])
            M = compute_mapping_matrix(t[seen_idx], t[other_idx], config.tau_M)
            v_unseen = generate_unseen_visual_prototypes(M, v_seen)
            for row, c in enumerate(other_idx):
                queues[c].insert_sentinel(v_unseen[row])
    return queues
