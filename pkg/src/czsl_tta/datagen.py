"""Seeded synthetic CZSL embedding datasets.

Every draw comes from one ``numpy.random.default_rng(seed)`` (PCG64) stream
in a fixed order, so the same spec always yields the same arrays:

1. attribute and object directions
2. seen-pair selection
3. text noise, then the unseen shift noise (drawn for every pair)
4. training features (seen pairs in order)
5. class frequency ranks, test features, test order
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

import numpy as np

from .io import Bundle


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    dim: int = 32
    n_attributes: int = 4
    n_objects: int = 4
    seen_fraction: float = 0.75
    train_per_seen_class: int = 20
    test_samples: int = 200
    attribute_strength: float = 0.5
    object_strength: float = 1.0
    text_noise: float = 0.2
    visual_noise: float = 0.3
    unseen_text_shift: float = 0.8
    tail_exponent: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("dim", "n_attributes", "n_objects", "train_per_seen_class", "test_samples"):
            if getattr(self, name) < 1:
                raise SynthError(f"{name} must be >= 1")
        for name in ("text_noise", "visual_noise", "unseen_text_shift", "tail_exponent"):
            if getattr(self, name) < 0:
                raise SynthError(f"{name} must be >= 0")
        if not (0 < self.seen_fraction <= 1):
            raise SynthError("seen_fraction must be in (0, 1]")

    @classmethod
    def from_dict(cls, data: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SynthError(f"unknown synth spec keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "SynthSpec":
        return dataclasses.replace(self, **changes)


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _select_seen(rng, n_a: int, n_o: int, n_seen: int):
    perm_a = rng.permutation(n_a)
    perm_o = rng.permutation(n_o)
    cover = []
    for k in range(max(n_a, n_o)):
        p = (int(perm_a[k % n_a]), int(perm_o[k % n_o]))
        if p not in cover:
            cover.append(p)
    if n_seen < len(cover):
        raise SynthError(
            f"seen_fraction gives {n_seen} seen pairs but covering {n_a} attributes and "
            f"{n_o} objects needs at least {len(cover)}"
        )
    all_pairs = [(a, o) for a in range(n_a) for o in range(n_o)]
    rest = [all_pairs[i] for i in rng.permutation(len(all_pairs)) if all_pairs[i] not in cover]
    seen = sorted(cover + rest[: n_seen - len(cover)])
    unseen = sorted(rest[n_seen - len(cover) :])
    return seen, unseen


def zipf_counts(rng, n_classes: int, total: int, exponent: float) -> np.ndarray:
    """Per-class counts summing to ``total``, each at least 1.

    Class frequency ranks are a random permutation; weights fall as
    ``rank ** -exponent`` and are apportioned by largest remainder.
    """
    if total < n_classes:
        raise SynthError(f"test_samples={total} cannot give every one of {n_classes} classes a sample")
    ranks = rng.permutation(n_classes)
    w = 1.0 / (ranks + 1.0) ** exponent
    share = total * w / w.sum()
    counts = np.floor(share).astype(np.int64)
    remainder = total - counts.sum()
    order = np.lexsort((np.arange(n_classes), -(share - counts)))
    counts[order[:remainder]] += 1
    while np.any(counts == 0):
        counts[int(np.argmax(counts))] -= 1
        counts[int(np.flatnonzero(counts == 0)[0])] += 1
    return counts


def generate(spec: SynthSpec) -> Bundle:
    rng = np.random.default_rng(spec.seed)
    n_a, n_o, d = spec.n_attributes, spec.n_objects, spec.dim

    attrs = _unit(rng.standard_normal((n_a, d)))
    objs = _unit(rng.standard_normal((n_o, d)))
    n_seen = int(round(spec.seen_fraction * n_a * n_o))
    seen, unseen = _select_seen(rng, n_a, n_o, n_seen)

    all_pairs = [(a, o) for a in range(n_a) for o in range(n_o)]
    g = _unit(spec.attribute_strength * attrs[:, None, :] + spec.object_strength * objs[None, :, :]).reshape(-1, d)
    row = {p: i for i, p in enumerate(all_pairs)}

    # noise vectors have expected squared norm 1
    text_eps = rng.standard_normal((len(all_pairs), d)) / np.sqrt(d)
    shift_eps = rng.standard_normal((len(all_pairs), d)) / np.sqrt(d)
    unseen_rows = np.zeros(len(all_pairs), dtype=bool)
    unseen_rows[[row[p] for p in unseen]] = True
    text = _unit(g + spec.text_noise * text_eps + spec.unseen_text_shift * shift_eps * unseen_rows[:, None])

    train_labels = [p for p in seen for _ in range(spec.train_per_seen_class)]
    train_g = g[[row[p] for p in train_labels]]
    train = _unit(train_g + spec.visual_noise * rng.standard_normal(train_g.shape) / np.sqrt(d))

    classes = seen + unseen
    counts = zipf_counts(rng, len(classes), spec.test_samples, spec.tail_exponent)
    test_labels = [p for p, k in zip(classes, counts) for _ in range(int(k))]
    test_g = g[[row[p] for p in test_labels]]
    test = _unit(test_g + spec.visual_noise * rng.standard_normal(test_g.shape) / np.sqrt(d))
    order = rng.permutation(len(test_labels))
    test = test[order]
    test_labels = [test_labels[i] for i in order]

    manifest = {
        "attributes": [f"attr{i}" for i in range(n_a)],
        "objects": [f"obj{j}" for j in range(n_o)],
        "seen_pairs": [list(p) for p in seen],
        "unseen_pairs": [list(p) for p in unseen],
        "world": "closed",
        "feasibility_mask": None,
        "dim": d,
        "text_pairs": [list(p) for p in all_pairs],
        "synth_spec": spec.to_dict(),
    }
    return Bundle(
        manifest=manifest,
        text=text.astype(np.float32),
        train_features=train.astype(np.float32),
        train_labels=[list(p) for p in train_labels],
        test_features=test.astype(np.float32),
        test_labels=[list(p) for p in test_labels],
    )
