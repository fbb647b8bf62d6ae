"""Attribute-object label space and embedding normalization."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

Pair = tuple[int, int]


class ManifestError(ValueError):
    """Raised when a manifest does not describe a valid composition space."""


@dataclass(frozen=True)
class CompositionSpace:
    attributes: tuple[str, ...]
    objects: tuple[str, ...]
    seen_pairs: tuple[Pair, ...]
    unseen_pairs: tuple[Pair, ...]
    world: str = "closed"
    feasibility_mask: Optional[tuple[bool, ...]] = None

    @property
    def n_attributes(self) -> int:
        return len(self.attributes)

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    @cached_property
    def candidates(self) -> tuple[Pair, ...]:
        """Candidate pairs; position in this tuple is the internal class id."""
        if self.world == "closed":
            return tuple(self.seen_pairs) + tuple(self.unseen_pairs)
        n_o = self.n_objects
        return tuple(
            (a, o)
            for a in range(self.n_attributes)
            for o in range(n_o)
            if self.feasibility_mask is None or self.feasibility_mask[a * n_o + o]
        )

    @cached_property
    def _index(self) -> dict[Pair, int]:
        return {p: i for i, p in enumerate(self.candidates)}

    @property
    def n_candidates(self) -> int:
        return len(self.candidates)

    @property
    def n_seen(self) -> int:
        return len(self.seen_pairs)

    @property
    def n_unseen(self) -> int:
        return len(self.unseen_pairs)

    def index_of(self, pair: Sequence[int]) -> int:
        try:
            return self._index[(int(pair[0]), int(pair[1]))]
        except KeyError:
            raise KeyError(f"pair {tuple(pair)} is not a candidate") from None

    @property
    def seen_mask(self) -> np.ndarray:
        """Boolean mask over candidates marking seen pairs."""
        return np.array([c in self._seen_set for c in self.candidates], dtype=bool)

    @property
    def seen_indices(self) -> np.ndarray:
        idx = self._index
        return np.array([idx[p] for p in self.seen_pairs], dtype=np.int64)

    @property
    def unseen_indices(self) -> np.ndarray:
        idx = self._index
        return np.array([idx[p] for p in self.unseen_pairs], dtype=np.int64)

    @cached_property
    def _seen_set(self) -> frozenset:
        return frozenset(self.seen_pairs)

    @cached_property
    def _unseen_set(self) -> frozenset:
        return frozenset(self.unseen_pairs)

    def is_seen(self, pair: Sequence[int]) -> bool:
        return (int(pair[0]), int(pair[1])) in self._seen_set

    def is_unseen(self, pair: Sequence[int]) -> bool:
        return (int(pair[0]), int(pair[1])) in self._unseen_set

    def pair_name(self, pair: Sequence[int]) -> str:
        return f"{self.attributes[pair[0]]} {self.objects[pair[1]]}"

    def with_world(self, world: str, feasibility_mask=None) -> "CompositionSpace":
        return _validated(
            self.attributes, self.objects, self.seen_pairs, self.unseen_pairs, world, feasibility_mask
        )


def _as_pairs(raw, kind: str, n_a: int, n_o: int) -> tuple[Pair, ...]:
    out = []
    seen = set()
    for item in raw:
        if len(item) != 2:
            raise ManifestError(f"malformed {kind} pair {item!r}: expected [attribute, object]")
        a, o = int(item[0]), int(item[1])
        if not (0 <= a < n_a) or not (0 <= o < n_o):
            raise ManifestError(f"index out of range in {kind} pair {[a, o]}")
        if (a, o) in seen:
            raise ManifestError(f"duplicate pair {[a, o]} in {kind} pairs")
        seen.add((a, o))
        out.append((a, o))
    return tuple(out)


def _validated(attributes, objects, seen_raw, unseen_raw, world, mask) -> CompositionSpace:
    attributes = tuple(str(a) for a in attributes)
    objects = tuple(str(o) for o in objects)
    n_a, n_o = len(attributes), len(objects)
    if n_a == 0 or n_o == 0:
        raise ManifestError("manifest needs at least one attribute and one object")
    if world not in ("closed", "open"):
        raise ManifestError(f"world must be 'closed' or 'open', got {world!r}")
    seen = _as_pairs(seen_raw, "seen", n_a, n_o)
    unseen = _as_pairs(unseen_raw, "unseen", n_a, n_o)
    overlap = sorted(set(seen) & set(unseen))
    if overlap:
        raise ManifestError(f"overlapping pair {list(overlap[0])} is both seen and unseen")
    missing_a = sorted(set(range(n_a)) - {a for a, _ in seen})
    if missing_a:
        raise ManifestError(f"attribute never seen: {attributes[missing_a[0]]!r} (index {missing_a[0]})")
    missing_o = sorted(set(range(n_o)) - {o for _, o in seen})
    if missing_o:
        raise ManifestError(f"object never seen: {objects[missing_o[0]]!r} (index {missing_o[0]})")

    if mask is not None:
        if world != "open":
            raise ManifestError("feasibility_mask is only valid for the open world")
        mask = tuple(bool(m) for m in mask)
        if len(mask) != n_a * n_o:
            raise ManifestError(f"feasibility_mask has {len(mask)} entries, expected {n_a * n_o}")
        dropped = [p for p in seen + unseen if not mask[p[0] * n_o + p[1]]]
        if dropped:
            raise ManifestError(f"feasibility_mask removes labelled pair {list(dropped[0])}")
    return CompositionSpace(attributes, objects, seen, unseen, world, mask)


def build_composition_space(manifest: dict) -> CompositionSpace:
    """Validate a parsed manifest and return its composition space.

    Candidate order is seen pairs then unseen pairs (manifest order) in the
    closed world, and row-major attribute x object in the open world.
    """
    for key in ("attributes", "objects", "seen_pairs", "unseen_pairs"):
        if key not in manifest:
            raise ManifestError(f"manifest is missing {key!r}")
    return _validated(
        manifest["attributes"],
        manifest["objects"],
        manifest["seen_pairs"],
        manifest["unseen_pairs"],
        manifest.get("world", "closed"),
        manifest.get("feasibility_mask"),
    )


def l2_normalize(m: np.ndarray) -> np.ndarray:
    """Return a float64 copy of ``m`` with unit-norm rows.

    A 1-d input is treated as a single row.
    """
    x = np.asarray(m, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if not np.all(np.isfinite(x)):
        bad = int(np.argwhere(~np.isfinite(x))[0, 0])
        raise ValueError(f"non-finite value in row {bad}")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    zero = np.flatnonzero(norms[:, 0] == 0)
    if zero.size:
        raise ValueError(f"cannot normalize zero-norm row {int(zero[0])}")
    out = x / norms
    return out[0] if single else out
