"""Character-slot alignment data: paired features, labels, confidences, index sets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PAD = -1


class DegenerateFeatureError(ValueError):
    pass


@dataclass(frozen=True)
class CharSlot:
    feature_a: np.ndarray
    feature_b: np.ndarray
    label: int
    confidence: float
    valid: bool = True


@dataclass(frozen=True)
class AlignmentBatch:
    """B*T character slots stored as flat arrays (slot k = sample k // T, position k % T).

    ``features_a`` are student features of the strongly augmented view,
    ``features_b`` the teacher features of the base view. Invalid slots (PAD,
    EOS and anything after it) keep their features but never enter the index sets.
    """

    features_a: np.ndarray
    features_b: np.ndarray
    labels: np.ndarray
    confidences: np.ndarray
    valid: np.ndarray
    batch_size: int
    seq_len: int

    def __post_init__(self):
        n = self.batch_size * self.seq_len
        fa = np.asarray(self.features_a, dtype=np.float64)
        fb = np.asarray(self.features_b, dtype=np.float64)
        object.__setattr__(self, "features_a", fa)
        object.__setattr__(self, "features_b", fb)
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(self, "confidences", np.asarray(self.confidences, dtype=np.float64))
        object.__setattr__(self, "valid", np.asarray(self.valid, dtype=bool))
        if fa.ndim != 2 or fa.shape != fb.shape or fa.shape[0] != n:
            raise ValueError(f"features must both be ({n}, D); got {fa.shape} and {fb.shape}")
        for name in ("labels", "confidences", "valid"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have length {n}")
        c = self.confidences
        if ((c < 0) | (c > 1)).any():
            raise ValueError("confidences must lie in [0, 1]")
        if (self.labels[self.valid] == PAD).any():
            raise ValueError("valid slots cannot carry the PAD label")

    @property
    def dim(self) -> int:
        return self.features_a.shape[1]

    def __len__(self) -> int:
        return self.labels.shape[0]

    @classmethod
    def from_slots(cls, slots, batch_size: int | None = None, seq_len: int | None = None):
        slots = list(slots)
        if batch_size is None:
            batch_size, seq_len = 1, len(slots)
        return cls(
            features_a=np.array([s.feature_a for s in slots], dtype=np.float64).reshape(len(slots), -1),
            features_b=np.array([s.feature_b for s in slots], dtype=np.float64).reshape(len(slots), -1),
            labels=[s.label for s in slots],
            confidences=[s.confidence for s in slots],
            valid=[s.valid and s.label != PAD for s in slots],
            batch_size=batch_size,
            seq_len=seq_len,
        )

    def slots(self) -> list[CharSlot]:
        return [
            CharSlot(self.features_a[k], self.features_b[k], int(self.labels[k]),
                     float(self.confidences[k]), bool(self.valid[k]))
            for k in range(len(self))
        ]

    def replace(self, **changes) -> "AlignmentBatch":
        kw = dict(
            features_a=self.features_a, features_b=self.features_b, labels=self.labels,
            confidences=self.confidences, valid=self.valid,
            batch_size=self.batch_size, seq_len=self.seq_len,
        )
        kw.update(changes)
        return AlignmentBatch(**kw)

    def permuted(self, perm) -> "AlignmentBatch":
        """Reorder slots; the result is treated as one flat sequence."""
        perm = np.asarray(perm)
        return AlignmentBatch(
            self.features_a[perm], self.features_b[perm], self.labels[perm],
            self.confidences[perm], self.valid[perm], 1, len(perm),
        )


@dataclass(frozen=True)
class IndexSets:
    """Positive/negative sets over the valid slot indices I.

    The membership matrices are indexed by compact position within ``members``
    (``members[k]`` is the original slot index).
    """

    members: np.ndarray
    pos: np.ndarray  # pos[i, p]: p in P(i)
    pos_excl: np.ndarray  # P'(i) = P(i) minus i
    neg: np.ndarray  # N(i) = I minus P(i)
    _lookup: dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return self.members.shape[0]

    def _c(self, i: int) -> int:
        if not self._lookup:
            self._lookup.update({int(m): k for k, m in enumerate(self.members)})
        try:
            return self._lookup[int(i)]
        except KeyError:
            raise KeyError(f"slot {i} is not in I") from None

    def P(self, i: int) -> list[int]:
        return [int(x) for x in self.members[self.pos[self._c(i)]]]

    def P_excl(self, i: int) -> list[int]:
        return [int(x) for x in self.members[self.pos_excl[self._c(i)]]]

    def N(self, i: int) -> list[int]:
        return [int(x) for x in self.members[self.neg[self._c(i)]]]


def build_index_sets(batch: AlignmentBatch, eta_cua: float) -> IndexSets:
    """P(i) = {p in I : y_p = y_i} when S_i > eta_cua, else empty."""
    if not 0.0 <= eta_cua <= 1.0:
        raise ValueError(f"eta_cua must lie in [0, 1], got {eta_cua}")
    members = np.flatnonzero(batch.valid)
    y = batch.labels[members]
    gate = batch.confidences[members] > eta_cua
    pos = (y[:, None] == y[None, :]) & gate[:, None]
    pos_excl = pos & ~np.eye(len(members), dtype=bool)
    return IndexSets(members, pos, pos_excl, ~pos)


def normalize_features(batch: AlignmentBatch) -> AlignmentBatch:
    """Scale both feature sets of every valid slot to unit L2 norm."""
    fa = batch.features_a.copy()
    fb = batch.features_b.copy()
    v = batch.valid
    for arr in (fa, fb):
        nrm = np.linalg.norm(arr[v], axis=1)
        if (nrm == 0).any():
            raise DegenerateFeatureError("valid slot with zero-norm feature")
        arr[v] = arr[v] / nrm[:, None]
    return batch.replace(features_a=fa, features_b=fb)
