"""Word accuracy and cosine compactness statistics."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

_NON_ALNUM = re.compile(r"[^0-9a-z]")


class DegenerateInputError(ValueError):
    pass


def _norm_word(s: str) -> str:
    return _NON_ALNUM.sub("", s.lower())


def word_accuracy(preds, gts) -> float:
    """Case-insensitive exact match over the 36-symbol alphanumeric set."""
    preds, gts = list(preds), list(gts)
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground truths")
    if not gts:
        return 0.0
    hits = sum(p.lower() == _norm_word(g) for p, g in zip(preds, gts))
    return hits / len(gts)


@dataclass
class CompactnessReport:
    intra: dict  # class -> mean pairwise cosine within the class
    inter: float  # mean cosine over pairs from different classes
    counts: dict

    @property
    def intra_mean(self) -> float:
        vals = list(self.intra.values())
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def ratio(self) -> float:
        return self.intra_mean / self.inter if self.inter != 0 else float("inf")

    def to_dict(self) -> dict:
        return {
            "intra": {str(k): v for k, v in self.intra.items()},
            "intra_mean": self.intra_mean,
            "inter": self.inter,
            "ratio": self.ratio,
            "counts": {str(k): v for k, v in self.counts.items()},
        }


def compactness(features, labels) -> CompactnessReport:
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    classes = sorted(set(y.tolist()))
    if len(classes) < 2:
        raise DegenerateInputError("compactness needs at least two classes")
    x = x / np.linalg.norm(x, axis=1, keepdims=True)
    cos = np.clip(x @ x.T, -1.0, 1.0)
    same = y[:, None] == y[None, :]
    intra, counts = {}, {}
    for c in classes:
        idx = np.flatnonzero(y == c)
        counts[c] = int(len(idx))
        if len(idx) < 2:
            continue
        block = cos[np.ix_(idx, idx)]
        n = len(idx)
        intra[c] = float((block.sum() - np.trace(block)) / (n * (n - 1)))
    inter = float(cos[~same].mean())
    return CompactnessReport(intra, inter, counts)
