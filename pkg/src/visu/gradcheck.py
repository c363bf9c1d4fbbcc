"""Independent gradient oracles for the alignment losses.

Each loss is rebuilt from primitive tape operations and differentiated by
reverse mode, and the closed forms are also compared with central finite
differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ndtape as nd
from .charfeat import PAD, AlignmentBatch, IndexSets, build_index_sets, normalize_features
from .losses import LossConfig, cc_loss, cua_loss

TAUS = (0.05, 0.1, 0.2)
# Below this max-norm a gradient is compared absolutely: central differences carry
# ~1e-10 of roundoff, which would swamp a purely relative measure near zero.
GRAD_FLOOR = 1e-3


def random_batch(rng: np.random.Generator, B: int, T: int, D: int, n_classes: int = 3,
                 normalize: bool = True) -> AlignmentBatch:
    """Mixed labeled/unlabeled-looking slots: repeated labels, some low confidences, some padding."""
    n = B * T
    labels = rng.integers(0, n_classes, size=n)
    conf = np.where(rng.random(n) < 0.7, 1.0, rng.random(n))
    valid = rng.random(n) < 0.85
    valid[rng.integers(n)] = True
    labels = np.where(valid, labels, PAD)
    batch = AlignmentBatch(rng.normal(size=(n, D)), rng.normal(size=(n, D)), labels, conf, valid, B, T)
    return normalize_features(batch) if normalize else batch


def _compact_features(fa: nd.Node, sets: IndexSets) -> nd.Node:
    return nd.slice_(fa, (sets.members,))


def tape_cua(fa: nd.Node, batch: AlignmentBatch, cfg: LossConfig, sets: IndexSets) -> nd.Node:
    """CUA loss as a tape graph in the student features (teacher side constant)."""
    if len(sets) == 0 or not sets.pos.any():
        return nd.scale(nd.sum(fa), 0.0)
    f = _compact_features(fa, sets)
    fbT = nd.constant(batch.features_b[sets.members].T)
    s = nd.scale(nd.matmul(f, fbT), 1.0 / cfg.tau)
    e = nd.exp(s)
    e_neg = nd.exp(nd.neg(s))
    partners = nd.matmul(e_neg, nd.constant(sets.pos_excl.T.astype(float)))
    negatives = nd.sum(nd.mul(e, nd.constant(sets.neg.astype(float))), axis=1, keepdims=True)
    A = nd.add(nd.add(e, partners), negatives)
    size = sets.pos.sum(axis=1, keepdims=True).astype(float)
    w = np.divide(sets.pos, size, out=np.zeros(sets.pos.shape), where=size > 0)
    terms = nd.add(nd.log(A), nd.neg(s))
    return nd.sum(nd.mul(terms, nd.constant(w)))


def tape_cc(fa: nd.Node, batch: AlignmentBatch, cfg: LossConfig, sets: IndexSets, mode: str) -> nd.Node:
    """CC loss as a tape graph; in ``cc1`` both dot-product factors are student features."""
    if len(sets) == 0 or not sets.pos_excl.any():
        return nd.scale(nd.sum(fa), 0.0)
    f = _compact_features(fa, sets)
    g = nd.transpose(f) if mode == "cc1" else nd.constant(batch.features_b[sets.members].T)
    s = nd.scale(nd.matmul(f, g), 1.0 / cfg.tau)
    e = nd.exp(s)
    others = (sets.pos_excl | sets.neg).astype(float)
    Bden = nd.sum(nd.mul(e, nd.constant(others)), axis=1, keepdims=True)
    size = sets.pos_excl.sum(axis=1, keepdims=True).astype(float)
    w = np.divide(sets.pos_excl, size, out=np.zeros(sets.pos_excl.shape), where=size > 0)
    # rows with no partner carry zero weight; keep their log argument positive
    Bsafe = nd.add(Bden, nd.constant((size == 0).astype(float)))
    terms = nd.add(nd.neg(s), nd.log(Bsafe))
    return nd.sum(nd.mul(terms, nd.constant(w)))


def loss_value(kind: str, batch: AlignmentBatch, cfg: LossConfig, fa: np.ndarray) -> float:
    b = batch.replace(features_a=fa)
    if kind == "cua":
        return cua_loss(b, cfg).value
    return cc_loss(b, cfg, kind).value


def closed_form(kind: str, batch: AlignmentBatch, cfg: LossConfig):
    if kind == "cua":
        return cua_loss(batch, cfg)
    return cc_loss(batch, cfg, kind)


def tape_gradient(kind: str, batch: AlignmentBatch, cfg: LossConfig):
    sets = build_index_sets(batch, cfg.eta_cua)
    fa = nd.input(batch.features_a, name="features_a")
    root = tape_cua(fa, batch, cfg, sets) if kind == "cua" else tape_cc(fa, batch, cfg, sets, kind)
    nd.backward(root)
    return float(root.value[0, 0]), fa.adjoint


@dataclass
class TrialResult:
    kind: str
    tau: float
    shape: tuple
    fd_error: float
    tape_error: float
    value_error: float


@dataclass
class GradcheckReport:
    trials: list = field(default_factory=list)
    tol: float = 1e-6
    tape_tol: float = 1e-10

    @property
    def worst_fd(self) -> float:
        return max((t.fd_error for t in self.trials), default=0.0)

    @property
    def worst_tape(self) -> float:
        return max((t.tape_error for t in self.trials), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst_fd <= self.tol and self.worst_tape <= self.tape_tol

    def summary(self) -> str:
        kinds = sorted({t.kind for t in self.trials})
        lines = [f"{len(self.trials)} checks over {kinds}"]
        for k in kinds:
            sub = [t for t in self.trials if t.kind == k]
            lines.append(
                f"  {k}: max fd rel err {max(t.fd_error for t in sub):.3e}, "
                f"max tape rel err {max(t.tape_error for t in sub):.3e}"
            )
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def run_gradcheck(trials: int = 100, eps: float = 1e-6, tol: float = 1e-6, seed: int = 0,
                  kinds=("cua", "cc1", "cc2"), tape_tol: float = 1e-10) -> GradcheckReport:
    """``trials`` random batches (B<=4, T<=5, D<=8), each checked for every loss kind."""
    rng = np.random.default_rng(seed)
    report = GradcheckReport(tol=tol, tape_tol=tape_tol)
    for _ in range(trials):
        B, T, D = int(rng.integers(1, 5)), int(rng.integers(1, 6)), int(rng.integers(2, 9))
        tau = float(TAUS[int(rng.integers(len(TAUS)))])
        cfg = LossConfig(tau=tau)
        batch = random_batch(rng, B, T, D)
        for kind in kinds:
            res = closed_form(kind, batch, cfg)
            fd = nd.finite_diff_grad(lambda x, k=kind: loss_value(k, batch, cfg, x), batch.features_a, eps)
            tv, tg = tape_gradient(kind, batch, cfg)
            report.trials.append(TrialResult(
                kind, tau, (B, T, D),
                nd.relative_error(res.grad_a, fd, GRAD_FLOOR),
                nd.relative_error(res.grad_a, tg, GRAD_FLOOR),
                abs(res.value - tv) / max(abs(tv), 1.0),
            ))
    return report
