"""Alignment, consistency and recognition losses with closed-form gradients.

``cua_loss`` and ``cc_loss`` return the loss *sum* over anchors together with
the gradient on the student features. The per-pair coefficient functions
recompute the gradient terms one pair at a time, straight from the
definitions, and are kept independent of the vectorized kernels so the two
can be checked against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .charfeat import AlignmentBatch, IndexSets, build_index_sets


class ConfigError(ValueError):
    pass


class DistributionError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.1
    lam: float = 0.1
    eta_cua: float = 0.7
    eta_ccr: float = 0.5

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")
        if self.lam < 0:
            raise ConfigError(f"alignment weight must be non-negative, got {self.lam}")
        for name in ("eta_cua", "eta_ccr"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")


@dataclass
class LossResult:
    value: float
    grad_a: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    grad_anchor: np.ndarray | None = None


class Coefficients(NamedTuple):
    first: float
    partners: dict
    negatives: dict


def _config(cfg) -> LossConfig:
    if isinstance(cfg, LossConfig):
        return cfg
    raise ConfigError(f"expected LossConfig, got {type(cfg).__name__}")


def _scatter(batch: AlignmentBatch, sets: IndexSets, compact: np.ndarray) -> np.ndarray:
    full = np.zeros_like(batch.features_a)
    full[sets.members] = compact
    return full


# ---------------------------------------------------------------------------
# character unidirectional alignment


def cua_loss(batch: AlignmentBatch, cfg: LossConfig, sets: IndexSets | None = None) -> LossResult:
    cfg = _config(cfg)
    sets = sets if sets is not None else build_index_sets(batch, cfg.eta_cua)
    m = sets.members
    fa = np.ascontiguousarray(batch.features_a[m])
    fb = np.ascontiguousarray(batch.features_b[m])
    value, grad, A, shift = kernels.cua_kernel(fa, fb, sets.pos, sets.pos_excl, sets.neg, cfg.tau)
    denominators = {}
    for ci, cp in zip(*np.nonzero(sets.pos)):
        denominators[(int(m[ci]), int(m[cp]))] = float(A[ci, cp] * math.exp(shift[ci]))
    return LossResult(float(value), _scatter(batch, sets, grad), {"A": denominators})


def cua_denominator(batch: AlignmentBatch, cfg: LossConfig, i: int, p: int,
                    sets: IndexSets | None = None) -> float:
    """A(i, p) evaluated term by term."""
    cfg = _config(cfg)
    sets = sets if sets is not None else build_index_sets(batch, cfg.eta_cua)
    fa, fb, tau = batch.features_a, batch.features_b, cfg.tau
    a = math.exp(float(fa[i] @ fb[p]) / tau)
    for q in sets.P_excl(p):
        a += math.exp(-float(fa[i] @ fb[q]) / tau)
    for n in sets.N(i):
        a += math.exp(float(fa[i] @ fb[n]) / tau)
    return a


def cua_gradient_coefficients(batch: AlignmentBatch, cfg: LossConfig, i: int, p: int,
                              sets: IndexSets | None = None) -> Coefficients:
    """(M1, {p': M2}, {n': M3}) for the anchor/positive pair (i, p)."""
    cfg = _config(cfg)
    sets = sets if sets is not None else build_index_sets(batch, cfg.eta_cua)
    if p not in sets.P(i):
        raise ValueError(f"slot {p} is not a positive of slot {i}")
    fa, fb, tau = batch.features_a, batch.features_b, cfg.tau
    A = cua_denominator(batch, cfg, i, p, sets)
    m1 = A - math.exp(float(fa[i] @ fb[p]) / tau)
    m2 = {q: math.exp(-float(fa[i] @ fb[q]) / tau) for q in sets.P_excl(p)}
    m3 = {n: -math.exp(float(fa[i] @ fb[n]) / tau) for n in sets.N(i)}
    return Coefficients(m1, m2, m3)


def cua_gradient_from_coefficients(batch: AlignmentBatch, cfg: LossConfig) -> np.ndarray:
    """Rebuild dL_cua/df^a pair by pair from (M1, M2, M3)."""
    sets = build_index_sets(batch, cfg.eta_cua)
    fb, tau = batch.features_b, cfg.tau
    grad = np.zeros_like(batch.features_a)
    for i in sets.members:
        P = sets.P(i)
        if not P:
            continue
        acc = np.zeros(batch.dim)
        for p in P:
            m1, m2, m3 = cua_gradient_coefficients(batch, cfg, i, p, sets)
            num = m1 * fb[p]
            for q, c in m2.items():
                num = num + c * fb[q]
            for n, c in m3.items():
                num = num + c * fb[n]
            acc += num / cua_denominator(batch, cfg, i, p, sets)
        grad[i] = -acc / (tau * len(P))
    return grad


# ---------------------------------------------------------------------------
# character contrastive (prior formulation)


def _cc_partners(batch: AlignmentBatch, mode: str) -> np.ndarray:
    if mode == "cc1":
        return batch.features_a
    if mode == "cc2":
        return batch.features_b
    raise ConfigError(f"unknown CC mode {mode!r}; expected 'cc1' or 'cc2'")


def cc_loss(batch: AlignmentBatch, cfg: LossConfig, mode: str = "cc2",
            sets: IndexSets | None = None) -> LossResult:
    """CC loss; ``grad_a`` is the total derivative wrt student features.

    In ``cc1`` mode partners are student features too, so ``grad_a`` adds the
    partner-side derivative to the per-anchor term; ``grad_anchor`` keeps
    the per-anchor term alone.
    """
    cfg = _config(cfg)
    partners = _cc_partners(batch, mode)
    sets = sets if sets is not None else build_index_sets(batch, cfg.eta_cua)
    m = sets.members
    f = np.ascontiguousarray(batch.features_a[m])
    g = np.ascontiguousarray(partners[m])
    value, gf, gg, B, shift = kernels.cc_kernel(f, g, sets.pos_excl, sets.neg, cfg.tau)
    anchor = _scatter(batch, sets, gf)
    total = anchor + _scatter(batch, sets, gg) if mode == "cc1" else anchor
    active = sets.pos_excl.any(axis=1)
    denominators = {int(m[k]): float(B[k] * math.exp(shift[k])) for k in np.flatnonzero(active)}
    return LossResult(float(value), total, {"B": denominators}, grad_anchor=anchor)


def cc_denominator(batch: AlignmentBatch, cfg: LossConfig, i: int, mode: str = "cc2",
                   sets: IndexSets | None = None) -> float:
    cfg = _config(cfg)
    g = _cc_partners(batch, mode)
    sets = sets if sets is not None else build_index_sets(batch, cfg.eta_cua)
    fi, tau = batch.features_a[i], cfg.tau
    return math.fsum(math.exp(float(fi @ g[q]) / tau) for q in sets.P_excl(i) + sets.N(i))


def cc_gradient_coefficients(batch: AlignmentBatch, cfg: LossConfig, i: int, p: int,
                             mode: str = "cc2", sets: IndexSets | None = None) -> Coefficients:
    """(N1, {p': N2}, {n': N3}) for the anchor/positive pair (i, p)."""
    cfg = _config(cfg)
    sets = sets if sets is not None else build_index_sets(batch, cfg.eta_cua)
    if p not in sets.P_excl(i):
        raise ValueError(f"slot {p} is not in P'({i})")
    g = _cc_partners(batch, mode)
    fi, tau = batch.features_a[i], cfg.tau
    n1 = cc_denominator(batch, cfg, i, mode, sets)
    n2 = {q: -math.exp(float(fi @ g[q]) / tau) for q in sets.P_excl(i)}
    n3 = {n: -math.exp(float(fi @ g[n]) / tau) for n in sets.N(i)}
    return Coefficients(n1, n2, n3)


def cc_gradient_from_coefficients(batch: AlignmentBatch, cfg: LossConfig, mode: str = "cc2") -> np.ndarray:
    """Per-anchor dL_cc/df_i rebuilt from (N1, N2, N3), partners held fixed."""
    sets = build_index_sets(batch, cfg.eta_cua)
    g = _cc_partners(batch, mode)
    grad = np.zeros_like(batch.features_a)
    for i in sets.members:
        Pp = sets.P_excl(i)
        if not Pp:
            continue
        acc = np.zeros(batch.dim)
        for p in Pp:
            n1, n2, n3 = cc_gradient_coefficients(batch, cfg, i, p, mode, sets)
            num = n1 * g[p]
            for q, c in n2.items():
                num = num + c * g[q]
            for n, c in n3.items():
                num = num + c * g[n]
            acc += num / n1
        grad[i] = -acc / (cfg.tau * len(Pp))
    return grad


# ---------------------------------------------------------------------------
# consistency and recognition


def _check_rows(probs: np.ndarray, what: str, tol: float = 1e-9) -> None:
    if (probs < 0).any() or np.abs(probs.sum(axis=-1) - 1.0).max(initial=0.0) > tol:
        raise DistributionError(f"{what}: rows must be probability distributions")


def _ccr_weights(word_conf, text_lens, eta_ccr, shape) -> np.ndarray:
    B, T = shape[:2]
    word_conf = np.asarray(word_conf, dtype=np.float64)
    text_lens = np.asarray(text_lens, dtype=np.int64)
    if word_conf.shape != (B,) or text_lens.shape != (B,):
        raise ValueError("word_conf and text_lens need one entry per sample")
    if ((word_conf < 0) | (word_conf > 1)).any():
        raise ValueError("word confidences must lie in [0, 1]")
    if ((text_lens < 1) | (text_lens > T)).any():
        raise ValueError(f"text lengths must lie in [1, {T}]")
    gate = (word_conf > eta_ccr).astype(np.float64)
    steps = np.arange(T)[None, :] < text_lens[:, None]
    return steps * (gate / text_lens)[:, None]


def ccr_loss(teacher_probs, student_probs, word_conf, text_lens, eta_ccr: float) -> float:
    """Sum over samples of gate(S > eta) * mean_{t < T_b} KL(teacher_t || student_t)."""
    p = np.asarray(teacher_probs, dtype=np.float64)
    q = np.asarray(student_probs, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 3:
        raise ValueError(f"probability tensors must share a (B, T, C) shape; got {p.shape}, {q.shape}")
    _check_rows(p, "teacher_probs")
    _check_rows(q, "student_probs")
    w = _ccr_weights(word_conf, text_lens, eta_ccr, p.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl_terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    kl = kl_terms.sum(axis=-1)
    return float((w * kl).sum())


def ccr_logit_grad(teacher_probs, student_probs, word_conf, text_lens, eta_ccr: float) -> np.ndarray:
    """Gradient of :func:`ccr_loss` wrt the student logits behind ``student_probs``."""
    p = np.asarray(teacher_probs, dtype=np.float64)
    q = np.asarray(student_probs, dtype=np.float64)
    w = _ccr_weights(word_conf, text_lens, eta_ccr, p.shape)
    return w[:, :, None] * (q - p)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def recognition_loss(student_logits, labels, pad_index: int, length_mode: str = "real"):
    """Character cross-entropy ignoring PAD positions.

    ``real`` averages over every non-PAD position in the batch; ``max``
    divides each sample by the full decoder length T and averages samples.
    Returns ``(value, grad_wrt_logits)``.
    """
    z = np.asarray(student_logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if z.ndim != 3 or y.shape != z.shape[:2]:
        raise ValueError(f"logits {z.shape} and labels {y.shape} do not line up")
    C = z.shape[-1]
    if ((y < 0) | (y >= C)).any():
        raise ValueError(f"labels must lie in [0, {C})")
    mask = y != pad_index
    if length_mode == "real":
        count = mask.sum()
        weights = mask / max(count, 1)
    elif length_mode == "max":
        weights = mask / (z.shape[1] * z.shape[0])
    else:
        raise ConfigError(f"unknown length_mode {length_mode!r}")
    lsm = log_softmax(z)
    nll = -np.take_along_axis(lsm, y[..., None], axis=-1)[..., 0]
    value = float((weights * nll).sum())
    grad = np.exp(lsm)
    np.put_along_axis(grad, y[..., None], np.take_along_axis(grad, y[..., None], axis=-1) - 1.0, axis=-1)
    grad *= weights[..., None]
    return value, grad


def total_loss(rec: float, ccr: float, cua: float, cfg: LossConfig) -> float:
    for v in (rec, ccr, cua):
        if not math.isfinite(v):
            raise ValueError("loss components must be finite")
    return rec + ccr + cfg.lam * cua
