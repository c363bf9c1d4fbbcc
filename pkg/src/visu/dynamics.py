"""Embedding-dynamics simulator: points on the unit sphere pushed around by
plain gradient descent on CUA or CC, with compactness recorded per step."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .charfeat import AlignmentBatch, build_index_sets
from .losses import LossConfig, cc_gradient_coefficients, cc_loss, cua_gradient_coefficients, cua_loss
from .metrics import CompactnessReport, compactness

LOSS_KINDS = ("cua", "cc")


@dataclass
class DynamicsRun:
    loss: str
    classes: int
    points: int
    dim: int
    steps: int
    lr: float
    tau: float
    seed: int
    trajectory: list = field(default_factory=list)  # CompactnessReport per step, init included
    losses: list = field(default_factory=list)
    grad_fingerprints: list = field(default_factory=list)

    @property
    def intra_gain(self) -> float:
        return self.trajectory[-1].intra_mean - self.trajectory[0].intra_mean


def initial_points(classes: int, points: int, dim: int, seed: int):
    """Uniform on the sphere (normalized Gaussians); labels grouped by class."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(classes * points, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    labels = np.repeat(np.arange(classes), points)
    return x, labels


def _batch(x, labels, frozen):
    n = len(labels)
    return AlignmentBatch(x, frozen, labels, np.ones(n), np.ones(n, dtype=bool), 1, n)


def loss_and_grad(kind: str, x, labels, cfg: LossConfig):
    """CUA aligns x to a frozen copy of itself; CC is intra-student (both factors from x)."""
    b = _batch(x, labels, x.copy())
    if kind == "cua":
        res = cua_loss(b, cfg)
    elif kind == "cc":
        res = cc_loss(b, cfg, "cc1")
    else:
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
    return res.value, res.grad_a


def dynamics_sim(loss: str = "cua", classes: int = 3, points: int = 8, dim: int = 16, steps: int = 500,
                 lr: float = 0.1, tau: float = 0.1, seed: int = 0) -> DynamicsRun:
    cfg = LossConfig(tau=tau)
    x, labels = initial_points(classes, points, dim, seed)
    run = DynamicsRun(loss, classes, points, dim, steps, lr, tau, seed)
    single = classes < 2

    def record(v, g):
        run.losses.append(float(v))
        run.grad_fingerprints.append(hashlib.sha256(np.ascontiguousarray(g).tobytes()).hexdigest()[:16])
        run.trajectory.append(_report(x, labels, single))

    v, g = loss_and_grad(loss, x, labels, cfg)
    record(v, g)
    for _ in range(steps):
        x = x - lr * g
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        v, g = loss_and_grad(loss, x, labels, cfg)
        record(v, g)
    return run


def _report(x, labels, single: bool) -> CompactnessReport:
    if not single:
        return compactness(x, labels)
    xn = x / np.linalg.norm(x, axis=1, keepdims=True)
    cos = xn @ xn.T
    n = len(x)
    intra = float((cos.sum() - np.trace(cos)) / (n * (n - 1))) if n > 1 else float("nan")
    return CompactnessReport({int(labels[0]): intra}, float("nan"), {int(labels[0]): n})


def coefficient_signs(classes: int = 3, points: int = 8, dim: int = 16, tau: float = 0.1, seed: int = 0) -> dict:
    """Sign of the same-class partner coefficient under CUA (M2) and CC (N2) on the
    initial configuration, taken over every anchor/positive/partner triple."""
    cfg = LossConfig(tau=tau)
    x, labels = initial_points(classes, points, dim, seed)
    b = _batch(x, labels, x.copy())
    sets = build_index_sets(b, cfg.eta_cua)
    m2, n2 = [], []
    for i in sets.members:
        for p in sets.P_excl(int(i)):
            m2.extend(cua_gradient_coefficients(b, cfg, int(i), p, sets).partners.values())
            n2.extend(cc_gradient_coefficients(b, cfg, int(i), p, "cc1", sets).partners.values())
    return {
        "cua_partner_positive": bool(m2) and all(c > 0 for c in m2),
        "cc_partner_negative": bool(n2) and all(c < 0 for c in n2),
        "n_cua": len(m2),
        "n_cc": len(n2),
    }


def compare(classes: int = 3, points: int = 8, dim: int = 16, steps: int = 500, lr: float = 0.1,
            tau: float = 0.1, seed: int = 0) -> dict:
    """Run CUA and CC from the same initialization and report both outcomes."""
    runs = {k: dynamics_sim(k, classes, points, dim, steps, lr, tau, seed) for k in LOSS_KINDS}
    out = {"seed": seed, "signs": coefficient_signs(classes, points, dim, tau, seed)}
    for k, r in runs.items():
        out[k] = {
            "intra_init": r.trajectory[0].intra_mean,
            "intra_final": r.trajectory[-1].intra_mean,
            "inter_final": r.trajectory[-1].inter,
            "intra_gain": r.intra_gain,
        }
    out["more_compact"] = "cua" if out["cua"]["intra_final"] > out["cc"]["intra_final"] else "cc"
    return out


def format_comparison(rep: dict) -> str:
    a, c = rep["cua"], rep["cc"]
    s = rep["signs"]
    return (
        f"seed {rep['seed']}: CUA intra {a['intra_init']:+.3f} -> {a['intra_final']:+.3f} "
        f"(inter {a['inter_final']:+.3f}); CC intra {c['intra_init']:+.3f} -> {c['intra_final']:+.3f} "
        f"(inter {c['inter_final']:+.3f}); more compact: {rep['more_compact']}; "
        f"partner coefficient signs CUA>0 {s['cua_partner_positive']}, CC<0 {s['cc_partner_negative']}"
    )


def write_run_csv(run: DynamicsRun, path) -> None:
    """One row per recorded step (steps + 1 rows after the header)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss", "intra_mean", "inter", "ratio"])
        for k, (rep, v) in enumerate(zip(run.trajectory, run.losses)):
            w.writerow([k, repr(v), repr(rep.intra_mean), repr(rep.inter), repr(rep.ratio)])
