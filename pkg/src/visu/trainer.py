"""Semi-supervised training loop: student/teacher passes, loss assembly, AdamW
with a one-cycle schedule, EMA teacher updates, checkpoints and JSON logs."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import struct
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import ndtape as nd
from .charfeat import PAD as SLOT_PAD
from .charfeat import AlignmentBatch
from .charset import Charset
from .losses import (LossConfig, cc_loss, ccr_logit_grad, ccr_loss, cua_loss, log_softmax,
                     recognition_loss)
from .recognizer import ModelConfig, forward, init_params, predict
from .teacher import ParamSet, apply_augment, ema_update, pseudo_label, sample_augment_params
from .urf import canonicalize, rotate180

CHECKPOINT_VERSION = "visu-ckpt/1"
ALIGN_LOSSES = ("none", "cc1", "cc2", "cua")
CONSISTENCY = ("none", "ce", "kl")


class TrainingDivergedError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    tau: float = 0.1
    lam: float = 0.1
    eta_ccr: float = 0.5
    eta_cua: float = 0.7
    alpha: float = 0.999
    r: float = 1.3
    max_lr: float = 6e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_labeled: int = 16
    batch_unlabeled: int = 16
    steps: int = 1000
    seed: int = 0
    ogs_ratio: float = 1.0
    normalize: bool = True
    use_urf: bool = True
    use_ogs: bool = True
    use_ru: bool = True
    align_loss: str = "cua"
    consistency: str = "kl"
    ccr_on_labeled: bool = True
    rec_length_mode: str = "real"
    flip180_prob: float = 0.5
    charset: str = "0123456789"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if self.align_loss not in ALIGN_LOSSES:
            raise ValueError(f"align_loss must be one of {ALIGN_LOSSES}")
        if self.consistency not in CONSISTENCY:
            raise ValueError(f"consistency must be one of {CONSISTENCY}")
        LossConfig(self.tau, self.lam, self.eta_cua, self.eta_ccr)
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.model.num_classes != len(self.charset) + 2:
            raise ValueError("model.num_classes must equal len(charset) + 2 (EOS, PAD)")

    @property
    def loss_config(self) -> LossConfig:
        return LossConfig(self.tau, self.lam, self.eta_cua, self.eta_ccr)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


def baseline_config(**overrides) -> TrainConfig:
    """Recognition loss only: no consistency, no alignment, no unlabeled data."""
    kw = dict(consistency="none", align_loss="none", use_ru=False)
    kw.update(overrides)
    return TrainConfig(**kw)


def one_cycle_lr(step: int, total_steps: int, max_lr: float) -> float:
    """Linear warm-up over the first 10% from max_lr/25, then cosine down to max_lr/1e4."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    start, end = max_lr / 25.0, max_lr / 1e4
    warm = 0.1 * total_steps
    if warm > 0 and step <= warm:
        return start + (max_lr - start) * step / warm
    span = total_steps - warm
    frac = (step - warm) / span if span > 0 else 1.0
    return end + 0.5 * (max_lr - end) * (1.0 + math.cos(math.pi * frac))


# ---------------------------------------------------------------------------
# data


@dataclass
class Dataset:
    images: list  # uint8 arrays, any size
    labels: list
    from_ogs: list

    def __len__(self):
        return len(self.images)


def resize(image: np.ndarray, height: int, width: int) -> np.ndarray:
    image = np.asarray(image, dtype=np.uint8)
    if image.shape == (height, width):
        return image
    return np.asarray(Image.fromarray(image).resize((width, height), Image.BILINEAR))


def prepare(image, cfg: TrainConfig) -> np.ndarray:
    """Optional aspect-ratio canonicalization, then resize to the model input size."""
    if cfg.use_urf:
        image, _ = canonicalize(image, cfg.r)
    return resize(image, cfg.model.image_h, cfg.model.image_w)


@dataclass
class StepBatch:
    lab_base: np.ndarray
    lab_strong: np.ndarray
    lab_labels: list
    unl_weak: np.ndarray
    unl_strong: np.ndarray


def _sample_rng(seed: int, step: int, stream: int, k: int) -> np.random.Generator:
    return np.random.default_rng([seed, step, stream, k])


def make_step_batch(cfg: TrainConfig, step: int, labeled: Dataset, unlabeled: Dataset | None) -> StepBatch:
    """Deterministic in (seed, step); every sample owns a derived generator."""
    pick = np.random.default_rng([cfg.seed, step, 0])
    ogs_idx = [k for k, o in enumerate(labeled.from_ogs) if o]
    plain_idx = [k for k, o in enumerate(labeled.from_ogs) if not o]
    n = cfg.batch_labeled
    if ogs_idx and plain_idx and cfg.use_ogs:
        n_ogs = int(round(n * cfg.ogs_ratio / (1.0 + cfg.ogs_ratio)))
        idx = list(pick.choice(ogs_idx, n_ogs)) + list(pick.choice(plain_idx, n - n_ogs))
    else:
        idx = list(pick.integers(len(labeled), size=n))
    base, strong, labels = [], [], []
    for k, j in enumerate(idx):
        rng = _sample_rng(cfg.seed, step, 1, k)
        img = prepare(labeled.images[j], cfg)
        flip = rng.random() < cfg.flip180_prob
        if labeled.from_ogs[j] and cfg.use_ogs:
            b = img
        else:
            b = apply_augment(img, sample_augment_params("weak", rng, img.shape))
        s = apply_augment(img, sample_augment_params("strong", rng, img.shape))
        if flip:
            b, s = rotate180(b), rotate180(s)
        base.append(b)
        strong.append(s)
        labels.append(labeled.labels[j])
    H, W = cfg.model.image_h, cfg.model.image_w
    weak_u = np.zeros((0, H, W), np.uint8)
    strong_u = np.zeros((0, H, W), np.uint8)
    if cfg.use_ru and unlabeled is not None and len(unlabeled):
        uidx = pick.integers(len(unlabeled), size=cfg.batch_unlabeled)
        wl, sl = [], []
        for k, j in enumerate(uidx):
            rng = _sample_rng(cfg.seed, step, 2, k)
            img = prepare(unlabeled.images[j], cfg)
            flip = rng.random() < cfg.flip180_prob
            w = apply_augment(img, sample_augment_params("weak", rng, img.shape))
            s = apply_augment(img, sample_augment_params("strong", rng, img.shape))
            if flip:
                w, s = rotate180(w), rotate180(s)
            wl.append(w)
            sl.append(s)
        weak_u, strong_u = np.stack(wl), np.stack(sl)
    return StepBatch(np.stack(base), np.stack(strong), labels, weak_u, strong_u)


# ---------------------------------------------------------------------------
# state, optimizer


@dataclass
class TrainState:
    config: TrainConfig
    student: ParamSet
    teacher: ParamSet
    m: ParamSet
    v: ParamSet
    step: int = 0
    acc_running: float = 0.0

    @classmethod
    def initialize(cls, cfg: TrainConfig) -> "TrainState":
        student = init_params(cfg.model, cfg.seed)
        zeros = ParamSet({k: np.zeros_like(a) for k, a in student.items()})
        return cls(cfg, student, student.copy(), zeros, zeros.copy())


def _decays(name: str) -> bool:
    return name.endswith(".w")


def adamw_step(state: TrainState, grads: dict, lr: float) -> None:
    cfg = state.config
    t = state.step + 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in state.student.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if _decays(name):
            p *= 1.0 - lr * cfg.weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)


# ---------------------------------------------------------------------------
# one step


@dataclass
class LossBreakdown:
    step: int
    lr: float
    l_rec: float
    l_ccr: float
    l_align: float
    total: float
    sb_mean: float
    word_acc_running: float

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["S^b mean"] = d.pop("sb_mean")
        return json.dumps(d, sort_keys=False)


def _targets(labels, charset: Charset, T: int) -> np.ndarray:
    return np.array([charset.encode(t, T) for t in labels], dtype=np.int64)


def _normalize_rows(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def train_step(state: TrainState, batch: StepBatch) -> LossBreakdown:
    try:
        return _train_step(state, batch)
    except nd.NumericError as exc:
        raise TrainingDivergedError(f"step {state.step}: {exc}") from exc


def _train_step(state: TrainState, batch: StepBatch) -> LossBreakdown:
    cfg = state.config
    mc = cfg.model
    charset = Charset(cfg.charset)
    T = mc.seq_len
    Bl = len(batch.lab_labels)
    Bu = len(batch.unl_strong)
    lcfg = cfg.loss_config

    student_in = np.concatenate([batch.lab_base, batch.lab_strong, batch.unl_strong])
    so = forward(student_in, state.student, mc, requires_grad=True)
    need_teacher = cfg.consistency != "none" or (cfg.align_loss != "none" and cfg.lam > 0) or Bu > 0
    to = None
    if need_teacher:
        teacher_in = np.concatenate([batch.lab_base, batch.unl_weak])
        to = forward(teacher_in, state.teacher, mc, requires_grad=False)

    # recognition loss on both labeled views
    gt = _targets(batch.lab_labels, charset, T)
    rec_labels = np.concatenate([gt, gt])
    logits = so.logits.value
    l_rec, g_rec = recognition_loss(logits[: 2 * Bl], rec_labels, charset.pad, cfg.rec_length_mode)
    g_logits = np.zeros_like(logits)
    g_logits[: 2 * Bl] = g_rec
    terms = [nd.custom("rec", [so.logits], l_rec, [g_logits])]

    # teacher references
    pseudo = []
    if to is not None and Bu:
        tprobs = to.probs()
        pseudo = [pseudo_label(tprobs[Bl + k], charset) for k in range(Bu)]
    sb_mean = float(np.mean([p.word_conf for p in pseudo])) if pseudo else 0.0

    # consistency on strong views
    l_ccr = 0.0
    if cfg.consistency != "none":
        t_rows, s_rows, conf, lens = [], [], [], []
        if cfg.ccr_on_labeled:
            for k, text in enumerate(batch.lab_labels):
                t_rows.append(k)
                s_rows.append(Bl + k)
                conf.append(1.0)
                lens.append(min(len(text) + 1, T))
        for k, pl in enumerate(pseudo):
            t_rows.append(Bl + k)
            s_rows.append(2 * Bl + k)
            conf.append(pl.word_conf)
            lens.append(pl.length)
        if t_rows:
            tp = to.probs()[t_rows]
            plog = so.projector_logits.value
            sp = so.projector_probs()[s_rows]
            if cfg.consistency == "kl":
                l_ccr = ccr_loss(tp, sp, conf, lens, cfg.eta_ccr)
                g = ccr_logit_grad(tp, sp, conf, lens, cfg.eta_ccr)
            else:
                hard = np.eye(tp.shape[-1])[tp.argmax(axis=-1)]
                w = (np.arange(T)[None, :] < np.asarray(lens)[:, None]) * (
                    (np.asarray(conf) > cfg.eta_ccr) / np.asarray(lens)
                )[:, None]
                lsm = log_softmax(plog[s_rows])
                l_ccr = float(-(w * (hard * lsm).sum(-1)).sum())
                g = w[..., None] * (sp - hard)
            # mean over the rows that pass the confidence gate
            n = max(int((np.asarray(conf) > cfg.eta_ccr).sum()), 1)
            l_ccr /= n
            g_proj = np.zeros_like(plog)
            g_proj[s_rows] = g / n
            terms.append(nd.custom("ccr", [so.projector_logits], l_ccr, [g_proj]))

    # character alignment between strong (student) and base (teacher) views
    l_align = 0.0
    if cfg.align_loss != "none" and cfg.lam > 0:
        feats = nd.l2_normalize_rows(so.features) if cfg.normalize else so.features
        fa = feats.value[Bl:].reshape(-1, mc.dim)
        fb = to.features.value.reshape(-1, mc.dim)
        if cfg.normalize:
            fb = _normalize_rows(fb)
        labels = np.full((Bl + Bu, T), SLOT_PAD, dtype=np.int64)
        conf = np.ones((Bl + Bu, T))
        valid = np.zeros((Bl + Bu, T), dtype=bool)
        for k, text in enumerate(batch.lab_labels):
            ids = charset.encode(text, T)[: len(text)]
            labels[k, : len(ids)] = ids
            valid[k, : len(ids)] = True
        for k, pl in enumerate(pseudo):
            ids = [i for i in pl.ids if i < len(charset.symbols)][: len(pl.text)]
            labels[Bl + k, : len(ids)] = ids
            valid[Bl + k, : len(ids)] = True
            conf[Bl + k] = pl.word_conf
        ab = AlignmentBatch(fa, fb, labels.reshape(-1), conf.reshape(-1), valid.reshape(-1), Bl + Bu, T)
        if cfg.align_loss == "cua":
            res = cua_loss(ab, lcfg)
        else:
            res = cc_loss(ab, lcfg, cfg.align_loss)
        n_slots = max(int(ab.valid.sum()), 1)
        l_align = res.value / n_slots
        g_feat = np.zeros_like(feats.value)
        g_feat[Bl:] = (res.grad_a / n_slots).reshape(Bl + Bu, T, mc.dim) * cfg.lam
        terms.append(nd.custom("align", [feats], l_align * cfg.lam, [g_feat]))

    root = terms[0]
    for t in terms[1:]:
        root = nd.add(root, t)
    total = float(root.value[0, 0])
    if not math.isfinite(total):
        raise TrainingDivergedError(
            f"step {state.step}: non-finite loss (rec={l_rec}, ccr={l_ccr}, align={l_align})"
        )
    nd.backward(root)
    grads = {name: (leaf.adjoint if leaf.adjoint is not None else np.zeros_like(leaf.value))
             for name, leaf in so.leaves.items()}
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingDivergedError(f"step {state.step}: non-finite gradient for {name}")

    lr = one_cycle_lr(state.step, max(cfg.steps, 1), cfg.max_lr) if state.step <= cfg.steps else cfg.max_lr / 1e4
    adamw_step(state, grads, lr)
    ema_update(state.teacher, state.student, cfg.alpha)

    pred = [charset.decode(np.argmax(row, axis=-1)) for row in logits[:Bl]]
    acc = float(np.mean([p == t for p, t in zip(pred, batch.lab_labels)]))
    state.acc_running = acc if state.step == 0 else 0.98 * state.acc_running + 0.02 * acc
    out = LossBreakdown(state.step, lr, l_rec, l_ccr, l_align, total, sb_mean, state.acc_running)
    state.step += 1
    return out


def _batches(cfg: TrainConfig, start: int, stop: int, labeled, unlabeled, workers: int):
    """Yield step batches in order; ``workers`` threads build up to 2*workers ahead."""
    if workers <= 0:
        for step in range(start, stop):
            yield make_step_batch(cfg, step, labeled, unlabeled)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending = deque()
        nxt = start
        try:
            while nxt < stop or pending:
                while nxt < stop and len(pending) < 2 * workers:
                    pending.append(pool.submit(make_step_batch, cfg, nxt, labeled, unlabeled))
                    nxt += 1
                yield pending.popleft().result()
        finally:
            for f in pending:
                f.cancel()


def train(state: TrainState, labeled: Dataset, unlabeled: Dataset | None = None,
          steps: int | None = None, log=None, workers: int = 1) -> list[LossBreakdown]:
    """Run until ``state.step`` reaches ``steps`` (default: the configured total).

    Batches are a pure function of (seed, step), so the trajectory does not
    depend on ``workers``; 0 builds them on the calling thread.
    """
    stop = state.config.steps if steps is None else steps
    history = []
    for batch in _batches(state.config, state.step, stop, labeled, unlabeled, workers):
        rec = train_step(state, batch)
        history.append(rec)
        if log is not None:
            log.write(rec.to_json() + "\n")
    return history


def evaluate(params: ParamSet, dataset: Dataset, cfg: TrainConfig) -> float:
    from .metrics import word_accuracy

    imgs = np.stack([prepare(im, cfg) for im in dataset.images])
    preds = predict(imgs, params, cfg.model, Charset(cfg.charset))
    return word_accuracy(preds, dataset.labels)


# ---------------------------------------------------------------------------
# checkpoints: u64 header length, JSON header, raw little-endian float64 arrays

_GROUPS = ("student", "teacher", "m", "v")


def save_checkpoint(state: TrainState, path) -> None:
    entries, chunks, offset = [], [], 0
    for group in _GROUPS:
        ps = getattr(state, group)
        for name, arr in ps.items():
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            entries.append({"group": group, "name": name, "shape": list(arr.shape),
                            "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "version": CHECKPOINT_VERSION,
        "config": state.config.to_dict(),
        "step": state.step,
        "acc_running": state.acc_running.hex(),
        "rng": {"kind": "derived", "seed": state.config.seed, "step": state.step},
        "entries": entries,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(struct.pack("<Q", len(hb)) + hb + payload)
    tmp.replace(path)


def load_checkpoint(path) -> TrainState:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise CheckpointError(f"{path}: truncated before header length")
    (hlen,) = struct.unpack("<Q", data[:8])
    if 8 + hlen > len(data):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    if not isinstance(header, dict) or "version" not in header:
        raise CheckpointError(f"{path}: header lacks a version tag")
    if header["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {header['version']!r} does not match reader {CHECKPOINT_VERSION!r}"
        )
    payload = data[8 + hlen:]
    if len(payload) != header.get("payload_bytes"):
        raise CheckpointError(f"{path}: payload has {len(payload)} bytes, header says {header.get('payload_bytes')}")
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CheckpointError(f"{path}: payload checksum mismatch")
    try:
        cfg = TrainConfig.from_dict(header["config"])
        groups = {g: ParamSet() for g in _GROUPS}
        for e in header["entries"]:
            raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
            arr = np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).astype(np.float64)
            groups[e["group"]][e["name"]] = arr
        state = TrainState(cfg, groups["student"], groups["teacher"], groups["m"], groups["v"],
                           int(header["step"]), float.fromhex(header["acc_running"]))
        state.student.check_compatible(state.teacher)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from None
    return state
