"""Toy transformer recognizer: patch embedding, pre-norm encoder blocks, and a
one-block decoder of T learned queries cross-attending the encoder output."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import ndtape as nd
from .charset import Charset
from .teacher import ParamSet


@dataclass(frozen=True)
class ModelConfig:
    image_w: int = 64
    image_h: int = 32
    patch_w: int = 4
    patch_h: int = 4
    dim: int = 64
    depth: int = 2
    heads: int = 4
    seq_len: int = 6
    num_classes: int = 12
    mlp_ratio: int = 2
    stem_hidden: int = 0  # >0 adds a hidden ReLU layer to the patch embedding
    stride_w: int = 0  # 0 means non-overlapping (stride = patch size)
    stride_h: int = 0

    def __post_init__(self):
        sw, sh = self.strides
        if (self.image_w - self.patch_w) % sw or (self.image_h - self.patch_h) % sh or \
                self.patch_w > self.image_w or self.patch_h > self.image_h:
            raise ValueError(
                f"image {self.image_w}x{self.image_h} not tiled by patch {self.patch_w}x{self.patch_h}"
                f" at stride {sw}x{sh}"
            )
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by {self.heads} heads")

    @property
    def strides(self) -> tuple:
        return (self.stride_w or self.patch_w, self.stride_h or self.patch_h)

    @property
    def grid(self) -> tuple:
        sw, sh = self.strides
        return ((self.image_h - self.patch_h) // sh + 1, (self.image_w - self.patch_w) // sw + 1)

    @property
    def num_patches(self) -> int:
        gh, gw = self.grid
        return gh * gw

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ForwardOutput:
    features: nd.Node  # (B, T, D) decoder outputs
    logits: nd.Node  # (B, T, C)
    projector_logits: nd.Node  # (B, T, C)
    leaves: dict  # parameter name -> leaf node

    def probs(self) -> np.ndarray:
        return _softmax(self.logits.value)

    def projector_probs(self) -> np.ndarray:
        return _softmax(self.projector_logits.value)


def _softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def init_params(cfg: ModelConfig, seed: int = 0) -> ParamSet:
    rng = np.random.default_rng(seed)
    D, C = cfg.dim, cfg.num_classes
    H = cfg.mlp_ratio * D
    patch = cfg.patch_w * cfg.patch_h
    p = ParamSet()

    def dense(name, fan_in, fan_out):
        p[f"{name}.w"] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), (fan_in, fan_out))
        p[f"{name}.b"] = np.zeros((1, fan_out))

    def norm(name):
        p[f"{name}.g"] = np.ones((1, D))
        p[f"{name}.b"] = np.zeros((1, D))

    if cfg.stem_hidden:
        dense("stem", patch, cfg.stem_hidden)
        dense("embed", cfg.stem_hidden, D)
    else:
        dense("embed", patch, D)
    p["pos"] = rng.normal(0.0, 0.02, (cfg.num_patches, D))
    for k in range(cfg.depth):
        norm(f"enc{k}.ln1")
        dense(f"enc{k}.qkv", D, 3 * D)
        dense(f"enc{k}.proj", D, D)
        norm(f"enc{k}.ln2")
        dense(f"enc{k}.fc1", D, H)
        dense(f"enc{k}.fc2", H, D)
    norm("enc.ln")
    p["dec.queries"] = rng.normal(0.0, 1.0, (cfg.seq_len, D))
    norm("dec.lnq")
    dense("dec.q", D, D)
    dense("dec.kv", D, 2 * D)
    dense("dec.proj", D, D)
    norm("dec.ln2")
    dense("dec.fc1", D, H)
    dense("dec.fc2", H, D)
    norm("dec.ln")
    dense("head", D, C)
    dense("projector", D, C)
    return p


def patchify(images: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """(B, H, W) in [0, 1] -> (B, num_patches, patch_h * patch_w), row-major patches."""
    images = np.asarray(images, dtype=np.float64)
    B = images.shape[0]
    if images.shape[1:] != (cfg.image_h, cfg.image_w):
        raise ValueError(f"images must be {cfg.image_h}x{cfg.image_w}, got {images.shape[1:]}")
    sw, sh = cfg.strides
    win = np.lib.stride_tricks.sliding_window_view(images, (cfg.patch_h, cfg.patch_w), axis=(1, 2))
    win = win[:, ::sh, ::sw]
    gh, gw = win.shape[1:3]
    return np.ascontiguousarray(win).reshape(B, gh * gw, cfg.patch_h * cfg.patch_w)


def _dense(x, leaves, name):
    return nd.add(nd.matmul(x, leaves[f"{name}.w"]), leaves[f"{name}.b"])


def _norm(x, leaves, name):
    return nd.add(nd.mul(nd.layer_norm(x), leaves[f"{name}.g"]), leaves[f"{name}.b"])


def _split_heads(x, B, N, heads, dh):
    x = nd.reshape(x, (B, N, heads, dh))
    x = nd.swapaxes(x, 1, 2)
    return nd.reshape(x, (B * heads, N, dh))


def _merge_heads(x, B, N, heads, dh):
    x = nd.reshape(x, (B, heads, N, dh))
    x = nd.swapaxes(x, 1, 2)
    return nd.reshape(x, (B, N, heads * dh))


def _attend(q, k, v, B, Nq, Nk, heads, dh):
    q = _split_heads(q, B, Nq, heads, dh)
    k = _split_heads(k, B, Nk, heads, dh)
    v = _split_heads(v, B, Nk, heads, dh)
    att = nd.softmax_rows(nd.scale(nd.matmul(q, nd.transpose(k)), 1.0 / math.sqrt(dh)))
    return _merge_heads(nd.matmul(att, v), B, Nq, heads, dh)


def _mlp(x, leaves, name):
    return _dense(nd.relu(_dense(x, leaves, f"{name}.fc1")), leaves, f"{name}.fc2")


def forward(images, params: ParamSet, cfg: ModelConfig, requires_grad: bool = True) -> ForwardOutput:
    """Images are (B, H, W) floats in [0, 1] (uint8 input is rescaled)."""
    images = np.asarray(images)
    if images.dtype == np.uint8:
        images = images.astype(np.float64) / 255.0
    if images.ndim != 3:
        raise ValueError(f"expected a (B, H, W) batch, got shape {images.shape}")
    leaves = {name: nd.input(v, name=name, requires_grad=requires_grad) for name, v in params.items()}
    for name, shape in params.shapes().items():
        if leaves[name].shape != shape:
            raise ValueError(f"parameter {name}: shape mismatch")
    B = images.shape[0]
    N, D, heads = cfg.num_patches, cfg.dim, cfg.heads
    dh = D // heads
    T = cfg.seq_len

    x = nd.constant(patchify(images, cfg) - 0.5)
    if cfg.stem_hidden:
        x = nd.relu(_dense(x, leaves, "stem"))
    x = nd.add(_dense(x, leaves, "embed"), leaves["pos"])
    for k in range(cfg.depth):
        h = _norm(x, leaves, f"enc{k}.ln1")
        qkv = _dense(h, leaves, f"enc{k}.qkv")
        q = nd.slice_(qkv, (slice(None), slice(None), slice(0, D)))
        kk = nd.slice_(qkv, (slice(None), slice(None), slice(D, 2 * D)))
        v = nd.slice_(qkv, (slice(None), slice(None), slice(2 * D, 3 * D)))
        x = nd.add(x, _dense(_attend(q, kk, v, B, N, N, heads, dh), leaves, f"enc{k}.proj"))
        x = nd.add(x, _mlp(_norm(x, leaves, f"enc{k}.ln2"), leaves, f"enc{k}"))
    mem = _norm(x, leaves, "enc.ln")

    qy = nd.expand(leaves["dec.queries"], B)
    q = _dense(_norm(qy, leaves, "dec.lnq"), leaves, "dec.q")
    kv = _dense(mem, leaves, "dec.kv")
    kk = nd.slice_(kv, (slice(None), slice(None), slice(0, D)))
    v = nd.slice_(kv, (slice(None), slice(None), slice(D, 2 * D)))
    y = nd.add(qy, _dense(_attend(q, kk, v, B, T, N, heads, dh), leaves, "dec.proj"))
    y = nd.add(y, _mlp(_norm(y, leaves, "dec.ln2"), leaves, "dec"))
    feats = _norm(y, leaves, "dec.ln")
    logits = _dense(feats, leaves, "head")
    proj = _dense(feats, leaves, "projector")
    return ForwardOutput(feats, logits, proj, leaves)


def greedy_decode(logits, charset: Charset):
    """Argmax per position up to the first EOS; returns (text, per-step confidences)."""
    probs = _softmax(np.asarray(logits, dtype=np.float64))
    ids, conf = [], []
    for row in probs:
        k = int(np.argmax(row))
        ids.append(k)
        conf.append(float(row[k]))
        if k == charset.eos:
            break
    return charset.decode(ids), conf


def predict(images, params: ParamSet, cfg: ModelConfig, charset: Charset, batch_size: int = 256) -> list[str]:
    out = []
    for start in range(0, len(images), batch_size):
        fo = forward(images[start:start + batch_size], params, cfg, requires_grad=False)
        out.extend(greedy_decode(row, charset)[0] for row in fo.logits.value)
    return out
