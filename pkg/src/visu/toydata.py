"""Desk-scale datasets for the end-to-end digit recognizer: clean OGS renders
and a strongly distorted family used as unlabeled and held-out data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .charset import DIGITS, Charset
from .ogs import StylePolicy, derive_seed, generate_sample, random_words
from .trainer import Dataset

TOY_W, TOY_H = 64, 32


def distort(image: np.ndarray, rng: np.random.Generator, p_vertical: float = 0.25,
            p_invert: float = 0.0) -> np.ndarray:
    """Elastic warp, stroke erosion/dilation, blur, clutter, noise, low contrast and
    (with probability ``p_vertical``) a quarter-turn vertical presentation.

    Polarity inversion is off by default: no labeled sample is ever dark-on-light,
    so inverted images give the teacher nothing to bootstrap from.
    """
    img = image.astype(np.float64) / 255.0
    h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    amp, period, phase = rng.uniform(1.0, 2.5), rng.uniform(12.0, 30.0), rng.uniform(0, 2 * np.pi)
    dy = amp * np.sin(2 * np.pi * xx / period + phase)
    dx = 0.6 * amp * np.sin(2 * np.pi * yy / (0.5 * period) + phase)
    img = ndimage.map_coordinates(img, [yy + dy, xx + dx], order=1, mode="constant")
    morph = rng.integers(3)
    if morph == 1:
        img = ndimage.grey_dilation(img, size=(2, 2))
    elif morph == 2:
        img = np.maximum(ndimage.grey_erosion(img, size=(2, 1)), 0.5 * img)
    img = ndimage.gaussian_filter(img, rng.uniform(0.3, 1.0))
    for _ in range(int(rng.integers(0, 3))):
        r0, r1 = rng.integers(0, h, 2)
        c0, c1 = rng.integers(0, w, 2)
        n = max(abs(int(r1 - r0)), abs(int(c1 - c0)), 1)
        rr = np.linspace(r0, r1, n).round().astype(int)
        cc = np.linspace(c0, c1, n).round().astype(int)
        img[rr, cc] = np.maximum(img[rr, cc], rng.uniform(0.3, 0.7))
    lo, hi = rng.uniform(0.0, 0.3), rng.uniform(0.6, 1.0)
    img = lo + (hi - lo) * img + rng.normal(0.0, rng.uniform(0.02, 0.08), img.shape)
    if rng.random() < p_invert:
        img = 1.0 - img
    out = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    if rng.random() < p_vertical:
        out = np.rot90(out, k=1).copy()  # undone exactly by the clockwise canonicalization
    return out


def make_split(count: int, seed: int, distorted: bool = False, max_len: int = 5, min_len: int = 1,
               symbols: str = DIGITS, policy: StylePolicy = StylePolicy()) -> Dataset:
    charset = Charset(symbols)
    words = random_words(np.random.default_rng([seed, 7]), count, symbols, min_len, max_len)
    images, labels = [], []
    for k, word in enumerate(words):
        s = derive_seed(seed, k)
        sample = generate_sample(word, policy, s, TOY_W, TOY_H, charset, max_len + 1)
        img = sample.image
        if distorted:
            img = distort(img, np.random.default_rng([s, 1]))
        images.append(img)
        labels.append(word)
    return Dataset(images, labels, [not distorted] * count)


def toy_model() -> "ModelConfig":
    """Overlapping full-height column patches: 16x32 windows every 4 px."""
    from .recognizer import ModelConfig

    return ModelConfig(patch_w=16, patch_h=32, stride_w=4)


def smoke_config(kind: str, seed: int, steps: int = 3000):
    """``visu``: KL consistency + CUA + URF + OGS + unlabeled data; ``baseline``:
    recognition loss only. The digit charset has 180-degree symmetric pairs
    (6/9), so the flip augmentation is disabled for both."""
    from .trainer import TrainConfig, baseline_config

    common = dict(steps=steps, seed=seed, max_lr=3e-3, flip180_prob=0.0, model=toy_model())
    if kind == "visu":
        return TrainConfig(consistency="kl", align_loss="cua", use_urf=True, use_ogs=True,
                           use_ru=True, lam=0.1, **common)
    if kind == "baseline":
        return baseline_config(**common)
    raise ValueError(f"unknown smoke kind {kind!r}")


@dataclass
class SmokeSplits:
    labeled: Dataset
    unlabeled: Dataset
    clean: Dataset
    distorted: Dataset


def smoke_splits(seed: int, n_train: int = 2000, n_test: int = 500, max_len: int = 3) -> SmokeSplits:
    base = 1000 * int(seed)
    return SmokeSplits(
        make_split(n_train, base + 1, max_len=max_len),
        make_split(n_train, base + 2, distorted=True, max_len=max_len),
        make_split(n_test, base + 3, max_len=max_len),
        make_split(n_test, base + 4, distorted=True, max_len=max_len),
    )


def run_smoke(kind: str, seed: int, splits: SmokeSplits, steps: int = 3000, log=None) -> dict:
    from .trainer import TrainState, evaluate, train

    cfg = smoke_config(kind, seed, steps)
    state = TrainState.initialize(cfg)
    train(state, splits.labeled, splits.unlabeled if cfg.use_ru else None, log=log)
    return {
        "kind": kind,
        "seed": seed,
        "clean": evaluate(state.teacher, splits.clean, cfg),
        "distorted": evaluate(state.teacher, splits.distorted, cfg),
    }
