"""Mean-Teacher pieces: parameter sets, EMA tracking, pseudo-labels, augmentation."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .charset import Charset


class ParamSet:
    """Ordered name -> float64 array mapping shared by student, teacher and checkpoints."""

    def __init__(self, entries=None):
        self._entries: dict[str, np.ndarray] = {}
        for name, value in (entries or {}).items():
            self[name] = value

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __setitem__(self, name: str, value) -> None:
        self._entries[name] = np.array(value, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self) -> list[str]:
        return list(self._entries)

    def shapes(self) -> dict[str, tuple]:
        return {k: v.shape for k, v in self._entries.items()}

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self._entries.items()})

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for k, v in self._entries.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return h.hexdigest()

    def check_compatible(self, other: "ParamSet") -> None:
        if self.names() != other.names():
            raise ValueError(f"parameter names differ: {self.names()} vs {other.names()}")
        for k in self._entries:
            if self[k].shape != other[k].shape:
                raise ValueError(f"parameter {k!r}: shape {self[k].shape} vs {other[k].shape}")


def ema_update(teacher: ParamSet, student: ParamSet, alpha: float) -> ParamSet:
    """In place: teacher <- alpha * teacher + (1 - alpha) * student."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    teacher.check_compatible(student)
    for name, t in teacher.items():
        t *= alpha
        t += (1.0 - alpha) * student[name]
    return teacher


@dataclass(frozen=True)
class PseudoLabel:
    text: str
    ids: tuple
    per_step_conf: tuple
    word_conf: float

    @property
    def length(self) -> int:
        """Decoded steps, EOS included when one was emitted."""
        return len(self.per_step_conf)


def pseudo_label(teacher_probs, charset: Charset) -> PseudoLabel:
    """Greedy decode; confidence is the product of max probabilities up to and including EOS."""
    probs = np.asarray(teacher_probs, dtype=np.float64)
    ids, confs = [], []
    for row in probs:
        k = int(np.argmax(row))
        ids.append(k)
        confs.append(float(row[k]))
        if k == charset.eos:
            break
    word_conf = 1.0
    for c in confs:
        word_conf *= c
    return PseudoLabel(charset.decode(ids), tuple(ids), tuple(confs), word_conf)


# ---------------------------------------------------------------------------
# augmentation (grayscale uint8 images)


@dataclass(frozen=True)
class AugmentParams:
    brightness: float = 0.0  # additive, fraction of full scale
    contrast: float = 1.0
    rotation: float = 0.0  # degrees
    noise_sigma: float = 0.0  # fraction of full scale
    blur: int = 0  # box size in px, 0 = off
    erase: tuple | None = None  # (row, col, h, w)
    noise_seed: int = 0


def sample_augment_params(strength: str, rng: np.random.Generator, shape) -> AugmentParams:
    h, w = shape
    if strength == "weak":
        return AugmentParams(
            brightness=float(rng.uniform(-0.2, 0.2)),
            contrast=float(rng.uniform(0.7, 1.3)),
        )
    if strength != "strong":
        raise ValueError(f"unknown augmentation strength {strength!r}")
    on = rng.random(5) < 0.5
    erase = None
    if on[3]:
        area = rng.uniform(0.05, 0.2) * h * w
        eh = int(np.clip(round(np.sqrt(area * rng.uniform(0.5, 2.0))), 1, h))
        ew = int(np.clip(round(area / eh), 1, w))
        erase = (int(rng.integers(0, h - eh + 1)), int(rng.integers(0, w - ew + 1)), eh, ew)
    return AugmentParams(
        brightness=float(rng.uniform(-0.25, 0.25)) if on[4] else 0.0,
        contrast=float(rng.uniform(0.6, 1.4)) if on[4] else 1.0,
        rotation=float(rng.uniform(-15.0, 15.0)) if on[0] else 0.0,
        noise_sigma=float(rng.uniform(0.0, 0.1)) if on[1] else 0.0,
        blur=int(rng.integers(2, 4)) if on[2] else 0,
        erase=erase,
        noise_seed=int(rng.integers(0, 2**31)),
    )


def apply_augment(image, params: AugmentParams) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64) / 255.0
    if params.rotation:
        img = ndimage.rotate(img, params.rotation, reshape=False, order=1, mode="constant", cval=0.0)
    if params.blur:
        img = ndimage.uniform_filter(img, size=params.blur, mode="constant")
    if params.contrast != 1.0 or params.brightness:
        img = (img - img.mean()) * params.contrast + img.mean() + params.brightness
    if params.noise_sigma:
        img = img + np.random.default_rng(params.noise_seed).normal(0.0, params.noise_sigma, img.shape)
    if params.erase is not None:
        r, c, eh, ew = params.erase
        img[r:r + eh, c:c + ew] = 0.0
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def augment(image, strength: str, rng: np.random.Generator) -> np.ndarray:
    """Weak: brightness/contrast jitter. Strong: random composition of rotation,
    noise, box blur, erasing and brightness/contrast. Shape is preserved."""
    image = np.asarray(image)
    return apply_augment(image, sample_augment_params(strength, rng, image.shape))
