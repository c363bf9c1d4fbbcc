"""Unified representation forms.

A form pairs a reading direction (in image coordinates) with the character
orientation *relative to that direction*: ``upright`` characters have their
top 90 degrees counter-clockwise from the reading direction (ordinary
horizontal text), ``rotated-90`` characters have their top pointing against
the reading direction (what a stacked vertical line becomes once the image is
turned). Rotating an image keeps the relative orientation and turns the
reading direction, which is why the eight forms collapse onto two.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

READING_ORDERS = ("left-to-right", "right-to-left", "top-to-bottom", "bottom-to-top")
ORIENTATIONS = ("upright", "rotated-90")

# reading direction as (dx, dy), y pointing down
_DIRECTION = {
    "left-to-right": (1, 0),
    "right-to-left": (-1, 0),
    "top-to-bottom": (0, 1),
    "bottom-to-top": (0, -1),
}
_ORDER = {v: k for k, v in _DIRECTION.items()}


@dataclass(frozen=True)
class RepForm:
    reading_order: str
    char_orientation: str

    def __post_init__(self):
        if self.reading_order not in READING_ORDERS:
            raise ValueError(f"unknown reading order {self.reading_order!r}")
        if self.char_orientation not in ORIENTATIONS:
            raise ValueError(f"unknown character orientation {self.char_orientation!r}")

    @property
    def is_primary(self) -> bool:
        return self.reading_order == "left-to-right"

    @property
    def tag(self) -> str:
        short = {"left-to-right": "ltr", "right-to-left": "rtl", "top-to-bottom": "ttb", "bottom-to-top": "btt"}
        return f"{short[self.reading_order]}-{'upright' if self.char_orientation == 'upright' else 'rotated'}"

    @classmethod
    def from_tag(cls, tag: str) -> "RepForm":
        for f in all_forms():
            if f.tag == tag:
                return f
        raise ValueError(f"unknown form tag {tag!r}")

    @property
    def is_vertical(self) -> bool:
        return self.reading_order in ("top-to-bottom", "bottom-to-top")


PRIMARY_UPRIGHT = RepForm("left-to-right", "upright")
PRIMARY_ROTATED = RepForm("left-to-right", "rotated-90")


def all_forms() -> list[RepForm]:
    return [RepForm(r, o) for r, o in product(READING_ORDERS, ORIENTATIONS)]


def _rotate_dir_cw(d):
    # clockwise on screen with y pointing down: (dx, dy) -> (-dy, dx)
    return (-d[1], d[0])


def reduce_form(form: RepForm) -> tuple[RepForm, bool]:
    """Primary form reached after canonicalization, and whether a 180 degree turn is needed.

    Vertical forms are first turned clockwise (the aspect-ratio rule fires for
    them); any form then reading right-to-left is turned 180 degrees.
    """
    d = _DIRECTION[form.reading_order]
    if form.is_vertical:
        d = _rotate_dir_cw(d)
    flip = _ORDER[d] == "right-to-left"
    return RepForm("left-to-right", form.char_orientation), flip


def canonicalize(image, r: float = 1.3):
    """Rotate 90 degrees clockwise when height/width > r; returns (image, rotated)."""
    if r <= 0:
        raise ValueError("aspect threshold must be positive")
    image = np.asarray(image)
    h, w = image.shape[:2]
    if h == 0 or w == 0:
        raise ValueError("empty image")
    if h / w > r:
        return np.ascontiguousarray(np.rot90(image, k=-1)), True
    return image, False


def rotate180(image) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(image)[::-1, ::-1])


def form_pattern(form: RepForm, length: int = 21, thick: int = 7) -> np.ndarray:
    """Small test pattern: a shaft along the reading direction, an arrow head at
    its end, and a tick at its start pointing towards the characters' top."""
    horizontal = not form.is_vertical
    h, w = (thick, length) if horizontal else (length, thick)
    img = np.zeros((h, w), dtype=np.uint8)
    dx, dy = _DIRECTION[form.reading_order]
    cx, cy = w // 2, h // 2
    half = (length - 1) // 2
    start = (cx - dx * half, cy - dy * half)
    end = (cx + dx * half, cy + dy * half)
    for k in range(-half, half + 1):
        img[cy + dy * k, cx + dx * k] = 100
    img[end[1], end[0]] = 255
    px, py = dy, -dx  # counter-clockwise normal of the reading direction
    if form.char_orientation == "upright":
        for k in (1, 2, 3):
            img[start[1] + py * k, start[0] + px * k] = 200
    else:
        # top points back along the shaft: brighter mark behind a dimmer one
        img[start[1] + py, start[0] + px] = 200
        img[start[1] + py + dy, start[0] + px + dx] = 180
    return img
