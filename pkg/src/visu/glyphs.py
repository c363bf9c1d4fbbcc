"""Stroke skeletons for the 36 alphanumeric glyphs.

Coordinates live in a unit box, x to the right and y pointing down. Each
character has four variants derived from one hand-drawn skeleton: plain,
slab-serif endpoints, corner-rounded (Chaikin smoothing) and coarse
polygonal. Letters are drawn as capitals.
"""

from __future__ import annotations

import math

import numpy as np


def arc(cx, cy, rx, ry, a0, a1, n=16):
    ts = np.linspace(math.radians(a0), math.radians(a1), n)
    return [(cx + rx * math.cos(t), cy - ry * math.sin(t)) for t in ts]


def _cat(*parts):
    out = []
    for part in parts:
        out.extend(part)
    return out


_BASE = {
    "0": [arc(0.5, 0.5, 0.36, 0.5, 0, 360, 24)],
    "1": [[(0.25, 0.2), (0.55, 0.0), (0.55, 1.0)], [(0.25, 1.0), (0.85, 1.0)]],
    "2": [_cat(arc(0.5, 0.27, 0.42, 0.27, 160, -30), [(0.05, 1.0), (0.95, 1.0)])],
    "3": [_cat(arc(0.5, 0.25, 0.4, 0.25, 150, -90), arc(0.5, 0.75, 0.45, 0.25, 90, -150))],
    "4": [[(0.7, 1.0), (0.7, 0.0), (0.0, 0.7), (1.0, 0.7)]],
    "5": [_cat([(0.9, 0.0), (0.15, 0.0), (0.1, 0.42)], arc(0.48, 0.68, 0.44, 0.32, 130, -150))],
    "6": [arc(0.5, 0.7, 0.42, 0.3, 0, 360, 20), [(0.8, 0.0), (0.4, 0.18), (0.12, 0.5), (0.08, 0.7)]],
    "7": [[(0.0, 0.0), (1.0, 0.0), (0.35, 1.0)]],
    "8": [arc(0.5, 0.25, 0.36, 0.25, 0, 360, 20), arc(0.5, 0.74, 0.44, 0.26, 0, 360, 20)],
    "9": [arc(0.5, 0.3, 0.42, 0.3, 0, 360, 20), [(0.92, 0.3), (0.88, 0.6), (0.6, 0.92), (0.2, 1.0)]],
    "a": [[(0.0, 1.0), (0.5, 0.0), (1.0, 1.0)], [(0.22, 0.6), (0.78, 0.6)]],
    "b": [
        [(0.1, 0.0), (0.1, 1.0)],
        _cat([(0.1, 0.0), (0.55, 0.0)], arc(0.55, 0.24, 0.32, 0.24, 90, -90, 10), [(0.1, 0.48)]),
        _cat([(0.1, 0.48), (0.6, 0.48)], arc(0.6, 0.74, 0.34, 0.26, 90, -90, 10), [(0.1, 1.0)]),
    ],
    "c": [arc(0.55, 0.5, 0.46, 0.5, 45, 315, 20)],
    "d": [
        [(0.1, 0.0), (0.1, 1.0)],
        _cat([(0.1, 0.0), (0.4, 0.0)], arc(0.4, 0.5, 0.5, 0.5, 90, -90, 16), [(0.1, 1.0)]),
    ],
    "e": [[(0.9, 0.0), (0.1, 0.0), (0.1, 1.0), (0.9, 1.0)], [(0.1, 0.5), (0.7, 0.5)]],
    "f": [[(0.9, 0.0), (0.1, 0.0), (0.1, 1.0)], [(0.1, 0.5), (0.7, 0.5)]],
    "g": [_cat(arc(0.55, 0.5, 0.46, 0.5, 45, 330, 20), [(0.95, 0.55), (0.6, 0.55)])],
    "h": [[(0.1, 0.0), (0.1, 1.0)], [(0.9, 0.0), (0.9, 1.0)], [(0.1, 0.5), (0.9, 0.5)]],
    "i": [[(0.5, 0.0), (0.5, 1.0)], [(0.2, 0.0), (0.8, 0.0)], [(0.2, 1.0), (0.8, 1.0)]],
    "j": [[(0.3, 0.0), (0.9, 0.0)], _cat([(0.7, 0.0)], arc(0.4, 0.7, 0.3, 0.3, 0, -180, 12))],
    "k": [[(0.1, 0.0), (0.1, 1.0)], [(0.9, 0.0), (0.1, 0.6)], [(0.35, 0.42), (0.95, 1.0)]],
    "l": [[(0.1, 0.0), (0.1, 1.0), (0.9, 1.0)]],
    "m": [[(0.05, 1.0), (0.1, 0.0), (0.5, 0.7), (0.9, 0.0), (0.95, 1.0)]],
    "n": [[(0.1, 1.0), (0.1, 0.0), (0.9, 1.0), (0.9, 0.0)]],
    "o": [arc(0.5, 0.5, 0.5, 0.5, 0, 360, 28)],
    "p": [_cat([(0.1, 1.0), (0.1, 0.0), (0.6, 0.0)], arc(0.6, 0.27, 0.32, 0.27, 90, -90, 10), [(0.1, 0.54)])],
    "q": [arc(0.5, 0.5, 0.5, 0.5, 0, 360, 28), [(0.6, 0.7), (0.95, 1.0)]],
    "r": [
        _cat([(0.1, 1.0), (0.1, 0.0), (0.6, 0.0)], arc(0.6, 0.27, 0.32, 0.27, 90, -90, 10), [(0.1, 0.54)]),
        [(0.45, 0.54), (0.95, 1.0)],
    ],
    "s": [_cat(arc(0.5, 0.26, 0.4, 0.26, 30, 270, 14), arc(0.5, 0.76, 0.44, 0.24, 90, -150, 14))],
    "t": [[(0.0, 0.0), (1.0, 0.0)], [(0.5, 0.0), (0.5, 1.0)]],
    "u": [_cat([(0.1, 0.0), (0.1, 0.6)], arc(0.5, 0.6, 0.4, 0.4, 180, 360, 12), [(0.9, 0.0)])],
    "v": [[(0.0, 0.0), (0.5, 1.0), (1.0, 0.0)]],
    "w": [[(0.0, 0.0), (0.25, 1.0), (0.5, 0.35), (0.75, 1.0), (1.0, 0.0)]],
    "x": [[(0.0, 0.0), (1.0, 1.0)], [(1.0, 0.0), (0.0, 1.0)]],
    "y": [[(0.0, 0.0), (0.5, 0.5), (1.0, 0.0)], [(0.5, 0.5), (0.5, 1.0)]],
    "z": [[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]],
}


def _is_closed(line) -> bool:
    return len(line) > 2 and math.dist(line[0], line[-1]) < 1e-9


def _serif(strokes):
    out = [list(s) for s in strokes]
    for s in strokes:
        if _is_closed(s):
            continue
        for end, prev in ((s[0], s[1]), (s[-1], s[-2])):
            dx, dy = end[0] - prev[0], end[1] - prev[1]
            norm = math.hypot(dx, dy) or 1.0
            nx, ny = -dy / norm * 0.1, dx / norm * 0.1
            out.append([(end[0] - nx, end[1] - ny), (end[0] + nx, end[1] + ny)])
    return out


def _chaikin(line, rounds=2):
    pts = [tuple(p) for p in line]
    closed = _is_closed(pts)
    for _ in range(rounds):
        new = [] if closed else [pts[0]]
        for a, b in zip(pts[:-1], pts[1:]):
            new.append((0.75 * a[0] + 0.25 * b[0], 0.75 * a[1] + 0.25 * b[1]))
            new.append((0.25 * a[0] + 0.75 * b[0], 0.25 * a[1] + 0.75 * b[1]))
        if closed:
            new.append(new[0])
        else:
            new.append(pts[-1])
        pts = new
    return pts


def _coarse(line, step=4):
    if len(line) <= 3:
        return list(line)
    pts = list(line[::step])
    if pts[-1] != line[-1]:
        pts.append(line[-1])
    return pts


def _variants(strokes):
    return [
        [list(s) for s in strokes],
        _serif(strokes),
        [_chaikin(s) for s in strokes],
        [_coarse(s) for s in strokes],
    ]


VARIANTS = {ch: _variants(strokes) for ch, strokes in _BASE.items()}
N_VARIANTS = 4


def skeleton(ch: str, variant: int = 0) -> list[np.ndarray]:
    """Polylines (each an (m, 2) array) of ``ch`` in the unit box."""
    table = VARIANTS[ch.lower()]
    return [np.asarray(s, dtype=np.float64) for s in table[variant]]
