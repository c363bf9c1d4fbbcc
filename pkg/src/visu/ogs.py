"""Online generation of background-free word images, plus PGM/TSV dataset I/O."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import glyphs, kernels
from .charset import ALNUM36, Charset, CharsetError
from .urf import PRIMARY_ROTATED, PRIMARY_UPRIGHT

REF_GLYPH_PX = 24.0  # stroke widths are quoted at this glyph height
GLYPH_ASPECT = 0.6
GAP = 0.15
MARGIN_PX = 2.0


class LabelLengthError(ValueError):
    pass


class PGMError(ValueError):
    pass


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class GlyphStyle:
    stroke_width: float = 2.5
    shear: float = 0.0
    scale_x: float = 1.0
    scale_y: float = 1.0
    jitter_amp: float = 0.0
    glyph_variant: int = 0

    def validate(self) -> "GlyphStyle":
        ok = (
            1.0 <= self.stroke_width <= 4.0
            and -0.4 <= self.shear <= 0.4
            and 0.7 <= self.scale_x <= 1.3
            and 0.7 <= self.scale_y <= 1.3
            and 0.0 <= self.jitter_amp <= 1.5
            and 0 <= self.glyph_variant < glyphs.N_VARIANTS
        )
        if not ok:
            raise ValueError(f"style out of range: {self}")
        return self


def sample_style(rng: np.random.Generator) -> GlyphStyle:
    return GlyphStyle(
        stroke_width=float(rng.uniform(1.8, 3.2)),
        shear=float(rng.uniform(-0.25, 0.25)),
        scale_x=float(rng.uniform(0.8, 1.2)),
        scale_y=float(rng.uniform(0.8, 1.2)),
        jitter_amp=float(rng.uniform(0.0, 0.75)),
        glyph_variant=int(rng.integers(glyphs.N_VARIANTS)),
    )


@dataclass(frozen=True)
class StylePolicy:
    """``font``/``orientation`` are 'char' (per character) or 'instance' (per sample)."""

    font: str = "char"
    orientation: str = "instance"
    p_rotated: float = 0.5

    def __post_init__(self):
        for name in ("font", "orientation"):
            if getattr(self, name) not in ("char", "instance"):
                raise ValueError(f"{name} policy must be 'char' or 'instance'")


@dataclass
class GlyphSample:
    image: np.ndarray
    label: str
    form: str
    styles: list = field(default_factory=list)
    seed: int = 0
    boxes: list = field(default_factory=list)  # (row0, row1, col0, col1) per glyph, half-open
    orientations: list = field(default_factory=list)


def _glyph_lines(ch: str, style: GlyphStyle, rotated: bool, rng: np.random.Generator | None):
    """Transformed skeleton in glyph units (height ~1), centred on the origin."""
    gw = GLYPH_ASPECT * style.scale_x
    gh = style.scale_y
    jitter = style.jitter_amp / REF_GLYPH_PX
    out = []
    for line in glyphs.skeleton(ch, style.glyph_variant):
        x = (line[:, 0] - 0.5) * gw
        y = (line[:, 1] - 0.5) * gh
        x = x + style.shear * (0.5 * gh - y)
        if jitter > 0 and rng is not None:
            off = rng.uniform(-jitter, jitter, size=(len(line), 2))
            x = x + off[:, 0]
            y = y + off[:, 1]
        if rotated:
            # quarter turn counter-clockwise on screen: (x, y) -> (y, -x)
            x, y = y, -x
        out.append(np.stack([x, y], axis=1))
    return out


def _segments(lines, sx, sy, ox, oy):
    segs = []
    for ln in lines:
        px = ln[:, 0] * sx + ox
        py = ln[:, 1] * sy + oy
        segs.append(np.stack([px[:-1], py[:-1], px[1:], py[1:]], axis=1))
    return np.concatenate(segs, axis=0)


def _bbox(segs, reach, height, width):
    xs = np.concatenate([segs[:, 0], segs[:, 2]])
    ys = np.concatenate([segs[:, 1], segs[:, 3]])
    c0 = max(int(np.floor(xs.min() - reach)), 0)
    c1 = min(int(np.ceil(xs.max() + reach)) + 1, width)
    r0 = max(int(np.floor(ys.min() - reach)), 0)
    r1 = min(int(np.ceil(ys.max() + reach)) + 1, height)
    return (r0, r1, c0, c1)


def _to_u8(cov: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(cov, 0.0, 1.0) * 255.0).astype(np.uint8)


def render_glyph(ch: str, style: GlyphStyle = GlyphStyle(), rotated: bool = False,
                 height_px: float = REF_GLYPH_PX, rng: np.random.Generator | None = None) -> np.ndarray:
    """Rasterize one glyph onto a tight canvas (uint8, ink 255 on 0)."""
    if ch.lower() not in glyphs.VARIANTS:
        raise CharsetError(f"no glyph for {ch!r}")
    lines = _glyph_lines(ch, style, rotated, rng)
    radius = 0.5 * style.stroke_width * height_px / REF_GLYPH_PX
    reach = radius + 0.5
    pts = np.concatenate(lines) * height_px
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    w = int(np.ceil(hi[0] - lo[0] + 2 * reach)) + 1
    h = int(np.ceil(hi[1] - lo[1] + 2 * reach)) + 1
    segs = _segments(lines, height_px, height_px, reach - lo[0], reach - lo[1])
    return _to_u8(kernels.raster_segments(segs, radius, h, w))


def generate_sample(label: str, policy: StylePolicy = StylePolicy(), seed: int = 0,
                    width: int = 100, height: int = 32, charset: Charset = Charset(ALNUM36),
                    max_len: int = 25) -> GlyphSample:
    """Render ``label`` left to right in one of the two primary forms."""
    if not label:
        raise ValueError("label must be non-empty")
    label = charset.normalize(label)
    if len(label) > max_len - 1:
        raise LabelLengthError(f"label {label!r} longer than {max_len - 1} characters")
    rng = np.random.default_rng(seed)
    n = len(label)
    if policy.font == "instance":
        styles = [sample_style(rng)] * n
    else:
        styles = [sample_style(rng) for _ in range(n)]
    if policy.orientation == "instance":
        orients = [bool(rng.random() < policy.p_rotated)] * n
    else:
        orients = [bool(r) for r in rng.random(n) < policy.p_rotated]

    glyph_lines, extents = [], []
    for ch, st, rot in zip(label, styles, orients):
        lines = _glyph_lines(ch, st, rot, rng)
        pts = np.concatenate(lines)
        glyph_lines.append(lines)
        extents.append((pts.min(axis=0), pts.max(axis=0)))

    # horizontal layout in glyph units
    offsets, cursor = [], 0.0
    for lo, hi in extents:
        offsets.append(cursor - lo[0])
        cursor += (hi[0] - lo[0]) + GAP
    total_w = cursor - GAP
    top = min(lo[1] for lo, _ in extents)
    bottom = max(hi[1] for _, hi in extents)
    total_h = bottom - top

    max_stroke = max(s.stroke_width for s in styles)
    sy = (height - 2 * MARGIN_PX - 1.0) / (total_h + max_stroke / REF_GLYPH_PX)
    sx = min((width - 2 * MARGIN_PX - 1.0) / (total_w + max_stroke / REF_GLYPH_PX), 1.5 * sy)
    word_w = total_w * sx
    ox0 = (width - 1 - word_w) / 2.0
    oy0 = (height - 1 - total_h * sy) / 2.0 - top * sy

    canvas = np.zeros((height, width))
    boxes = []
    for lines, off, st in zip(glyph_lines, offsets, styles):
        radius = 0.5 * st.stroke_width * sy / REF_GLYPH_PX
        segs = _segments(lines, sx, sy, ox0 + off * sx, oy0)
        cov = kernels.raster_segments(segs, radius, height, width)
        np.maximum(canvas, cov, out=canvas)
        boxes.append(_bbox(segs, radius + 0.5, height, width))

    if policy.orientation == "instance":
        form = (PRIMARY_ROTATED if orients[0] else PRIMARY_UPRIGHT).tag
    else:
        form = "mixed" if len(set(orients)) > 1 else (PRIMARY_ROTATED if orients[0] else PRIMARY_UPRIGHT).tag
    return GlyphSample(_to_u8(canvas), label, form, list(styles), int(seed), boxes, orients)


def derive_seed(global_seed: int, index: int) -> int:
    """Per-sample seed independent of generation order."""
    return int(np.random.SeedSequence([int(global_seed), int(index)]).generate_state(1, np.uint64)[0])


def generate_dataset(lexicon, count: int, seed: int, policy: StylePolicy = StylePolicy(),
                     width: int = 100, height: int = 32, charset: Charset = Charset(ALNUM36),
                     max_len: int = 25) -> list[GlyphSample]:
    words = list(lexicon)
    if not words:
        raise ValueError("empty lexicon")
    out = []
    for k in range(count):
        s = derive_seed(seed, k)
        word = words[int(np.random.default_rng(s).integers(len(words)))]
        out.append(generate_sample(word, policy, s, width, height, charset, max_len))
    return out


def random_words(rng: np.random.Generator, count: int, symbols: str, min_len: int = 1, max_len: int = 5):
    lens = rng.integers(min_len, max_len + 1, size=count)
    return ["".join(symbols[int(i)] for i in rng.integers(len(symbols), size=n)) for n in lens]


def read_lexicon(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [w.strip() for w in fh if w.strip()]


# ---------------------------------------------------------------------------
# PGM (P5, maxval 255)


def encode_pgm(image) -> bytes:
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise PGMError("PGM images must be 2-D uint8")
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    tokens = []

    def skip_ws_and_comments(p):
        while p < len(data):
            c = data[p:p + 1]
            if c == b"#":
                while p < len(data) and data[p:p + 1] not in (b"\n", b"\r"):
                    p += 1
            elif c.isspace():
                p += 1
            else:
                break
        return p

    if data[:2] != b"P5":
        raise PGMError("byte 0: missing P5 magic number")
    pos = 2
    for _ in range(3):
        start = skip_ws_and_comments(pos)
        end = start
        while end < len(data) and data[end:end + 1].isdigit():
            end += 1
        if end == start:
            raise PGMError(f"byte {start}: expected an unsigned integer header field")
        tokens.append((int(data[start:end]), start))
        pos = end
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise PGMError(f"byte {pos}: expected a single whitespace after maxval")
    pos += 1
    (w, _), (h, _), (maxval, mpos) = tokens
    if maxval != 255:
        raise PGMError(f"byte {mpos}: maxval {maxval} unsupported (need 255)")
    if w <= 0 or h <= 0:
        raise PGMError(f"byte {tokens[0][1]}: non-positive dimensions {w}x{h}")
    need = w * h
    if len(data) - pos != need:
        raise PGMError(f"byte {pos}: expected {need} raster bytes, found {len(data) - pos}")
    return np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).reshape(h, w).copy()


def write_pgm(path, image) -> None:
    Path(path).write_bytes(encode_pgm(image))


def read_pgm(path) -> np.ndarray:
    try:
        return decode_pgm(Path(path).read_bytes())
    except PGMError as exc:
        raise PGMError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# manifest

MANIFEST_NAME = "manifest.tsv"
MANIFEST_COLUMNS = ("path", "label", "form", "seed")


@dataclass
class ManifestRecord:
    path: str
    image: np.ndarray
    label: str
    form: str
    seed: int


def write_manifest(samples, directory) -> Path:
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    writer.writerow(MANIFEST_COLUMNS)
    for k, s in enumerate(samples):
        rel = f"images/{k:06d}.pgm"
        write_pgm(directory / rel, s.image)
        writer.writerow([rel, s.label, s.form, str(int(s.seed))])
    out = directory / MANIFEST_NAME
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
    return out


def read_manifest(directory) -> list[ManifestRecord]:
    directory = Path(directory)
    path = directory / MANIFEST_NAME
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows:
        raise ManifestError(f"{path}:1: missing header")
    header = tuple(rows[0])
    unknown = [c for c in header if c not in MANIFEST_COLUMNS]
    if unknown:
        raise ManifestError(f"{path}:1: unknown column {unknown[0]!r}")
    if header != MANIFEST_COLUMNS:
        raise ManifestError(f"{path}:1: header must be {list(MANIFEST_COLUMNS)}")
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(MANIFEST_COLUMNS):
            raise ManifestError(f"{path}:{lineno}: expected {len(MANIFEST_COLUMNS)} fields, got {len(row)}")
        rel, label, form, seed = row
        try:
            seed_v = int(seed)
        except ValueError:
            raise ManifestError(f"{path}:{lineno}: seed {seed!r} is not an integer") from None
        if os.path.isabs(rel) or ".." in Path(rel).parts:
            raise ManifestError(f"{path}:{lineno}: image path must be relative to the dataset")
        records.append(ManifestRecord(rel, read_pgm(directory / rel), label, form, seed_v))
    return records
