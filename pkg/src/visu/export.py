"""Per-character feature export for offline visualization."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .charset import Charset
from .ogs import read_manifest
from .recognizer import forward
from .teacher import pseudo_label
from .trainer import load_checkpoint, prepare


def export_embeddings(checkpoint, dataset_dir, out, params: str = "teacher", batch_size: int = 128) -> int:
    """Write one CSV row per valid character slot; returns the row count.

    Columns: sample_id, position, label, conf, f0..f{D-1}. ``conf`` is the
    model's word confidence on the sample; features are unit-normalized when
    the checkpoint's config asks for it.
    """
    state = load_checkpoint(checkpoint)
    cfg = state.config
    if params not in ("teacher", "student"):
        raise ValueError("params must be 'teacher' or 'student'")
    weights = state.teacher if params == "teacher" else state.student
    charset = Charset(cfg.charset)
    records = read_manifest(dataset_dir)
    labels = [charset.normalize(r.label) for r in records]
    D = cfg.model.dim
    out = Path(out)
    rows = 0
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "position", "label", "conf"] + [f"f{k}" for k in range(D)])
        for start in range(0, len(records), batch_size):
            chunk = records[start:start + batch_size]
            imgs = np.stack([prepare(r.image, cfg) for r in chunk])
            fo = forward(imgs, weights, cfg.model, requires_grad=False)
            feats = fo.features.value
            if cfg.normalize:
                feats = feats / np.linalg.norm(feats, axis=-1, keepdims=True)
            probs = fo.probs()
            for k, rec in enumerate(chunk):
                text = labels[start + k]
                conf = pseudo_label(probs[k], charset).word_conf
                for t in range(min(len(text), cfg.model.seq_len)):
                    w.writerow([Path(rec.path).stem, t, text[t], repr(conf)] + [repr(float(v)) for v in feats[k, t]])
                    rows += 1
    return rows
