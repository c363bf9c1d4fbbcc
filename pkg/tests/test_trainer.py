import io
import json
import math
import struct

import numpy as np
import pytest

from visu.recognizer import ModelConfig
from visu.teacher import ParamSet
from visu.toydata import make_split
from visu.trainer import (CHECKPOINT_VERSION, CheckpointError, Dataset, TrainConfig, TrainingDivergedError,
                          TrainState, adamw_step, baseline_config, evaluate, load_checkpoint, make_step_batch,
                          one_cycle_lr, prepare, save_checkpoint, train, train_step)
from visu.urf import rotate180

TINY = ModelConfig(patch_w=8, patch_h=8, dim=16, heads=2, depth=1, seq_len=4)


def tiny(**kw):
    base = dict(model=TINY, batch_labeled=4, batch_unlabeled=4, steps=60, max_lr=1e-3)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def data():
    return make_split(24, 11, max_len=3), make_split(24, 12, distorted=True, max_len=3)


def _log(state, labeled, unlabeled, steps=None):
    buf = io.StringIO()
    train(state, labeled, unlabeled, steps=steps, log=buf)
    return buf.getvalue().splitlines()


# -- schedule ----------------------------------------------------------------

def test_one_cycle_examples():
    assert one_cycle_lr(0, 1000, 6e-4) == 6e-4 / 25
    assert one_cycle_lr(100, 1000, 6e-4) == 6e-4
    assert one_cycle_lr(1000, 1000, 6e-4) == pytest.approx(6e-4 / 1e4, rel=1e-12)
    with pytest.raises(ValueError):
        one_cycle_lr(1001, 1000, 6e-4)


@pytest.mark.parametrize("total", [10, 120, 1000])
def test_one_cycle_is_continuous(total):
    """The anneal moves less than 2*max/T per step; the warm-up climbs 0.96*max over 0.1*T steps."""
    lrs = [one_cycle_lr(s, total, 1.0) for s in range(total + 1)]
    diffs = [abs(a - b) for a, b in zip(lrs, lrs[1:])]
    warm = total // 10
    assert max(diffs[warm:]) < 2.0 / total
    assert max(diffs[:warm]) == pytest.approx(0.96 / (0.1 * total), rel=1e-9)
    peak = int(np.argmax(lrs))
    assert all(a <= b for a, b in zip(lrs[:peak], lrs[1:peak + 1]))
    assert all(a >= b for a, b in zip(lrs[peak:], lrs[peak + 1:]))


# -- config ------------------------------------------------------------------

def test_paper_defaults():
    c = TrainConfig()
    assert (c.tau, c.lam, c.eta_ccr, c.eta_cua, c.alpha, c.r, c.max_lr) == (0.1, 0.1, 0.5, 0.7, 0.999, 1.3, 6e-4)
    assert (c.beta1, c.beta2, c.weight_decay) == (0.9, 0.999, 0.01)


def test_config_round_trip_and_strictness():
    c = tiny(align_loss="cc2", consistency="ce")
    assert TrainConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c
    with pytest.raises(ValueError, match="bogus"):
        TrainConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        TrainConfig(align_loss="cc3")
    with pytest.raises(ValueError):
        TrainConfig(charset="abc")
    with pytest.raises(ValueError):
        TrainConfig(tau=0.0)


@pytest.mark.parametrize("kw", [
    dict(consistency="kl", align_loss="none"),
    dict(consistency="ce", align_loss="none"),
    dict(consistency="kl", align_loss="cc1"),
    dict(consistency="kl", align_loss="cc2"),
    dict(consistency="kl", align_loss="cua"),
    dict(use_urf=False),
    dict(use_ogs=False),
    dict(use_ru=False),
])
def test_ablation_rows_train(kw, data):
    state = TrainState.initialize(tiny(steps=3, **kw))
    hist = train(state, *data)
    assert len(hist) == 3 and all(math.isfinite(h.total) for h in hist)


def test_baseline_has_no_extra_losses(data):
    state = TrainState.initialize(baseline_config(model=TINY, batch_labeled=4, steps=3))
    for h in train(state, *data):
        assert h.l_ccr == 0.0 and h.l_align == 0.0 and h.sb_mean == 0.0


# -- data --------------------------------------------------------------------

def test_step_batch_is_deterministic(data):
    cfg = tiny()
    a, b = make_step_batch(cfg, 7, *data), make_step_batch(cfg, 7, *data)
    for f in ("lab_base", "lab_strong", "unl_weak", "unl_strong"):
        assert getattr(a, f).tobytes() == getattr(b, f).tobytes()
    assert make_step_batch(cfg, 8, *data).lab_strong.tobytes() != a.lab_strong.tobytes()


def test_ogs_base_view_is_the_raw_sample_and_flip_is_shared(data):
    labeled, _ = data
    cfg = tiny(flip180_prob=1.0, use_ru=False)
    sb = make_step_batch(cfg, 0, labeled, None)
    pick = np.random.default_rng([cfg.seed, 0, 0]).integers(len(labeled), size=cfg.batch_labeled)
    for k, j in enumerate(pick):
        assert np.array_equal(sb.lab_base[k], rotate180(prepare(labeled.images[j], cfg)))
        assert sb.lab_labels[k] == labeled.labels[j]
    assert sb.unl_weak.shape[0] == 0


def test_prepare_rotates_tall_images():
    cfg = tiny()
    tall = np.zeros((64, 32), np.uint8)
    tall[0, :] = 255
    out = prepare(tall, cfg)
    assert out.shape == (32, 64)
    assert out[:, -1].max() > 0  # top row went to the right edge
    assert prepare(tall, tiny(use_urf=False)).shape == (32, 64)


# -- optimizer and EMA -------------------------------------------------------

def test_adamw_first_step_by_hand():
    state = TrainState.initialize(tiny())
    before = state.student.copy()
    grads = {k: np.full_like(v, 0.5) for k, v in state.student.items()}
    adamw_step(state, grads, 1e-2)
    # bias-corrected first step: m_hat / sqrt(v_hat) = sign(g)
    step = 1e-2 * 1.0 / (1.0 + 1e-8 / 0.5)
    for name, p in state.student.items():
        decay = (1 - 1e-2 * 0.01) if name.endswith(".w") else 1.0
        np.testing.assert_allclose(p, before[name] * decay - step, rtol=0, atol=1e-15)


def test_teacher_changes_only_through_ema(data):
    cfg = tiny(steps=5)
    state = TrainState.initialize(cfg)
    for step in range(5):
        prev = state.teacher.copy()
        train_step(state, make_step_batch(cfg, step, *data))
        for name, t in state.teacher.items():
            expect = prev[name] * cfg.alpha + (1 - cfg.alpha) * state.student[name]
            assert t.tobytes() == expect.tobytes()


def test_alpha_one_freezes_teacher(data):
    state = TrainState.initialize(tiny(alpha=1.0, steps=10))
    fp = state.teacher.fingerprint()
    train(state, *data)
    assert state.teacher.fingerprint() == fp
    assert state.student.fingerprint() != fp


# -- invariances -------------------------------------------------------------

def test_lambda_zero_ignores_alignment_inputs(data):
    logs = []
    for kw in (dict(align_loss="cua"), dict(align_loss="cc1"), dict(align_loss="cua", eta_cua=0.2, tau=0.05)):
        logs.append(_log(TrainState.initialize(tiny(lam=0.0, steps=15, **kw)), *data))
    assert logs[0] == logs[1] == logs[2]


def test_use_ru_off_ignores_unlabeled_contents(data):
    labeled, unlabeled = data
    other = make_split(30, 99, distorted=True, max_len=3)
    a = _log(TrainState.initialize(tiny(use_ru=False, steps=15)), labeled, unlabeled)
    b = _log(TrainState.initialize(tiny(use_ru=False, steps=15)), labeled, other)
    c = _log(TrainState.initialize(tiny(use_ru=False, steps=15)), labeled, None)
    assert a == b == c


def test_closed_gate_equals_labeled_only_update(data):
    cfg = tiny(eta_ccr=1.0, align_loss="none")
    ref = TrainState.initialize(tiny(eta_ccr=1.0, align_loss="none", use_ru=False))
    state = TrainState.initialize(cfg)
    for step in range(3):
        full = make_step_batch(cfg, step, *data)
        lab_only = make_step_batch(ref.config, step, data[0], None)
        assert np.array_equal(full.lab_strong, lab_only.lab_strong)
        ha, hb = train_step(state, full), train_step(ref, lab_only)
        assert ha.l_rec == pytest.approx(hb.l_rec, abs=1e-12)
        assert ha.l_ccr == pytest.approx(hb.l_ccr, abs=1e-12)
    for name, p in state.student.items():
        np.testing.assert_allclose(p, ref.student[name], rtol=0, atol=1e-10)


# -- determinism, checkpoints ------------------------------------------------

def test_two_runs_bit_identical_logs(data):
    a = _log(TrainState.initialize(tiny(steps=100)), *data)
    b = _log(TrainState.initialize(tiny(steps=100)), *data)
    assert len(a) == 100 and a == b


@pytest.mark.parametrize("workers", [0, 3])
def test_worker_count_does_not_change_trajectory(data, workers):
    ref = _log(TrainState.initialize(tiny(steps=30)), *data)
    state = TrainState.initialize(tiny(steps=30))
    buf = io.StringIO()
    train(state, *data, log=buf, workers=workers)
    assert buf.getvalue().splitlines() == ref


def test_failed_step_stops_prefetch(data, monkeypatch):
    import visu.trainer as tr

    calls = []
    real = tr.make_step_batch

    def counting(*a):
        calls.append(a[1])
        return real(*a)

    def boom(state, batch):
        raise TrainingDivergedError("forced")

    monkeypatch.setattr(tr, "make_step_batch", counting)
    monkeypatch.setattr(tr, "train_step", boom)
    with pytest.raises(TrainingDivergedError):
        train(TrainState.initialize(tiny(steps=60)), *data, workers=2)
    assert max(calls) < 8


def test_log_line_schema(data):
    line = json.loads(_log(TrainState.initialize(tiny(steps=1)), *data)[0])
    assert {"step", "lr", "l_rec", "l_ccr", "l_align", "S^b mean", "word_acc_running"} <= set(line)


def test_resume_matches_uninterrupted(tmp_path, data):
    full = _log(TrainState.initialize(tiny(steps=50)), *data)
    state = TrainState.initialize(tiny(steps=50))
    first = _log(state, *data, steps=25)
    save_checkpoint(state, tmp_path / "c.bin")
    resumed = load_checkpoint(tmp_path / "c.bin")
    second = _log(resumed, *data)
    assert first + second == full


def test_checkpoint_double_round_trip(tmp_path, data):
    state = TrainState.initialize(tiny(steps=3))
    train(state, *data)
    save_checkpoint(state, tmp_path / "a.bin")
    save_checkpoint(load_checkpoint(tmp_path / "a.bin"), tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    loaded = load_checkpoint(tmp_path / "a.bin")
    assert loaded.step == 3 and loaded.config == state.config
    for g in ("student", "teacher", "m", "v"):
        assert getattr(loaded, g).fingerprint() == getattr(state, g).fingerprint()


def _corrupt(path, fn):
    data = bytearray(path.read_bytes())
    fn(data)
    path.write_bytes(bytes(data))


def test_checkpoint_integrity_errors(tmp_path):
    p = tmp_path / "c.bin"
    save_checkpoint(TrainState.initialize(tiny()), p)
    good = p.read_bytes()
    (hlen,) = struct.unpack("<Q", good[:8])

    _corrupt(p, lambda d: d.__setitem__(8, ord("#")))
    with pytest.raises(CheckpointError, match="corrupt header"):
        load_checkpoint(p)

    p.write_bytes(good[: 8 + hlen + 100])
    with pytest.raises(CheckpointError, match="payload"):
        load_checkpoint(p)

    p.write_bytes(good[:20])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(p)

    p.write_bytes(good[:-1] + bytes([good[-1] ^ 1]))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(p)


def test_checkpoint_version_mismatch_names_both(tmp_path):
    p = tmp_path / "c.bin"
    save_checkpoint(TrainState.initialize(tiny()), p)
    data = p.read_bytes()
    (hlen,) = struct.unpack("<Q", data[:8])
    header = json.loads(data[8:8 + hlen])
    header["version"] = "visu-ckpt/0"
    hb = json.dumps(header).encode()
    p.write_bytes(struct.pack("<Q", len(hb)) + hb + data[8 + hlen:])
    with pytest.raises(CheckpointError) as exc:
        load_checkpoint(p)
    assert "visu-ckpt/0" in str(exc.value) and CHECKPOINT_VERSION in str(exc.value)


def test_interrupted_save_leaves_previous_checkpoint(tmp_path, monkeypatch):
    p = tmp_path / "c.bin"
    state = TrainState.initialize(tiny())
    save_checkpoint(state, p)
    before = p.read_bytes()
    real = type(p).write_bytes

    def half_then_crash(self, data):
        real(self, data[: len(data) // 2])
        raise OSError("disk full")

    monkeypatch.setattr(type(p), "write_bytes", half_then_crash)
    state.step = 99
    with pytest.raises(OSError):
        save_checkpoint(state, p)
    assert p.read_bytes() == before


# -- failure modes -----------------------------------------------------------

def test_nan_parameters_abort_with_step(data):
    cfg = tiny()
    state = TrainState.initialize(cfg)
    state.student["head.w"][0, 0] = np.nan
    with pytest.raises(TrainingDivergedError, match="step 0"):
        train_step(state, make_step_batch(cfg, 0, *data))


def test_evaluate_perfect_and_empty_predictions(data):
    cfg = tiny()
    state = TrainState.initialize(cfg)
    acc = evaluate(state.teacher, data[0], cfg)
    assert 0.0 <= acc <= 1.0
    ds = Dataset([data[0].images[0]], [""], [True])
    p = ParamSet({k: v.copy() for k, v in state.teacher.items()})
    p["head.w"] = np.zeros_like(p["head.w"])
    p["head.b"] = np.zeros_like(p["head.b"])
    p["head.b"][0, 10] = 1.0  # EOS first: predicts the empty string
    assert evaluate(p, ds, cfg) == 1.0
