import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from visu.charset import Charset
from visu.teacher import ParamSet, apply_augment, AugmentParams, augment, ema_update, pseudo_label

CS = Charset("ab")  # ids: a=0, b=1, EOS=2, PAD=3


def _ps(**kw):
    return ParamSet({k: np.array(v, dtype=np.float64) for k, v in kw.items()})


def test_ema_half():
    t = ema_update(_ps(w=[[1.0]]), _ps(w=[[0.0]]), 0.5)
    assert t["w"][0, 0] == 0.5


def test_ema_endpoints():
    s = _ps(w=[[3.0, -1.0]])
    assert np.array_equal(ema_update(_ps(w=[[1.0, 2.0]]), s, 1.0)["w"], [[1.0, 2.0]])
    assert np.array_equal(ema_update(_ps(w=[[1.0, 2.0]]), s, 0.0)["w"], [[3.0, -1.0]])


def test_ema_errors():
    with pytest.raises(ValueError):
        ema_update(_ps(w=[[1.0]]), _ps(w=[[1.0]]), 1.5)
    with pytest.raises(ValueError):
        ema_update(_ps(w=[[1.0]]), _ps(v=[[1.0]]), 0.5)
    with pytest.raises(ValueError):
        ema_update(_ps(w=[[1.0]]), _ps(w=[[1.0, 2.0]]), 0.5)


def test_ema_geometric_decay_1e4_steps():
    alpha = 0.999
    rng = np.random.default_rng(0)
    theta = rng.normal(size=(3, 4))
    t0 = rng.normal(size=(3, 4))
    teacher, student = ParamSet({"w": t0.copy()}), ParamSet({"w": theta})
    gap0 = np.abs(t0 - theta)
    for n in range(1, 10_001):
        ema_update(teacher, student, alpha)
        if n in (1, 10, 100, 1000, 10_000):
            assert np.abs(np.abs(teacher["w"] - theta) - alpha ** n * gap0).max() <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(-5, 5), st.integers(0, 1000))
def test_ema_is_linear(alpha, c, seed):
    rng = np.random.default_rng(seed)
    t, s = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    plain = ema_update(ParamSet({"w": t.copy()}), ParamSet({"w": s}), alpha)["w"]
    scaled = ema_update(ParamSet({"w": c * t}), ParamSet({"w": c * s}), alpha)["w"]
    np.testing.assert_allclose(scaled, c * plain, rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 0.9999), st.integers(0, 1000))
def test_ema_converges_monotonically(alpha, seed):
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=4)
    teacher, student = ParamSet({"w": rng.normal(size=4)}), ParamSet({"w": theta})
    prev = np.abs(teacher["w"] - theta)
    for _ in range(20):
        ema_update(teacher, student, alpha)
        gap = np.abs(teacher["w"] - theta)
        assert (gap <= prev).all()
        prev = gap


def test_pseudo_label_product():
    probs = np.array([[0.9, 0.1, 0.0, 0.0], [0.1, 0.8, 0.1, 0.0], [0.0, 0.0, 1.0, 0.0], [0.7, 0.1, 0.1, 0.1]])
    pl = pseudo_label(probs, CS)
    assert pl.text == "ab"
    assert pl.word_conf == pytest.approx(0.72, abs=1e-15)
    assert pl.length == 3


def test_pseudo_label_one_hot():
    pl = pseudo_label(np.eye(4)[[0, 2, 1, 1]], CS)
    assert pl.word_conf == 1.0 and pl.text == "a"


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_pseudo_label_brute_force(seed, T):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(4), size=T)
    pl = pseudo_label(p, CS)
    prod, text = 1.0, ""
    for row in p:
        k = int(np.argmax(row))
        prod *= row[k]
        if k == 2:
            break
        text += "ab"[k] if k < 2 else ""
    assert pl.text == text
    assert pl.word_conf == pytest.approx(prod, rel=1e-12)
    assert 0.0 <= pl.word_conf <= min(pl.per_step_conf)


def test_weak_identity_draw():
    img = np.random.default_rng(0).integers(0, 256, (8, 12)).astype(np.uint8)
    assert np.array_equal(apply_augment(img, AugmentParams()), img)


@pytest.mark.parametrize("strength", ["weak", "strong"])
def test_augment_deterministic_and_in_range(strength):
    img = np.random.default_rng(1).integers(0, 256, (32, 64)).astype(np.uint8)
    for seed in range(20):
        a = augment(img, strength, np.random.default_rng(seed))
        b = augment(img, strength, np.random.default_rng(seed))
        assert a.tobytes() == b.tobytes()
        assert a.shape == img.shape and a.dtype == np.uint8


def test_unknown_strength():
    with pytest.raises(ValueError):
        augment(np.zeros((4, 4), np.uint8), "medium", np.random.default_rng(0))


def test_paramset_copy_and_fingerprint():
    p = _ps(w=[[1.0, 2.0]], b=[[0.0]])
    q = p.copy()
    assert q.fingerprint() == p.fingerprint()
    q["w"][0, 0] = 5.0
    assert p["w"][0, 0] == 1.0
    assert q.fingerprint() != p.fingerprint()
