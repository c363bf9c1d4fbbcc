import numpy as np

from visu.toydata import TOY_H, TOY_W, distort, make_split, smoke_config, toy_model
from visu.urf import canonicalize


def test_split_shapes_and_labels():
    ds = make_split(10, 1, max_len=3)
    assert len(ds) == 10 and all(im.shape == (TOY_H, TOY_W) for im in ds.images)
    assert all(1 <= len(t) <= 3 and t.isdigit() for t in ds.labels)
    assert all(ds.from_ogs)
    assert not any(make_split(3, 1, distorted=True).from_ogs)


def test_split_is_deterministic():
    a, b = make_split(5, 4, distorted=True), make_split(5, 4, distorted=True)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.images, b.images))


def test_vertical_presentation_is_undone_by_canonicalize():
    img = make_split(1, 2).images[0]
    out = distort(img, np.random.default_rng(0), p_vertical=1.0)
    assert out.shape == (TOY_W, TOY_H)
    assert canonicalize(out, 1.3)[0].shape == (TOY_H, TOY_W)


def test_inversion_is_opt_in():
    img = make_split(1, 3).images[0]
    plain = distort(img, np.random.default_rng(1), p_vertical=0.0)
    inverted = distort(img, np.random.default_rng(1), p_vertical=0.0, p_invert=1.0)
    assert plain.mean() < 128 < inverted.mean()


def test_smoke_configs():
    full, base = smoke_config("visu", 1), smoke_config("baseline", 1)
    assert (full.consistency, full.align_loss, full.lam) == ("kl", "cua", 0.1)
    assert full.use_urf and full.use_ogs and full.use_ru
    assert (base.consistency, base.align_loss, base.use_ru) == ("none", "none", False)
    m = toy_model()
    assert (m.seq_len, m.dim, m.depth, m.num_classes) == (6, 64, 2, 12)
