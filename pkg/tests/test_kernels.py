import os
import subprocess
import sys

import numpy as np
import pytest

from visu import _kernels_py, kernels
from visu.charfeat import build_index_sets
from visu.gradcheck import random_batch

BACKENDS = kernels.backends()


def _sets(seed):
    b = random_batch(np.random.default_rng(seed), 3, 4, 5)
    s = build_index_sets(b, 0.7)
    m = s.members
    return np.ascontiguousarray(b.features_a[m]), np.ascontiguousarray(b.features_b[m]), s


def test_python_backend_always_available():
    assert BACKENDS["python"] is _kernels_py
    assert kernels.BACKEND in BACKENDS


@pytest.mark.parametrize("seed", range(10))
def test_backends_agree_on_cua(seed):
    fa, fb, s = _sets(seed)
    ref = _kernels_py.cua_kernel(fa, fb, s.pos, s.pos_excl, s.neg, 0.1)
    for impl in BACKENDS.values():
        v, g, A, shift = impl.cua_kernel(fa, fb, s.pos, s.pos_excl, s.neg, 0.1)
        assert v == pytest.approx(ref[0], rel=1e-12, abs=1e-12)
        assert np.abs(g - ref[1]).max() <= 1e-12
        np.testing.assert_allclose(A * np.exp(shift)[:, None], ref[2] * np.exp(ref[3])[:, None], rtol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_backends_agree_on_cc(seed):
    fa, fb, s = _sets(seed)
    ref = _kernels_py.cc_kernel(fa, fb, s.pos_excl, s.neg, 0.2)
    for impl in BACKENDS.values():
        out = impl.cc_kernel(fa, fb, s.pos_excl, s.neg, 0.2)
        assert out[0] == pytest.approx(ref[0], rel=1e-12, abs=1e-12)
        assert np.abs(out[1] - ref[1]).max() <= 1e-12
        assert np.abs(out[2] - ref[2]).max() <= 1e-12


def _brute_raster(segs, radius, h, w):
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            best = 0.0
            for x0, y0, x1, y1 in segs:
                d = np.array([x1 - x0, y1 - y0])
                ll = d @ d
                t = 0.0 if ll == 0 else min(max(((x - x0) * d[0] + (y - y0) * d[1]) / ll, 0.0), 1.0)
                dist = np.hypot(x - (x0 + t * d[0]), y - (y0 + t * d[1]))
                best = max(best, min(max(radius + 0.5 - dist, 0.0), 1.0))
            out[y, x] = best
    return out


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_raster_matches_distance_oracle(name):
    rng = np.random.default_rng(5)
    segs = np.column_stack([rng.uniform(-2, 14, 4), rng.uniform(-2, 10, 4), rng.uniform(-2, 14, 4),
                            rng.uniform(-2, 10, 4)])
    segs = np.vstack([segs, [[5.0, 5.0, 5.0, 5.0]]])  # degenerate dot
    got = BACKENDS[name].raster_segments(segs, 1.3, 9, 13)
    assert np.abs(got - _brute_raster(segs, 1.3, 9, 13)).max() <= 1e-12


def test_env_var_forces_pure_python():
    code = "import visu.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, VISU_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
