import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from nnflow.fields import (Grid, div, extend_zero, grad, inner, integral, interior_mask,
                           lebesgue_norm, mollified_truncation, mollify, read_field, sym_grad,
                           truncate, write_field)

G16 = Grid.square(16)


def test_grad_of_constant_is_zero():
    assert not np.any(grad(G16, np.full(G16.shape, 3.5)))


def test_affine_field_exact():
    X, Y = G16.centers()
    v = np.stack([X, -Y], axis=-1)
    D = sym_grad(G16, v)
    assert np.allclose(D[..., 0, 0], 1.0, atol=1e-12)
    assert np.allclose(D[..., 1, 1], -1.0, atol=1e-12)
    assert np.allclose(D[..., 0, 1], 0.0, atol=1e-12)
    # the end rows of div see the homogeneous Dirichlet trace; interior rows are exact
    assert np.allclose(div(G16, v)[1:-1, 1:-1], 0.0, atol=1e-12)


def test_grad_second_order():
    errs = []
    for n in (32, 64):
        g = Grid((n, n), (2.0, 1.0))
        X, _ = g.centers()
        f = np.sin(2 * np.pi * X / 2.0)
        ex = 2 * np.pi / 2.0 * np.cos(2 * np.pi * X / 2.0)
        errs.append(np.abs(grad(g, f)[..., 0] - ex).max())
    assert 3.5 <= errs[0] / errs[1] <= 4.5


def test_sym_grad_symmetric():
    v = np.random.default_rng(0).normal(size=G16.shape + (2,))
    D = sym_grad(G16, v)
    assert np.array_equal(D, np.swapaxes(D, -1, -2))


@given(hnp.arrays(float, (10, 12), elements=st.floats(-5, 5)),
       hnp.arrays(float, (10, 12, 2), elements=st.floats(-5, 5)))
def test_summation_by_parts(f, v):
    g = Grid((10, 12), (1.0, 1.3))
    v = v.copy()
    v[g.boundary_cells()] = 0.0
    lhs = inner(g, div(g, v), f) + inner(g, v, grad(g, f))
    scale = np.sqrt(inner(g, v, v) * inner(g, f, f))
    assert abs(lhs) <= 1e-12 * max(scale, 1e-300) + 1e-300


def test_mollify_preserves_constants_on_torus():
    g = Grid.square(32, periodic=True)
    out = mollify(g, np.full(g.shape, 2.5), 4 * g.hmin)
    assert np.allclose(out, 2.5, rtol=1e-14)


def test_mollify_preserves_integral_after_extension():
    f = np.random.default_rng(1).random(G16.shape)
    pad = 4
    big, fe = extend_zero(G16, f, pad)
    assert integral(big, mollify(big, fe, 3 * G16.hmin)) == pytest.approx(integral(G16, f), rel=1e-13)


def test_mollify_approximation_ladder():
    g = Grid.square(128, periodic=True)
    X, Y = g.centers()
    f = np.sin(2 * np.pi * X) * np.cos(2 * np.pi * Y)
    errs = [lebesgue_norm(g, mollify(g, f, k * g.hmin) - f) for k in (16, 8, 4, 2)]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-3


def test_mollify_warns_below_spacing():
    f = np.ones(G16.shape)
    with pytest.warns(UserWarning):
        out = mollify(G16, f, 0.1 * G16.hmin)
    assert np.array_equal(out, f)


@given(st.floats(1.0, 6.0), st.sampled_from([1.0, 2.0, 4.0, np.inf]), st.integers(0, 2**32 - 1))
def test_mollify_contraction(k, p, seed):
    g = Grid.square(24, periodic=True)
    f = np.random.default_rng(seed).normal(size=g.shape)
    assert lebesgue_norm(g, mollify(g, f, k * g.hmin), p) <= lebesgue_norm(g, f, p) * (1 + 1e-12)


def test_truncation_cases():
    v = np.ones(G16.shape + (2,))
    assert not np.any(truncate(G16, v, 0.3))
    assert np.array_equal(truncate(G16, v, 0.0), v)
    g = Grid.square(32)
    delta = 4 * g.hmin
    w = mollified_truncation(g, np.ones(g.shape + (2,)), delta)
    near = g.boundary_distance() < delta
    assert not np.any(w[near])
    assert np.any(w[~near])


@given(st.floats(0.0, 0.3), st.floats(0.0, 0.3))
def test_truncation_idempotent_and_monotone(d1, d2):
    f = np.random.default_rng(2).random(G16.shape)
    assert np.array_equal(truncate(G16, truncate(G16, f, d1), d1), truncate(G16, f, d1))
    lo, hi = sorted((d1, d2))
    assert np.all(interior_mask(G16, hi) <= interior_mask(G16, lo))


def test_norm_examples():
    assert lebesgue_norm(G16, np.full(G16.shape, -3.0), 3.7) == pytest.approx(3.0)
    g = Grid((8, 8), (2.0, 2.0))
    assert lebesgue_norm(g, np.ones(g.shape), 2) == pytest.approx(2.0)
    X, _ = G16.centers()
    assert lebesgue_norm(G16, (X < 0.5).astype(float), 3) == pytest.approx(0.5 ** (1 / 3))
    with pytest.raises(ValueError):
        lebesgue_norm(G16, np.ones(G16.shape), 0.5)


def test_grid_mismatch_rejected():
    with pytest.raises(ValueError):
        grad(G16, np.ones((8, 8)))


@pytest.mark.parametrize("kind", ["scalar", "vector", "symtensor"])
def test_field_dump_roundtrip(tmp_path, kind):
    g = Grid((6, 5), (1.0, 2.0))
    rng = np.random.default_rng(3)
    if kind == "scalar":
        f = rng.random(g.shape)
    elif kind == "vector":
        f = rng.random(g.shape + (2,))
    else:
        f = sym_grad(g, rng.random(g.shape + (2,)))
    g2, f2 = read_field(write_field(tmp_path / "f.bin", g, f))
    assert g2 == g
    assert np.array_equal(f2, f)
    assert not list(tmp_path.glob("*.tmp"))
