"""Backend parity and closed-form oracles for the hot kernels."""

import numpy as np
import pytest

from taeparse import kernels
from taeparse.kernels import available_backends, load_backend

BACKENDS = available_backends()
DTYPES = (np.float32, np.float64)


def _rng():
    return np.random.default_rng(7)


@pytest.mark.parametrize("dtype", DTYPES)
def test_softmax_rows_normalized_and_masked(dtype):
    rng = _rng()
    x = rng.normal(size=(3, 2, 5, 7)).astype(dtype)
    mask = (rng.random(x.shape) < 0.3).astype(np.uint8)
    p = kernels.softmax_fwd(x, mask)
    assert p.dtype == dtype
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-6)
    assert (p[mask == 1] == 0).all()


def test_softmax_fully_masked_row_is_zero():
    x = np.ones((1, 4), dtype=np.float32)
    mask = np.ones((1, 4), dtype=np.uint8)
    p = kernels.softmax_fwd(x, mask)
    assert (p == 0).all()


def test_softmax_matches_dense_formula():
    rng = _rng()
    x = rng.normal(size=(4, 9)).astype(np.float64) * 3
    want = np.exp(x - x.max(-1, keepdims=True))
    want /= want.sum(-1, keepdims=True)
    np.testing.assert_allclose(kernels.softmax_fwd(x, None), want,
                               rtol=1e-12)


def test_softmax_bwd_matches_jacobian():
    # dL/dx_i = p_i * (g_i - sum_j g_j p_j), checked against the full
    # Jacobian J_ij = p_i (delta_ij - p_j)
    rng = _rng()
    x = rng.normal(size=(1, 6)).astype(np.float64)
    p = kernels.softmax_fwd(x, None)
    g = rng.normal(size=p.shape)
    jac = np.diag(p[0]) - np.outer(p[0], p[0])
    np.testing.assert_allclose(kernels.softmax_bwd(p, g)[0], jac @ g[0],
                               rtol=1e-10, atol=1e-12)


def test_norm_fwd_zero_mean_unit_variance():
    rng = _rng()
    x = (rng.normal(size=(5, 16)) * 4 + 2).astype(np.float32)
    y, inv = kernels.norm_fwd(x)
    np.testing.assert_allclose(y.mean(-1), 0.0, atol=1e-5)
    np.testing.assert_allclose(y.var(-1), 1.0, atol=1e-3)
    assert inv.shape[-1] == 1


def test_norm_bwd_matches_finite_difference():
    rng = _rng()
    x = rng.normal(size=(2, 8)).astype(np.float64)
    g = rng.normal(size=x.shape)
    y, inv = kernels.norm_fwd(x)
    got = kernels.norm_bwd(y, inv, g)
    eps = 1e-6
    num = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            for s, sign in ((eps, 1.0), (-eps, -1.0)):
                xp = x.copy()
                xp[i, j] += s
                yp, _ = kernels.norm_fwd(xp)
                num[i, j] += sign * (yp * g).sum()
    num /= 2 * eps
    np.testing.assert_allclose(got, num, rtol=1e-4, atol=1e-7)


def _copy_case(dtype, t_src=6, v=11):
    rng = _rng()
    b, t = 2, 3
    gen = rng.dirichlet(np.ones(v), size=(b, t)).astype(dtype)
    w = rng.dirichlet(np.ones(t_src), size=(b, t)).astype(dtype)
    pg = rng.random((b, t)).astype(dtype)
    src = rng.integers(0, v, size=(b, t_src)).astype(np.int64)
    src[0, 1] = src[0, 4]  # force a duplicated source token
    return gen, w, src, pg


@pytest.mark.parametrize("dtype", DTYPES)
def test_copy_mix_matches_dense_oracle(dtype):
    gen, w, src, pg = _copy_case(dtype)
    out = kernels.copy_mix_fwd(gen, w, src, pg)
    b, t, v = gen.shape
    want = np.zeros((b, t, v), dtype=np.float64)
    for i in range(b):
        for j in range(t):
            want[i, j] = pg[i, j] * gen[i, j].astype(np.float64)
            for s in range(src.shape[1]):
                want[i, j, src[i, s]] += (1.0 - pg[i, j]) * float(w[i, j, s])
    np.testing.assert_allclose(out, want, rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-5)


def test_copy_mix_pure_copy_concentrates_on_duplicated_token():
    # p_gen = 0 with all copy weight on positions holding one token id
    v = 9
    gen = np.full((1, 1, v), 1.0 / v, dtype=np.float32)
    w = np.array([[[0.25, 0.5, 0.25, 0.0]]], dtype=np.float32)
    src = np.array([[4, 4, 4, 2]], dtype=np.int64)
    pg = np.zeros((1, 1), dtype=np.float32)
    out = kernels.copy_mix_fwd(gen, w, src, pg)
    assert out[0, 0, 4] == pytest.approx(1.0, abs=1e-7)
    assert out[0, 0].sum() == pytest.approx(1.0, abs=1e-6)


def test_copy_mix_bwd_matches_finite_difference():
    gen, w, src, pg = _copy_case(np.float64)
    g = _rng().normal(size=gen.shape)
    d_gen, d_w, d_pg = kernels.copy_mix_bwd(gen, w, src, pg, g)
    eps = 1e-7

    def loss(genx, wx, pgx):
        return (kernels.copy_mix_fwd(genx, wx, src, pgx) * g).sum()

    for arr, grad in ((gen, d_gen), (w, d_w), (pg, d_pg)):
        flat = arr.reshape(-1)
        idxs = np.linspace(0, flat.size - 1, 5).astype(int)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            up = loss(gen, w, pg)
            flat[i] = orig - eps
            dn = loss(gen, w, pg)
            flat[i] = orig
            np.testing.assert_allclose(grad.reshape(-1)[i],
                                       (up - dn) / (2 * eps),
                                       rtol=1e-4, atol=1e-6)


def test_scatter_add_accumulates_duplicates():
    table = np.zeros((4, 3), dtype=np.float32)
    ids = np.array([1, 1, 3], dtype=np.int64)
    rows = np.ones((3, 3), dtype=np.float32)
    kernels.scatter_add_rows(table, ids, rows)
    np.testing.assert_array_equal(table[1], [2, 2, 2])
    np.testing.assert_array_equal(table[3], [1, 1, 1])
    np.testing.assert_array_equal(table[0], 0)


def test_adam_step_matches_reference():
    rng = _rng()
    p = rng.normal(size=(5, 4)).astype(np.float64)
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    p_ref, m_ref, v_ref = p.copy(), m.copy(), v.copy()
    lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
    for t in range(1, 4):
        g = rng.normal(size=p.shape)
        kernels.adam_step(p, g, m, v, lr, b1, b2, eps, t)
        m_ref = b1 * m_ref + (1 - b1) * g
        v_ref = b2 * v_ref + (1 - b2) * g * g
        mhat = m_ref / (1 - b1 ** t)
        vhat = v_ref / (1 - b2 ** t)
        p_ref = p_ref - lr * mhat / (np.sqrt(vhat) + eps)
    np.testing.assert_allclose(p, p_ref, rtol=1e-12, atol=1e-14)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")
@pytest.mark.parametrize("dtype", DTYPES)
def test_backend_parity(dtype):
    pure = load_backend("pure")
    comp = load_backend("compiled")
    rng = _rng()
    tol = dict(rtol=1e-5, atol=1e-6) if dtype == np.float32 \
        else dict(rtol=1e-11, atol=1e-12)

    x = rng.normal(size=(2, 3, 4, 6)).astype(dtype)
    mask = (rng.random(x.shape) < 0.2).astype(np.uint8)
    np.testing.assert_allclose(pure.softmax_fwd(x, mask),
                               comp.softmax_fwd(x, mask), **tol)
    p = pure.softmax_fwd(x, None)
    g = rng.normal(size=x.shape).astype(dtype)
    np.testing.assert_allclose(pure.softmax_bwd(p, g),
                               comp.softmax_bwd(p, g), **tol)

    h = rng.normal(size=(3, 5, 16)).astype(dtype)
    y1, i1 = pure.norm_fwd(h)
    y2, i2 = comp.norm_fwd(h)
    np.testing.assert_allclose(y1, y2, **tol)
    np.testing.assert_allclose(i1, i2, **tol)
    gh = rng.normal(size=h.shape).astype(dtype)
    np.testing.assert_allclose(pure.norm_bwd(y1, i1, gh),
                               comp.norm_bwd(y2, i2, gh), **tol)

    gen, w, src, pg = _copy_case(dtype)
    np.testing.assert_allclose(pure.copy_mix_fwd(gen, w, src, pg),
                               comp.copy_mix_fwd(gen, w, src, pg), **tol)
    gm = rng.normal(size=gen.shape).astype(dtype)
    for a, b in zip(pure.copy_mix_bwd(gen, w, src, pg, gm),
                    comp.copy_mix_bwd(gen, w, src, pg, gm)):
        np.testing.assert_allclose(a, b, **tol)

    t1 = np.zeros((6, 4), dtype=dtype)
    t2 = t1.copy()
    ids = rng.integers(0, 6, size=9).astype(np.int64)
    rows = rng.normal(size=(9, 4)).astype(dtype)
    pure.scatter_add_rows(t1, ids, rows)
    comp.scatter_add_rows(t2, ids, rows)
    np.testing.assert_allclose(t1, t2, **tol)

    param = rng.normal(size=(8, 3)).astype(dtype)
    p1, p2 = param.copy(), param.copy()
    g = rng.normal(size=param.shape).astype(dtype)
    m1 = np.zeros_like(param)
    v1 = np.zeros_like(param)
    m2, v2 = m1.copy(), v1.copy()
    pure.adam_step(p1, g, m1, v1, 1e-3, 0.9, 0.999, 1e-8, 1)
    comp.adam_step(p2, g, m2, v2, 1e-3, 0.9, 0.999, 1e-8, 1)
    np.testing.assert_allclose(p1, p2, **tol)
    np.testing.assert_allclose(m1, m2, **tol)
    np.testing.assert_allclose(v1, v2, **tol)
