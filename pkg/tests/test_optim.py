"""Adam bookkeeping, Polyak averaging, and shadow-weight swapping."""

import numpy as np
import pytest

from taeparse.optim import Adam, Polyak, polyak_update, swapped_params
from taeparse.params import ParameterStore


def _store():
    store = ParameterStore()
    store.add("enc.w", np.ones((2, 3), dtype=np.float32), "encoder")
    store.add("dec.w", np.ones((4,), dtype=np.float32), "decoder")
    return store


def test_adam_matches_reference_recurrence():
    # Three steps against the textbook update carried out with numpy scalars.
    store = ParameterStore()
    store.add("w", np.array([0.5, -1.0], dtype=np.float64), "decoder")
    opt = Adam(store, {"decoder": 0.1}, beta1=0.9, beta2=0.999, eps=1e-8)
    p = np.array([0.5, -1.0])
    m = np.zeros(2)
    v = np.zeros(2)
    grads = [np.array([1.0, -2.0]), np.array([0.5, 0.5]),
             np.array([-1.0, 0.25])]
    for t, g in enumerate(grads, start=1):
        store["w"].grad = g.copy()
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mhat = m / (1 - 0.9 ** t)
        vhat = v / (1 - 0.999 ** t)
        p = p - 0.1 * mhat / (np.sqrt(vhat) + 1e-8)
        np.testing.assert_allclose(store["w"].data, p, rtol=0, atol=1e-12)
        assert opt.t["w"] == t


def test_adam_per_partition_learning_rates():
    store = _store()
    opt = Adam(store, {"encoder": 0.0, "decoder": 0.5})
    store["enc.w"].grad = np.ones((2, 3), dtype=np.float32)
    store["dec.w"].grad = np.ones(4, dtype=np.float32)
    opt.step()
    # lr 0 still advances moments but moves nothing
    np.testing.assert_array_equal(store["enc.w"].data, 1.0)
    assert opt.t["enc.w"] == 1
    assert not np.array_equal(store["dec.w"].data,
                              np.ones(4, dtype=np.float32))


def test_adam_skips_parameters_without_gradient():
    store = _store()
    opt = Adam(store, {"encoder": 0.1, "decoder": 0.1})
    store["dec.w"].grad = np.full(4, 0.25, dtype=np.float32)
    before = store["enc.w"].data.copy()
    m0 = opt.m["enc.w"].copy()
    opt.step()
    np.testing.assert_array_equal(store["enc.w"].data, before)
    np.testing.assert_array_equal(opt.m["enc.w"], m0)
    assert opt.t["enc.w"] == 0 and opt.t["dec.w"] == 1


def test_adam_named_subset_keeps_others_bitwise():
    # Restricting the step to one name must leave the other parameter and
    # its optimizer state untouched even though it carries a gradient.
    store = _store()
    opt = Adam(store, {"encoder": 0.1, "decoder": 0.1})
    store["enc.w"].grad = np.ones((2, 3), dtype=np.float32)
    store["dec.w"].grad = np.ones(4, dtype=np.float32)
    enc_before = store["enc.w"].data.tobytes()
    opt.step(names=["dec.w"])
    assert store["enc.w"].data.tobytes() == enc_before
    assert opt.t["enc.w"] == 0
    assert opt.m["enc.w"].tobytes() == np.zeros((2, 3),
                                                dtype=np.float32).tobytes()
    assert opt.t["dec.w"] == 1


def test_polyak_update_closed_form():
    # After k updates against a constant target c from start s:
    #   shadow_k = m^k * s + (1 - m^k) * c, exact to 1e-12 in float64.
    m = 0.9
    s = np.array([2.0], dtype=np.float64)
    c = np.array([-1.0], dtype=np.float64)
    shadow = s.copy()
    for k in range(1, 21):
        polyak_update(shadow, c, m)
        closed = (m ** k) * s + (1 - m ** k) * c
        np.testing.assert_allclose(shadow, closed, rtol=0, atol=1e-12)


def test_polyak_update_validates_shape():
    with pytest.raises(ValueError):
        polyak_update(np.zeros(3), np.zeros(4), 0.9)


def test_polyak_class_tracks_all_parameters():
    store = _store()
    avg = Polyak(store, momentum=0.5)
    store["enc.w"].data[:] = 3.0
    store["dec.w"].data[:] = -1.0
    avg.update(store)
    np.testing.assert_allclose(avg.shadow["enc.w"], 2.0)
    np.testing.assert_allclose(avg.shadow["dec.w"], 0.0)
    snap = avg.snapshot()
    avg.update(store)
    # snapshot is a copy, not a view
    np.testing.assert_allclose(snap["enc.w"], 2.0)
    np.testing.assert_allclose(avg.shadow["enc.w"], 2.5)


def test_polyak_rejects_bad_momentum():
    store = _store()
    for m in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            Polyak(store, momentum=m)


def test_swapped_params_restores_originals():
    store = _store()
    shadow = {"enc.w": np.full((2, 3), 7.0, dtype=np.float32),
              "dec.w": np.full(4, 8.0, dtype=np.float32)}
    with swapped_params(store, shadow):
        np.testing.assert_array_equal(store["enc.w"].data, 7.0)
        np.testing.assert_array_equal(store["dec.w"].data, 8.0)
    np.testing.assert_array_equal(store["enc.w"].data, 1.0)
    np.testing.assert_array_equal(store["dec.w"].data, 1.0)


def test_swapped_params_restores_on_exception():
    store = _store()
    shadow = {"enc.w": np.zeros((2, 3), dtype=np.float32),
              "dec.w": np.zeros(4, dtype=np.float32)}
    with pytest.raises(RuntimeError):
        with swapped_params(store, shadow):
            raise RuntimeError("boom")
    np.testing.assert_array_equal(store["enc.w"].data, 1.0)


def test_adam_state_snapshot_is_deep():
    store = _store()
    opt = Adam(store, {"encoder": 0.1, "decoder": 0.1})
    store["dec.w"].grad = np.ones(4, dtype=np.float32)
    m, v, t = opt.state_snapshot()
    opt.step()
    np.testing.assert_array_equal(m["dec.w"], 0.0)
    np.testing.assert_array_equal(v["dec.w"], 0.0)
    assert t["dec.w"] == 0
