"""Parameter store partitions and binary checkpoint round trips."""

import numpy as np
import pytest

from taeparse.params import (ParameterStore, load_checkpoint,
                             save_checkpoint)


def _store():
    s = ParameterStore()
    rng = np.random.default_rng(0)
    s.add("enc.w", rng.normal(size=(4, 3)).astype(np.float32), "encoder")
    s.add("dec.w", rng.normal(size=(2, 5)).astype(np.float32), "decoder")
    s.add("emb.word", rng.normal(size=(7, 3)).astype(np.float32),
          "shared_embedding")
    return s


def test_partition_queries():
    s = _store()
    assert s.partition_of("enc.w") == "encoder"
    assert s.names_by_partition("encoder") == ["enc.w"]
    assert set(s.names_by_partition("decoder", "shared_embedding")) == \
        {"dec.w", "emb.word"}
    assert len(s.names()) == 3


def test_duplicate_name_rejected():
    s = _store()
    with pytest.raises(ValueError):
        s.add("enc.w", np.zeros((1,), dtype=np.float32), "encoder")


def test_unknown_partition_rejected():
    s = ParameterStore()
    with pytest.raises(ValueError):
        s.add("x", np.zeros(1, dtype=np.float32), "attic")


def test_snapshot_and_load_values_roundtrip():
    s = _store()
    snap = s.snapshot()
    s["enc.w"].data += 1.0
    s.load_values(snap)
    np.testing.assert_array_equal(s["enc.w"].data, snap["enc.w"])
    bad = dict(snap)
    bad["enc.w"] = np.zeros((9, 9), dtype=np.float32)
    with pytest.raises(ValueError):
        s.load_values(bad)


def test_checkpoint_bit_exact_roundtrip(tmp_path):
    s = _store()
    cfg = {"model": {"d_model": 32}, "note": "x"}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, s, cfg)
    values, partitions, config = load_checkpoint(path)
    assert config == cfg
    assert partitions == {"enc.w": "encoder", "dec.w": "decoder",
                          "emb.word": "shared_embedding"}
    for name in s.names():
        assert values[name].tobytes() == s[name].data.tobytes()
        assert values[name].dtype == s[name].data.dtype
        assert values[name].shape == s[name].data.shape


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_zero_grad_clears():
    s = _store()
    s["enc.w"].grad = np.ones_like(s["enc.w"].data)
    s.zero_grad()
    assert s["enc.w"].grad is None
