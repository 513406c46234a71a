import io
import os

import numpy as np
import pytest

from gdt_libs.checkpoint_io import (
    Checkpoint,
    load_checkpoint,
    load_tensor,
    read_manifest,
    read_tensor,
    save_checkpoint,
    save_tensor,
    write_tensor,
)
from gdt_libs.errors import LoadError


def sample_checkpoint(rng):
    return Checkpoint(
        params={"x_embed.weight": rng.standard_normal((4, 3)).astype(np.float32),
                "x_embed.bias": np.zeros(3, dtype=np.float32)},
        step=7,
        moments={"adam_m/x_embed.weight": np.ones((4, 3)), "adam_t": np.array(7, dtype=np.int64)},
        rng_state=np.random.default_rng(3).bit_generator.state,
        config={"model": {"dim": 16}},
        config_hash="abc123",
    )


@pytest.mark.parametrize("array", [
    np.arange(12, dtype=np.float32).reshape(3, 4),
    np.linspace(0, 1, 5),
    np.array(42, dtype=np.int64),
    np.zeros((0, 4), dtype=np.float32),
])
def test_container_round_trip(array):
    buf = io.BytesIO()
    size = write_tensor(buf, array)
    assert size == len(buf.getvalue())
    buf.seek(0)
    back = read_tensor(buf)
    assert back.dtype == array.dtype and back.shape == array.shape
    np.testing.assert_array_equal(back, array)


def test_container_header_layout():
    buf = io.BytesIO()
    write_tensor(buf, np.zeros((2, 3), dtype=np.float64))
    raw = buf.getvalue()
    assert raw[:4] == b"GDT0"
    assert raw[4] == 1
    assert int.from_bytes(raw[5:9], "little") == 2
    assert len(raw) == 4 + 1 + 4 + 2 * 8 + 6 * 8


def test_bad_magic_and_truncation(tmp_path):
    with pytest.raises(LoadError, match="magic"):
        read_tensor(io.BytesIO(b"NOPE" + bytes(16)))
    path = str(tmp_path / "t.bin")
    save_tensor(path, np.ones(10))
    with open(path, "rb") as f:
        data = f.read()
    with pytest.raises(LoadError, match="Truncated"):
        read_tensor(io.BytesIO(data[:-3]))
    np.testing.assert_array_equal(load_tensor(path), np.ones(10))


def test_unsupported_dtype():
    with pytest.raises(LoadError):
        write_tensor(io.BytesIO(), np.zeros(3, dtype=np.complex64))


def test_checkpoint_round_trip(tmp_path, rng):
    ckpt = sample_checkpoint(rng)
    save_checkpoint(ckpt, str(tmp_path))
    back = load_checkpoint(str(tmp_path), expected_hash="abc123")
    assert back.step == 7 and back.config == ckpt.config and back.config_hash == "abc123"
    assert list(back.params) == list(ckpt.params)
    for k in ckpt.params:
        np.testing.assert_array_equal(back.params[k], ckpt.params[k])
    assert int(back.moments["adam_t"]) == 7
    restored = np.random.default_rng()
    restored.bit_generator.state = back.rng_state
    assert restored.random() == np.random.default_rng(3).random()


def test_save_load_save_is_byte_identical(tmp_path, rng):
    first, second = str(tmp_path / "a"), str(tmp_path / "b")
    save_checkpoint(sample_checkpoint(rng), first)
    save_checkpoint(load_checkpoint(first), second)
    for name in ("tensors.bin", "manifest.tsv", "meta.yaml"):
        with open(os.path.join(first, name), "rb") as f1, open(os.path.join(second, name), "rb") as f2:
            assert f1.read() == f2.read(), name


def test_manifest_lists_every_tensor(tmp_path, rng):
    save_checkpoint(sample_checkpoint(rng), str(tmp_path))
    manifest = read_manifest(str(tmp_path))
    assert list(manifest["name"]) == ["param/x_embed.weight", "param/x_embed.bias",
                                      "adam_m/x_embed.weight", "adam_t"]
    assert list(manifest["shape"]) == ["4,3", "3", "4,3", ""]


def test_hash_mismatch_needs_force(tmp_path, rng):
    save_checkpoint(sample_checkpoint(rng), str(tmp_path))
    with pytest.raises(LoadError, match="hash"):
        load_checkpoint(str(tmp_path), expected_hash="ffff")
    assert load_checkpoint(str(tmp_path), expected_hash="ffff", force=True).step == 7


def test_missing_checkpoint(tmp_path):
    with pytest.raises(LoadError):
        load_checkpoint(str(tmp_path / "absent"))
