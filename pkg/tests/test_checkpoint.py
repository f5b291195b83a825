import struct

import numpy as np
import pytest

from vqe.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from vqe.errors import CheckpointError
from vqe.network import init_params
from vqe.schemas import ModelConfig


@pytest.fixture
def saved(tmp_path, tiny_config):
    params = init_params(tiny_config, seed=4)
    path = tmp_path / "model.vqec"
    save_checkpoint(path, tiny_config, params, meta={"epoch": 3})
    return path, params


def test_round_trip_keeps_names_shapes_and_values(saved, tiny_config):
    path, params = saved
    ckpt = load_checkpoint(path)
    assert ckpt.config == tiny_config
    assert ckpt.meta == {"epoch": 3}
    assert list(ckpt.params) == list(params)
    for name, p in params.items():
        np.testing.assert_array_equal(ckpt.params[name].data, p.data.astype(np.float32))
    assert not path.with_name("model.vqec.tmp").exists()


def test_header_starts_with_magic_and_version(saved):
    blob = saved[0].read_bytes()
    assert blob[:4] == MAGIC
    assert struct.unpack("<H", blob[4:6]) == (1,)


def test_bad_magic(saved):
    path, _ = saved
    blob = bytearray(path.read_bytes())
    blob[:4] = b"NOPE"
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="not a VQEC"):
        load_checkpoint(path)


def test_unknown_version(saved):
    path, _ = saved
    blob = bytearray(path.read_bytes())
    blob[4:6] = struct.pack("<H", 9)
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version 9"):
        load_checkpoint(path)


def test_truncated_and_padded_files(saved):
    path, _ = saved
    blob = path.read_bytes()
    path.write_bytes(blob[:-10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)
    path.write_bytes(blob + b"\0\0")
    with pytest.raises(CheckpointError, match="2 trailing bytes"):
        load_checkpoint(path)


def test_layout_must_match_the_config(tmp_path, tiny_config):
    params = init_params(tiny_config)
    del params["head.final.b"]
    path = tmp_path / "partial.vqec"
    save_checkpoint(path, tiny_config, params)
    with pytest.raises(CheckpointError, match="head.final.b"):
        load_checkpoint(path)

    other = init_params(ModelConfig(width=1 / 8, temporal_radius=1))
    save_checkpoint(path, tiny_config, other)
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match="cannot read"):
        load_checkpoint(tmp_path / "absent.vqec")
