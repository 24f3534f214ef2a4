import numpy as np
import pytest

from contxt.errors import CheckpointError
from contxt.models.checkpoint import checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint
from contxt.models.mlp import MlpTrainConfig, train_mlp
from contxt.models.transformer import TinyTransformer
from contxt.tensor_core import SeededRng


def test_mlp_round_trip(tmp_path, small_mlp, shift_data):
    path = save_checkpoint(small_mlp, tmp_path / "m.ckpt")
    back = load_checkpoint(path)
    X = shift_data.test.X
    assert back.forward(X).tobytes() == small_mlp.forward(X).tobytes()
    assert back.train_accuracy == small_mlp.train_accuracy
    assert back.config_digest == small_mlp.config_digest
    assert checkpoint_bytes(back) == path.read_bytes()


def test_transformer_round_trip(tmp_path):
    m = TinyTransformer.initialize(13, SeededRng(0), width=8, n_layers=2, n_heads=2, context_length=10)
    back = load_checkpoint(save_checkpoint(m, tmp_path / "t.ckpt"))
    tok = np.array([[1, 5, 7, 2]])
    assert back.forward(tok).tobytes() == m.forward(tok).tobytes()
    assert (back.n_layers, back.n_heads, back.context_length) == (2, 2, 10)


def test_same_seed_same_bytes(shift_data):
    cfg = MlpTrainConfig(epochs=2, seed=4)
    a = train_mlp(shift_data.train.X, shift_data.train.y, cfg)
    b = train_mlp(shift_data.train.X, shift_data.train.y, cfg)
    assert checkpoint_bytes(a) == checkpoint_bytes(b)


def test_corruption_detected(small_mlp):
    raw = bytearray(checkpoint_bytes(small_mlp))
    raw[100] ^= 1
    with pytest.raises(CheckpointError, match="checksum"):
        checkpoint_from_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        checkpoint_from_bytes(b"not a checkpoint at all, definitely not" * 2)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.ckpt")
