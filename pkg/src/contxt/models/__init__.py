from .checkpoint import load_checkpoint, model_digest, save_checkpoint
from .mlp import MlpClassifier, MlpTrainConfig, train_mlp
from .transformer import (
    TinyTransformer,
    TransformerTrainConfig,
    generate,
    generate_batch,
    sequence_nll,
    train_tiny_transformer,
)

__all__ = [
    "MlpClassifier",
    "MlpTrainConfig",
    "TinyTransformer",
    "TransformerTrainConfig",
    "generate",
    "generate_batch",
    "load_checkpoint",
    "model_digest",
    "save_checkpoint",
    "sequence_nll",
    "train_mlp",
    "train_tiny_transformer",
]
