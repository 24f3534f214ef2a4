"""Context-vector activation steering on a small numpy neural-network core."""

from .engine import (
    ContextCache,
    ContextVector,
    SteeringSpec,
    apply_steering,
    cache_get,
    cache_load,
    cache_put,
    cache_save,
    extract_mean_context,
    extract_mean_phrase_context,
    extract_phrase_context,
    make_classifier_spec,
)
from .errors import (
    CacheMissError,
    CheckpointError,
    ConfigError,
    ContextLengthError,
    ContxtError,
    DataError,
    DimensionError,
    EmptyContextSetError,
    TapError,
    VocabError,
)
from .metrics import accuracy, evaluate, flip_rate, score_generations, self_bleu
from .models import MlpClassifier, TinyTransformer, load_checkpoint, save_checkpoint

__version__ = "0.1.0"
