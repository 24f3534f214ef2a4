"""Experiment configuration: one JSON document drives a whole run.

Precedence is command-line flags, then the config file, then defaults.
The single global ``seed`` is pushed into every block, and each module
derives its own named substream from it.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .models.mlp import MlpTrainConfig
from .models.transformer import TransformerTrainConfig
from .sweep import DEFAULT_STRENGTHS, GenSweepConfig, GridSweepConfig, digest
from .synth_data.domain_shift import DomainShiftConfig
from .synth_data.sentiment import SentimentConfig

TASKS = ("classifier", "generation")


@dataclass(frozen=True)
class ContextBlock:
    layer: int = 1
    removal_samples: int | None = None


@dataclass(frozen=True)
class SteeringBlock:
    alpha_in: float = 0.0
    alpha_out: float = 0.0
    gen_layer: int = 1
    gen_magnitude: float = 0.0


@dataclass(frozen=True)
class SweepBlock:
    inject: tuple[float, ...] = DEFAULT_STRENGTHS
    remove: tuple[float, ...] = DEFAULT_STRENGTHS
    split: str = "val"
    report_split: str = "test"
    workers: int = 1


@dataclass(frozen=True)
class GenerationBlock:
    layers: tuple[int, ...] = GenSweepConfig.layers
    magnitudes: tuple[float, ...] = GenSweepConfig.magnitudes
    split: str = "test"
    n_prompts: int = 100
    max_tokens: int = 12
    workers: int = 1


# block name -> (dataclass, keys that come from elsewhere)
BLOCKS = {
    "dataset": DomainShiftConfig,
    "corpus": SentimentConfig,
    "mlp": MlpTrainConfig,
    "transformer": TransformerTrainConfig,
    "context": ContextBlock,
    "steering": SteeringBlock,
    "sweep": SweepBlock,
    "generation": GenerationBlock,
}


def _block_fields(cls) -> dict:
    return {f.name: f for f in dataclasses.fields(cls) if f.name != "seed"}


def _coerce(value, default):
    if isinstance(default, tuple) and isinstance(value, list):
        return tuple(_coerce(v, default[0] if default else v) for v in value)
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _make_block(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    fields = _block_fields(cls)
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    defaults = cls()
    kwargs = {k: _coerce(v, getattr(defaults, k)) for k, v in raw.items()}
    try:
        return dataclasses.replace(defaults, **kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "run"
    tasks: tuple[str, ...] = TASKS
    dataset: DomainShiftConfig = field(default_factory=DomainShiftConfig)
    corpus: SentimentConfig = field(default_factory=SentimentConfig)
    mlp: MlpTrainConfig = field(default_factory=MlpTrainConfig)
    transformer: TransformerTrainConfig = field(default_factory=TransformerTrainConfig)
    context: ContextBlock = field(default_factory=ContextBlock)
    steering: SteeringBlock = field(default_factory=SteeringBlock)
    sweep: SweepBlock = field(default_factory=SweepBlock)
    generation: GenerationBlock = field(default_factory=GenerationBlock)

    @classmethod
    def from_dict(cls, raw: dict, seed: int | None = None, out: str | None = None) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(raw) - {"seed", "out", "tasks", *BLOCKS})
        if unknown:
            raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
        blocks = {name: _make_block(bcls, raw.get(name, {}), name) for name, bcls in BLOCKS.items()}
        tasks = tuple(raw.get("tasks", TASKS))
        bad = [t for t in tasks if t not in TASKS]
        if bad:
            raise ConfigError(f"unknown task(s) {', '.join(bad)}")
        s = raw.get("seed", 0) if seed is None else seed
        if not isinstance(s, int) or isinstance(s, bool) or s < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {s!r}")
        o = raw.get("out", "run") if out is None else out
        cfg = cls(seed=s, out=str(o), tasks=tasks, **blocks)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path=None, seed: int | None = None, out: str | None = None) -> "RunConfig":
        raw = {}
        if path is not None:
            path = Path(path)
            try:
                raw = json.loads(path.read_text())
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(raw, seed=seed, out=out)

    def validate(self) -> None:
        self.dataset_config().validate()
        self.corpus_config().validate()
        self.grid_config().validate()
        self.gen_config().validate()
        if self.context.removal_samples is not None and self.context.removal_samples < 0:
            raise ConfigError("context.removal_samples must be >= 0")

    def to_dict(self) -> dict:
        d = {"seed": self.seed, "out": self.out, "tasks": list(self.tasks)}
        for name in BLOCKS:
            block = dataclasses.asdict(getattr(self, name))
            block.pop("seed", None)
            d[name] = block
        return d

    def to_json(self) -> str:
        # the file sits inside the output directory, so ``out`` is left implicit
        d = self.to_dict()
        d.pop("out")
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @property
    def digest(self) -> str:
        # output location does not change results
        d = self.to_dict()
        d.pop("out")
        return digest(d)

    def dataset_config(self) -> DomainShiftConfig:
        return dataclasses.replace(self.dataset, seed=self.seed)

    def corpus_config(self) -> SentimentConfig:
        return dataclasses.replace(self.corpus, seed=self.seed)

    def mlp_config(self) -> MlpTrainConfig:
        return dataclasses.replace(self.mlp, seed=self.seed)

    def transformer_config(self) -> TransformerTrainConfig:
        return dataclasses.replace(self.transformer, seed=self.seed)

    def grid_config(self) -> GridSweepConfig:
        s = self.sweep
        return GridSweepConfig(inject=s.inject, remove=s.remove, layer=self.context.layer,
                               split=s.split, workers=s.workers, seed=self.seed)

    def gen_config(self) -> GenSweepConfig:
        g = self.generation
        return GenSweepConfig(layers=g.layers, magnitudes=g.magnitudes, split=g.split, n_prompts=g.n_prompts,
                              max_tokens=g.max_tokens, workers=g.workers, seed=self.seed)
