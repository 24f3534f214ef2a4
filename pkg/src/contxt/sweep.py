"""Batch experiment protocols: strength grids, domain-wise deltas, generation sweeps.

Grid cells and generation cells are independent pure jobs over read-only
model and cache state, so they may run in any order or on a thread pool
and still produce identical results.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .engine import ContextCache, SteeringSpec, extract_mean_context, extract_phrase_context, make_classifier_spec
from .errors import ConfigError
from .metrics import BLEU_VARIANT, EvalReport, GenerationEvalReport, accuracy, evaluate, score_generations
from .models.checkpoint import model_digest
from .models.transformer import generate_batch
from .synth_data.sentiment import NEGATIVE, POSITIVE, oracle_label, phrase_tokens, prompt_tokens

SOURCE_LABEL = "source"
DEFAULT_STRENGTHS = tuple(round(0.1 * i, 1) for i in range(11))


def digest(obj) -> str:
    if hasattr(obj, "__dataclass_fields__"):
        obj = asdict(obj)
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")).hexdigest()


def removal_label(domain: int) -> str:
    return f"val:domain{domain}"


def prepare_classifier_contexts(model, dataset, layer: int, cache: ContextCache | None = None,
                                removal_samples: int | None = None) -> ContextCache:
    """Source context from the training split; one removal context per domain from validation.

    ``removal_samples`` caps how many validation inputs per domain feed each
    removal context (all of them by default).
    """
    cache = cache if cache is not None else ContextCache(model_digest=model_digest(model))
    cache.put(extract_mean_context(model, dataset.train.X, layer, SOURCE_LABEL))
    for k in range(dataset.config.domains):
        X = dataset.val.for_domain(k).X
        if removal_samples is not None:
            X = X[:removal_samples]
        cache.put(extract_mean_context(model, X, layer, removal_label(k)))
    return cache


@dataclass(frozen=True)
class GridSweepConfig:
    inject: tuple[float, ...] = DEFAULT_STRENGTHS
    remove: tuple[float, ...] = DEFAULT_STRENGTHS
    layer: int = 1
    source_label: str = SOURCE_LABEL
    split: str = "val"
    metric: str = "mean_accuracy"
    workers: int = 1
    seed: int = 0

    def validate(self) -> None:
        if not self.inject or not self.remove:
            raise ConfigError("strength lists must be nonempty")
        if 0.0 not in self.inject or 0.0 not in self.remove:
            raise ConfigError("both strength lists must include 0")
        if any(a < 0 for a in (*self.inject, *self.remove)):
            raise ConfigError("strengths are nonnegative magnitudes")
        if self.metric != "mean_accuracy":
            raise ConfigError(f"unknown metric {self.metric!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


def domain_specs(config_or_layer, n_domains: int, alpha_in: float, alpha_out: float,
                 source_label: str = SOURCE_LABEL, cache: ContextCache | None = None) -> dict[int, SteeringSpec]:
    layer = getattr(config_or_layer, "layer", config_or_layer)
    return {k: make_classifier_spec(source_label, removal_label(k), alpha_in, alpha_out, layer, cache)
            for k in range(n_domains)}


@dataclass
class SweepResult:
    inject: tuple[float, ...]
    remove: tuple[float, ...]
    values: np.ndarray
    deltas: np.ndarray
    per_domain: np.ndarray
    argmax: tuple[int, int]
    provenance: dict = field(default_factory=dict)

    @property
    def best_strengths(self) -> tuple[float, float]:
        """``(inject, remove)`` at the selected cell."""
        i, j = self.argmax
        return self.inject[j], self.remove[i]

    @property
    def best_delta(self) -> float:
        return float(self.deltas[self.argmax])

    def cell(self, inject: float, remove: float) -> float:
        return float(self.deltas[self.remove.index(remove), self.inject.index(inject)])

    def single_axis_best(self) -> float:
        i0, j0 = self.remove.index(0.0), self.inject.index(0.0)
        return float(max(self.deltas[i0, :].max(), self.deltas[:, j0].max()))


def _select(deltas: np.ndarray, inject, remove) -> tuple[int, int]:
    # ties: smallest removal, then smallest injection
    best = None
    for i in sorted(range(len(remove)), key=lambda i: remove[i]):
        for j in sorted(range(len(inject)), key=lambda j: inject[j]):
            if best is None or deltas[i, j] > deltas[best]:
                best = (i, j)
    return best


def run_grid_sweep(model, dataset, config: GridSweepConfig, cache: ContextCache) -> SweepResult:
    """Mean-over-domains accuracy for every (removal, injection) pair."""
    config.validate()
    split = dataset.splits[config.split]
    n_domains = dataset.config.domains
    domain_specs(config, n_domains, 0.0, 0.0, config.source_label, cache)  # surfaces cache misses early
    cells = [(i, j) for i in range(len(config.remove)) for j in range(len(config.inject))]

    def job(cell):
        i, j = cell
        specs = domain_specs(config, n_domains, config.inject[j], config.remove[i], config.source_label)
        acc = accuracy(model, split, specs, cache)
        return [acc[k] for k in range(n_domains)]

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(job, cells))
    else:
        results = [job(c) for c in cells]
    per_domain = np.zeros((len(config.remove), len(config.inject), n_domains))
    for (i, j), acc in zip(cells, results):
        per_domain[i, j] = acc
    values = per_domain.mean(axis=-1)
    base = values[config.remove.index(0.0), config.inject.index(0.0)]
    deltas = values - base
    argmax = _select(deltas, config.inject, config.remove)
    provenance = {"config_digest": digest(config), "model_digest": model_digest(model),
                  "context_digests": cache.digests(), "layer": config.layer, "split": config.split}
    return SweepResult(tuple(config.inject), tuple(config.remove), values, deltas, per_domain, argmax, provenance)


def domain_delta_at_optimum(sweep: SweepResult, model, dataset, cache: ContextCache, split: str = "test",
                            source_label: str = SOURCE_LABEL) -> EvalReport:
    """Per-domain accuracy at the selected strengths versus unsteered, on ``split``."""
    alpha_in, alpha_out = sweep.best_strengths
    specs = domain_specs(sweep.provenance["layer"], dataset.config.domains, alpha_in, alpha_out, source_label, cache)
    part = dataset.splits[split]
    base = evaluate(model, part, None, None, dataset.domain_names)
    steered = evaluate(model, part, specs, cache, dataset.domain_names)
    return steered.with_baseline(base, "unsteered")


@dataclass(frozen=True)
class GenSweepConfig:
    layers: tuple[int, ...] = (0, 1, 2, 3)
    magnitudes: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0)
    phrases: tuple[tuple[str, tuple[str, ...]], ...] = (
        (POSITIVE, tuple(phrase_tokens(POSITIVE))),
        (NEGATIVE, tuple(phrase_tokens(NEGATIVE))),
    )
    split: str = "test"
    n_prompts: int = 100
    max_tokens: int = 12
    workers: int = 1
    seed: int = 0

    def validate(self) -> None:
        if 0.0 not in self.magnitudes:
            raise ConfigError("magnitude list must include 0")
        if not self.layers:
            raise ConfigError("layer list must be nonempty")
        if self.n_prompts < 1 or self.max_tokens < 1:
            raise ConfigError("n_prompts and max_tokens must be >= 1")


def phrase_label(polarity: str) -> str:
    return f"phrase:{polarity}"


def opposite(polarity: str) -> str:
    return NEGATIVE if polarity == POSITIVE else POSITIVE


def prepare_phrase_contexts(model, vocab, config: GenSweepConfig, cache: ContextCache | None = None) -> ContextCache:
    cache = cache if cache is not None else ContextCache(model_digest=model_digest(model))
    for polarity, words in config.phrases:
        for layer in config.layers:
            cache.put(extract_phrase_context(model, vocab.encode(list(words)), layer, phrase_label(polarity), words))
    return cache


@dataclass
class GenSweepResult:
    cells: dict[tuple[int, float], GenerationEvalReport]
    provenance: dict = field(default_factory=dict)


def run_generation_sweep(model, config: GenSweepConfig, corpus, cache: ContextCache,
                         oracle: Callable = oracle_label) -> GenSweepResult:
    """Rewrite prompts under a sentiment context opposing each source's label.

    Every prompt asks for a verbatim rephrase; the magnitude-0 cell is the
    unsteered baseline.
    """
    config.validate()
    vocab = corpus.vocab
    items = corpus.split(config.split)[:config.n_prompts]
    sources = [s for s, _ in items]
    prompts = [prompt_tokens(s) for s in sources]
    encoded = [vocab.encode(p) for p in prompts]
    groups: dict[tuple[str, int], list[int]] = {}
    for i, (s, label) in enumerate(items):
        groups.setdefault((opposite(label), len(encoded[i])), []).append(i)
    for polarity, _ in groups:
        for layer in config.layers:
            cache.get(layer, phrase_label(polarity))
    cells = [(layer, mag) for layer in config.layers for mag in config.magnitudes]

    def job(cell):
        layer, mag = cell
        outputs: list = [None] * len(items)
        for (polarity, _), ids in sorted(groups.items()):
            spec = SteeringSpec(layer, ((phrase_label(polarity), mag),))
            res = generate_batch(model, [encoded[i] for i in ids], config.max_tokens, spec, cache, vocab.eos)
            for i, r in zip(ids, res):
                outputs[i] = vocab.decode(r)
        return score_generations(sources, outputs, oracle, prompts)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            reports = list(pool.map(job, cells))
    else:
        reports = [job(c) for c in cells]
    provenance = {"config_digest": digest(config), "model_digest": model_digest(model),
                  "context_digests": cache.digests(), "bleu": BLEU_VARIANT,
                  "oracle": "lexicon vote (stand-in sentiment judge)"}
    return GenSweepResult(dict(zip(cells, reports)), provenance)


def _num(x: float) -> str:
    return repr(float(x))


def grid_table(result: SweepResult) -> str:
    buf = io.StringIO()
    buf.write(f"# contxt-grid config_digest={result.provenance.get('config_digest', '')} "
              f"model_digest={result.provenance.get('model_digest', '')}\n")
    n_domains = result.per_domain.shape[-1]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["remove", "inject", "delta", "mean_accuracy"] + [f"acc_domain{k}" for k in range(n_domains)])
    for i, r in enumerate(result.remove):
        for j, a in enumerate(result.inject):
            w.writerow([_num(r), _num(a), _num(result.deltas[i, j]), _num(result.values[i, j])]
                       + [_num(v) for v in result.per_domain[i, j]])
    return buf.getvalue()


def generation_table(result: GenSweepResult) -> str:
    buf = io.StringIO()
    buf.write(f"# contxt-gensweep config_digest={result.provenance.get('config_digest', '')} "
              f"model_digest={result.provenance.get('model_digest', '')} bleu={BLEU_VARIANT} "
              f"oracle=lexicon\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["layer", "magnitude", "flip_rate", "self_bleu", "undetermined", "determined", "n"])
    for (layer, mag), rep in result.cells.items():
        w.writerow([layer, _num(mag), _num(rep.flip_rate), _num(rep.self_bleu), rep.undetermined,
                    rep.determined, len(rep.records)])
    return buf.getvalue()


def domain_table(report: EvalReport, digest_str: str = "") -> str:
    buf = io.StringIO()
    buf.write(f"# contxt-domains config_digest={digest_str}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["domain", "count", "accuracy", "delta"])
    for name, acc in report.accuracies.items():
        w.writerow([name, report.counts[name], _num(acc), _num(report.deltas.get(name, 0.0))])
    return buf.getvalue()


def emit_tables(result, directory, stem: str | None = None) -> list[Path]:
    """Write plot-ready CSV tables (and generation records) for a result."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        if isinstance(result, SweepResult):
            p = directory / f"{stem or 'grid'}.csv"
            p.write_text(grid_table(result))
            paths.append(p)
        elif isinstance(result, GenSweepResult):
            p = directory / f"{stem or 'gensweep'}.csv"
            p.write_text(generation_table(result))
            paths.append(p)
            rec = directory / f"{stem or 'gensweep'}_records.jsonl"
            lines = []
            for (layer, mag), rep in result.cells.items():
                for r in rep.records:
                    lines.append(json.dumps({"layer": layer, "magnitude": mag, **r.to_dict()}, sort_keys=True))
            rec.write_text("\n".join(lines) + "\n")
            paths.append(rec)
        elif isinstance(result, EvalReport):
            p = directory / f"{stem or 'domains'}.csv"
            p.write_text(domain_table(result))
            paths.append(p)
        else:
            raise TypeError(f"cannot emit tables for {type(result).__name__}")
    except OSError as exc:
        raise OSError(f"failed writing tables under {directory}: {exc}") from exc
    return paths
