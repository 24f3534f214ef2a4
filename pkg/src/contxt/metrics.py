"""Accuracy reports, max-softmax confidence, flip rate and Self-BLEU.

BLEU here is the pairwise, single-reference form: clipped n-gram
precisions for n = 1..4, uniform geometric mean, standard brevity penalty
and no smoothing, so any zero precision gives a score of 0.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError
from .synth_data.sentiment import UNDETERMINED
from .tensor_core import softmax

BLEU_VARIANT = "pairwise-bleu4-clipped-bp-nosmoothing"


EVAL_BATCH = 128


def _logits(model, X, steering, cache):
    if steering is None:
        return model.forward(X)
    logits, _ = model.forward_with_tap(X, steering.layer, steering.bind(cache))
    return logits


def _predict(model, X, steering, cache) -> np.ndarray:
    # fixed-size chunks keep working arrays small and evaluation cost linear
    transform = None if steering is None else steering.bind(cache)
    preds = []
    for start in range(0, X.shape[0], EVAL_BATCH):
        chunk = X[start:start + EVAL_BATCH]
        if transform is None:
            logits = model.forward(chunk)
        else:
            logits, _ = model.forward_with_tap(chunk, steering.layer, transform)
        preds.append(np.argmax(logits, axis=-1))
    return np.concatenate(preds)


def accuracy(model, split, steering=None, cache=None) -> dict[int, float]:
    """Per-domain top-1 accuracy; ties in the logits go to the lowest class index.

    ``steering`` is ``None``, one ``SteeringSpec`` for every domain, or a
    mapping from domain index to spec (e.g. a per-domain removal context).
    """
    if len(split) == 0:
        raise DataError("cannot evaluate an empty split")
    out = {}
    for k in split.domains():
        part = split.for_domain(k)
        spec = steering.get(k) if isinstance(steering, Mapping) else steering
        pred = _predict(model, part.X, spec, cache)
        out[k] = float(np.mean(pred == part.y))
    return out


@dataclass
class EvalReport:
    accuracies: dict[str, float]
    counts: dict[str, int]
    baseline_name: str | None = None
    deltas: dict[str, float] = field(default_factory=dict)

    @property
    def mean_accuracy(self) -> float:
        """Unweighted mean over domains."""
        return float(np.mean(list(self.accuracies.values())))

    @property
    def mean_delta(self) -> float:
        return float(np.mean(list(self.deltas.values()))) if self.deltas else 0.0

    def with_baseline(self, baseline: "EvalReport", name: str = "baseline") -> "EvalReport":
        deltas = {k: self.accuracies[k] - baseline.accuracies[k] for k in self.accuracies}
        return EvalReport(dict(self.accuracies), dict(self.counts), name, deltas)

    def to_dict(self) -> dict:
        return {"accuracies": self.accuracies, "counts": self.counts, "mean_accuracy": self.mean_accuracy,
                "baseline": self.baseline_name, "deltas": self.deltas,
                "mean_delta": self.mean_delta if self.deltas else None}


def evaluate(model, split, steering=None, cache=None, names: Sequence[str] | None = None) -> EvalReport:
    acc = accuracy(model, split, steering, cache)
    label = (lambda k: names[k]) if names is not None else (lambda k: f"domain{k}")
    counts = {label(k): int(np.sum(split.domain == k)) for k in acc}
    return EvalReport({label(k): v for k, v in acc.items()}, counts)


def max_softmax_confidence(model, x, steering=None, cache=None) -> tuple[int, float]:
    """Predicted class and its softmax probability for a single input."""
    logits = _logits(model, np.atleast_2d(np.asarray(x, dtype=np.float64)), steering, cache)
    return top1_confidence(logits[0])


def top1_confidence(logits) -> tuple[int, float]:
    p = softmax(np.asarray(logits, dtype=np.float64))
    k = int(np.argmax(p))
    return k, float(p[k])


def flip_counts(pairs: Sequence[tuple[str, str]]) -> tuple[int, int, int]:
    """``(flipped, determined, undetermined)`` over (before, after) label pairs."""
    flipped = determined = undetermined = 0
    for before, after in pairs:
        if before == UNDETERMINED or after == UNDETERMINED:
            undetermined += 1
            continue
        determined += 1
        flipped += before != after
    return flipped, determined, undetermined


def flip_rate(pairs: Sequence[tuple[str, str]]) -> float:
    """Fraction of determined pairs whose label changed (NaN if none are determined)."""
    flipped, determined, _ = flip_counts(pairs)
    return flipped / determined if determined else float("nan")


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def ngram_precisions(candidate: Sequence, reference: Sequence, max_n: int = 4) -> list[tuple[int, int]]:
    """Clipped match count and candidate n-gram total for each n."""
    out = []
    for n in range(1, max_n + 1):
        cand, ref = _ngrams(candidate, n), _ngrams(reference, n)
        out.append((sum(min(c, ref[g]) for g, c in cand.items()), sum(cand.values())))
    return out


def self_bleu(candidate: Sequence, reference: Sequence, max_n: int = 4) -> float:
    candidate, reference = list(candidate), list(reference)
    if not candidate:
        return 0.0
    logs = []
    for matched, total in ngram_precisions(candidate, reference, max_n):
        if matched == 0 or total == 0:
            return 0.0
        logs.append(math.log(matched / total))
    c, r = len(candidate), len(reference)
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(math.fsum(logs) / max_n)


@dataclass
class GenerationRecord:
    source: list[str]
    output: list[str]
    label_before: str
    label_after: str
    self_bleu: float
    prompt: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"prompt": " ".join(self.prompt), "source": " ".join(self.source), "output": " ".join(self.output),
                "label_before": self.label_before, "label_after": self.label_after, "self_bleu": self.self_bleu}


@dataclass
class GenerationEvalReport:
    records: list[GenerationRecord]

    @property
    def flip_rate(self) -> float:
        return flip_rate([(r.label_before, r.label_after) for r in self.records])

    @property
    def undetermined(self) -> int:
        return flip_counts([(r.label_before, r.label_after) for r in self.records])[2]

    @property
    def determined(self) -> int:
        return flip_counts([(r.label_before, r.label_after) for r in self.records])[1]

    @property
    def self_bleu(self) -> float:
        return float(np.mean([r.self_bleu for r in self.records])) if self.records else 0.0


def score_generations(sources: Sequence[Sequence[str]], outputs: Sequence[Sequence[str]], oracle,
                      prompts: Sequence[Sequence[str]] | None = None) -> GenerationEvalReport:
    records = []
    for i, (src, out) in enumerate(zip(sources, outputs)):
        records.append(GenerationRecord(list(src), list(out), oracle(src), oracle(out), self_bleu(out, src),
                                        list(prompts[i]) if prompts is not None else []))
    return GenerationEvalReport(records)
