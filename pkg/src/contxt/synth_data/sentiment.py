"""Templated restaurant-review corpus with a lexicon sentiment oracle.

Each sentence is one template with a noun slot and exactly one polarity
slot.  Polarity words come in antonym pairs, so every sentence has a
well-defined opposite-sentiment rewrite.  All templates in a set have the
same token length.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from ..errors import ConfigError, DataError, VocabError
from ..tensor_core import SeededRng

SCHEMA_VERSION = 1

POSITIVE = "positive"
NEGATIVE = "negative"
UNDETERMINED = "undetermined"

ANTONYMS = (
    ("great", "awful"),
    ("delicious", "bland"),
    ("friendly", "rude"),
    ("amazing", "terrible"),
    ("excellent", "horrible"),
    ("wonderful", "disappointing"),
)
POSITIVE_WORDS = frozenset(p for p, _ in ANTONYMS)
NEGATIVE_WORDS = frozenset(n for _, n in ANTONYMS)
FLIP = {**{p: n for p, n in ANTONYMS}, **{n: p for p, n in ANTONYMS}}

NOUNS = ("food", "service", "staff", "pizza", "coffee", "waiter", "decor", "menu", "pasta", "music")

TEMPLATE_SETS = {
    "basic": (
        "the {noun} at this place was {adj} .",
        "i think the {noun} here is {adj} .",
        "honestly the {noun} was {adj} last night .",
        "we found the {noun} {adj} every time .",
        "overall a {adj} {noun} for the price .",
        "the {noun} is always {adj} here too .",
    ),
}

PAD, BOS, EOS, SEP, COLON = "<pad>", "<bos>", "<eos>", "=>", ":"
REPHRASE = ("be", "extremely", "faithful")
INSTRUCTIONS = {
    None: REPHRASE,
    POSITIVE: ("be", "extremely", "positive"),
    NEGATIVE: ("be", "extremely", "negative"),
}


class Vocab:
    """Fixed word-level vocabulary; unknown words raise ``VocabError``."""

    def __init__(self, words: Iterable[str]):
        self.words: list[str] = []
        self.index: dict[str, int] = {}
        for w in words:
            if w not in self.index:
                self.index[w] = len(self.words)
                self.words.append(w)

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def encode(self, tokens: Sequence[str] | str) -> list[int]:
        if isinstance(tokens, str):
            tokens = tokens.split()
        try:
            return [self.index[t] for t in tokens]
        except KeyError as exc:
            raise VocabError(f"out-of-vocabulary token {exc.args[0]!r}") from None

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.words[int(i)] for i in ids]

    @property
    def pad(self) -> int:
        return self.index[PAD]

    @property
    def bos(self) -> int:
        return self.index[BOS]

    @property
    def eos(self) -> int:
        return self.index[EOS]


def build_vocab(template_set: str = "basic") -> Vocab:
    if template_set not in TEMPLATE_SETS:
        raise ConfigError(f"unknown template set {template_set!r}")
    words = [PAD, BOS, EOS, SEP, COLON]
    for instr in INSTRUCTIONS.values():
        words += instr
    for t in TEMPLATE_SETS[template_set]:
        words += [w for w in t.split() if not w.startswith("{")]
    words += NOUNS
    for p, n in ANTONYMS:
        words += [p, n]
    return Vocab(words)


def oracle_label(sentence: Sequence[str] | str) -> str:
    """Lexicon vote over surface tokens; ties and zero hits are undetermined."""
    if isinstance(sentence, str):
        sentence = sentence.split()
    pos = sum(1 for w in sentence if w in POSITIVE_WORDS)
    neg = sum(1 for w in sentence if w in NEGATIVE_WORDS)
    if pos > neg:
        return POSITIVE
    if neg > pos:
        return NEGATIVE
    return UNDETERMINED


def flip_sentence(tokens: Sequence[str]) -> list[str]:
    return [FLIP.get(w, w) for w in tokens]


def restyle(tokens: Sequence[str], polarity: str | None) -> list[str]:
    """Rewrite ``tokens`` to carry ``polarity`` (``None`` keeps them unchanged)."""
    if polarity is None or oracle_label(tokens) == polarity:
        return list(tokens)
    return flip_sentence(tokens)


@dataclass(frozen=True)
class SentimentConfig:
    size: int = 600
    template_set: str = "basic"
    test_fraction: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        if self.size < 1:
            raise ConfigError("corpus size must be >= 1")
        if self.template_set not in TEMPLATE_SETS:
            raise ConfigError(f"unknown template set {self.template_set!r}")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in [0, 1)")


@dataclass
class SentimentCorpus:
    config: SentimentConfig
    vocab: Vocab
    templates: tuple[str, ...]
    sentences: list[list[str]]
    labels: list[str]
    splits: dict[str, list[int]] = field(default_factory=dict)

    def split(self, name: str) -> list[tuple[list[str], str]]:
        return [(self.sentences[i], self.labels[i]) for i in self.splits[name]]

    def to_text(self, split: str | None = None, tag: str = "") -> str:
        ids = range(len(self.sentences)) if split is None else self.splits[split]
        header = f"# contxt-corpus schema={SCHEMA_VERSION} template_set={self.config.template_set}"
        header += f" {tag}" if tag else ""
        lines = [header + ("" if split is None else f" split={split}")]
        lines += [f"{self.labels[i]}\t{' '.join(self.sentences[i])}" for i in ids]
        return "\n".join(lines) + "\n"

    def save(self, directory, tag: str = "") -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for name in self.splits:
            p = directory / f"{name}.txt"
            p.write_text(self.to_text(name, tag))
            paths.append(p)
        return paths


def read_corpus_text(path) -> list[tuple[list[str], str]]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read corpus {path}: {exc}") from exc
    if not lines or not lines[0].startswith("# contxt-corpus"):
        raise DataError(f"{path}: missing corpus schema header")
    out = []
    for n, line in enumerate(lines[1:], start=2):
        label, tab, text = line.partition("\t")
        if not tab or label not in (POSITIVE, NEGATIVE):
            raise DataError(f"{path}:{n}: expected '<label>\\t<sentence>'")
        out.append((text.split(), label))
    return out


def load_corpus(directory, config: SentimentConfig) -> SentimentCorpus:
    """Rebuild a corpus from exported ``train.txt`` / ``test.txt``."""
    directory = Path(directory)
    sentences, labels, splits = [], [], {}
    for name in ("train", "test"):
        rows = read_corpus_text(directory / f"{name}.txt")
        splits[name] = list(range(len(sentences), len(sentences) + len(rows)))
        for s, label in rows:
            sentences.append(s)
            labels.append(label)
    return SentimentCorpus(config, build_vocab(config.template_set), TEMPLATE_SETS[config.template_set],
                           sentences, labels, splits)


def gen_sentiment_corpus(config: SentimentConfig | None = None) -> SentimentCorpus:
    """Balanced corpus: ``ceil(size / 2)`` positive and ``floor(size / 2)`` negative sentences.

    Sentences are drawn uniformly over (template, noun, antonym pair) for
    each polarity, then shuffled and split into train/test.
    """
    cfg = config or SentimentConfig()
    cfg.validate()
    rng = SeededRng(cfg.seed, "sentiment")
    templates = TEMPLATE_SETS[cfg.template_set]
    vocab = build_vocab(cfg.template_set)
    n_pos = (cfg.size + 1) // 2
    n_neg = cfg.size // 2
    draw = rng.substream("fill")
    sentences, labels = [], []
    for polarity, count in ((POSITIVE, n_pos), (NEGATIVE, n_neg)):
        for _ in range(count):
            t = templates[int(draw.integers(0, len(templates)))]
            noun = NOUNS[int(draw.integers(0, len(NOUNS)))]
            pair = ANTONYMS[int(draw.integers(0, len(ANTONYMS)))]
            adj = pair[0] if polarity == POSITIVE else pair[1]
            sentences.append(t.format(noun=noun, adj=adj).split())
            labels.append(polarity)
    order = [int(i) for i in rng.substream("order").permutation(cfg.size)]
    sentences = [sentences[i] for i in order]
    labels = [labels[i] for i in order]
    n_test = int(round(cfg.size * cfg.test_fraction))
    splits = {"train": list(range(cfg.size - n_test)), "test": list(range(cfg.size - n_test, cfg.size))}
    return SentimentCorpus(cfg, vocab, templates, sentences, labels, splits)


def prompt_tokens(sentence: Sequence[str], polarity: str | None = None) -> list[str]:
    """Instruction prompt up to and including the separator."""
    return [BOS, *INSTRUCTIONS[polarity], COLON, *sentence, SEP]


def phrase_tokens(polarity: str) -> list[str]:
    """Context phrase for a polarity, e.g. ``<bos> be extremely positive``."""
    return [BOS, *INSTRUCTIONS[polarity]]


def instruction_sequences(corpus: SentimentCorpus, split: str = "train") -> list[list[int]]:
    """Token sequences teaching rephrase and polarity-rewrite instructions.

    Every sentence yields three examples: a verbatim rephrase, and rewrites
    under the positive and negative instructions.
    """
    out = []
    for sentence, _ in corpus.split(split):
        for polarity in (None, POSITIVE, NEGATIVE):
            toks = prompt_tokens(sentence, polarity) + restyle(sentence, polarity) + [EOS]
            out.append(corpus.vocab.encode(toks))
    return out
