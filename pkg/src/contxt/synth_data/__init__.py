from .domain_shift import (
    DomainShiftConfig,
    DomainShiftDataset,
    Split,
    gen_domain_shift,
    load_dataset,
    read_split_csv,
)
from .sentiment import (
    SentimentConfig,
    SentimentCorpus,
    Vocab,
    build_vocab,
    gen_sentiment_corpus,
    instruction_sequences,
    load_corpus,
    oracle_label,
    phrase_tokens,
    prompt_tokens,
    read_corpus_text,
)

__all__ = [
    "DomainShiftConfig",
    "DomainShiftDataset",
    "Split",
    "gen_domain_shift",
    "load_dataset",
    "read_split_csv",
    "SentimentConfig",
    "SentimentCorpus",
    "Vocab",
    "build_vocab",
    "gen_sentiment_corpus",
    "instruction_sequences",
    "load_corpus",
    "oracle_label",
    "phrase_tokens",
    "prompt_tokens",
    "read_corpus_text",
]
