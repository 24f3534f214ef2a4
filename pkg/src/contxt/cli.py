"""Command-line pipeline: data -> models -> contexts -> eval / sweeps / generation.

Every subcommand takes the same ``--config``, ``--seed`` and ``--out``
flags and reads or writes artifacts under one output directory::

    <out>/config.json                      resolved configuration
    <out>/data/domain_shift/{train,val,test}.csv
    <out>/data/sentiment/{train,test}.txt
    <out>/models/{mlp,transformer}.ckpt
    <out>/contexts/{classifier,phrases}.cache
    <out>/reports/eval.json
    <out>/tables/...                       sweep and per-domain CSVs
    <out>/generations.jsonl
    <out>/manifest.json                    seed, config digest, sha256 of every file

Nothing written depends on wall-clock time, so identical configs yield
identical trees.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import traceback
from pathlib import Path

from .config import RunConfig
from .engine import ContextCache, SteeringSpec, make_classifier_spec
from .errors import CacheMissError, CheckpointError, ConfigError, ContxtError, DataError, EmptyContextSetError
from .metrics import evaluate, score_generations
from .models.checkpoint import load_checkpoint, model_digest, save_checkpoint
from .models.mlp import train_mlp
from .models.transformer import generate_batch, train_tiny_transformer
from .sweep import (
    GenSweepConfig,
    domain_delta_at_optimum,
    domain_specs,
    domain_table,
    emit_tables,
    opposite,
    phrase_label,
    prepare_classifier_contexts,
    prepare_phrase_contexts,
    run_generation_sweep,
    run_grid_sweep,
)
from .synth_data.domain_shift import gen_domain_shift, load_dataset
from .synth_data.sentiment import gen_sentiment_corpus, instruction_sequences, load_corpus, oracle_label, prompt_tokens

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CACHE, EXIT_INTERNAL = 0, 2, 3, 4, 5


class Run:
    """Paths and shared state for one output directory."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.out = Path(config.out)
        self.tag = f"config_digest={config.digest}"

    def path(self, *parts) -> Path:
        return self.out.joinpath(*parts)

    def wants(self, task: str) -> bool:
        return task in self.config.tasks

    def write_config(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        self.path("config.json").write_text(self.config.to_json())

    def dataset(self):
        return load_dataset(self.path("data", "domain_shift"), self.config.dataset_config())

    def corpus(self):
        return load_corpus(self.path("data", "sentiment"), self.config.corpus_config())

    def model(self, name: str):
        return load_checkpoint(self.path("models", f"{name}.ckpt"))

    def cache(self, name: str, model) -> ContextCache:
        cache = ContextCache.load(self.path("contexts", f"{name}.cache"))
        if cache.model_digest != model_digest(model):
            raise CacheMissError(f"context cache {name} was extracted from a different model")
        return cache


def _finite(x: float):
    return None if x != x else x


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cmd_gen_data(run: Run) -> list[Path]:
    paths = []
    if run.wants("classifier"):
        paths += gen_domain_shift(run.config.dataset_config()).save(run.path("data", "domain_shift"), run.tag)
    if run.wants("generation"):
        paths += gen_sentiment_corpus(run.config.corpus_config()).save(run.path("data", "sentiment"), run.tag)
    return paths


def cmd_train(run: Run) -> list[Path]:
    paths = []
    if run.wants("classifier"):
        ds = run.dataset()
        mlp = train_mlp(ds.train.X, ds.train.y, run.config.mlp_config(), n_classes=run.config.dataset.classes)
        paths.append(save_checkpoint(mlp, run.path("models", "mlp.ckpt")))
    if run.wants("generation"):
        corpus = run.corpus()
        seqs = instruction_sequences(corpus, "train")
        model = train_tiny_transformer(seqs, len(corpus.vocab), run.config.transformer_config(),
                                       pad_token=corpus.vocab.pad)
        paths.append(save_checkpoint(model, run.path("models", "transformer.ckpt")))
    return paths


def write_manifest(run: Run) -> Path:
    files = {}
    for p in sorted(run.out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[p.relative_to(run.out).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    manifest = {"seed": run.config.seed, "config_digest": run.config.digest, "files": files}
    path = run.path("manifest.json")
    path.write_text(_dump(manifest))
    return path


def _phrase_config(run: Run) -> GenSweepConfig:
    g = run.config.gen_config()
    layers = tuple(sorted(set(g.layers) | {run.config.steering.gen_layer}))
    return GenSweepConfig(layers=layers, magnitudes=g.magnitudes, split=g.split, n_prompts=g.n_prompts,
                          max_tokens=g.max_tokens, workers=g.workers, seed=g.seed)


def cmd_extract_context(run: Run) -> list[Path]:
    paths = []
    if run.wants("classifier"):
        mlp = run.model("mlp")
        cache = prepare_classifier_contexts(mlp, run.dataset(), run.config.context.layer,
                                            removal_samples=run.config.context.removal_samples)
        paths.append(cache.save(run.path("contexts", "classifier.cache")))
    if run.wants("generation"):
        model = run.model("transformer")
        cache = prepare_phrase_contexts(model, run.corpus().vocab, _phrase_config(run))
        paths.append(cache.save(run.path("contexts", "phrases.cache")))
    return paths


def cmd_eval(run: Run) -> list[Path]:
    if not run.wants("classifier"):
        return []
    mlp = run.model("mlp")
    cache = run.cache("classifier", mlp)
    ds = run.dataset()
    st = run.config.steering
    specs = domain_specs(run.config.context.layer, ds.config.domains, st.alpha_in, st.alpha_out, cache=cache)
    report = {"config_digest": run.config.digest, "model_digest": model_digest(mlp),
              "steering": {str(k): s.to_dict() for k, s in specs.items()}, "splits": {}}
    for split in ("val", "test"):
        base = evaluate(mlp, ds.splits[split], None, None, ds.domain_names)
        steered = evaluate(mlp, ds.splits[split], specs, cache, ds.domain_names).with_baseline(base, "unsteered")
        report["splits"][split] = steered.to_dict()
    p = run.path("reports", "eval.json")
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(_dump(report))
    return [p]


def cmd_sweep(run: Run) -> list[Path]:
    paths = []
    tables = run.path("tables")
    if run.wants("classifier"):
        mlp = run.model("mlp")
        cache = run.cache("classifier", mlp)
        ds = run.dataset()
        grid = run_grid_sweep(mlp, ds, run.config.grid_config(), cache)
        grid.provenance["config_digest"] = run.config.digest
        paths += emit_tables(grid, tables, "grid")
        report = domain_delta_at_optimum(grid, mlp, ds, cache, run.config.sweep.report_split)
        a_in, a_out = grid.best_strengths
        summary = {"config_digest": run.config.digest, "alpha_in": a_in, "alpha_out": a_out,
                   "best_delta": grid.best_delta, "single_axis_best": grid.single_axis_best(),
                   "report_split": run.config.sweep.report_split, "report": report.to_dict()}
        p = tables / "domains.csv"
        p.write_text(domain_table(report, run.config.digest))
        paths.append(p)
        p = tables / "grid_summary.json"
        p.write_text(_dump(summary))
        paths.append(p)
    if run.wants("generation"):
        model = run.model("transformer")
        cache = run.cache("phrases", model)
        result = run_generation_sweep(model, run.config.gen_config(), run.corpus(), cache)
        result.provenance["config_digest"] = run.config.digest
        paths += emit_tables(result, tables, "gensweep")
    return paths


def cmd_generate(run: Run) -> list[Path]:
    if not run.wants("generation"):
        return []
    model = run.model("transformer")
    cache = run.cache("phrases", model)
    corpus = run.corpus()
    g = run.config.gen_config()
    st = run.config.steering
    items = corpus.split(g.split)[:g.n_prompts]
    sources = [s for s, _ in items]
    prompts = [prompt_tokens(s) for s in sources]
    outputs = []
    for (s, label), prompt in zip(items, prompts):
        spec = SteeringSpec(st.gen_layer, ((phrase_label(opposite(label)), st.gen_magnitude),))
        out = generate_batch(model, [corpus.vocab.encode(prompt)], g.max_tokens, spec, cache, corpus.vocab.eos)[0]
        outputs.append(corpus.vocab.decode(out))
    report = score_generations(sources, outputs, oracle_label, prompts)
    p = run.path("generations.jsonl")
    head = {"config_digest": run.config.digest, "layer": st.gen_layer, "magnitude": st.gen_magnitude,
            "flip_rate": _finite(report.flip_rate), "self_bleu": report.self_bleu}
    lines = [json.dumps(head, sort_keys=True)] + [json.dumps(r.to_dict(), sort_keys=True) for r in report.records]
    p.write_text("\n".join(lines) + "\n")
    return [p]


def cmd_pipeline(run: Run) -> list[Path]:
    paths = []
    for step in (cmd_gen_data, cmd_train, cmd_extract_context, cmd_eval, cmd_sweep, cmd_generate):
        paths += step(run)
    return paths


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate the synthetic datasets"),
    "train": (cmd_train, "train the classifier and/or transformer"),
    "extract-context": (cmd_extract_context, "extract and cache context vectors"),
    "eval": (cmd_eval, "evaluate the classifier with the configured steering"),
    "sweep": (cmd_sweep, "run strength grids and emit tables"),
    "generate": (cmd_generate, "steered rewriting with the configured magnitude"),
    "pipeline": (cmd_pipeline, "run every step in order"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contxt", description="Context-vector steering experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None, help="JSON run config")
        p.add_argument("--seed", type=int, default=None, help="global seed (overrides the config)")
        p.add_argument("--out", default=None, help="output directory (overrides the config)")
    return parser


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, CacheMissError):
        return EXIT_CACHE
    if isinstance(exc, (DataError, CheckpointError, EmptyContextSetError, ContxtError, OSError)):
        return EXIT_DATA
    return EXIT_INTERNAL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig.load(args.config, seed=args.seed, out=args.out)
        run = Run(config)
        run.write_config()
        paths = COMMANDS[args.command][0](run)
        write_manifest(run)
    except Exception as exc:  # noqa: BLE001 - every failure maps to an exit code
        code = exit_code(exc)
        name = type(exc).__name__
        print(f"contxt {args.command}: error: {name}: {exc}", file=sys.stderr)
        if code == EXIT_INTERNAL:
            traceback.print_exc(file=sys.stderr)
        return code
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
