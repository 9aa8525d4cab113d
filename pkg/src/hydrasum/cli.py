"""Command-line pipeline: synth, build-vocab, split, train, generate, evaluate.

Every command writes its primary output plus one manifest JSON next to it,
recording the command, the fully materialized configuration, input and
output paths, the seed, and artifact format versions. Identical manifests
imply byte-identical primary outputs.

Numeric settings resolve with precedence explicit flag > preset > built-in
default. The "desk" preset is the built-in toy scale; "paper" switches to
the full-scale defaults documented in each flag's --help text.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import CHECKPOINT_FORMAT, SEED_ENV_VAR
from .data_io import (Corpus, SynthConfig, generate_synthetic, load_checkpoint,
                      load_corpus, save_checkpoint, save_corpus)
from .errors import (ConfigError, CorpusValidationError, HydraError,
                     InvalidArgumentError, ParseError, UndefinedMetricError)
from .figures import HIST_METRICS, render_report_figures
from .inference import DecodingConfig, generate, generate_diverse
from .metrics import (STYLE_METRIC_NAMES, build_rare_word_set,
                      diversity_report, rouge, style_scores)
from .model import ModelConfig, init_model
from .tokenizer import Vocabulary, build_vocab
from .training import SplitConfig, TrainConfig, percentile_split, train

CORPUS_FORMAT = "corpus-jsonl-1"
VOCAB_FORMAT = "vocab-1"
GENERATION_FORMAT = "generation-jsonl-1"
REPORT_FORMAT = "report-1"
MANIFEST_FORMAT = "manifest-1"

COMMANDS = ("synth", "build-vocab", "split", "train", "generate", "evaluate")

MODEL_KEYS = ("d_model", "n_heads", "encoder_layers", "decoder_layers",
              "shared_decoder_layers", "num_decoders", "d_ff", "max_positions")
TRAIN_KEYS = ("epochs", "batch_size", "lr", "clip_norm", "beta1", "beta2",
              "adam_eps")
DECODE_KEYS = ("num_beams", "length_penalty", "no_repeat_ngram_size",
               "min_length", "max_length", "top_k", "top_p", "mode")

BUILTIN_DEFAULTS: dict = {
    "d_model": 64, "n_heads": 4, "encoder_layers": 2, "decoder_layers": 4,
    "shared_decoder_layers": 2, "num_decoders": 2, "d_ff": 256,
    "max_positions": 128,
    "epochs": 10, "batch_size": 16, "lr": 3e-4, "clip_norm": 1.0,
    "beta1": 0.9, "beta2": 0.999, "adam_eps": 1e-8,
    "num_beams": 4, "length_penalty": 1.0, "no_repeat_ngram_size": 3,
    "min_length": 2, "max_length": 32, "top_k": 30, "top_p": 0.5,
    "mode": "beam", "filter_in_beam": False,
}

# Full-scale defaults: wide pretrained-encoder dimensions, short fine-tuning
# schedule, and long-output beam settings.
PRESETS: dict[str, dict] = {
    "desk": {},
    "paper": {
        "d_model": 1024, "n_heads": 16, "encoder_layers": 12,
        "decoder_layers": 12, "shared_decoder_layers": 8, "d_ff": 4096,
        "max_positions": 1024,
        "epochs": 3, "batch_size": 64, "lr": 1e-5,
        "num_beams": 5, "length_penalty": 2.0, "min_length": 12,
        "max_length": 200,
    },
}

EVAL_METRIC_NAMES = STYLE_METRIC_NAMES + ("rouge", "diversity")


class _MissingArgument(Exception):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name


@dataclass(frozen=True)
class RunManifest:
    """Complete, reproducible record of one CLI run."""

    command: str
    config: dict
    inputs: dict
    outputs: dict
    seed: int
    formats: dict
    warnings: tuple[str, ...] = ()

    def to_json(self) -> str:
        record = asdict(self)
        record["warnings"] = list(self.warnings)
        return json.dumps(record, indent=2, sort_keys=True,
                          ensure_ascii=False) + "\n"


def write_manifest(manifest: RunManifest, primary_output) -> Path:
    """Place the manifest next to the run's primary output file."""
    path = Path(f"{primary_output}.manifest.json")
    path.write_text(manifest.to_json(), encoding="utf-8")
    return path


def resolve_seed(explicit: int | None, fallback: int = 0) -> int:
    """Explicit --seed beats the HYDRA_SEED environment, then the fallback."""
    if explicit is not None:
        return explicit
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(
                f"{SEED_ENV_VAR} must be an integer, got {env!r}") from None
    return fallback


def resolve_config(flags: Mapping[str, object], preset: str) -> dict:
    """Materialize every setting: explicit flag > preset > built-in default."""
    if preset not in PRESETS:
        raise ConfigError(f"preset must be one of {tuple(PRESETS)}, got {preset!r}")
    resolved = dict(BUILTIN_DEFAULTS)
    resolved.update(PRESETS[preset])
    for key, value in flags.items():
        if key not in BUILTIN_DEFAULTS:
            raise InvalidArgumentError(f"unknown setting {key!r}")
        if value is not None:
            resolved[key] = value
    if resolved["min_length"] >= resolved["max_length"]:
        raise ConfigError(
            f"min_length {resolved['min_length']} conflicts with "
            f"max_length {resolved['max_length']}")
    if resolved["shared_decoder_layers"] >= resolved["decoder_layers"]:
        raise ConfigError(
            f"shared_decoder_layers {resolved['shared_decoder_layers']} "
            f"conflicts with decoder_layers {resolved['decoder_layers']}")
    return resolved


# ---------------------------------------------------------------------------
# argument parsing


def _preset_help(key: str, desc: str) -> str:
    desk = BUILTIN_DEFAULTS[key]
    paper = PRESETS["paper"].get(key, desk)
    if paper == desk:
        return f"{desc} (default {desk})"
    return f"{desc} (desk {desk}, paper {paper})"


def _add_seed(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help=f"random seed; falls back to ${SEED_ENV_VAR}, then 0")


def _add_preset(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=tuple(PRESETS), default="desk",
                   help="default scale for unset numeric flags (default desk)")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_argument_group("model size")
    group.add_argument("--d-model", type=int, help=_preset_help("d_model", "model width"))
    group.add_argument("--n-heads", type=int, help=_preset_help("n_heads", "attention heads"))
    group.add_argument("--encoder-layers", type=int,
                       help=_preset_help("encoder_layers", "encoder depth"))
    group.add_argument("--decoder-layers", type=int,
                       help=_preset_help("decoder_layers", "total decoder depth"))
    group.add_argument("--shared-decoder-layers", type=int,
                       help=_preset_help("shared_decoder_layers",
                                         "bottom decoder layers shared by all decoders"))
    group.add_argument("--num-decoders", type=int,
                       help=_preset_help("num_decoders", "mixture size"))
    group.add_argument("--d-ff", type=int,
                       help=_preset_help("d_ff", "feed-forward width"))
    group.add_argument("--max-positions", type=int,
                       help=_preset_help("max_positions", "longest supported sequence"))


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_argument_group("optimization")
    group.add_argument("--epochs", type=int, help=_preset_help("epochs", "training epochs"))
    group.add_argument("--batch-size", type=int,
                       help=_preset_help("batch_size", "examples per step"))
    group.add_argument("--lr", type=float, help=_preset_help("lr", "peak learning rate"))
    group.add_argument("--clip-norm", type=float,
                       help=_preset_help("clip_norm", "global gradient norm clip"))
    group.add_argument("--beta1", type=float, help=_preset_help("beta1", "Adam beta1"))
    group.add_argument("--beta2", type=float, help=_preset_help("beta2", "Adam beta2"))
    group.add_argument("--adam-eps", type=float, help=_preset_help("adam_eps", "Adam epsilon"))


def _add_decode_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_argument_group("decoding")
    group.add_argument("--num-beams", type=int, help=_preset_help("num_beams", "beam width"))
    group.add_argument("--length-penalty", type=float,
                       help=_preset_help("length_penalty", "length normalization exponent"))
    group.add_argument("--no-repeat-ngram-size", type=int,
                       help=_preset_help("no_repeat_ngram_size", "banned repeat n-gram size"))
    group.add_argument("--min-length", type=int,
                       help=_preset_help("min_length", "shortest allowed summary"))
    group.add_argument("--max-length", type=int,
                       help=_preset_help("max_length", "longest allowed summary"))
    group.add_argument("--top-k", type=int,
                       help=_preset_help("top_k", "sampling keeps this many tokens"))
    group.add_argument("--top-p", type=float,
                       help=_preset_help("top_p", "sampling nucleus mass"))
    group.add_argument("--mode", choices=("beam", "sample"),
                       help="decoding mode (default beam)")
    group.add_argument("--filter-in-beam", action="store_true", default=None,
                       help="apply top-k/top-p filtering inside beam search too")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hydrasum",
        description="multi-decoder summarization pipeline: "
                    "synth, build-vocab, split, train, generate, evaluate")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth", help="generate a synthetic two-style corpus")
    p.add_argument("--config", help="JSON file of corpus settings")
    p.add_argument("--out", help="output corpus path (JSONL)")
    _add_seed(p)

    p = sub.add_parser("build-vocab", help="build a frequency vocabulary from a corpus")
    p.add_argument("--corpus", help="input corpus (JSONL)")
    p.add_argument("--min-freq", type=int, default=1,
                   help="minimum token frequency (default 1)")
    p.add_argument("--max-size", type=int, default=None,
                   help="cap on non-reserved vocabulary entries")
    p.add_argument("--out", help="output vocabulary path")
    _add_seed(p)

    p = sub.add_parser("split", help="attach percentile gate supervision to a corpus")
    p.add_argument("--corpus", help="input corpus (JSONL)")
    p.add_argument("--feature", choices=("abstractiveness", "specificity"),
                   default="abstractiveness",
                   help="style feature to rank on (default abstractiveness)")
    p.add_argument("--buckets", type=int, default=5,
                   help="percentile buckets (default 5)")
    p.add_argument("--level", choices=("summary", "sentence"), default="summary",
                   help="unit receiving a gate value (default summary)")
    p.add_argument("--out", help="output corpus path (JSONL with gates)")
    _add_seed(p)

    p = sub.add_parser("train", help="train a model on a corpus")
    p.add_argument("--corpus", help="training corpus (JSONL)")
    p.add_argument("--vocab", help="vocabulary file")
    p.add_argument("--mode", choices=("unguided", "guided"), default="unguided",
                   help="training mode (default unguided)")
    p.add_argument("--out-ckpt", help="output checkpoint path")
    _add_preset(p)
    _add_model_flags(p)
    _add_train_flags(p)
    _add_seed(p)

    p = sub.add_parser("generate", help="summarize a corpus from a checkpoint")
    p.add_argument("--ckpt", help="model checkpoint")
    p.add_argument("--input", help="corpus of articles to summarize (JSONL)")
    p.add_argument("--gate",
                   help="gate spec: single:J, learned, manual:G0,G1, or sweep")
    p.add_argument("--out", help="output generations path (JSONL)")
    _add_preset(p)
    _add_decode_flags(p)
    _add_seed(p)

    p = sub.add_parser("evaluate", help="score generations against references")
    p.add_argument("--generated", help="generations to score (JSONL)")
    p.add_argument("--references", help="corpus holding gold summaries (JSONL)")
    p.add_argument("--articles", help="corpus holding source articles (JSONL)")
    p.add_argument("--metrics", default="all",
                   help="comma-separated metric names, or 'all' "
                        f"(choices: {', '.join(EVAL_METRIC_NAMES)})")
    p.add_argument("--out-report", help="per-example report path (JSONL); the "
                                        "aggregate table and figures land beside it")
    _add_seed(p)

    return parser


def _require(args: argparse.Namespace, *names: str) -> None:
    for name in names:
        if getattr(args, name.replace("-", "_")) is None:
            raise _MissingArgument(name)


def _flag_dict(args: argparse.Namespace, keys: Sequence[str]) -> dict:
    return {key: getattr(args, key) for key in keys}


# ---------------------------------------------------------------------------
# commands


def _load_json_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        record = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path} is not valid JSON: {exc.msg}") from None
    if not isinstance(record, dict):
        raise ParseError(f"{path} must hold a JSON object")
    return record


def cmd_synth(args: argparse.Namespace) -> int:
    _require(args, "config", "out")
    record = _load_json_config(args.config)
    try:
        config = SynthConfig(**record)
    except TypeError:
        known = ", ".join(sorted(f.name for f in dataclasses.fields(SynthConfig)))
        raise ConfigError(f"synth config keys must be among: {known}") from None
    seed = resolve_seed(args.seed, fallback=config.seed)
    corpus = generate_synthetic(config, seed=seed)
    save_corpus(corpus, args.out)
    manifest = RunManifest(
        command="synth",
        config={**asdict(config), "seed": seed},
        inputs={"config": str(args.config)},
        outputs={"corpus": str(args.out)},
        seed=seed,
        formats={"corpus": CORPUS_FORMAT, "manifest": MANIFEST_FORMAT})
    write_manifest(manifest, args.out)
    print(f"wrote {len(corpus)} examples to {args.out}")
    return 0


def cmd_build_vocab(args: argparse.Namespace) -> int:
    _require(args, "corpus", "out")
    corpus = load_corpus(args.corpus)
    texts = [ex.article for ex in corpus] + [ex.summary for ex in corpus]
    vocab = build_vocab(texts, min_freq=args.min_freq, max_size=args.max_size)
    vocab.save(args.out)
    manifest = RunManifest(
        command="build-vocab",
        config={"min_freq": args.min_freq, "max_size": args.max_size},
        inputs={"corpus": str(args.corpus)},
        outputs={"vocab": str(args.out)},
        seed=resolve_seed(args.seed),
        formats={"corpus": CORPUS_FORMAT, "vocab": VOCAB_FORMAT,
                 "manifest": MANIFEST_FORMAT})
    write_manifest(manifest, args.out)
    print(f"wrote {vocab.size} tokens to {args.out} (sha256 {vocab.sha256()[:12]})")
    return 0


def cmd_split(args: argparse.Namespace) -> int:
    _require(args, "corpus", "out")
    corpus = load_corpus(args.corpus)
    config = SplitConfig(feature=args.feature, level=args.level,
                         buckets=args.buckets)
    rare = None
    if args.feature == "specificity":
        rare = build_rare_word_set([ex.article for ex in corpus] +
                                   [ex.summary for ex in corpus])
    gated = percentile_split(corpus.examples, config, rare)
    save_corpus(Corpus(tuple(gated), provenance=f"split:{args.feature}"), args.out)
    manifest = RunManifest(
        command="split",
        config={"feature": args.feature, "level": args.level,
                "buckets": args.buckets},
        inputs={"corpus": str(args.corpus)},
        outputs={"corpus": str(args.out)},
        seed=resolve_seed(args.seed),
        formats={"corpus": CORPUS_FORMAT, "manifest": MANIFEST_FORMAT})
    write_manifest(manifest, args.out)
    print(f"wrote {len(gated)} gated examples to {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    _require(args, "corpus", "vocab", "out-ckpt")
    corpus = load_corpus(args.corpus)
    vocab = Vocabulary.load(args.vocab)
    seed = resolve_seed(args.seed)
    resolved = resolve_config(_flag_dict(args, MODEL_KEYS + TRAIN_KEYS),
                              args.preset)
    model_config = ModelConfig(vocab_size=vocab.size, seed=seed,
                               **{k: resolved[k] for k in MODEL_KEYS})
    train_config = TrainConfig(mode=args.mode, seed=seed,
                               **{k: resolved[k] for k in TRAIN_KEYS})
    model = init_model(model_config, vocab=vocab)
    result = train(model, corpus.examples, train_config, log=print)
    save_checkpoint(model, args.out_ckpt)
    manifest = RunManifest(
        command="train",
        config={"mode": args.mode, "preset": args.preset,
                **{k: resolved[k] for k in MODEL_KEYS + TRAIN_KEYS}},
        inputs={"corpus": str(args.corpus), "vocab": str(args.vocab)},
        outputs={"checkpoint": str(args.out_ckpt)},
        seed=seed,
        formats={"corpus": CORPUS_FORMAT, "vocab": VOCAB_FORMAT,
                 "checkpoint": CHECKPOINT_FORMAT, "manifest": MANIFEST_FORMAT})
    write_manifest(manifest, args.out_ckpt)
    print(f"trained {result.steps} steps; final loss "
          f"{result.epoch_losses[-1]:.4f}; wrote {args.out_ckpt}")
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    _require(args, "ckpt", "input", "gate", "out")
    model = load_checkpoint(args.ckpt)
    corpus = load_corpus(args.input)
    seed = resolve_seed(args.seed)
    resolved = resolve_config(_flag_dict(args, DECODE_KEYS + ("filter_in_beam",)),
                              args.preset)
    decode_config = DecodingConfig(
        seed=seed, filter_in_beam=bool(resolved["filter_in_beam"]),
        **{k: resolved[k] for k in DECODE_KEYS})

    warnings: list[str] = []
    allow_untrained = False
    if args.gate == "learned" and model.train_mode == "guided":
        warnings.append("learned-gate-on-guided-model: the gate head is untrained")
        allow_untrained = True

    records = []
    n_fallback = 0
    for ex in corpus:
        if args.gate == "sweep":
            results = [res for _, res in generate_diverse(model, ex.article,
                                                          decode_config)]
        else:
            results = [generate(model, ex.article, args.gate, decode_config,
                                allow_untrained_gate=allow_untrained)]
        for res in results:
            n_fallback += res.fallback_used
            records.append({"id": ex.id, "gate": res.gate_label,
                            "summary": res.text, "score": res.score})
    if n_fallback:
        warnings.append(f"sampling-fallback-used: {n_fallback} records")

    with open(args.out, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    manifest = RunManifest(
        command="generate",
        config={"gate": args.gate, "preset": args.preset,
                "filter_in_beam": bool(resolved["filter_in_beam"]),
                **{k: resolved[k] for k in DECODE_KEYS}},
        inputs={"checkpoint": str(args.ckpt), "corpus": str(args.input)},
        outputs={"generations": str(args.out)},
        seed=seed,
        formats={"checkpoint": CHECKPOINT_FORMAT, "corpus": CORPUS_FORMAT,
                 "generation": GENERATION_FORMAT, "manifest": MANIFEST_FORMAT},
        warnings=tuple(warnings))
    write_manifest(manifest, args.out)
    print(f"wrote {len(records)} summaries to {args.out}")
    return 0


def _parse_metrics(spec: str) -> tuple[str, ...]:
    if spec.strip() == "all":
        return EVAL_METRIC_NAMES
    names = tuple(part.strip() for part in spec.split(",") if part.strip())
    unknown = [name for name in names if name not in EVAL_METRIC_NAMES]
    if unknown:
        raise UndefinedMetricError(
            f"unknown metrics: {', '.join(unknown)}; "
            f"choose from {', '.join(EVAL_METRIC_NAMES)}")
    if not names:
        raise UndefinedMetricError("no metrics selected")
    return names


def _load_generated(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from None
            if not isinstance(record, dict):
                raise ParseError("generation record must be an object", line=lineno)
            for key in ("id", "gate", "summary"):
                if not isinstance(record.get(key), str):
                    raise ParseError(f"missing or non-string {key!r}", line=lineno)
            if not isinstance(record.get("score"), (int, float)) \
                    or isinstance(record.get("score"), bool):
                raise ParseError("missing or non-numeric 'score'", line=lineno)
            records.append(record)
    return records


def cmd_evaluate(args: argparse.Namespace) -> int:
    _require(args, "generated", "references", "articles", "out-report")
    selected = _parse_metrics(args.metrics)
    style_selected = [m for m in STYLE_METRIC_NAMES if m in selected]
    generated = _load_generated(args.generated)
    if not generated:
        raise InvalidArgumentError("no generated records to evaluate")
    references = {ex.id: ex.summary for ex in load_corpus(args.references)}
    articles_corpus = load_corpus(args.articles)
    articles = {ex.id: ex.article for ex in articles_corpus}
    for record in generated:
        if record["id"] not in articles:
            raise CorpusValidationError(
                f"generated id {record['id']!r} missing from articles")
        if record["id"] not in references:
            raise CorpusValidationError(
                f"generated id {record['id']!r} missing from references")
    rare = build_rare_word_set([ex.article for ex in articles_corpus] +
                               [ex.summary for ex in articles_corpus])

    rows = []
    for record in generated:
        row: dict = {"id": record["id"], "gate": record["gate"]}
        scores = style_scores(articles[record["id"]], record["summary"], rare)
        for metric in style_selected:
            row[metric] = getattr(scores, metric)
        if "rouge" in selected:
            triple = rouge(references[record["id"]], record["summary"])
            row["rouge1"], row["rouge2"], row["rougeL"] = triple
        rows.append(row)

    numeric_cols = list(style_selected)
    if "rouge" in selected:
        numeric_cols += ["rouge1", "rouge2", "rougeL"]

    by_label: dict[str, list[dict]] = {}
    for row in rows:
        by_label.setdefault(row["gate"], []).append(row)

    table: list[tuple[str, str, str, float]] = []
    for label in sorted(by_label):
        group = by_label[label]
        table.append(("per_gate", label, "count", float(len(group))))
        for col in numeric_cols:
            table.append(("per_gate", label, col,
                          float(np.mean([r[col] for r in group]))))
    table.append(("corpus", "all", "count", float(len(rows))))
    for col in numeric_cols:
        table.append(("corpus", "all", col,
                      float(np.mean([r[col] for r in rows]))))

    if "diversity" in selected:
        candidates_by_id: dict[str, list[str]] = {}
        for record in generated:
            candidates_by_id.setdefault(record["id"], []).append(record["summary"])
        multi = {i: c for i, c in candidates_by_id.items() if len(c) >= 2}
        if multi:
            reports = [diversity_report(articles[i], references[i], cands, rare)
                       for i, cands in sorted(multi.items())]
            table.append(("diversity", "all", "mean_k",
                          float(np.mean([len(c) for c in multi.values()]))))
            for j, name in enumerate(("topk_rouge1", "topk_rouge2", "topk_rougeL")):
                table.append(("diversity", "all", name,
                              float(np.mean([r.topk[j] for r in reports]))))
            for metric in STYLE_METRIC_NAMES:
                table.append(("diversity", "all", f"sigma_{metric}",
                              float(np.mean([r.sigma[metric] for r in reports]))))
            table.append(("diversity", "all", "self_rougeL",
                          float(np.mean([r.self_rouge_l for r in reports]))))

    report_path = Path(args.out_report)
    with open(report_path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    table_path = report_path.with_suffix(".tsv")
    lines = ["section\tgroup\tmetric\tvalue"]
    lines += [f"{sec}\t{grp}\t{met}\t{val:.6f}" for sec, grp, met, val in table]
    table_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    figure_paths: list[Path] = []
    hist_selected = [m for m in style_selected if m in HIST_METRICS]
    if hist_selected:
        figure_values = {label: {m: [r[m] for r in group] for m in hist_selected}
                         for label, group in by_label.items()}
        figure_paths = render_report_figures(figure_values,
                                             report_path.with_suffix(""))

    outputs = {"report": str(report_path), "table": str(table_path)}
    for i, path in enumerate(figure_paths):
        outputs[f"figure_{i}"] = str(path)
    manifest = RunManifest(
        command="evaluate",
        config={"metrics": list(selected)},
        inputs={"generated": str(args.generated),
                "references": str(args.references),
                "articles": str(args.articles)},
        outputs=outputs,
        seed=resolve_seed(args.seed),
        formats={"generation": GENERATION_FORMAT, "corpus": CORPUS_FORMAT,
                 "report": REPORT_FORMAT, "manifest": MANIFEST_FORMAT})
    write_manifest(manifest, report_path)
    print(f"scored {len(rows)} summaries; report at {report_path}, "
          f"table at {table_path}, {len(figure_paths)} figures")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "build-vocab": cmd_build_vocab,
    "split": cmd_split,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
}


def run(argv: Sequence[str]) -> int:
    """Execute one pipeline command; returns the process exit code.

    0 on success; 1 with "category: message" on stderr for any validation,
    parsing, or integrity failure; 2 for usage errors (argparse's own
    convention for unknown commands and malformed flags).
    """
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as exc:  # --help exits 0, usage errors exit 2
        return 0 if exc.code is None else int(exc.code)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](args)
    except _MissingArgument as exc:
        print(f"missing-argument: {exc.name}", file=sys.stderr)
        return 1
    except HydraError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io-error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(run(sys.argv[1:]))
