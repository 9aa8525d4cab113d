"""Corpus files, binary model checkpoints, and the synthetic style corpus.

Corpora travel as JSONL, one example per line. Checkpoints are a single
little-endian binary file: a length-prefixed JSON header (format tag,
model configuration, training mode, embedded vocabulary, checksum) followed
by the parameter tensors in their canonical order. The synthetic generator
produces article/summary pairs in two contrasting summary styles so that
style-partitioning experiments have a corpus with known ground truth.
"""

from __future__ import annotations

import itertools
import json
import struct
import zlib
from dataclasses import dataclass, field, asdict
from typing import Iterator

import numpy as np

from . import CHECKPOINT_FORMAT
from . import autodiff as ad
from .errors import (CheckpointIntegrityError, CheckpointVersionError,
                     ConfigError, CorpusValidationError, ParseError)
from .model import Model, ModelConfig, parameter_names
from .tokenizer import RESERVED, Vocabulary
from .training import Example

SYNTH_MODES = ("coupled", "orthogonal")

# ---------------------------------------------------------------------------
# corpus files


@dataclass(frozen=True)
class Corpus:
    """Ordered, validated collection of examples.

    provenance records where the examples came from (a source path or a
    generator seed) and never participates in equality: a reloaded corpus
    compares equal to the one that was saved.
    """

    examples: tuple[Example, ...]
    provenance: str = field(default="unknown", compare=False)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[Example]:
        return iter(self.examples)

    def __getitem__(self, index):
        return self.examples[index]


def _parse_gate(record: dict, lineno: int) -> float | None:
    gate = record.get("gate")
    if gate is None:
        return None
    if isinstance(gate, bool) or not isinstance(gate, (int, float)):
        raise ParseError('"gate" must be a number', line=lineno)
    return float(gate)


def _parse_sentence_gates(record: dict, lineno: int) -> tuple[float, ...] | None:
    gates = record.get("sentence_gates")
    if gates is None:
        return None
    if (not isinstance(gates, list)
            or any(isinstance(g, bool) or not isinstance(g, (int, float))
                   for g in gates)):
        raise ParseError('"sentence_gates" must be a list of numbers', line=lineno)
    return tuple(float(g) for g in gates)


def _example_from_line(line: str, lineno: int) -> Example:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", line=lineno) from None
    if not isinstance(record, dict):
        raise ParseError("expected one JSON object per line", line=lineno)
    for key in ("id", "article", "summary"):
        if key not in record:
            raise ParseError(f'missing "{key}"', line=lineno)
        if not isinstance(record[key], str):
            raise ParseError(f'"{key}" must be a string', line=lineno)
    return Example(id=record["id"], article=record["article"],
                   summary=record["summary"],
                   gate=_parse_gate(record, lineno),
                   sentence_gates=_parse_sentence_gates(record, lineno))


def _validate_examples(examples: list[Example]) -> None:
    seen: set[str] = set()
    for ex in examples:
        if not ex.id:
            raise CorpusValidationError("example with empty id")
        if ex.id in seen:
            raise CorpusValidationError(f"duplicate example id {ex.id!r}")
        seen.add(ex.id)
        if not ex.article.strip():
            raise CorpusValidationError(f"example {ex.id!r} has an empty article")
        if not ex.summary.strip():
            raise CorpusValidationError(f"example {ex.id!r} has an empty summary")
        gates = list(ex.sentence_gates or ())
        if ex.gate is not None:
            gates.append(ex.gate)
        if any(not 0.0 <= g <= 1.0 for g in gates):
            raise CorpusValidationError(
                f"example {ex.id!r} has a gate outside [0, 1]")


def load_corpus(path) -> Corpus:
    """Read a JSONL corpus; an empty file yields an empty corpus."""
    examples: list[Example] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            examples.append(_example_from_line(line, lineno))
    _validate_examples(examples)
    return Corpus(tuple(examples), provenance=str(path))


def save_corpus(corpus: Corpus, path) -> None:
    """Write JSONL with stable key order; optional fields appear only when set."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in corpus:
            record: dict = {"id": ex.id, "article": ex.article, "summary": ex.summary}
            if ex.gate is not None:
                record["gate"] = ex.gate
            if ex.sentence_gates is not None:
                record["sentence_gates"] = list(ex.sentence_gates)
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# checkpoints

_U32 = struct.Struct("<I")


def _header_record(model: Model) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(model.config),
        "train_mode": model.train_mode,
        "vocab": list(model.vocab.tokens) if model.vocab is not None else None,
        "vocab_sha256": model.vocab_sha256,
        "n_tensors": len(model.params),
    }


def save_checkpoint(model: Model, path) -> None:
    """Serialize config, vocabulary, and parameters to one binary file.

    Payloads are stored as little-endian 32-bit floats, the library's
    parameter dtype, so save -> load -> save is byte-identical.
    """
    body = bytearray()
    for name, tensor in model.named_parameters():
        payload = np.ascontiguousarray(tensor.data.astype("<f4", copy=False))
        encoded = name.encode("utf-8")
        body += _U32.pack(len(encoded))
        body += encoded
        body += _U32.pack(payload.ndim)
        for dim in payload.shape:
            body += _U32.pack(dim)
        body += payload.tobytes()

    header = _header_record(model)
    header["body_crc32"] = zlib.crc32(bytes(body))
    header_bytes = json.dumps(header, sort_keys=True,
                              separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_U32.pack(len(header_bytes)))
        fh.write(header_bytes)
        fh.write(bytes(body))


class _Reader:
    """Cursor over checkpoint bytes; any overrun is a truncation error."""

    def __init__(self, buf: bytes, offset: int = 0):
        self.buf = buf
        self.offset = offset

    def take(self, n: int) -> bytes:
        end = self.offset + n
        if end > len(self.buf):
            raise CheckpointIntegrityError("checkpoint is truncated")
        chunk = self.buf[self.offset:end]
        self.offset = end
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    @property
    def exhausted(self) -> bool:
        return self.offset == len(self.buf)


def _read_header(reader: _Reader) -> dict:
    header_len = reader.u32()
    try:
        header = json.loads(reader.take(header_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointIntegrityError("checkpoint header is not valid JSON") from None
    if not isinstance(header, dict) or "format" not in header:
        raise CheckpointIntegrityError("checkpoint header lacks a format tag")
    if header["format"] != CHECKPOINT_FORMAT:
        raise CheckpointVersionError(
            f"cannot read checkpoint format {header['format']!r}; "
            f"this build reads {CHECKPOINT_FORMAT!r}")
    return header


def _rebuild_vocab(header: dict) -> Vocabulary | None:
    tokens = header.get("vocab")
    if tokens is None:
        return None
    if tuple(tokens[:4]) != RESERVED:
        raise CheckpointIntegrityError(
            "embedded vocabulary does not start with the reserved tokens")
    vocab = Vocabulary(tokens[4:])
    if vocab.sha256() != header.get("vocab_sha256"):
        raise CheckpointIntegrityError("embedded vocabulary fails its hash check")
    return vocab


def load_checkpoint(path) -> Model:
    """Rebuild a model, verifying the body checksum and the tensor layout."""
    with open(path, "rb") as fh:
        blob = fh.read()
    reader = _Reader(blob)
    header = _read_header(reader)

    body = blob[reader.offset:]
    if zlib.crc32(body) != header.get("body_crc32"):
        raise CheckpointIntegrityError("checkpoint body fails its checksum")

    try:
        config = ModelConfig(**header["config"])
    except TypeError:
        raise CheckpointIntegrityError("checkpoint config record is malformed") from None
    config.validate()
    expected_names = parameter_names(config)
    if header.get("n_tensors") != len(expected_names):
        raise CheckpointIntegrityError(
            f"checkpoint declares {header.get('n_tensors')} tensors, "
            f"configuration requires {len(expected_names)}")

    params: dict[str, ad.Tensor] = {}
    for expected in expected_names:
        name = reader.take(reader.u32()).decode("utf-8")
        if name != expected:
            raise CheckpointIntegrityError(
                f"tensor {name!r} out of order, expected {expected!r}")
        ndims = reader.u32()
        shape = tuple(reader.u32() for _ in range(ndims))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = reader.take(4 * count)
        data = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        params[name] = ad.Tensor(data, requires_grad=True)
    if not reader.exhausted:
        raise CheckpointIntegrityError("checkpoint has trailing bytes")

    return Model(config, params, train_mode=header.get("train_mode"),
                 vocab=_rebuild_vocab(header))


# ---------------------------------------------------------------------------
# synthetic corpus

# Article scaffold words. The paraphrase scaffold below shares no word with
# these, which pins paraphrase-style summaries to exactly zero bigram overlap
# with their article.
_COPY_SIGNAL_VERBS = ("reported", "shipped", "confirmed")
_PARA_SIGNAL_VERBS = ("discussed", "weighed", "reviewed")
_GENERAL_VERBS = ("held", "kept", "noted")
_ARTICLE_OBJECTS = ("crates", "reports", "parcels", "boxes",
                    "samples", "records", "bundles", "files")

# Paraphrase scaffold. Verb/object lists pair index-wise with the article
# lists so the paraphrase target is a deterministic function of the article.
_PARA_VERBS = ("moved", "sorted", "traded")
_PARA_OBJECTS = ("items", "pieces", "goods", "loads",
                 "sets", "lots", "units", "stacks")

_ENTITY_SYLLABLES = ("ba", "do", "ga", "ku", "lo", "ma", "nu",
                     "po", "ra", "su", "ta", "vu", "zo", "fa")
_COMMON_SYLLABLES = ("bel", "din", "fer", "gim", "hin", "jil", "kem", "lin",
                     "mer", "nid", "pir", "rin", "sil", "tin", "vim", "win",
                     "zin")

MAX_ENTITY_POOL = 700
MAX_COMMON_POOL = 280


def _pseudo_words(syllables: tuple[str, ...], count: int) -> list[str]:
    """First `count` syllable products, enumerated deterministically."""
    words: list[str] = []
    for n_syllables in (2, 3):
        for combo in itertools.product(syllables, repeat=n_syllables):
            words.append("".join(combo))
            if len(words) == count:
                return words
    raise ConfigError(f"cannot build {count} pool words from {len(syllables)} syllables")


@dataclass(frozen=True)
class SynthConfig:
    """Shape of a generated corpus.

    rho is the probability that a summary takes the extractive style
    (verbatim copy of an article sentence, entity-heavy); the complement
    takes the paraphrase style (generic vocabulary, no entities). In
    "coupled" mode one coin drives both style axes, so extractive summaries
    are exactly the specific ones; "orthogonal" mode flips an independent
    coin per axis, producing all four copy/paraphrase x specific/general
    combinations. style_signal is the probability that the article's lead
    verb class matches the copy coin. The default leaks style weakly: a
    single-decoder model hedges between styles per article, while the
    percentile-gated decoders of a guided model, whose training mass is
    80/20 inside each style, still commit to their own style under argmax
    decoding.
    """

    n_examples: int
    entity_pool_size: int = 24
    common_pool_size: int = 12
    sentences_per_article: int = 3
    rho: float = 0.5
    mode: str = "coupled"
    style_signal: float = 0.6
    seed: int = 0

    def validate(self) -> None:
        if self.n_examples < 1:
            raise ConfigError("n_examples must be positive")
        if not 1 <= self.entity_pool_size <= MAX_ENTITY_POOL:
            raise ConfigError(f"entity_pool_size must be in [1, {MAX_ENTITY_POOL}]")
        if not 1 <= self.common_pool_size <= MAX_COMMON_POOL:
            raise ConfigError(f"common_pool_size must be in [1, {MAX_COMMON_POOL}]")
        if self.sentences_per_article < 2:
            raise ConfigError("sentences_per_article must be at least 2")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError("rho must lie in [0, 1]")
        if self.mode not in SYNTH_MODES:
            raise ConfigError(f"mode must be one of {SYNTH_MODES}, got {self.mode!r}")
        if not 0.0 <= self.style_signal <= 1.0:
            raise ConfigError("style_signal must lie in [0, 1]")


@dataclass(frozen=True)
class _Pools:
    names: list[str]
    cities: list[str]
    shadow_names: list[str]
    shadow_cities: list[str]
    commons: list[str]


def _build_pools(config: SynthConfig) -> _Pools:
    size = config.entity_pool_size
    entity_words = _pseudo_words(_ENTITY_SYLLABLES, 4 * size)
    return _Pools(
        names=[w.capitalize() for w in entity_words[:size]],
        cities=[w.capitalize() for w in entity_words[size:2 * size]],
        shadow_names=[w.capitalize() for w in entity_words[2 * size:3 * size]],
        shadow_cities=[w.capitalize() for w in entity_words[3 * size:]],
        commons=_pseudo_words(_COMMON_SYLLABLES, config.common_pool_size),
    )


def generate_synthetic(config: SynthConfig, seed: int | None = None) -> Corpus:
    """Deterministic two-style corpus; same config and seed, same bytes.

    Every article opens with a specific lead sentence (entities and digits),
    continues with general filler sentences over a common-word pool, and,
    when long enough, closes with a second specific sentence. Summary styles:

    - copy + specific: the lead sentence, verbatim (bigram overlap 1.0).
    - copy + general: the first general sentence, verbatim (overlap 1.0).
    - paraphrase + specific: shadow entities and the lead's digits in a
      template sharing no word with the article (overlap 0.0, digit-heavy).
    - paraphrase + general: fully generic template (overlap 0.0).

    All templates have fixed token layouts, so extractive targets sit at
    fixed source positions and paraphrase targets are deterministic
    index-paired rewrites, both learnable at small scale.
    """
    config.validate()
    if seed is None:
        seed = config.seed
    pools = _build_pools(config)
    rng = np.random.default_rng(seed)
    n_generals = max(1, config.sentences_per_article - 2)
    has_filler = config.sentences_per_article >= 3

    examples = []
    for i in range(config.n_examples):
        copy_coin = bool(rng.random() < config.rho)
        if config.mode == "orthogonal":
            specific_coin = bool(rng.random() < config.rho)
        else:
            specific_coin = copy_coin

        signal_match = bool(rng.random() < config.style_signal)
        verb_class = _COPY_SIGNAL_VERBS if copy_coin == signal_match else _PARA_SIGNAL_VERBS
        verb_idx = int(rng.integers(len(verb_class)))
        name_idx = int(rng.integers(config.entity_pool_size))
        city_idx = int(rng.integers(config.entity_pool_size))
        obj_idx = int(rng.integers(len(_ARTICLE_OBJECTS)))
        num1, num2 = (int(v) for v in rng.integers(10, 100, size=2))

        lead = (f"{pools.names[name_idx]} {verb_class[verb_idx]} {num1} "
                f"{_ARTICLE_OBJECTS[obj_idx]} to {pools.cities[city_idx]} "
                f"on day {num2} .")

        generals = []
        for _ in range(n_generals):
            c0, c1 = (int(v) for v in rng.integers(config.common_pool_size, size=2))
            gv = int(rng.integers(len(_GENERAL_VERBS)))
            generals.append(f"the {pools.commons[c0]} {_GENERAL_VERBS[gv]} "
                            f"the {pools.commons[c1]} .")

        sentences = [lead] + generals
        if has_filler:
            name2_idx = int(rng.integers(config.entity_pool_size))
            city2_idx = int(rng.integers(config.entity_pool_size))
            obj2_idx = int(rng.integers(len(_ARTICLE_OBJECTS)))
            num3 = int(rng.integers(10, 100))
            sentences.append(f"{pools.names[name2_idx]} added {num3} "
                             f"{_ARTICLE_OBJECTS[obj2_idx]} from "
                             f"{pools.cities[city2_idx]} .")

        if copy_coin and specific_coin:
            summary = lead
        elif copy_coin:
            summary = generals[0]
        elif specific_coin:
            summary = (f"{pools.shadow_names[name_idx]} filed {num1} entries "
                       f"and {num2} logs near {pools.shadow_cities[city_idx]} .")
        else:
            summary = (f"someone {_PARA_VERBS[verb_idx]} some "
                       f"{_PARA_OBJECTS[obj_idx]} at a town .")

        examples.append(Example(id=f"syn-{i:05d}", article=" ".join(sentences),
                                summary=summary))

    return Corpus(tuple(examples), provenance=f"synthetic:seed={seed}")
