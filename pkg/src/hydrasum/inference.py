"""Decoding: gate selection, beam search, nucleus sampling, model mixing.

A gate spec picks how the k per-decoder next-token distributions are
combined at every step: one decoder alone, the learned gate head, or a
fixed manual mixture. The search itself is shared: a step function maps a
batch of prefixes to mixed next-token distributions, and beam search or
sampling runs on top of it. All randomness comes from the config seed.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, InvalidArgumentError, UnsupportedConfigError
from .model import (EncodedDocument, Model, decode_batch, encode_document,
                    gate_batch, validate_gate_vector)
from .tokenizer import BOS_ID, EOS_ID, PAD_ID, UNK_ID, decode as decode_ids, encode

SWEEP_GATES = (0.0, 0.25, 0.5, 0.75, 1.0)
DECODE_MODES = ("beam", "sample")

_MANUAL_RE = re.compile(r"^manual:([0-9eE+.,-]+)$")
_SINGLE_RE = re.compile(r"^single:(\d+)$")


@dataclass(frozen=True)
class GateSpec:
    """How to weigh the k decoders at every generation step."""

    kind: str  # "single" | "learned" | "manual"
    index: int | None = None
    weights: tuple[float, ...] | None = None

    @staticmethod
    def parse(text: str, num_decoders: int) -> "GateSpec":
        """Accepts "single:J", "learned", or "manual:G0,G1,..."."""
        text = text.strip()
        if text == "learned":
            return GateSpec(kind="learned")
        m = _SINGLE_RE.match(text)
        if m:
            spec = GateSpec(kind="single", index=int(m.group(1)))
            spec.validate(num_decoders)
            return spec
        m = _MANUAL_RE.match(text)
        if m:
            try:
                weights = tuple(float(x) for x in m.group(1).split(","))
            except ValueError:
                raise InvalidArgumentError(f"cannot parse gate weights in {text!r}")
            spec = GateSpec(kind="manual", weights=weights)
            spec.validate(num_decoders)
            return spec
        raise InvalidArgumentError(
            f"gate must be 'learned', 'single:J', or 'manual:G0,G1,...', got {text!r}")

    def validate(self, num_decoders: int) -> None:
        if self.kind == "learned":
            return
        if self.kind == "single":
            if self.index is None or not 0 <= self.index < num_decoders:
                raise InvalidArgumentError(
                    f"decoder index must sit in [0, {num_decoders}), got {self.index}")
            return
        if self.kind == "manual":
            if self.weights is None or len(self.weights) != num_decoders:
                raise InvalidArgumentError(
                    f"manual gate needs {num_decoders} weights, got "
                    f"{0 if self.weights is None else len(self.weights)}")
            validate_gate_vector(np.asarray(self.weights), num_decoders)
            return
        raise InvalidArgumentError(f"unknown gate kind: {self.kind!r}")

    def fixed_weights(self, num_decoders: int) -> np.ndarray | None:
        """The constant gate vector, or None for the learned gate."""
        if self.kind == "learned":
            return None
        if self.kind == "single":
            w = np.zeros(num_decoders)
            w[self.index] = 1.0
            return w
        return np.asarray(self.weights, dtype=np.float64)

    def label(self) -> str:
        if self.kind == "learned":
            return "learned"
        if self.kind == "single":
            return f"single:{self.index}"
        return "manual:" + ",".join(f"{w:g}" for w in self.weights)


@dataclass(frozen=True)
class DecodingConfig:
    num_beams: int = 4
    length_penalty: float = 1.0
    no_repeat_ngram_size: int = 3
    min_length: int = 2
    max_length: int = 32
    top_k: int = 30
    top_p: float = 0.5
    mode: str = "beam"
    seed: int = 0
    filter_in_beam: bool = False

    def validate(self) -> None:
        if self.mode not in DECODE_MODES:
            raise ConfigError(f"mode must be one of {DECODE_MODES}, got {self.mode!r}")
        if self.num_beams < 1:
            raise ConfigError("num_beams must be at least 1")
        if self.max_length < 1:
            raise ConfigError("max_length must be positive")
        if not 0 <= self.min_length < self.max_length:
            raise ConfigError("need 0 <= min_length < max_length")
        if self.length_penalty < 0:
            raise ConfigError("length_penalty must be non-negative")
        if self.no_repeat_ngram_size < 0 or self.top_k < 0:
            raise ConfigError("no_repeat_ngram_size and top_k must be non-negative")
        if not 0 < self.top_p <= 1:
            raise ConfigError("top_p must sit in (0, 1]")


def length_penalty_factor(n_tokens: int, alpha: float) -> float:
    """((5 + L) / 6) ** alpha, L counting generated tokens including EOS."""
    return ((5.0 + n_tokens) / 6.0) ** alpha


@dataclass(frozen=True)
class GenerationResult:
    text: str
    token_ids: tuple[int, ...]  # generated ids, ending with EOS
    score: float                # length-normalized cumulative log probability
    gate_label: str
    fallback_used: bool


# ---------------------------------------------------------------------------
# constraints and filtering


def apply_constraints(probs: np.ndarray, generated: Sequence[int],
                      config: DecodingConfig) -> tuple[np.ndarray, bool]:
    """Zero out disallowed tokens and renormalize.

    Bans the end token before min_length, any continuation that would
    repeat an n-gram already generated, and the non-end reserved ids.
    If every token lost its mass, falls back to the unfiltered
    distribution and reports it.
    """
    out = probs.astype(np.float64, copy=True)
    out[PAD_ID] = 0.0
    out[BOS_ID] = 0.0
    out[UNK_ID] = 0.0
    if len(generated) < config.min_length:
        out[EOS_ID] = 0.0
    n = config.no_repeat_ngram_size
    if n > 0 and len(generated) >= n - 1:
        seen = {tuple(generated[i:i + n]) for i in range(len(generated) - n + 1)}
        prefix = tuple(generated[len(generated) - (n - 1):]) if n > 1 else ()
        for gram in seen:
            if gram[:-1] == prefix:
                out[gram[-1]] = 0.0
    total = out.sum()
    if total <= 0.0:
        base = probs.astype(np.float64, copy=False)
        return base / base.sum(), True
    return out / total, False


def filter_top_k_top_p(probs: np.ndarray, top_k: int, top_p: float) -> np.ndarray:
    """Keep the top-k tokens, then the smallest prefix reaching top_p mass.

    Applied in that order, then renormalized. top_k of 0 disables the
    count cut; top_p of 1 keeps everything that survived top_k.
    """
    order = np.argsort(-probs, kind="stable")
    if top_k > 0:
        order = order[:top_k]
    kept = probs[order]
    cum = np.cumsum(kept)
    cut = int(np.searchsorted(cum, top_p, side="left"))
    order = order[: min(cut, len(order) - 1) + 1]
    out = np.zeros_like(probs, dtype=np.float64)
    out[order] = probs[order]
    return out / out.sum()


# ---------------------------------------------------------------------------
# step functions


StepFn = Callable[[np.ndarray], np.ndarray]  # (N, T) prefixes -> (N, V) probs


def _mixture_step_fn(model: Model, states: np.ndarray, spec: GateSpec) -> StepFn:
    k = model.config.num_decoders
    fixed = spec.fixed_weights(k)

    def step(prefixes: np.ndarray) -> np.ndarray:
        n = prefixes.shape[0]
        enc = ad.Tensor(np.repeat(states[None], n, axis=0))
        h_m, probs = decode_batch(model, enc, None, prefixes)
        last = np.stack([pr.data[:, -1, :] for pr in probs])  # (k, N, V)
        if fixed is None:
            g = gate_batch(model, h_m).data[:, -1, :].astype(np.float64)  # (N, k)
        else:
            g = np.repeat(fixed[None], n, axis=0)
        return np.einsum("nk,knv->nv", g, last.astype(np.float64))

    return step


def _cross_model_step_fn(model_a: Model, states_a: np.ndarray, index_a: int,
                         model_b: Model, states_b: np.ndarray, index_b: int,
                         g: float) -> StepFn:
    def step(prefixes: np.ndarray) -> np.ndarray:
        n = prefixes.shape[0]
        enc_a = ad.Tensor(np.repeat(states_a[None], n, axis=0))
        enc_b = ad.Tensor(np.repeat(states_b[None], n, axis=0))
        _, probs_a = decode_batch(model_a, enc_a, None, prefixes)
        _, probs_b = decode_batch(model_b, enc_b, None, prefixes)
        pa = probs_a[index_a].data[:, -1, :].astype(np.float64)
        pb = probs_b[index_b].data[:, -1, :].astype(np.float64)
        return (1.0 - g) * pa + g * pb

    return step


# ---------------------------------------------------------------------------
# search


@dataclass
class Hypothesis:
    tokens: list[int] = field(default_factory=list)  # generated, no BOS
    logprob_sum: float = 0.0
    fallback: bool = False

    def score(self, alpha: float) -> float:
        return self.logprob_sum / length_penalty_factor(max(1, len(self.tokens)), alpha)


def _constrained_logp(rows: np.ndarray, hyps: list[Hypothesis],
                      config: DecodingConfig) -> tuple[np.ndarray, np.ndarray]:
    logp = np.empty_like(rows, dtype=np.float64)
    fallback = np.zeros(len(hyps), dtype=bool)
    for i, hyp in enumerate(hyps):
        probs, fallback[i] = apply_constraints(rows[i], hyp.tokens, config)
        if config.filter_in_beam and (config.top_k > 0 or config.top_p < 1.0):
            probs = filter_top_k_top_p(probs, config.top_k, config.top_p)
        with np.errstate(divide="ignore"):
            logp[i] = np.log(probs)
    return logp, fallback


def beam_search(step_fn: StepFn, config: DecodingConfig,
                early_stop: bool = True) -> list[Hypothesis]:
    """Batched beam search; returns finished hypotheses ranked best first.

    All live beams share a length, so each step is one batched forward.
    Candidate ties break deterministically: better score first, then
    earlier beam, then smaller token id. A beam still alive at the last
    step is closed with the end token at that step's actual probability.
    With early_stop, search ends once no live beam can optimistically beat
    the best finished score at maximum length; pass early_stop=False to
    keep collecting lower-ranked candidates until the length limit.
    """
    live = [Hypothesis()]
    finished: list[Hypothesis] = []
    alpha = config.length_penalty
    for step in range(config.max_length):
        prefixes = np.array([[BOS_ID] + h.tokens for h in live], dtype=np.int64)
        rows = step_fn(prefixes)
        logp, step_fb = _constrained_logp(rows, live, config)

        if step == config.max_length - 1:
            for i, h in enumerate(live):
                finished.append(Hypothesis(h.tokens + [EOS_ID],
                                           h.logprob_sum + float(logp[i, EOS_ID]),
                                           h.fallback or bool(step_fb[i])))
            break

        sums = np.array([h.logprob_sum for h in live])
        flat = (sums[:, None] + logp).ravel()
        order = np.argsort(-flat, kind="stable")
        vocab = logp.shape[1]
        new_live: list[Hypothesis] = []
        for idx in order:
            total = float(flat[idx])
            if total == -math.inf:
                break
            i, tok = divmod(int(idx), vocab)
            parent = live[i]
            child = Hypothesis(parent.tokens + [tok], total,
                               parent.fallback or bool(step_fb[i]))
            if tok == EOS_ID:
                finished.append(child)
            else:
                new_live.append(child)
                if len(new_live) == config.num_beams:
                    break
        live = new_live
        if not live:
            break
        if early_stop and finished:
            best_done = max(h.score(alpha) for h in finished)
            horizon = length_penalty_factor(config.max_length, alpha)
            best_possible = max(h.logprob_sum / horizon for h in live)
            if best_done >= best_possible:
                break

    if not finished:
        raise InvalidArgumentError("beam search produced no finished hypothesis")
    order = np.argsort(-np.array([h.score(alpha) for h in finished]), kind="stable")
    return [finished[int(i)] for i in order]


def sample_search(step_fn: StepFn, config: DecodingConfig) -> Hypothesis:
    """Ancestral sampling from the constrained, top-k and top-p filtered mixture."""
    rng = np.random.default_rng(config.seed)
    hyp = Hypothesis()
    for step in range(config.max_length):
        rows = step_fn(np.array([[BOS_ID] + hyp.tokens], dtype=np.int64))
        probs, fb = apply_constraints(rows[0], hyp.tokens, config)
        hyp.fallback = hyp.fallback or fb
        if step == config.max_length - 1:
            tok = EOS_ID
        else:
            filtered = filter_top_k_top_p(probs, config.top_k, config.top_p)
            tok = int(rng.choice(len(filtered), p=filtered))
        with np.errstate(divide="ignore"):
            hyp.logprob_sum += float(np.log(probs[tok]))
        hyp.tokens.append(tok)
        if tok == EOS_ID:
            break
    return hyp


def _run_search(step_fn: StepFn, config: DecodingConfig) -> Hypothesis:
    if config.mode == "beam":
        return beam_search(step_fn, config)[0]
    return sample_search(step_fn, config)


# ---------------------------------------------------------------------------
# public entry points


def _require_vocab(model: Model):
    if model.vocab is None:
        raise InvalidArgumentError("generation needs a model with an attached vocabulary")
    return model.vocab


def _check_lengths(model: Model, config: DecodingConfig) -> None:
    if config.max_length + 1 > model.config.max_positions:
        raise InvalidArgumentError(
            f"max_length {config.max_length} does not fit the model's "
            f"{model.config.max_positions} positions")


def _resolve_spec(model: Model, gate: "GateSpec | str",
                  allow_untrained_gate: bool) -> GateSpec:
    spec = GateSpec.parse(gate, model.config.num_decoders) if isinstance(gate, str) else gate
    spec.validate(model.config.num_decoders)
    if (spec.kind == "learned" and model.train_mode == "guided"
            and not allow_untrained_gate):
        raise UnsupportedConfigError(
            "the gate head is untrained after guided training; "
            "pass allow_untrained_gate=True to use it anyway")
    return spec


def _finish(model: Model, hyp: Hypothesis, spec_label: str,
            alpha: float) -> GenerationResult:
    text = decode_ids(hyp.tokens, model.vocab)
    return GenerationResult(text=text, token_ids=tuple(hyp.tokens),
                            score=hyp.score(alpha), gate_label=spec_label,
                            fallback_used=hyp.fallback)


def generate(model: Model, article: str, gate: "GateSpec | str",
             config: DecodingConfig = DecodingConfig(),
             allow_untrained_gate: bool = False) -> GenerationResult:
    """Summarize one article under a gate spec and decoding config."""
    config.validate()
    vocab = _require_vocab(model)
    _check_lengths(model, config)
    spec = _resolve_spec(model, gate, allow_untrained_gate)
    doc = encode_document(model, encode(article, vocab))
    step_fn = _mixture_step_fn(model, doc.states, spec)
    hyp = _run_search(step_fn, config)
    return _finish(model, hyp, spec.label(), config.length_penalty)


def generate_topk(model: Model, article: str, gate: "GateSpec | str", k: int,
                  config: DecodingConfig = DecodingConfig(),
                  allow_untrained_gate: bool = False) -> list[GenerationResult]:
    """Top-k candidates from one beam run under a single gate spec.

    Early stopping is disabled so the search keeps filling the candidate
    list; fewer than k results mean the search space was exhausted.
    """
    config.validate()
    if config.mode != "beam":
        raise InvalidArgumentError("generate_topk requires beam decoding")
    if k < 1:
        raise InvalidArgumentError("k must be positive")
    vocab = _require_vocab(model)
    _check_lengths(model, config)
    spec = _resolve_spec(model, gate, allow_untrained_gate)
    doc = encode_document(model, encode(article, vocab))
    step_fn = _mixture_step_fn(model, doc.states, spec)
    hyps = beam_search(step_fn, config, early_stop=False)
    return [_finish(model, h, spec.label(), config.length_penalty)
            for h in hyps[:k]]


def generate_diverse(model: Model, article: str,
                     config: DecodingConfig = DecodingConfig(),
                     gate_values: Sequence[float] = SWEEP_GATES
                     ) -> list[tuple[float, GenerationResult]]:
    """Sweep a two-decoder mixture weight and decode once per value.

    Returns (gate value, result) pairs; weight g mixes decoder 1 in with
    (1 - g) of decoder 0.
    """
    if model.config.num_decoders != 2:
        raise UnsupportedConfigError(
            f"the gate sweep needs exactly 2 decoders, got {model.config.num_decoders}")
    config.validate()
    vocab = _require_vocab(model)
    _check_lengths(model, config)
    doc = encode_document(model, encode(article, vocab))
    out = []
    for g in gate_values:
        if not 0.0 <= g <= 1.0:
            raise InvalidArgumentError(f"sweep gate values must sit in [0, 1], got {g}")
        spec = GateSpec(kind="manual", weights=(1.0 - g, g))
        step_fn = _mixture_step_fn(model, doc.states, spec)
        hyp = _run_search(step_fn, config)
        out.append((g, _finish(model, hyp, spec.label(), config.length_penalty)))
    return out


def cross_model_generate(model_a: Model, model_b: Model, article: str,
                         index_a: int = 0, index_b: int = 0, g: float = 0.5,
                         config: DecodingConfig = DecodingConfig()) -> GenerationResult:
    """Mix one decoder from each of two separately trained models.

    Both models must carry byte-identical vocabularies; each encodes the
    article itself, and the two selected decoders' distributions blend as
    (1 - g) and g.
    """
    config.validate()
    vocab_a = _require_vocab(model_a)
    _require_vocab(model_b)
    if model_a.vocab_sha256 != model_b.vocab_sha256:
        raise InvalidArgumentError(
            "cross-model mixing needs identical vocabularies on both models")
    for model, index in ((model_a, index_a), (model_b, index_b)):
        if not 0 <= index < model.config.num_decoders:
            raise InvalidArgumentError(
                f"decoder index {index} out of range for a "
                f"{model.config.num_decoders}-decoder model")
    if not 0.0 <= g <= 1.0:
        raise InvalidArgumentError(f"mixing weight must sit in [0, 1], got {g}")
    _check_lengths(model_a, config)
    _check_lengths(model_b, config)
    ids = encode(article, vocab_a)
    doc_a = encode_document(model_a, ids)
    doc_b = encode_document(model_b, ids)
    step_fn = _cross_model_step_fn(model_a, doc_a.states, index_a,
                                   model_b, doc_b.states, index_b, g)
    hyp = _run_search(step_fn, config)
    label = f"cross:{index_a},{index_b}:{g:g}"
    return _finish(model_a, hyp, label, config.length_penalty)
