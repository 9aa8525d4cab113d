"""Data batching, gate supervision, and the two training objectives.

Unguided training lets the learned gate mix the decoders freely. Guided
training fixes the per-token mixing weight from data: examples are ranked
by a style feature and bucketed into percentiles, and the resulting gate
value is baked into the loss so each decoder top specializes. The gate
head itself stays out of the guided graph and keeps its initial weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .errors import (ConfigError, DivergenceError, InvalidArgumentError,
                     UnsupportedConfigError)
from .metrics import ngram_overlap, summary_specificity
from .model import Model, decode_batch, encode_batch, gate_batch
from .tokenizer import (BOS_ID, EOS_ID, PAD_ID, Vocabulary, encode,
                        split_sentences, tokenize)

SPLIT_FEATURES = ("abstractiveness", "specificity")
SPLIT_LEVELS = ("summary", "sentence")
TRAIN_MODES = ("unguided", "guided")


@dataclass(frozen=True)
class Example:
    """One article and summary pair, optionally carrying gate supervision."""

    id: str
    article: str
    summary: str
    gate: float | None = None
    sentence_gates: tuple[float, ...] | None = None


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "unguided"
    epochs: int = 10
    batch_size: int = 16
    lr: float = 3e-4
    seed: int = 0
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if self.mode not in TRAIN_MODES:
            raise ConfigError(f"mode must be one of {TRAIN_MODES}, got {self.mode!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ConfigError("lr must be a positive finite number")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("adam betas must sit in [0, 1)")


@dataclass(frozen=True)
class SplitConfig:
    """How to turn a style feature into percentile gate supervision."""

    feature: str = "abstractiveness"
    level: str = "summary"
    buckets: int = 5

    def validate(self) -> None:
        if self.feature not in SPLIT_FEATURES:
            raise ConfigError(f"feature must be one of {SPLIT_FEATURES}, got {self.feature!r}")
        if self.level not in SPLIT_LEVELS:
            raise ConfigError(f"level must be one of {SPLIT_LEVELS}, got {self.level!r}")
        if self.buckets < 2:
            raise ConfigError("buckets must be at least 2")


def compute_feature(article: str, text: str, feature: str,
                    rare_words: set[str] | None = None) -> float:
    """Style score of one summary or sentence against its article.

    The abstractiveness axis is scored by bigram overlap with the article,
    so a verbatim copy scores 1.0 and fully novel text 0.0; gate 1 then
    marks the most-copying units. A unit too short to carry a bigram also
    scores 0.0.
    """
    if feature == "abstractiveness":
        return ngram_overlap(article, text)
    if feature == "specificity":
        return summary_specificity(text, rare_words)
    raise ConfigError(f"unknown split feature: {feature!r}")


def percentile_split(examples: Sequence[Example], config: SplitConfig,
                     rare_words: set[str] | None = None) -> list[Example]:
    """Attach gate supervision by feature rank.

    Units (summaries, or every sentence pooled across summaries) are sorted
    by feature score with a stable order, bucketed by rank, and assigned
    gate = bucket / (buckets - 1). Ties keep corpus order.
    """
    config.validate()
    if not examples:
        raise InvalidArgumentError("percentile_split needs at least one example")

    units: list[tuple[int, int]] = []  # (example index, sentence index or -1)
    scores: list[float] = []
    sentences_per_example: list[list[str]] = []
    for i, ex in enumerate(examples):
        if config.level == "summary":
            units.append((i, -1))
            scores.append(compute_feature(ex.article, ex.summary, config.feature, rare_words))
            sentences_per_example.append([])
        else:
            sents = split_sentences(ex.summary)
            if not sents:
                raise InvalidArgumentError(f"example {ex.id!r} has an empty summary")
            sentences_per_example.append(sents)
            for s_idx, sent in enumerate(sents):
                units.append((i, s_idx))
                scores.append(compute_feature(ex.article, sent, config.feature, rare_words))

    order = np.argsort(np.asarray(scores, dtype=np.float64), kind="stable")
    n = len(units)
    gates = np.empty(n, dtype=np.float64)
    for rank, unit_idx in enumerate(order):
        bucket = rank * config.buckets // n
        gates[unit_idx] = bucket / (config.buckets - 1)

    if config.level == "summary":
        return [replace(ex, gate=float(gates[i])) for i, ex in enumerate(examples)]
    out = []
    pos = 0
    for i, ex in enumerate(examples):
        count = len(sentences_per_example[i])
        out.append(replace(ex, sentence_gates=tuple(float(g) for g in gates[pos:pos + count])))
        pos += count
    return out


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    src: np.ndarray          # (B, S) int64
    src_pad: np.ndarray      # (B, S) bool, True at padding
    tgt_in: np.ndarray       # (B, T) int64, starts with BOS
    targets: np.ndarray      # (B, T) int64, tgt_in shifted left
    target_mask: np.ndarray  # (B, T) bool, True at real target positions
    gates: np.ndarray | None  # (B, T) float, guided supervision per target
    n_tokens: int


def _target_ids_and_gates(vocab: Vocabulary, ex: Example, need_gates: bool
                          ) -> tuple[list[int], list[float] | None]:
    sentences = split_sentences(ex.summary)
    if not sentences:
        raise InvalidArgumentError(f"example {ex.id!r} has an empty summary")
    per_sentence = [[vocab.token_id(t) for t in tokenize(s)] for s in sentences]
    full = [BOS_ID] + [i for ids in per_sentence for i in ids] + [EOS_ID]

    gates: list[float] | None = None
    if ex.sentence_gates is not None:
        if len(ex.sentence_gates) != len(sentences):
            raise InvalidArgumentError(
                f"example {ex.id!r} carries {len(ex.sentence_gates)} sentence gates "
                f"for {len(sentences)} sentences")
        values = ex.sentence_gates
        gates = []
        for ids, g in zip(per_sentence, values):
            gates.extend([g] * len(ids))
        gates.append(values[-1])  # the end token follows the last sentence
    elif ex.gate is not None:
        gates = [ex.gate] * (len(full) - 1)
    elif need_gates:
        raise InvalidArgumentError(
            f"example {ex.id!r} has no gate supervision; run a percentile split first")
    if gates is not None and any(not 0.0 <= g <= 1.0 for g in gates):
        raise InvalidArgumentError(f"example {ex.id!r} has a gate outside [0, 1]")
    return full, gates


def make_batch(vocab: Vocabulary, examples: Sequence[Example], max_positions: int,
               need_gates: bool = False, dtype=np.float32) -> Batch:
    """Pad a group of examples into aligned arrays.

    Articles and built target sequences are truncated to max_positions;
    gate values align with target positions, the end token inheriting the
    last sentence's gate.
    """
    if not examples:
        raise InvalidArgumentError("make_batch needs at least one example")
    srcs = [encode(ex.article, vocab)[:max_positions] for ex in examples]
    rows = []
    for ex in examples:
        full, gates = _target_ids_and_gates(vocab, ex, need_gates)
        full = full[: max_positions + 1]
        if gates is not None:
            gates = gates[: len(full) - 1]
        rows.append((full, gates))

    b = len(examples)
    s_max = max(len(s) for s in srcs)
    t_max = max(len(full) - 1 for full, _ in rows)
    src = np.full((b, s_max), PAD_ID, dtype=np.int64)
    src_pad = np.ones((b, s_max), dtype=bool)
    tgt_in = np.full((b, t_max), PAD_ID, dtype=np.int64)
    targets = np.full((b, t_max), PAD_ID, dtype=np.int64)
    target_mask = np.zeros((b, t_max), dtype=bool)
    has_gates = any(g is not None for _, g in rows)
    gate_arr = np.zeros((b, t_max), dtype=dtype) if has_gates else None

    for i, (ids, (full, gates)) in enumerate(zip(srcs, rows)):
        src[i, :len(ids)] = ids
        src_pad[i, :len(ids)] = False
        t = len(full) - 1
        tgt_in[i, :t] = full[:-1]
        targets[i, :t] = full[1:]
        target_mask[i, :t] = True
        if gate_arr is not None and gates is not None:
            gate_arr[i, :t] = gates
    return Batch(src=src, src_pad=src_pad, tgt_in=tgt_in, targets=targets,
                 target_mask=target_mask, gates=gate_arr,
                 n_tokens=int(target_mask.sum()))


# ---------------------------------------------------------------------------
# objectives


def _masked_nll(mixed: ad.Tensor, batch: Batch, dtype) -> ad.Tensor:
    # replace padded entries by 1 before the log so they contribute exactly 0
    mask = ad.Tensor(batch.target_mask.astype(dtype))
    keep_pad_at_one = ad.Tensor((~batch.target_mask).astype(dtype))
    safe = ad.add(ad.mul(mixed, mask), keep_pad_at_one)
    total = ad.neg(ad.sum_(ad.log(safe)))
    return ad.scale(total, 1.0 / batch.src.shape[0])


def unguided_loss(model: Model, batch: Batch) -> ad.Tensor:
    """Negative log of the gate-mixed target probability, summed then
    divided by batch size. The gate head sits inside the graph."""
    enc = encode_batch(model, batch.src, batch.src_pad)
    h_m, probs = decode_batch(model, enc, batch.src_pad, batch.tgt_in,
                              tgt_pad=~batch.target_mask)
    gate = gate_batch(model, h_m)
    mixed = None
    for j in range(model.config.num_decoders):
        term = ad.mul(ad.index_axis(gate, j, axis=-1),
                      ad.gather_last(probs[j], batch.targets))
        mixed = term if mixed is None else ad.add(mixed, term)
    return _masked_nll(mixed, batch, model.dtype)


def guided_loss(model: Model, batch: Batch) -> ad.Tensor:
    """Mixture loss under data-fixed per-token weights; two decoders only.

    The gate head is never evaluated, so it receives no gradient, and a
    weight of exactly 0 or 1 silences the unselected decoder exactly.
    """
    if model.config.num_decoders != 2:
        raise UnsupportedConfigError(
            f"guided training supports exactly 2 decoders, got {model.config.num_decoders}")
    if batch.gates is None:
        raise InvalidArgumentError("guided training needs gate supervision in the batch")
    enc = encode_batch(model, batch.src, batch.src_pad)
    _, probs = decode_batch(model, enc, batch.src_pad, batch.tgt_in,
                            tgt_pad=~batch.target_mask)
    g = batch.gates.astype(model.dtype)
    w1 = ad.Tensor(g)
    w0 = ad.Tensor(np.asarray(1.0, dtype=model.dtype) - g)
    mixed = ad.add(ad.mul(w0, ad.gather_last(probs[0], batch.targets)),
                   ad.mul(w1, ad.gather_last(probs[1], batch.targets)))
    return _masked_nll(mixed, batch, model.dtype)


def batch_loss(model: Model, batch: Batch, mode: str) -> ad.Tensor:
    if mode == "guided":
        return guided_loss(model, batch)
    if mode == "unguided":
        return unguided_loss(model, batch)
    raise InvalidArgumentError(f"unknown training mode: {mode!r}")


# ---------------------------------------------------------------------------
# optimization


class Adam:
    """Adam with bias correction; a zero gradient moves nothing at all."""

    def __init__(self, params: Sequence[ad.Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]
        self.v = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                raise InvalidArgumentError(f"parameter has no gradient before step {self.t}")
            g = p.grad.astype(np.float64, copy=False)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data.astype(np.float64) - update).astype(p.dtype)


def clip_gradients(params: Sequence[ad.Tensor], max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm.

    Returns the pre-clip norm.
    """
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = (p.grad * np.asarray(scale, dtype=p.grad.dtype))
    return norm


# ---------------------------------------------------------------------------
# training loop


@dataclass(frozen=True)
class TrainResult:
    epoch_losses: list[float]  # nats per target token
    steps: int


def train(model: Model, examples: Sequence[Example], config: TrainConfig,
          log: Callable[[str], None] | None = None) -> TrainResult:
    """Optimize the model in place; deterministic for a given config.seed.

    The learning rate decays linearly from config.lr to (almost) zero over
    the full run. Raises when any batch loss turns non-finite.
    """
    config.validate()
    if model.vocab is None:
        raise InvalidArgumentError("training needs a model with an attached vocabulary")
    if not examples:
        raise InvalidArgumentError("training needs at least one example")
    if config.mode == "guided" and model.config.num_decoders != 2:
        raise UnsupportedConfigError(
            f"guided training supports exactly 2 decoders, got {model.config.num_decoders}")

    rng = np.random.default_rng(config.seed)
    n = len(examples)
    steps_per_epoch = (n + config.batch_size - 1) // config.batch_size
    total_steps = config.epochs * steps_per_epoch
    params = model.parameters()
    opt = Adam(params, config.beta1, config.beta2, config.adam_eps)

    step = 0
    epoch_losses: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total_nll = 0.0
        total_tokens = 0
        for start in range(0, n, config.batch_size):
            group = [examples[i] for i in order[start:start + config.batch_size]]
            batch = make_batch(model.vocab, group, model.config.max_positions,
                               need_gates=config.mode == "guided", dtype=model.dtype)
            lr_t = config.lr * (1.0 - step / total_steps)
            with ad.tape():
                try:
                    loss = batch_loss(model, batch, config.mode)
                except InvalidArgumentError:
                    # exploding updates surface as non-finite activations
                    if any(not np.isfinite(p.data).all() for p in params):
                        raise DivergenceError(f"non-finite parameters at step {step}")
                    raise
                value = loss.item()
                if not math.isfinite(value):
                    raise DivergenceError(f"non-finite loss at step {step}")
                ad.backward(loss, params=params)
            clip_gradients(params, config.clip_norm)
            opt.step(lr_t)
            total_nll += value * len(group)
            total_tokens += batch.n_tokens
            step += 1
        epoch_losses.append(total_nll / total_tokens)
        if log is not None:
            log(f"epoch {epoch + 1}/{config.epochs} "
                f"loss {epoch_losses[-1]:.4f} nats/token lr {lr_t:.2e}")

    model.train_mode = config.mode
    return TrainResult(epoch_losses=epoch_losses, steps=step)
