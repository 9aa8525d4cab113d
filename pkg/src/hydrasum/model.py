"""One encoder, k sibling decoders, and a token-level gate over their mixture.

The decoder stack has M layers: the bottom m are shared by every decoder,
the top M - m (plus the output projection) are private per decoder. The
gate reads the shared stack's output h_m, one vector per target position,
through a bias-free linear head followed by softmax. Layers use post-LN
residual blocks, so h_m is already normalized where the gate consumes it.

Batched functions (encode_batch, decode_batch, gate_batch) run on the
autodiff tape when one is active and are shared by training and
inference; the public single-example ops wrap them with batch size 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, InvalidArgumentError
from .tokenizer import BOS_ID, Vocabulary

GATE_INIT_STD = 0.02
WEIGHT_INIT_STD = 0.02
SIBLING_NOISE_STD = 1e-3

_ATTN_PARTS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 4
    shared_decoder_layers: int = 2
    num_decoders: int = 2
    d_ff: int = 256
    max_positions: int = 128
    seed: int = 0

    def validate(self) -> None:
        if self.vocab_size < 5:
            raise ConfigError("vocab_size must be at least 5 (4 reserved ids)")
        if self.d_model < 1 or self.d_ff < 1 or self.max_positions < 2:
            raise ConfigError("d_model, d_ff and max_positions must be positive")
        if self.n_heads < 1 or self.d_model % self.n_heads != 0:
            raise ConfigError("d_model must be divisible by n_heads")
        if self.encoder_layers < 0:
            raise ConfigError("encoder_layers must be non-negative")
        if not 0 <= self.shared_decoder_layers < self.decoder_layers:
            raise ConfigError(
                "need 0 <= shared_decoder_layers < decoder_layers, got "
                f"{self.shared_decoder_layers} vs {self.decoder_layers}")
        if self.num_decoders < 1:
            raise ConfigError("num_decoders must be at least 1")


def _layer_specs(prefix: str, d: int, d_ff: int, cross: bool) -> list[tuple[str, tuple, str]]:
    specs = []
    blocks = [("self_attn", "norm1")]
    if cross:
        blocks.append(("cross_attn", "norm2"))
    for attn, norm in blocks:
        for part in _ATTN_PARTS:
            shape = (d, d) if part.startswith("w") else (d,)
            specs.append((f"{prefix}.{attn}.{part}", shape, "weight" if part.startswith("w") else "bias"))
        specs.append((f"{prefix}.{norm}.g", (d,), "gain"))
        specs.append((f"{prefix}.{norm}.b", (d,), "bias"))
    specs += [
        (f"{prefix}.ffn.w1", (d, d_ff), "weight"),
        (f"{prefix}.ffn.b1", (d_ff,), "bias"),
        (f"{prefix}.ffn.w2", (d_ff, d), "weight"),
        (f"{prefix}.ffn.b2", (d,), "bias"),
        (f"{prefix}.ffn_norm.g" if cross else f"{prefix}.norm2.g", (d,), "gain"),
        (f"{prefix}.ffn_norm.b" if cross else f"{prefix}.norm2.b", (d,), "bias"),
    ]
    return specs


def shared_param_specs(config: ModelConfig) -> list[tuple[str, tuple, str]]:
    """Everything except the per-decoder tops, in canonical draw order."""
    d, ff = config.d_model, config.d_ff
    specs = [
        ("emb.tok", (config.vocab_size, d), "weight"),
        ("emb.pos", (config.max_positions, d), "weight"),
        ("enc.emb_norm.g", (d,), "gain"),
        ("enc.emb_norm.b", (d,), "bias"),
        ("dec.emb_norm.g", (d,), "gain"),
        ("dec.emb_norm.b", (d,), "bias"),
    ]
    for i in range(config.encoder_layers):
        specs += _layer_specs(f"enc.L{i}", d, ff, cross=False)
    for i in range(config.shared_decoder_layers):
        specs += _layer_specs(f"dec.shared.L{i}", d, ff, cross=True)
    specs.append(("gate.W", (d, config.num_decoders), "weight"))
    return specs


def decoder_top_specs(config: ModelConfig, j: int) -> list[tuple[str, tuple, str]]:
    """Private layers and output projection of decoder j, canonical order."""
    d, ff = config.d_model, config.d_ff
    specs = []
    for i in range(config.shared_decoder_layers, config.decoder_layers):
        specs += _layer_specs(f"dec.{j}.L{i}", d, ff, cross=True)
    specs += [
        (f"dec.{j}.proj.w", (d, config.vocab_size), "weight"),
        (f"dec.{j}.proj.b", (config.vocab_size,), "bias"),
    ]
    return specs


def parameter_names(config: ModelConfig) -> list[str]:
    names = [name for name, _, _ in shared_param_specs(config)]
    for j in range(config.num_decoders):
        names += [name for name, _, _ in decoder_top_specs(config, j)]
    return names


class Model:
    """Parameter container plus config and provenance bookkeeping."""

    def __init__(self, config: ModelConfig, params: dict[str, ad.Tensor],
                 train_mode: str | None = None, vocab: Vocabulary | None = None):
        self.config = config
        self.params = params
        self.train_mode = train_mode
        self.vocab = vocab

    @property
    def dtype(self):
        return self.params["emb.tok"].dtype

    @property
    def vocab_sha256(self) -> str | None:
        return self.vocab.sha256() if self.vocab is not None else None

    def parameters(self) -> list[ad.Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> list[tuple[str, ad.Tensor]]:
        return list(self.params.items())

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())


def _fresh(kind: str, shape: tuple, rng: np.random.Generator, dtype) -> np.ndarray:
    if kind == "weight":
        return rng.normal(0.0, WEIGHT_INIT_STD, size=shape).astype(dtype)
    if kind == "gain":
        return np.ones(shape, dtype=dtype)
    return np.zeros(shape, dtype=dtype)


def init_model(config: ModelConfig, seed: int | None = None,
               dtype=np.float32, vocab: Vocabulary | None = None) -> Model:
    """Deterministic init given seed.

    All weights draw from N(0, 0.02). The k decoder tops are copies of a
    single template draw, each then perturbed by independent N(0, 1e-3)
    noise so siblings start near-identical but not equal.
    """
    config.validate()
    if vocab is not None and vocab.size != config.vocab_size:
        raise ConfigError(
            f"vocab size {vocab.size} does not match config {config.vocab_size}")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params: dict[str, ad.Tensor] = {}
    for name, shape, kind in shared_param_specs(config):
        params[name] = ad.Tensor(_fresh(kind, shape, rng, dtype), requires_grad=True)

    template = [_fresh(kind, shape, rng, dtype)
                for _, shape, kind in decoder_top_specs(config, 0)]
    for j in range(config.num_decoders):
        for (name, _, _), base in zip(decoder_top_specs(config, j), template):
            noise = rng.normal(0.0, SIBLING_NOISE_STD, size=base.shape).astype(dtype)
            params[name] = ad.Tensor(base + noise, requires_grad=True)
    return Model(config, params, vocab=vocab)


# ---------------------------------------------------------------------------
# forward passes


def _linear(x: ad.Tensor, w: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    return ad.add(ad.matmul(x, w), b)


def _split_heads(x: ad.Tensor, n_heads: int) -> ad.Tensor:
    b, t, d = x.shape
    x = ad.reshape(x, (b, t, n_heads, d // n_heads))
    return ad.transpose(x, (0, 2, 1, 3))


def _merge_heads(x: ad.Tensor) -> ad.Tensor:
    b, h, t, dh = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, t, h * dh))


def _attn(p: dict, prefix: str, x: ad.Tensor, kv: ad.Tensor,
          n_heads: int, mask: np.ndarray | None) -> ad.Tensor:
    q = _split_heads(_linear(x, p[f"{prefix}.wq"], p[f"{prefix}.bq"]), n_heads)
    k = _split_heads(_linear(kv, p[f"{prefix}.wk"], p[f"{prefix}.bk"]), n_heads)
    v = _split_heads(_linear(kv, p[f"{prefix}.wv"], p[f"{prefix}.bv"]), n_heads)
    out = _merge_heads(ad.attention(q, k, v, mask=mask))
    return _linear(out, p[f"{prefix}.wo"], p[f"{prefix}.bo"])


def _ffn(p: dict, prefix: str, x: ad.Tensor) -> ad.Tensor:
    h = ad.relu(_linear(x, p[f"{prefix}.w1"], p[f"{prefix}.b1"]))
    return _linear(h, p[f"{prefix}.w2"], p[f"{prefix}.b2"])


def _post_ln(p: dict, norm: str, x: ad.Tensor, sub: ad.Tensor) -> ad.Tensor:
    return ad.layer_norm(ad.add(x, sub), p[f"{norm}.g"], p[f"{norm}.b"])


def _encoder_layer(p: dict, prefix: str, x: ad.Tensor, n_heads: int,
                   mask: np.ndarray | None) -> ad.Tensor:
    x = _post_ln(p, f"{prefix}.norm1", x, _attn(p, f"{prefix}.self_attn", x, x, n_heads, mask))
    return _post_ln(p, f"{prefix}.norm2", x, _ffn(p, f"{prefix}.ffn", x))


def _decoder_layer(p: dict, prefix: str, x: ad.Tensor, enc: ad.Tensor, n_heads: int,
                   self_mask: np.ndarray, cross_mask: np.ndarray | None) -> ad.Tensor:
    x = _post_ln(p, f"{prefix}.norm1", x, _attn(p, f"{prefix}.self_attn", x, x, n_heads, self_mask))
    x = _post_ln(p, f"{prefix}.norm2", x, _attn(p, f"{prefix}.cross_attn", x, enc, n_heads, cross_mask))
    return _post_ln(p, f"{prefix}.ffn_norm", x, _ffn(p, f"{prefix}.ffn", x))


def _embed(model: Model, ids: np.ndarray, side: str) -> ad.Tensor:
    p = model.params
    t = ids.shape[1]
    if t > model.config.max_positions:
        raise InvalidArgumentError(
            f"sequence length {t} exceeds max_positions {model.config.max_positions}")
    tok = ad.embedding(p["emb.tok"], ids)
    pos = ad.embedding(p["emb.pos"], np.arange(t))
    return ad.layer_norm(ad.add(tok, pos), p[f"{side}.emb_norm.g"], p[f"{side}.emb_norm.b"])


def _key_mask(pad: np.ndarray | None) -> np.ndarray | None:
    # pad (B, S) bool -> broadcast over heads and query positions
    return None if pad is None else pad[:, None, None, :]


def encode_batch(model: Model, src: np.ndarray, src_pad: np.ndarray | None = None) -> ad.Tensor:
    """src (B, S) int ids -> encoder states (B, S, d_model)."""
    x = _embed(model, src, "enc")
    mask = _key_mask(src_pad)
    for i in range(model.config.encoder_layers):
        x = _encoder_layer(model.params, f"enc.L{i}", x, model.config.n_heads, mask)
    return x


def causal_mask(t: int) -> np.ndarray:
    return np.triu(np.ones((t, t), dtype=bool), k=1)


def decode_batch(model: Model, enc: ad.Tensor, src_pad: np.ndarray | None,
                 tgt_in: np.ndarray, tgt_pad: np.ndarray | None = None
                 ) -> tuple[ad.Tensor, list[ad.Tensor]]:
    """tgt_in (B, T) ids -> (h_m (B, T, d), per-decoder probs [(B, T, V)] * k).

    Every decoder consumes the same shared-stack output h_m; per-decoder
    distributions come from private top layers and output projections.
    """
    cfg = model.config
    p = model.params
    t = tgt_in.shape[1]
    self_mask = causal_mask(t)[None, None]
    if tgt_pad is not None:
        self_mask = self_mask | tgt_pad[:, None, None, :]
    cross_mask = _key_mask(src_pad)

    x = _embed(model, tgt_in, "dec")
    for i in range(cfg.shared_decoder_layers):
        x = _decoder_layer(p, f"dec.shared.L{i}", x, enc, cfg.n_heads, self_mask, cross_mask)
    h_m = x

    probs = []
    for j in range(cfg.num_decoders):
        xj = h_m
        for i in range(cfg.shared_decoder_layers, cfg.decoder_layers):
            xj = _decoder_layer(p, f"dec.{j}.L{i}", xj, enc, cfg.n_heads, self_mask, cross_mask)
        logits = _linear(xj, p[f"dec.{j}.proj.w"], p[f"dec.{j}.proj.b"])
        probs.append(ad.softmax(logits))
    return h_m, probs


def gate_batch(model: Model, h_m: ad.Tensor) -> ad.Tensor:
    """Gate probabilities (B, T, k) from shared states; linear head, no bias."""
    return ad.softmax(ad.matmul(h_m, model.params["gate.W"]))


# ---------------------------------------------------------------------------
# single-example public ops


@dataclass(frozen=True)
class EncodedDocument:
    """Encoder states for one article; truncated records input clipping."""

    states: np.ndarray
    truncated: bool = False


@dataclass(frozen=True)
class StepOutput:
    """Shared hidden state and per-decoder log-prob rows for one position."""

    h_m: np.ndarray
    per_decoder_logprobs: np.ndarray


def encode_document(model: Model, token_ids: Sequence[int]) -> EncodedDocument:
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise InvalidArgumentError("encode_document expects a non-empty 1-D id list")
    truncated = ids.size > model.config.max_positions
    if truncated:
        ids = ids[: model.config.max_positions]
    states = encode_batch(model, ids[None, :]).data[0]
    return EncodedDocument(states=states, truncated=truncated)


def _as_states(encoder_states) -> np.ndarray:
    states = encoder_states.states if isinstance(encoder_states, EncodedDocument) else np.asarray(encoder_states)
    if states.ndim != 2:
        raise InvalidArgumentError("encoder states must be a (S, d_model) array")
    return states


def decoder_forward(model: Model, encoder_states, prefix_ids: Sequence[int]) -> list[StepOutput]:
    """Per-position shared states and per-decoder log-prob vectors for a prefix."""
    states = _as_states(encoder_states)
    prefix = np.asarray(prefix_ids, dtype=np.int64)
    if prefix.ndim != 1 or prefix.size == 0 or prefix[0] != BOS_ID:
        raise InvalidArgumentError("prefix must be 1-D and start with BOS")
    enc = ad.Tensor(states[None].astype(model.dtype, copy=False))
    h_m, probs = decode_batch(model, enc, None, prefix[None, :])
    with np.errstate(divide="ignore"):
        logprobs = np.stack([np.log(pr.data[0]) for pr in probs])  # (k, T, V)
    h = h_m.data[0]
    return [StepOutput(h_m=h[t], per_decoder_logprobs=logprobs[:, t, :])
            for t in range(prefix.size)]


def gate_probs(model: Model, h_m: np.ndarray) -> np.ndarray:
    """Gate distribution over the k decoders for one shared state vector."""
    h = np.asarray(h_m)
    if h.shape != (model.config.d_model,):
        raise InvalidArgumentError(
            f"h_m must have shape ({model.config.d_model},), got {h.shape}")
    out = gate_batch(model, ad.Tensor(h[None, None, :].astype(model.dtype, copy=False)))
    return out.data[0, 0]


def validate_gate_vector(g: np.ndarray, k: int) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (k,):
        raise InvalidArgumentError(f"gate vector must have shape ({k},), got {g.shape}")
    if (g < 0).any() or abs(float(g.sum()) - 1.0) > 1e-6:
        raise InvalidArgumentError("gate entries must be non-negative and sum to 1")
    return g


def mixture_distribution(per_decoder_probs, g) -> np.ndarray:
    """Convex combination of k next-token distributions under gate g."""
    probs = np.asarray(per_decoder_probs)
    if probs.ndim != 2:
        raise InvalidArgumentError("per_decoder_probs must be a (k, V) array")
    k = probs.shape[0]
    gate = validate_gate_vector(np.asarray(g), k)
    if (probs < 0).any() or np.abs(probs.sum(axis=-1) - 1.0).max() > 1e-4:
        raise InvalidArgumentError("each decoder distribution must sum to 1")
    return (gate.astype(probs.dtype) @ probs)
