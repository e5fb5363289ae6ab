"""Encoder-decoder transformer with a sequence head and a pooled classifier head."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Iterator, NamedTuple

import numpy as np

from .errors import ContractError, DegenerateError, DimensionError, ParameterError
from .tensor import (
    Tensor,
    concat,
    dropout,
    embedding_lookup,
    gelu,
    layer_norm,
    softmax_last_dim,
)
from .tokenizer import N_SPECIALS, PAD_ID


@dataclass(frozen=True)
class ModelConfig:
    enc_vocab_size: int = 436
    dec_vocab_size: int = 54
    n_classes: int = 49
    d_model: int = 128
    n_heads: int = 4
    n_enc_layers: int = 6
    n_dec_layers: int = 6
    ffn_mult: int = 4
    max_enc_len: int = 80
    max_dec_len: int = 40
    dropout_rate: float = 0.1
    ln_eps: float = 1e-5

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name not in ("dropout_rate", "ln_eps") and (not isinstance(value, int) or value <= 0):
                raise ParameterError(f"{f.name} must be a positive integer, got {value!r}")
        if self.d_model % self.n_heads:
            raise ParameterError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ParameterError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.ln_eps <= 0:
            raise ParameterError("ln_eps must be positive")
        if self.max_dec_len < 2 or self.max_enc_len < 2:
            raise ParameterError("sequence lengths must be >= 2")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def d_ff(self) -> int:
        return self.d_model * self.ffn_mult

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def for_vocabs(cls, enc_vocab_size: int, dec_vocab_size: int, **overrides) -> ModelConfig:
        return cls(enc_vocab_size=enc_vocab_size, dec_vocab_size=dec_vocab_size,
                   n_classes=dec_vocab_size - N_SPECIALS, **overrides)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def _attn_shapes(prefix: str, d: int) -> dict[str, tuple[int, ...]]:
    out = {}
    for proj in ("q", "k", "v", "o"):
        out[f"{prefix}.{proj}.w"] = (d, d)
        out[f"{prefix}.{proj}.b"] = (d,)
    return out


def _ln_shapes(prefix: str, d: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.gamma": (d,), f"{prefix}.beta": (d,)}


def _mlp_shapes(prefix: str, d: int, d_ff: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.fc1.w": (d, d_ff), f"{prefix}.fc1.b": (d_ff,),
            f"{prefix}.fc2.w": (d_ff, d), f"{prefix}.fc2.b": (d,)}


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter name and shape, in canonical order."""
    d, ff = cfg.d_model, cfg.d_ff
    shapes: dict[str, tuple[int, ...]] = {
        "enc.tok_emb": (cfg.enc_vocab_size, d),
        "enc.pos_emb": (cfg.max_enc_len, d),
    }
    for i in range(cfg.n_enc_layers):
        b = f"enc.{i}"
        shapes.update(_ln_shapes(f"{b}.ln1", d))
        shapes.update(_attn_shapes(f"{b}.attn", d))
        shapes.update(_ln_shapes(f"{b}.ln2", d))
        shapes.update(_mlp_shapes(f"{b}.mlp", d, ff))
    shapes["dec.tok_emb"] = (cfg.dec_vocab_size, d)
    shapes["dec.pos_emb"] = (cfg.max_dec_len, d)
    for i in range(cfg.n_dec_layers):
        b = f"dec.{i}"
        shapes.update(_ln_shapes(f"{b}.ln1", d))
        shapes.update(_attn_shapes(f"{b}.self_attn", d))
        shapes.update(_ln_shapes(f"{b}.ln2", d))
        shapes.update(_attn_shapes(f"{b}.cross_attn", d))
        shapes.update(_ln_shapes(f"{b}.ln3", d))
        shapes.update(_mlp_shapes(f"{b}.mlp", d, ff))
    shapes["head.w"] = (d, cfg.dec_vocab_size)
    shapes["head.b"] = (cfg.dec_vocab_size,)
    shapes.update(_ln_shapes("cls.ln1", 2 * d))
    shapes["cls.fc1.w"] = (2 * d, d)
    shapes["cls.fc1.b"] = (d,)
    shapes.update(_ln_shapes("cls.ln2", d))
    shapes["cls.fc2.w"] = (d, cfg.n_classes)
    shapes["cls.fc2.b"] = (cfg.n_classes,)
    return shapes


def num_parameters(cfg: ModelConfig) -> int:
    """Closed-form parameter count."""
    d, c = cfg.d_model, cfg.n_classes
    attn = 4 * (d * d + d)
    mlp = 2 * d * cfg.d_ff + cfg.d_ff + d
    ln = 2 * d
    enc_block = attn + mlp + 2 * ln
    dec_block = 2 * attn + mlp + 3 * ln
    embeddings = (cfg.enc_vocab_size + cfg.max_enc_len + cfg.dec_vocab_size + cfg.max_dec_len) * d
    head = d * cfg.dec_vocab_size + cfg.dec_vocab_size
    classifier = 4 * d + 2 * d * d + d + 2 * d + d * c + c
    return embeddings + cfg.n_enc_layers * enc_block + cfg.n_dec_layers * dec_block + head + classifier


class ModelParams:
    """Named parameter tensors, iterated in canonical order."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self) -> list[str]:
        return list(self.tensors)

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.tensors.items()}

    def copy(self, dtype=None) -> ModelParams:
        return ModelParams.from_arrays(
            {n: a.astype(dtype or a.dtype, copy=True) for n, a in self.arrays().items()},
            requires_grad=any(t.requires_grad for t in self.tensors.values()),
        )

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], requires_grad: bool = True) -> ModelParams:
        return cls({n: Tensor(a, requires_grad=requires_grad, dtype=a.dtype) for n, a in arrays.items()})

    def check_against(self, cfg: ModelConfig) -> None:
        expected = param_shapes(cfg)
        if list(expected) != list(self.tensors):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise DimensionError(f"parameter names differ from config (missing {missing[:3]}, extra {extra[:3]})")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise DimensionError(f"{name}: shape {self.tensors[name].shape}, config expects {shape}")


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, unit LN gains, N(0, 0.02) positions."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "pos_emb":
            a = rng.normal(0.0, 0.02, size=shape)
        elif leaf == "gamma":
            a = np.ones(shape)
        elif leaf in ("beta", "b"):
            a = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            a = rng.uniform(-bound, bound, size=shape)
        arrays[name] = a.astype(dtype)
    return ModelParams.from_arrays(arrays)


# ---------------------------------------------------------------------------
# masks and attention
# ---------------------------------------------------------------------------


def causal_mask(length: int) -> np.ndarray:
    """Boolean [L, L]; True where query i may attend to key j (j <= i)."""
    if length < 1:
        raise ParameterError(f"mask length must be >= 1, got {length}")
    return np.tril(np.ones((length, length), dtype=bool))


def padding_mask(ids) -> np.ndarray:
    return np.asarray(ids) != PAD_ID


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask=None, dropout_rate: float = 0.0,
                         training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """softmax(q k^T / sqrt(dk)) v over the last two axes; ``mask`` is True where allowed."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2] or q.shape[:-2] != k.shape[:-2]:
        raise DimensionError(f"attention shapes q{q.shape} k{k.shape} v{v.shape} are incompatible")
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    weights = softmax_last_dim(scores, mask)
    weights = dropout(weights, dropout_rate, training, rng)
    return weights @ v


def _linear(x: Tensor, p: ModelParams, prefix: str) -> Tensor:
    return x @ p[prefix + ".w"] + p[prefix + ".b"]


def _ln(x: Tensor, p: ModelParams, prefix: str, eps: float) -> Tensor:
    return layer_norm(x, p[prefix + ".gamma"], p[prefix + ".beta"], eps)


def _multi_head(x_q: Tensor, x_kv: Tensor, p: ModelParams, prefix: str, mask, cfg: ModelConfig,
                training: bool, rng) -> Tensor:
    b, lq, d = x_q.shape
    lk = x_kv.shape[1]
    h, dk = cfg.n_heads, cfg.head_dim

    def heads(t: Tensor, length: int) -> Tensor:
        return t.reshape(b, length, h, dk).transpose(0, 2, 1, 3)

    q = heads(_linear(x_q, p, prefix + ".q"), lq)
    k = heads(_linear(x_kv, p, prefix + ".k"), lk)
    v = heads(_linear(x_kv, p, prefix + ".v"), lk)
    out = scaled_dot_attention(q, k, v, mask, cfg.dropout_rate, training, rng)
    return _linear(out.transpose(0, 2, 1, 3).reshape(b, lq, d), p, prefix + ".o")


def _mlp(x: Tensor, p: ModelParams, prefix: str) -> Tensor:
    return _linear(gelu(_linear(x, p, prefix + ".fc1")), p, prefix + ".fc2")


def _embed(ids: np.ndarray, p: ModelParams, stream: str, cfg: ModelConfig, training: bool, rng) -> Tensor:
    positions = np.arange(ids.shape[1])
    x = embedding_lookup(p[f"{stream}.tok_emb"], ids) + embedding_lookup(p[f"{stream}.pos_emb"], positions)
    return dropout(x, cfg.dropout_rate, training, rng)


def _check_ids(ids, max_len: int, what: str) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise DimensionError(f"{what} ids must be [batch, length], got shape {ids.shape}")
    if ids.shape[1] > max_len:
        raise ContractError(f"{what} sequence length {ids.shape[1]} exceeds maximum {max_len}")
    return ids


def _check_mask(mask, ids: np.ndarray, what: str) -> np.ndarray:
    mask = padding_mask(ids) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != ids.shape:
        raise DimensionError(f"{what} padding mask {mask.shape} does not match ids {ids.shape}")
    return mask


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def encoder_forward(enc_ids, params: ModelParams, cfg: ModelConfig, training: bool = False,
                    rng: np.random.Generator | None = None, pad_mask=None) -> Tensor:
    """Encoder features [B, L, d_model]. ``pad_mask`` defaults to ``enc_ids != <pad>``."""
    ids = _check_ids(enc_ids, cfg.max_enc_len, "encoder")
    mask = _check_mask(pad_mask, ids, "encoder")[:, None, None, :]
    x = _embed(ids, params, "enc", cfg, training, rng)
    eps = cfg.ln_eps
    for i in range(cfg.n_enc_layers):
        b = f"enc.{i}"
        h = _ln(x, params, b + ".ln1", eps)
        x = x + _multi_head(h, h, params, b + ".attn", mask, cfg, training, rng)
        h = _ln(x, params, b + ".ln2", eps)
        x = x + dropout(_mlp(h, params, b + ".mlp"), cfg.dropout_rate, training, rng)
    return x


def decoder_forward(dec_ids, enc_out: Tensor, enc_pad_mask, params: ModelParams, cfg: ModelConfig,
                    training: bool = False, rng: np.random.Generator | None = None,
                    dec_pad_mask=None) -> tuple[Tensor, Tensor]:
    """Returns (sequence logits [B, L, dec_vocab], final decoder features [B, L, d_model])."""
    ids = _check_ids(dec_ids, cfg.max_dec_len, "decoder")
    bsz, length = ids.shape
    if enc_out.ndim != 3 or enc_out.shape[0] != bsz or enc_out.shape[2] != cfg.d_model:
        raise DimensionError(f"encoder output {enc_out.shape} does not fit decoder batch {ids.shape}")
    enc_mask = np.asarray(enc_pad_mask, dtype=bool)
    if enc_mask.shape != enc_out.shape[:2]:
        raise DimensionError(f"encoder padding mask {enc_mask.shape} vs encoder output {enc_out.shape}")
    self_mask = causal_mask(length)[None, None] & _check_mask(dec_pad_mask, ids, "decoder")[:, None, None, :]
    cross_mask = enc_mask[:, None, None, :]
    x = _embed(ids, params, "dec", cfg, training, rng)
    eps = cfg.ln_eps
    for i in range(cfg.n_dec_layers):
        b = f"dec.{i}"
        h = _ln(x, params, b + ".ln1", eps)
        x = x + _multi_head(h, h, params, b + ".self_attn", self_mask, cfg, training, rng)
        h = _ln(x, params, b + ".ln2", eps)
        x = x + _multi_head(h, enc_out, params, b + ".cross_attn", cross_mask, cfg, training, rng)
        h = _ln(x, params, b + ".ln3", eps)
        x = x + dropout(_mlp(h, params, b + ".mlp"), cfg.dropout_rate, training, rng)
    return _linear(x, params, "head"), x


def global_average_pool(x: Tensor, mask) -> Tensor:
    """Mean over the positions where ``mask`` is True: [B, L, d] -> [B, d]."""
    mask = np.asarray(mask, dtype=bool)
    counts = mask.sum(axis=1)
    if (counts == 0).any():
        raise DegenerateError("pooling window with no non-pad positions")
    weights = mask.astype(x.dtype)[:, :, None]
    return (x * weights).sum(axis=1) / counts.astype(x.dtype)[:, None]


def classify(enc_out: Tensor, dec_features: Tensor, enc_pad_mask, dec_pad_mask, params: ModelParams,
             eps: float = 1e-5) -> Tensor:
    pooled = concat([global_average_pool(enc_out, enc_pad_mask),
                     global_average_pool(dec_features, dec_pad_mask)], axis=-1)
    h = _linear(_ln(pooled, params, "cls.ln1", eps), params, "cls.fc1")
    h = gelu(h)
    return _linear(_ln(h, params, "cls.ln2", eps), params, "cls.fc2")


class ForwardOutput(NamedTuple):
    seq_logits: Tensor
    cls_logits: Tensor
    enc_out: Tensor
    dec_features: Tensor


def forward(params: ModelParams, cfg: ModelConfig, enc_ids, dec_ids, training: bool = False,
            rng: np.random.Generator | None = None, enc_pad_mask=None, dec_pad_mask=None) -> ForwardOutput:
    """Teacher-forced pass through both heads."""
    enc_ids = np.asarray(enc_ids)
    dec_ids = np.asarray(dec_ids)
    enc_mask = padding_mask(enc_ids) if enc_pad_mask is None else np.asarray(enc_pad_mask, dtype=bool)
    dec_mask = padding_mask(dec_ids) if dec_pad_mask is None else np.asarray(dec_pad_mask, dtype=bool)
    enc_out = encoder_forward(enc_ids, params, cfg, training, rng, enc_mask)
    seq_logits, feats = decoder_forward(dec_ids, enc_out, enc_mask, params, cfg, training, rng, dec_mask)
    cls_logits = classify(enc_out, feats, enc_mask, dec_mask, params, cfg.ln_eps)
    return ForwardOutput(seq_logits, cls_logits, enc_out, feats)
