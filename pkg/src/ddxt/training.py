"""Teacher-forced training: summed dual cross-entropy, Adam, per-epoch exponential decay."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .dataset import TokenizedDataset
from .errors import DegenerateError, NumericError, ParameterError
from .model import ModelConfig, ModelParams, forward
from .optim import Adam
from .tensor import Tensor, backward, masked_cross_entropy, no_grad
from .tokenizer import PAD_ID, Vocabulary

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr0: float = 1e-3
    gamma: float = 0.95
    seed: int = 0
    checkpoint_dir: str | None = None
    eval_every: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.gamma <= 1.0:
            raise ParameterError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.lr0 <= 0:
            raise ParameterError(f"lr0 must be positive, got {self.lr0}")
        if self.eval_every < 1:
            raise ParameterError("eval_every must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for a 0-based epoch; decays once per epoch boundary."""
    if epoch < 0:
        raise ParameterError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr0 * cfg.gamma**epoch


class LossParts(NamedTuple):
    total: Tensor
    seq_ce: Tensor
    cls_ce: Tensor


def compute_loss(seq_logits: Tensor, seq_targets, cls_logits: Tensor, cls_target) -> LossParts:
    """Unweighted sum of the sequence CE (pad positions ignored) and classifier CE."""
    targets = np.asarray(seq_targets)
    if targets.ndim != 2 or seq_logits.shape[:2] != targets.shape:
        raise ParameterError(f"sequence logits {seq_logits.shape} do not match targets {targets.shape}")
    if ((targets != PAD_ID).sum(axis=1) == 0).any():
        raise DegenerateError("a target row consists only of <pad>")
    vocab = seq_logits.shape[-1]
    seq = masked_cross_entropy(seq_logits.reshape(-1, vocab), targets.reshape(-1), ignore_id=PAD_ID)
    cls = masked_cross_entropy(cls_logits, np.asarray(cls_target).reshape(-1))
    return LossParts(seq + cls, seq, cls)


@dataclass
class EpochSummary:
    epoch: int
    lr: float
    total: float
    seq: float
    cls: float
    n_batches: int
    examples_per_sec: float
    wall_time: float
    val: dict | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def batch_indices(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train_epoch(params: ModelParams, cfg: ModelConfig, data: TokenizedDataset, optimizer: Adam,
                rng: np.random.Generator, lr: float, batch_size: int, epoch: int = 0) -> EpochSummary:
    """One pass over seeded-shuffled mini-batches with teacher forcing."""
    if len(data) == 0:
        raise ParameterError("cannot train on an empty dataset")
    start = time.perf_counter()
    sums = np.zeros(3)
    batches = batch_indices(len(data), batch_size, rng)
    for bi, idx in enumerate(batches):
        batch = data.subset(idx)
        params.zero_grad()
        out = forward(params, cfg, batch.enc_ids, batch.dec_input, training=True, rng=rng)
        loss = compute_loss(out.seq_logits, batch.dec_target, out.cls_logits, batch.labels)
        values = (loss.total.item(), loss.seq_ce.item(), loss.cls_ce.item())
        if not all(math.isfinite(v) for v in values):
            raise NumericError(f"non-finite loss {values} at epoch {epoch}, batch {bi}")
        backward(loss.total)
        optimizer.step(params, lr)
        sums += values
    wall = time.perf_counter() - start
    mean = sums / len(batches)
    return EpochSummary(epoch, lr, float(mean[0]), float(mean[1]), float(mean[2]), len(batches),
                        len(data) / wall if wall > 0 else float("inf"), wall)


def evaluate_loss(params: ModelParams, cfg: ModelConfig, data: TokenizedDataset, batch_size: int = 64) -> dict:
    """Teacher-forced losses in eval mode, averaged per example."""
    sums, n = np.zeros(3), 0
    with no_grad():
        for i in range(0, len(data), batch_size):
            batch = data.subset(slice(i, i + batch_size))
            out = forward(params, cfg, batch.enc_ids, batch.dec_input)
            loss = compute_loss(out.seq_logits, batch.dec_target, out.cls_logits, batch.labels)
            sums += np.array([loss.total.item(), loss.seq_ce.item(), loss.cls_ce.item()]) * len(batch)
            n += len(batch)
    mean = sums / max(n, 1)
    return {"total": float(mean[0]), "seq": float(mean[1]), "cls": float(mean[2])}


@dataclass
class TrainState:
    """Everything needed to continue a run exactly where it stopped."""

    params: ModelParams
    optimizer: Adam
    rng: np.random.Generator
    epoch: int = 0
    best_val: float | None = None
    best_epoch: int | None = None
    history: list[EpochSummary] = field(default_factory=list)

    @classmethod
    def fresh(cls, params: ModelParams, seed: int) -> TrainState:
        return cls(params, Adam(), np.random.default_rng(seed))

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> TrainState:
        rng = np.random.default_rng()
        if ckpt.rng_state is not None:
            rng.bit_generator.state = ckpt.rng_state
        return cls(ckpt.model_params(requires_grad=True), ckpt.optimizer or Adam(), rng, ckpt.epoch,
                   ckpt.meta.get("best_val"), ckpt.meta.get("best_epoch"))

    def to_checkpoint(self, cfg: ModelConfig, tcfg: TrainConfig, enc_vocab: Vocabulary,
                      dec_vocab: Vocabulary) -> Checkpoint:
        meta = {"train_config": tcfg.to_dict(), "best_val": self.best_val, "best_epoch": self.best_epoch}
        return Checkpoint(cfg, enc_vocab, dec_vocab, self.params.arrays(), self.optimizer, self.epoch,
                          self.rng.bit_generator.state, meta)


def fit(state: TrainState, cfg: ModelConfig, tcfg: TrainConfig, train_data: TokenizedDataset,
        enc_vocab: Vocabulary, dec_vocab: Vocabulary, val_data: TokenizedDataset | None = None,
        log_path=None, on_epoch: Callable[[EpochSummary], None] | None = None) -> TrainState:
    """Train from ``state.epoch`` up to ``tcfg.epochs``.

    With ``tcfg.checkpoint_dir`` set, ``last.ckpt`` is rewritten after every
    epoch and ``best.ckpt`` whenever the validation total loss improves.
    """
    ckpt_dir = Path(tcfg.checkpoint_dir) if tcfg.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    while state.epoch < tcfg.epochs:
        lr = lr_at(state.epoch, tcfg)
        summary = train_epoch(state.params, cfg, train_data, state.optimizer, state.rng, lr,
                              tcfg.batch_size, state.epoch)
        state.epoch += 1
        improved = False
        if val_data is not None and len(val_data) and state.epoch % tcfg.eval_every == 0:
            summary.val = evaluate_loss(state.params, cfg, val_data, tcfg.batch_size)
            if state.best_val is None or summary.val["total"] < state.best_val:
                state.best_val, state.best_epoch, improved = summary.val["total"], state.epoch, True
        state.history.append(summary)
        log.info("epoch %d lr %.3g loss %.4f (seq %.4f cls %.4f)", summary.epoch, lr, summary.total,
                 summary.seq, summary.cls)
        if log_path is not None:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(summary.to_json() + "\n")
        if ckpt_dir:
            ckpt = state.to_checkpoint(cfg, tcfg, enc_vocab, dec_vocab)
            save_checkpoint(ckpt_dir / "last.ckpt", ckpt)
            if improved:
                save_checkpoint(ckpt_dir / "best.ckpt", ckpt)
        if on_epoch is not None:
            on_epoch(summary)
    return state
