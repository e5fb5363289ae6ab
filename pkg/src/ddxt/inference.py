"""Greedy DDx generation, pathology prediction and test-split evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .checkpoint import Checkpoint
from .dataset import PatientInfo, PatientRecord, assemble_input_tokens, assemble_target_tokens
from .errors import ValidationError
from .metrics import ConfusionMatrix, EvalReport, build_report, sequence_accuracy
from .model import ModelConfig, ModelParams, classify, decoder_forward, encoder_forward, forward, padding_mask
from .tensor import Tensor, no_grad
from .tokenizer import BOS, BOS_ID, EOS_ID, N_SPECIALS, PAD_ID, Vocabulary, encode


@dataclass
class Diagnosis:
    ddx: list[str]
    predicted_pathology: str
    class_logits: np.ndarray
    raw_ids: list[int]

    def to_dict(self, include_logits: bool = False) -> dict:
        out = {"ddx": self.ddx, "predicted_pathology": self.predicted_pathology}
        if include_logits:
            out["class_logits"] = [float(v) for v in self.class_logits]
        return out


def _greedy(enc_out: Tensor, enc_mask: np.ndarray, params: ModelParams, cfg: ModelConfig,
            prefixes: Sequence[Sequence[int]] | None = None) -> list[list[int]]:
    """Generated ids per row, the terminating <eos> excluded."""
    bsz = enc_out.shape[0]
    tokens = np.full((bsz, cfg.max_dec_len), PAD_ID, dtype=np.int64)
    tokens[:, 0] = BOS_ID
    generated: list[list[int]] = [[] for _ in range(bsz)]
    forced = [list(p) for p in prefixes] if prefixes is not None else [[] for _ in range(bsz)]
    done = np.zeros(bsz, dtype=bool)
    rows = np.arange(bsz)
    for step in range(cfg.max_dec_len - 1):
        length = step + 1
        mask = np.zeros((bsz, length), dtype=bool)
        for b in range(bsz):
            mask[b, : len(generated[b]) + 1] = True
        logits, _ = decoder_forward(tokens[:, :length], enc_out, enc_mask, params, cfg, dec_pad_mask=mask)
        nxt = logits.data[rows, step].argmax(axis=-1)
        for b in range(bsz):
            if done[b]:
                continue
            tok = forced[b][step] if step < len(forced[b]) else int(nxt[b])
            if tok == EOS_ID:
                done[b] = True
                continue
            tokens[b, length] = tok
            generated[b].append(tok)
        if done.all():
            break
    return generated


def greedy_decode(enc_ids, params: ModelParams, cfg: ModelConfig, prefix: Sequence[int] | None = None) -> list[int]:
    """Greedy generation for one encoded input; stops at <eos> or the length cap.

    ``prefix`` forces the first generated tokens (used to check that greedy
    continuations are stable).
    """
    enc_ids = np.asarray(enc_ids).reshape(1, -1)
    return greedy_decode_batch(enc_ids, params, cfg, None if prefix is None else [prefix])[0]


def greedy_decode_batch(enc_ids, params: ModelParams, cfg: ModelConfig,
                        prefixes: Sequence[Sequence[int]] | None = None) -> list[list[int]]:
    enc_ids = np.asarray(enc_ids)
    enc_mask = padding_mask(enc_ids)
    with no_grad():
        enc_out = encoder_forward(enc_ids, params, cfg, pad_mask=enc_mask)
        return _greedy(enc_out, enc_mask, params, cfg, prefixes)


def _decoder_inputs(generated: Sequence[Sequence[int]], max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """[<bos>, generated...] rows padded to a common length, with their validity mask."""
    width = max(len(g) for g in generated) + 1
    ids = np.full((len(generated), width), PAD_ID, dtype=np.int64)
    mask = np.zeros_like(ids, dtype=bool)
    for b, g in enumerate(generated):
        row = [BOS_ID, *g][:max_len]
        ids[b, : len(row)] = row
        mask[b, : len(row)] = True
    return ids[:, :max_len], mask[:, :max_len]


def pathology_ids(ids: Sequence[int]) -> list[int]:
    """Class indices of the pathology tokens in a generated sequence, in order."""
    return [i - N_SPECIALS for i in ids if i >= N_SPECIALS]


def _dedupe(items: Sequence[str]) -> list[str]:
    seen, out = set(), []
    for x in items:
        if x not in seen:
            seen.add(x)
            out.append(x)
    return out


class Predictor:
    """A loaded checkpoint ready for inference. Safe to share between readers."""

    def __init__(self, checkpoint: Checkpoint):
        self.config = checkpoint.config
        self.enc_vocab: Vocabulary = checkpoint.enc_vocab
        self.dec_vocab: Vocabulary = checkpoint.dec_vocab
        self.params = checkpoint.model_params(requires_grad=False)

    @property
    def class_names(self) -> list[str]:
        return self.dec_vocab.content_tokens

    def encode_inputs(self, infos: Sequence[PatientInfo]) -> np.ndarray:
        for i, info in enumerate(infos):
            try:
                info.validate()
            except ValidationError as exc:
                raise ValidationError(str(exc), exc.field, i) from None
        return np.stack([encode(assemble_input_tokens(r), self.enc_vocab, self.config.max_enc_len).ids
                         for r in infos])

    def _run(self, enc_ids: np.ndarray) -> list[Diagnosis]:
        cfg = self.config
        enc_mask = padding_mask(enc_ids)
        with no_grad():
            enc_out = encoder_forward(enc_ids, self.params, cfg, pad_mask=enc_mask)
            generated = _greedy(enc_out, enc_mask, self.params, cfg)
            dec_ids, dec_mask = _decoder_inputs(generated, cfg.max_dec_len)
            _, feats = decoder_forward(dec_ids, enc_out, enc_mask, self.params, cfg, dec_pad_mask=dec_mask)
            logits = classify(enc_out, feats, enc_mask, dec_mask, self.params, cfg.ln_eps).data
        names = self.class_names
        out = []
        for g, row in zip(generated, logits):
            ddx = _dedupe([names[c] for c in pathology_ids(g)])
            out.append(Diagnosis(ddx, names[int(np.argmax(row))], row.copy(), list(g)))
        return out

    def diagnose(self, info: PatientInfo) -> Diagnosis:
        return self._run(self.encode_inputs([info]))[0]

    def diagnose_batch(self, infos: Sequence[PatientInfo], batch_size: int = 32) -> list[Diagnosis]:
        if not infos:
            return []
        enc = self.encode_inputs(infos)
        out: list[Diagnosis] = []
        for i in range(0, len(infos), batch_size):
            out.extend(self._run(enc[i:i + batch_size]))
        return out


def diagnose(info: PatientInfo, checkpoint: Checkpoint) -> Diagnosis:
    return Predictor(checkpoint).diagnose(info)


def batch_diagnose(infos: Sequence[PatientInfo], checkpoint: Checkpoint, batch_size: int = 32) -> list[Diagnosis]:
    return Predictor(checkpoint).diagnose_batch(infos, batch_size)


# ---------------------------------------------------------------------------
# evaluation over a labelled split
# ---------------------------------------------------------------------------


@dataclass
class EvalOutcome:
    report: EvalReport
    predicted_sequences: list[list[int]]
    gold_sequences: list[list[int]]
    predicted_classes: list[int]
    gold_classes: list[int]

    @property
    def sequence_accuracy(self) -> float:
        return sequence_accuracy(self.predicted_sequences, self.gold_sequences)


def _gold_sequence(record: PatientRecord, dec_vocab: Vocabulary, max_len: int) -> list[int]:
    ids = [dec_vocab.id(t) for t in assemble_target_tokens(record)[:-1]]
    return pathology_ids(ids[: max_len - 1])


def _teacher_forced(predictor: Predictor, records: Sequence[PatientRecord], enc_ids: np.ndarray):
    cfg = predictor.config
    vocab = predictor.dec_vocab
    dec_in = np.stack([encode([BOS, *assemble_target_tokens(r)[:-1]], vocab, cfg.max_dec_len).ids
                       for r in records])
    with no_grad():
        out = forward(predictor.params, cfg, enc_ids, dec_in)
    steps = out.seq_logits.data.argmax(axis=-1)
    seqs = []
    for row in steps:
        ids = []
        for tok in row.tolist():
            if tok == EOS_ID:
                break
            ids.append(tok)
        seqs.append(pathology_ids(ids))
    return seqs, out.cls_logits.data.argmax(axis=-1).tolist()


def evaluate(checkpoint: Checkpoint, records: Sequence[PatientRecord], batch_size: int = 32,
             teacher_forced: bool = False) -> EvalOutcome:
    """Decode every record and score it with the positional DDx protocol."""
    predictor = Predictor(checkpoint)
    cfg = predictor.config
    vocab = predictor.dec_vocab
    unknown = sorted({p for r in records for p in [*r.pathologies, r.true_pathology] if p not in vocab})
    if unknown:
        raise ValidationError(f"pathologies missing from the checkpoint vocabulary: {unknown[:5]}", "ddx")
    names = predictor.class_names
    gold_seqs = [_gold_sequence(r, vocab, cfg.max_dec_len) for r in records]
    gold_cls = [vocab.id(r.true_pathology) - N_SPECIALS for r in records]
    pred_seqs: list[list[int]] = []
    pred_cls: list[int] = []
    for i in range(0, len(records), batch_size):
        chunk = records[i:i + batch_size]
        enc = predictor.encode_inputs(chunk)
        if teacher_forced:
            seqs, cls = _teacher_forced(predictor, chunk, enc)
        else:
            diags = predictor._run(enc)
            seqs = [pathology_ids(d.raw_ids) for d in diags]
            cls = [names.index(d.predicted_pathology) for d in diags]
        pred_seqs.extend(seqs)
        pred_cls.extend(cls)
    cm = ConfusionMatrix(len(names), names)
    for g, p in zip(gold_seqs, pred_seqs):
        cm.accumulate(g, p)
    meta = {"decoding": "teacher-forced" if teacher_forced else "free-running greedy",
            "sequence_accuracy": sequence_accuracy(pred_seqs, gold_seqs)}
    report = build_report(cm, pred_cls, gold_cls, meta)
    return EvalOutcome(report, pred_seqs, gold_seqs, pred_cls, gold_cls)
