"""Patient records, sequence assembly, DDXPlus CSV I/O and a synthetic generator."""

from __future__ import annotations

import ast
import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ParameterError, ParseError, ValidationError
from .tokenizer import BOS, EOS, N_SPECIALS, SEP, Vocabulary, build_vocab, encode

COLUMNS = ("AGE", "SEX", "PATHOLOGY", "EVIDENCES", "INITIAL_EVIDENCE", "DIFFERENTIAL_DIAGNOSIS")
AGE_GROUPS = ("<1", "1-4", "5-14", "15-29", "30-44", "45-59", "60-74", "75+")
_AGE_LOWER = (0, 1, 5, 15, 30, 45, 60, 75)
SEXES = ("M", "F")


@dataclass(frozen=True)
class PatientInfo:
    """What is known about a patient before diagnosis."""

    age: int
    sex: str
    initial_evidence: str
    evidences: tuple[str, ...]

    def validate(self, index: int | None = None) -> None:
        if not isinstance(self.age, (int, np.integer)) or self.age < 0:
            raise ValidationError(f"age must be a non-negative integer, got {self.age!r}", "age", index)
        if self.sex not in SEXES:
            raise ValidationError(f"sex must be one of {SEXES}, got {self.sex!r}", "sex", index)
        if not self.initial_evidence:
            raise ValidationError("initial_evidence is empty", "initial_evidence", index)
        if not self.evidences:
            raise ValidationError("evidences list is empty", "evidences", index)


@dataclass(frozen=True)
class PatientRecord(PatientInfo):
    ddx: tuple[tuple[str, float], ...] = ()
    true_pathology: str = ""

    def validate(self, index: int | None = None) -> None:
        super().validate(index)
        if not self.ddx:
            raise ValidationError("differential diagnosis is empty", "ddx", index)
        probs = [p for _, p in self.ddx]
        if any(not (0.0 < p <= 1.0) for p in probs):
            raise ValidationError("ddx probability outside (0, 1]", "ddx", index)
        if any(a < b for a, b in zip(probs, probs[1:])):
            raise ValidationError("ddx probabilities are not in descending order", "ddx", index)
        if self.true_pathology not in {name for name, _ in self.ddx}:
            raise ValidationError(
                f"pathology {self.true_pathology!r} missing from its differential", "true_pathology", index
            )

    @property
    def pathologies(self) -> list[str]:
        return [name for name, _ in self.ddx]


def sort_ddx(ddx: Iterable[tuple[str, float]]) -> tuple[tuple[str, float], ...]:
    """Descending by probability; ties keep their source order."""
    return tuple(sorted(((str(n), float(p)) for n, p in ddx), key=lambda item: -item[1]))


def bin_age(age: int) -> str:
    if age < 0:
        raise ValidationError(f"age must be non-negative, got {age}", "age")
    for lower, token in zip(reversed(_AGE_LOWER), reversed(AGE_GROUPS)):
        if age >= lower:
            return token
    raise AssertionError("unreachable")


def field_tokens(info: PatientInfo) -> list[str]:
    """The non-special tokens of an encoder sequence, in template order."""
    return [bin_age(info.age), info.sex, info.initial_evidence, *info.evidences]


def assemble_input_tokens(info: PatientInfo) -> list[str]:
    return [
        BOS, bin_age(info.age), SEP, info.sex, SEP, info.initial_evidence, SEP,
        *info.evidences, EOS,
    ]


def assemble_target_tokens(record: PatientRecord) -> list[str]:
    """Gold DDx pathologies (most probable first) followed by <eos>."""
    if not record.ddx:
        raise ValidationError("differential diagnosis is empty", "ddx")
    return [name for name, _ in sort_ddx(record.ddx)] + [EOS]


def assemble_decoder_input(record: PatientRecord) -> list[str]:
    return [BOS] + assemble_target_tokens(record)[:-1]


# ---------------------------------------------------------------------------
# tokenized examples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TokenizedExample:
    encoder_ids: np.ndarray
    decoder_input_ids: np.ndarray
    decoder_target_ids: np.ndarray
    class_label: int


@dataclass
class TokenizedDataset:
    """Stacked id arrays for a list of records."""

    enc_ids: np.ndarray
    dec_input: np.ndarray
    dec_target: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> TokenizedExample:
        return TokenizedExample(self.enc_ids[i], self.dec_input[i], self.dec_target[i], int(self.labels[i]))

    def subset(self, idx) -> TokenizedDataset:
        return TokenizedDataset(self.enc_ids[idx], self.dec_input[idx], self.dec_target[idx], self.labels[idx])

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, enc_ids=self.enc_ids, dec_input=self.dec_input,
                     dec_target=self.dec_target, labels=self.labels)

    @classmethod
    def load(cls, path) -> TokenizedDataset:
        with np.load(path, allow_pickle=False) as z:
            return cls(z["enc_ids"], z["dec_input"], z["dec_target"], z["labels"])


def class_label(pathology: str, dec_vocab: Vocabulary) -> int:
    if pathology not in dec_vocab:
        raise ValidationError(f"pathology {pathology!r} not in decoder vocabulary", "true_pathology")
    return dec_vocab.id(pathology) - N_SPECIALS


def tokenize_record(record: PatientRecord, enc_vocab: Vocabulary, dec_vocab: Vocabulary,
                    max_enc_len: int = 80, max_dec_len: int = 40) -> TokenizedExample:
    full = [BOS] + assemble_target_tokens(record)
    dec_in = encode(full[:-1], dec_vocab, max_dec_len)
    dec_tgt = encode(full[1:], dec_vocab, max_dec_len)
    enc = encode(assemble_input_tokens(record), enc_vocab, max_enc_len)
    return TokenizedExample(enc.ids, dec_in.ids, dec_tgt.ids, class_label(record.true_pathology, dec_vocab))


def tokenize_records(records: Sequence[PatientRecord], enc_vocab: Vocabulary, dec_vocab: Vocabulary,
                     max_enc_len: int = 80, max_dec_len: int = 40) -> TokenizedDataset:
    examples = [tokenize_record(r, enc_vocab, dec_vocab, max_enc_len, max_dec_len) for r in records]
    if not examples:
        return TokenizedDataset(np.zeros((0, max_enc_len), np.int64), np.zeros((0, max_dec_len), np.int64),
                                np.zeros((0, max_dec_len), np.int64), np.zeros(0, np.int64))
    return TokenizedDataset(
        np.stack([e.encoder_ids for e in examples]),
        np.stack([e.decoder_input_ids for e in examples]),
        np.stack([e.decoder_target_ids for e in examples]),
        np.array([e.class_label for e in examples], dtype=np.int64),
    )


def encoder_token_stream(records: Iterable[PatientInfo]):
    for r in records:
        yield from field_tokens(r)


def decoder_token_stream(records: Iterable[PatientRecord]):
    for r in records:
        yield from r.pathologies
        yield r.true_pathology


# ---------------------------------------------------------------------------
# DDXPlus CSV
# ---------------------------------------------------------------------------


def _parse_row(row: dict, index: int) -> PatientRecord:
    try:
        age = int(row["AGE"])
    except (TypeError, ValueError):
        raise ParseError(f"AGE {row['AGE']!r} is not an integer", index) from None
    try:
        evidences = ast.literal_eval(row["EVIDENCES"])
        ddx_raw = ast.literal_eval(row["DIFFERENTIAL_DIAGNOSIS"])
    except (ValueError, SyntaxError) as exc:
        raise ParseError(f"malformed list literal: {exc}", index) from None
    if not isinstance(evidences, list) or not all(isinstance(e, str) for e in evidences):
        raise ParseError("EVIDENCES must be a list of strings", index)
    if not isinstance(ddx_raw, list) or not all(
        isinstance(item, (list, tuple)) and len(item) == 2 for item in ddx_raw
    ):
        raise ParseError("DIFFERENTIAL_DIAGNOSIS must be a list of [name, probability] pairs", index)
    ddx = []
    for name, prob in ddx_raw:
        try:
            prob = float(prob)
        except (TypeError, ValueError):
            raise ParseError(f"probability {prob!r} is not numeric", index) from None
        if not (0.0 < prob <= 1.0) or math.isnan(prob):
            raise ParseError(f"probability {prob} outside (0, 1]", index)
        ddx.append((str(name), prob))
    record = PatientRecord(
        age=age,
        sex=row["SEX"].strip(),
        initial_evidence=row["INITIAL_EVIDENCE"].strip(),
        evidences=tuple(evidences),
        ddx=sort_ddx(ddx),
        true_pathology=row["PATHOLOGY"].strip(),
    )
    try:
        record.validate()
    except ValidationError as exc:
        raise ParseError(str(exc), index) from None
    return record


def read_ddxplus(path, skip_invalid: bool = False) -> tuple[list[PatientRecord], list[ParseError]]:
    """Parse a DDXPlus-schema CSV.

    With ``skip_invalid`` bad rows are collected and returned instead of
    raising at the first one. Row indices are 0-based over data rows.
    """
    records, errors = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ParseError(f"{path}: missing column(s) {', '.join(missing)}")
        for i, row in enumerate(reader):
            try:
                records.append(_parse_row(row, i))
            except ParseError as exc:
                if not skip_invalid:
                    raise
                errors.append(exc)
    return records, errors


def parse_ddxplus(path) -> list[PatientRecord]:
    return read_ddxplus(path)[0]


def write_ddxplus(records: Iterable[PatientRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for r in records:
            writer.writerow([
                r.age, r.sex, r.true_pathology, repr(list(r.evidences)), r.initial_evidence,
                repr([[name, prob] for name, prob in r.ddx]),
            ])


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    n_pathologies: int = 10
    n_evidence_codes: int = 15
    n_records: int = 1000
    seed: int = 0
    evidences_per_pathology: int = 3
    noise_rate: float = 0.1

    def validate(self) -> None:
        if self.n_pathologies < 2:
            raise ParameterError(f"need at least 2 pathologies, got {self.n_pathologies}")
        if self.n_evidence_codes < self.n_pathologies:
            raise ParameterError("n_evidence_codes must be >= n_pathologies")
        if self.n_records < 0:
            raise ParameterError("n_records must be non-negative")
        k = self.evidences_per_pathology
        if not 1 <= k < self.n_evidence_codes:
            raise ParameterError(f"evidences_per_pathology must be in [1, {self.n_evidence_codes})")
        if math.comb(self.n_evidence_codes, k) < self.n_pathologies:
            raise ParameterError("not enough distinct evidence subsets for every pathology")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ParameterError(f"noise_rate must be in [0, 1], got {self.noise_rate}")


def pathology_name(i: int) -> str:
    return f"P_{i:02d}"


def evidence_name(j: int) -> str:
    return f"E_{j:03d}"


@dataclass
class SyntheticWorld:
    """The fixed pathology -> characteristic evidence map behind a generated corpus."""

    signatures: list[tuple[int, ...]] = field(default_factory=list)
    n_evidence_codes: int = 0

    def rank(self, evidence_ids: set[int]) -> list[tuple[int, float]]:
        """Pathologies scored by the fraction of their signature present, best first."""
        scores = [(p, len(evidence_ids.intersection(sig)) / len(sig)) for p, sig in enumerate(self.signatures)]
        return sorted(((p, s) for p, s in scores if s > 0), key=lambda item: -item[1])


def make_world(cfg: SyntheticConfig, rng: np.random.Generator) -> SyntheticWorld:
    seen: set[tuple[int, ...]] = set()
    signatures = []
    while len(signatures) < cfg.n_pathologies:
        picks = rng.choice(cfg.n_evidence_codes, cfg.evidences_per_pathology, replace=False)
        sig = tuple(sorted(int(j) for j in picks))
        if sig not in seen:
            seen.add(sig)
            signatures.append(sig)
    return SyntheticWorld(signatures, cfg.n_evidence_codes)


def generate_synthetic(cfg: SyntheticConfig) -> list[PatientRecord]:
    """Seeded corpus whose differentials are a deterministic function of the evidence.

    Every pathology owns a distinct evidence signature. A record draws a
    pathology uniformly, emits its signature, and replaces each signature
    code with a random foreign code with probability ``noise_rate``. The
    differential ranks all pathologies whose signature overlaps the emitted
    evidence; the true pathology is appended if noise erased all of it.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    world = make_world(cfg, rng)
    records = []
    for _ in range(cfg.n_records):
        p = int(rng.integers(cfg.n_pathologies))
        sig = world.signatures[p]
        foreign = [j for j in range(cfg.n_evidence_codes) if j not in sig]
        emitted = set()
        for j in sig:
            if cfg.noise_rate > 0 and rng.random() < cfg.noise_rate:
                emitted.add(int(rng.choice(foreign)))
            else:
                emitted.add(j)
        ranked = world.rank(emitted)
        if p not in {q for q, _ in ranked}:
            floor = min((s for _, s in ranked), default=1.0)
            ranked.append((p, floor / 2))
        total = sum(s for _, s in ranked)
        ddx = tuple((pathology_name(q), s / total) for q, s in ranked)
        evidences = tuple(evidence_name(j) for j in sorted(emitted))
        age = int(rng.integers(0, 90))
        sex = SEXES[int(rng.integers(2))]
        initial = evidences[int(rng.integers(len(evidences)))]
        records.append(PatientRecord(age, sex, initial, evidences, sort_ddx(ddx), pathology_name(p)))
    return records


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


def split_indices(n: int, ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0) -> list[np.ndarray]:
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(n * ratios[0] + 1e-9))
    n_val = int(math.floor(n * ratios[1] + 1e-9))
    return [order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]]


def split(records: Sequence, ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0):
    """Seeded shuffle, then contiguous train/val/test partition."""
    return tuple([records[int(i)] for i in part] for part in split_indices(len(records), ratios, seed))


def write_split_manifest(parts: Sequence[np.ndarray], path, names=("train", "val", "test")) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name, idx in zip(names, parts):
            fh.write(f"{name}: {' '.join(str(int(i)) for i in idx)}\n")


def build_vocabularies(records: Sequence[PatientRecord]) -> tuple[Vocabulary, Vocabulary]:
    """Encoder and decoder vocabularies from a training corpus."""
    return build_vocab(encoder_token_stream(records)), build_vocab(decoder_token_stream(records))

