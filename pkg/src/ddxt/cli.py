"""``ddxt`` command line: gen-data, build-vocab, preprocess, train, eval, predict.

Settings resolve as built-in defaults < DDXT_SEED (seed only) < TOML config
file (``[model]``, ``[train]``, ``[paths]``) < command-line flags. Exit codes:
0 success, 1 usage/config error, 2 data error, 3 internal numeric error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .checkpoint import load_checkpoint
from .dataset import (
    PatientInfo,
    SyntheticConfig,
    TokenizedDataset,
    build_vocabularies,
    generate_synthetic,
    parse_ddxplus,
    split_indices,
    tokenize_records,
    write_ddxplus,
    write_split_manifest,
)
from .errors import ConfigError, DDxTError, ValidationError
from .inference import Predictor, evaluate
from .metrics import emit_report
from .model import ModelConfig, init_params
from .tokenizer import Vocabulary
from .training import TrainConfig, TrainState, fit

log = logging.getLogger("ddxt")

ENC_VOCAB_FILE = "enc_vocab.txt"
DEC_VOCAB_FILE = "dec_vocab.txt"
MODEL_KEYS = ("d_model", "n_heads", "n_enc_layers", "n_dec_layers", "ffn_mult", "max_enc_len",
              "max_dec_len", "dropout_rate")
TRAIN_KEYS = ("epochs", "batch_size", "lr0", "gamma", "eval_every")
PATH_KEYS = ("train", "val", "test", "vocab_dir", "checkpoint_dir", "report_dir")


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    seed: int = 0

    def to_dict(self) -> dict:
        return {"model": self.model, "train": self.train, "paths": self.paths, "seed": self.seed}

    def echo(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved_config.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _default_seed() -> int:
    raw = os.environ.get("DDXT_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"DDXT_SEED must be an integer, got {raw!r}") from None


def resolve_config(args: argparse.Namespace) -> RunConfig:
    model_defaults = {f.name: f.default for f in fields(ModelConfig) if f.name in MODEL_KEYS}
    train_defaults = {f.name: f.default for f in fields(TrainConfig) if f.name in TRAIN_KEYS}
    cfg = RunConfig(dict(model_defaults), dict(train_defaults), {k: None for k in PATH_KEYS}, _default_seed())

    if getattr(args, "config", None):
        try:
            with open(args.config, "rb") as fh:
                doc = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
        for section, target, keys in (("model", cfg.model, MODEL_KEYS), ("train", cfg.train, TRAIN_KEYS),
                                      ("paths", cfg.paths, PATH_KEYS)):
            values = doc.get(section, {})
            unknown = set(values) - set(keys) - ({"seed"} if section == "train" else set())
            if unknown:
                raise ConfigError(f"unknown [{section}] keys in {args.config}: {sorted(unknown)}")
            for k, v in values.items():
                if k == "seed":
                    cfg.seed = int(v)
                else:
                    target[k] = v
        if "seed" in doc:
            cfg.seed = int(doc["seed"])

    for keys, target in ((MODEL_KEYS, cfg.model), (TRAIN_KEYS, cfg.train), (PATH_KEYS, cfg.paths)):
        for k in keys:
            v = getattr(args, k, None)
            if v is not None:
                target[k] = v
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _require(cfg: RunConfig, key: str) -> Path:
    value = cfg.paths.get(key)
    if not value:
        raise ConfigError(f"missing path: pass --{key.replace('_', '-')} or set [paths].{key}")
    return Path(value)


def _existing(path: Path) -> Path:
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    return path


def _load_vocabs(vocab_dir: Path) -> tuple[Vocabulary, Vocabulary]:
    return (Vocabulary.load(_existing(vocab_dir / ENC_VOCAB_FILE)),
            Vocabulary.load(_existing(vocab_dir / DEC_VOCAB_FILE)))


def _load_split(path: Path, enc_vocab: Vocabulary, dec_vocab: Vocabulary, cfg: ModelConfig) -> TokenizedDataset:
    _existing(path)
    if path.suffix == ".npz":
        return TokenizedDataset.load(path)
    return tokenize_records(parse_ddxplus(path), enc_vocab, dec_vocab, cfg.max_enc_len, cfg.max_dec_len)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    n_ev = args.evidences if args.evidences is not None else max(15, (3 * args.pathologies) // 2)
    syn = SyntheticConfig(args.pathologies, n_ev, args.n, seed, args.per_pathology, args.noise)
    records = generate_synthetic(syn)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    parts = split_indices(len(records), (0.8, 0.1, 0.1), seed)
    for name, idx in zip(("train", "validate", "test"), parts):
        write_ddxplus([records[int(i)] for i in idx], out / f"{name}.csv")
    write_split_manifest(parts, out / "split_manifest.txt", ("train", "validate", "test"))
    manifest = {"generator": syn.__dict__, "seed": seed, "counts": [len(p) for p in parts]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(parts[0])}/{len(parts[1])}/{len(parts[2])} train/validate/test records to {out}")
    return 0


def cmd_build_vocab(args) -> int:
    cfg = resolve_config(args)
    records = parse_ddxplus(_existing(_require(cfg, "train")))
    enc, dec = build_vocabularies(records)
    out = _require(cfg, "vocab_dir")
    out.mkdir(parents=True, exist_ok=True)
    enc.save(out / ENC_VOCAB_FILE)
    dec.save(out / DEC_VOCAB_FILE)
    print(f"encoder vocabulary {len(enc)} tokens, decoder vocabulary {len(dec)} tokens -> {out}")
    return 0


def cmd_preprocess(args) -> int:
    cfg = resolve_config(args)
    enc, dec = _load_vocabs(_require(cfg, "vocab_dir"))
    records = parse_ddxplus(_existing(Path(args.data)))
    data = tokenize_records(records, enc, dec, cfg.model["max_enc_len"], cfg.model["max_dec_len"])
    data.save(args.out)
    print(f"cached {len(data)} tokenized examples -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    enc_vocab, dec_vocab = _load_vocabs(_require(cfg, "vocab_dir"))
    ckpt_dir = _require(cfg, "checkpoint_dir")
    last = ckpt_dir / "last.ckpt"
    if args.resume and last.exists():
        ckpt = load_checkpoint(last)
        if ckpt.enc_vocab != enc_vocab or ckpt.dec_vocab != dec_vocab:
            raise ValidationError("vocabulary files differ from the checkpoint being resumed")
        model_cfg = ckpt.config
        state = TrainState.from_checkpoint(ckpt)
        log.info("resuming from %s at epoch %d", last, state.epoch)
    else:
        model_cfg = ModelConfig.for_vocabs(len(enc_vocab), len(dec_vocab), **cfg.model)
        state = TrainState.fresh(init_params(model_cfg, cfg.seed), cfg.seed)
    tcfg = TrainConfig(seed=cfg.seed, checkpoint_dir=str(ckpt_dir), **cfg.train)
    train_data = _load_split(_require(cfg, "train"), enc_vocab, dec_vocab, model_cfg)
    val_data = None
    if cfg.paths.get("val"):
        val_data = _load_split(Path(cfg.paths["val"]), enc_vocab, dec_vocab, model_cfg)

    cfg.model = {k: v for k, v in model_cfg.to_dict().items() if k in MODEL_KEYS}
    cfg.echo(ckpt_dir)
    print(json.dumps({"model": model_cfg.to_dict(), "train": tcfg.to_dict(), "paths": cfg.paths},
                     sort_keys=True))
    fit(state, model_cfg, tcfg, train_data, enc_vocab, dec_vocab, val_data,
        log_path=ckpt_dir / "train_log.jsonl",
        on_epoch=lambda s: print(f"epoch {s.epoch + 1}/{tcfg.epochs} lr {s.lr:.3g} loss {s.total:.4f} "
                                 f"(seq {s.seq:.4f}, cls {s.cls:.4f})"
                                 + (f" val {s.val['total']:.4f}" if s.val else ""), flush=True))
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    ckpt = load_checkpoint(_existing(Path(args.checkpoint)))
    if cfg.paths.get("vocab_dir"):
        enc, dec = _load_vocabs(Path(cfg.paths["vocab_dir"]))
        if enc != ckpt.enc_vocab or dec != ckpt.dec_vocab:
            raise ValidationError("vocabulary files do not match the checkpoint's embedded vocabularies")
    records = parse_ddxplus(_existing(_require(cfg, "test")))
    outcome = evaluate(ckpt, records, args.batch_size, teacher_forced=args.teacher_forced)
    outcome.report.metadata["checkpoint"] = str(args.checkpoint)
    outcome.report.metadata["checkpoint_epoch"] = ckpt.epoch
    out = _require(cfg, "report_dir")
    emit_report(outcome.report, out)
    cfg.echo(out)
    print(f"[{outcome.report.metadata['decoding']}] {outcome.report.summary_line()}")
    return 0


def _read_case(source: str) -> PatientInfo:
    try:
        text = sys.stdin.read() if source == "-" else Path(source).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read input: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"input is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ValidationError("input must be a JSON object")
    for key in ("age", "sex", "initial_evidence", "evidences"):
        if key not in doc:
            raise ValidationError(f"missing field {key!r}", key)
    if not isinstance(doc["evidences"], list) or not all(isinstance(e, str) for e in doc["evidences"]):
        raise ValidationError("field 'evidences' must be a list of strings", "evidences")
    if not isinstance(doc["age"], int) or isinstance(doc["age"], bool):
        raise ValidationError("field 'age' must be an integer", "age")
    info = PatientInfo(doc["age"], str(doc["sex"]), str(doc["initial_evidence"]), tuple(doc["evidences"]))
    info.validate()
    return info


def cmd_predict(args) -> int:
    info = _read_case(args.input)
    predictor = Predictor(load_checkpoint(_existing(Path(args.checkpoint))))
    print(json.dumps(predictor.diagnose(info).to_dict(include_logits=args.logits)))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--d-model", dest="d_model", type=int)
    g.add_argument("--n-heads", dest="n_heads", type=int)
    g.add_argument("--n-enc-layers", dest="n_enc_layers", type=int)
    g.add_argument("--n-dec-layers", dest="n_dec_layers", type=int)
    g.add_argument("--ffn-mult", dest="ffn_mult", type=int)
    g.add_argument("--max-enc-len", dest="max_enc_len", type=int)
    g.add_argument("--max-dec-len", dest="max_dec_len", type=int)
    g.add_argument("--dropout-rate", dest="dropout_rate", type=float)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with [model], [train], [paths] sections")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="ddxt", description="Generative differential diagnosis transformer")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="write a seeded synthetic DDXPlus-schema corpus")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--pathologies", type=int, default=10)
    p.add_argument("--evidences", type=int)
    p.add_argument("--per-pathology", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("build-vocab", parents=[common], help="build encoder/decoder vocabularies")
    p.add_argument("--train")
    p.add_argument("--vocab-dir", "--out", dest="vocab_dir")
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("preprocess", parents=[common], help="tokenize a CSV into an .npz cache")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab-dir", dest="vocab_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--max-enc-len", dest="max_enc_len", type=int)
    p.add_argument("--max-dec-len", dest="max_dec_len", type=int)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", parents=[common], help="train with teacher forcing")
    p.add_argument("--train")
    p.add_argument("--val")
    p.add_argument("--vocab-dir", dest="vocab_dir")
    p.add_argument("--checkpoint-dir", "--out", dest="checkpoint_dir")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--resume", action="store_true", help="continue from <checkpoint-dir>/last.ckpt")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="decode a split and write metric reports")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", "--data", dest="test")
    p.add_argument("--vocab-dir", dest="vocab_dir")
    p.add_argument("--report-dir", "--out", dest="report_dir")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--teacher-forced", action="store_true", help="feed gold decoder inputs instead of decoding")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common], help="diagnose one JSON case")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", default="-", help="JSON file, or - for standard input")
    p.add_argument("--logits", action="store_true", help="include classifier logits")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DDxTError as exc:
        print(f"ddxt {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (TypeError, ValueError) as exc:
        print(f"ddxt {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
