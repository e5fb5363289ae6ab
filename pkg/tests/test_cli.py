import io
import json

import pytest

from ddxt.cli import build_parser, main, resolve_config

TINY = ["--d-model", "16", "--n-heads", "2", "--n-enc-layers", "1", "--n-dec-layers", "1"]


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("DDXT_SEED", raising=False)
    return tmp_path


@pytest.fixture
def prepared(workdir):
    assert main(["gen-data", "--n", "120", "--pathologies", "5", "--seed", "3", "--out", "data"]) == 0
    assert main(["build-vocab", "--train", "data/train.csv", "--out", "vocab"]) == 0
    return workdir


@pytest.fixture
def trained(prepared):
    args = ["train", "--train", "data/train.csv", "--val", "data/validate.csv", "--vocab-dir", "vocab",
            "--out", "ckpt", "--epochs", "2", "--batch-size", "32", *TINY]
    assert main(args) == 0
    return prepared


def test_gen_data_split_sizes_and_reproducibility(workdir):
    assert main(["gen-data", "--n", "1000", "--pathologies", "10", "--seed", "7", "--out", "a"]) == 0
    assert main(["gen-data", "--n", "1000", "--pathologies", "10", "--seed", "7", "--out", "b"]) == 0
    for name, rows in (("train", 800), ("validate", 100), ("test", 100)):
        text = (workdir / "a" / f"{name}.csv").read_bytes()
        assert text.count(b"\n") == rows + 1
        assert text == (workdir / "b" / f"{name}.csv").read_bytes()
    assert json.loads((workdir / "a" / "manifest.json").read_text())["seed"] == 7
    assert (workdir / "a" / "split_manifest.txt").read_bytes() == (workdir / "b" / "split_manifest.txt").read_bytes()


def test_gen_data_rejects_single_pathology(workdir, capsys):
    assert main(["gen-data", "--pathologies", "1", "--out", "x"]) == 1
    assert "pathologies" in capsys.readouterr().err


def test_seed_from_environment(workdir, monkeypatch):
    monkeypatch.setenv("DDXT_SEED", "11")
    main(["gen-data", "--n", "20", "--out", "env"])
    main(["gen-data", "--n", "20", "--seed", "11", "--out", "flag"])
    assert (workdir / "env" / "train.csv").read_bytes() == (workdir / "flag" / "train.csv").read_bytes()


def test_usage_error_exits_1(workdir):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code == 1


def test_default_training_config():
    args = build_parser().parse_args(["train"])
    cfg = resolve_config(args)
    assert cfg.model["d_model"] == 128 and cfg.model["n_heads"] == 4
    assert cfg.model["n_enc_layers"] == cfg.model["n_dec_layers"] == 6 and cfg.model["dropout_rate"] == 0.1
    assert cfg.train["lr0"] == 1e-3 and cfg.train["gamma"] == 0.95 and cfg.train["epochs"] == 20


def test_flags_override_config_file(workdir):
    (workdir / "c.toml").write_text("seed = 4\n[model]\nd_model = 64\nn_heads = 8\n[train]\nepochs = 3\n"
                                    "[paths]\ntrain = 'x.csv'\n")
    cfg = resolve_config(build_parser().parse_args(["train", "--config", "c.toml", "--epochs", "9"]))
    assert cfg.train["epochs"] == 9 and cfg.model["d_model"] == 64 and cfg.seed == 4
    assert cfg.paths["train"] == "x.csv"


@pytest.mark.parametrize("text", ["[model\n", "[model]\nwidth = 3\n"])
def test_bad_config_file_exits_1(workdir, text):
    (workdir / "c.toml").write_text(text)
    assert main(["train", "--config", "c.toml"]) == 1


def test_missing_input_file_exits_2(workdir):
    assert main(["build-vocab", "--train", "nope.csv", "--out", "v"]) == 2


def test_missing_path_setting_exits_1(workdir):
    assert main(["build-vocab", "--out", "v"]) == 1


def test_train_requires_vocab_files(prepared):
    assert main(["train", "--train", "data/train.csv", "--vocab-dir", "missing", "--out", "c"]) == 2


def test_train_outputs(trained, capsys):
    ckpt = trained / "ckpt"
    assert {p.name for p in ckpt.iterdir()} >= {"last.ckpt", "best.ckpt", "train_log.jsonl", "resolved_config.json"}
    echo = json.loads((ckpt / "resolved_config.json").read_text())
    assert echo["model"]["d_model"] == 16 and echo["train"]["epochs"] == 2
    assert len((ckpt / "train_log.jsonl").read_text().splitlines()) == 2


def test_resume_continues_epochs(trained):
    assert main(["train", "--train", "data/train.csv", "--vocab-dir", "vocab", "--out", "ckpt", "--epochs", "3",
                 "--batch-size", "32", "--resume"]) == 0
    log = [json.loads(l) for l in (trained / "ckpt" / "train_log.jsonl").read_text().splitlines()]
    assert [l["epoch"] for l in log] == [0, 1, 2]


def test_preprocess_cache_feeds_training(prepared):
    assert main(["preprocess", "--data", "data/train.csv", "--vocab-dir", "vocab", "--out", "train.npz"]) == 0
    assert main(["train", "--train", "train.npz", "--vocab-dir", "vocab", "--out", "c2", "--epochs", "1",
                 *TINY]) == 0


def test_eval_writes_reports(trained, capsys):
    assert main(["eval", "--checkpoint", "ckpt/last.ckpt", "--data", "data/test.csv", "--out", "rep"]) == 0
    out = capsys.readouterr().out
    assert "GTPA@1" in out and "free-running" in out
    report = json.loads((trained / "rep" / "report.json").read_text())
    assert set(report["summary"]) == {"GTPA@1", "DDP", "DDR", "DDF1", "GM"}
    assert (trained / "rep" / "per_class.csv").exists() and (trained / "rep" / "resolved_config.json").exists()
    assert main(["eval", "--checkpoint", "ckpt/last.ckpt", "--data", "data/test.csv", "--out", "rep2",
                 "--teacher-forced"]) == 0
    assert json.loads((trained / "rep2" / "report.json").read_text())["metadata"]["decoding"] == "teacher-forced"


def test_eval_vocab_mismatch_is_explicit(trained, capsys):
    (trained / "other").mkdir()
    (trained / "other" / "enc_vocab.txt").write_text((trained / "vocab" / "enc_vocab.txt").read_text() + "EXTRA\n")
    (trained / "other" / "dec_vocab.txt").write_text((trained / "vocab" / "dec_vocab.txt").read_text())
    assert main(["eval", "--checkpoint", "ckpt/last.ckpt", "--data", "data/test.csv", "--out", "r",
                 "--vocab-dir", "other"]) == 2
    assert "vocabular" in capsys.readouterr().err


def test_predict(trained, capsys):
    case = {"age": 40, "sex": "F", "initial_evidence": "E_000", "evidences": ["E_000", "E_001"]}
    (trained / "case.json").write_text(json.dumps(case))
    assert main(["predict", "--checkpoint", "ckpt/last.ckpt", "--input", "case.json", "--logits"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert {"ddx", "predicted_pathology", "class_logits"} == set(out)


def test_predict_missing_field(trained, capsys, monkeypatch):
    monkeypatch.setattr("sys.stdin", io.StringIO(json.dumps({"age": 4, "sex": "M", "initial_evidence": "E_000"})))
    assert main(["predict", "--checkpoint", "ckpt/last.ckpt", "--input", "-"]) != 0
    assert "evidences" in capsys.readouterr().err
