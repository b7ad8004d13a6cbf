import json
import shutil
import subprocess
import sys

import pytest

from ser_engine.cli import main
from ser_engine.config import load_config
from ser_engine.errors import ConfigError
from ser_engine.features import read_features
from ser_engine.nn import load_checkpoint

SMALL_CONFIG = """
seed: 5
model:
  conv_filters: [4, 8, 8]
  dense_units: 16
  epochs: 3
metrics:
  bootstrap: 100
"""


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    return json.loads(out)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthetic corpus -> manifest -> features, shared by the command tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "engine.yaml"
    cfg.write_text(SMALL_CONFIG)
    assert main(["synth", "--out", str(root / "data"), "--per-class", "6", "--config", str(cfg)]) == 0
    assert main(["prepare", "--data", str(root / "data"), "--out", str(root / "m.csv"), "--config", str(cfg)]) == 0
    assert main(["featurize", "--manifest", str(root / "m.csv"), "--out", str(root / "f.bin"),
                 "--jobs", "1", "--config", str(cfg)]) == 0
    return root, cfg


def test_prepare_output(workspace, capsys):
    root, cfg = workspace
    summary = run_json(capsys, "prepare", "--data", root / "data", "--out", root / "m2.csv", "--config", cfg)
    assert summary["rows"] == 48 and sum(summary["splits"].values()) == 48
    assert (root / "m2.csv").read_bytes() == (root / "m.csv").read_bytes()


def test_featurize_output(workspace):
    root, _ = workspace
    fs = read_features(root / "f.bin")
    assert fs.values.shape == (48, 2772)
    assert fs.info["features"]["audio"]["sample_rate"] == 22050


def test_featurize_augment_expands_train_rows_only(workspace, capsys, tmp_path):
    root, cfg = workspace
    rows = (root / "m.csv").read_text().splitlines()
    small = tmp_path / "small.csv"
    train_rows = [r for r in rows[1:] if ",train," in r or r.endswith(",train")][:2]
    other_rows = [r for r in rows[1:] if r not in train_rows and ",train" not in r][:1]
    small.write_text("\n".join([rows[0]] + train_rows + other_rows) + "\n")
    summary = run_json(capsys, "featurize", "--manifest", small, "--out", tmp_path / "a.bin",
                       "--augment", "--jobs", "1", "--config", cfg)
    assert summary["rows"] == 2 * 5 + len(other_rows)
    fs = read_features(tmp_path / "a.bin")
    assert fs.sources[1].endswith("#noise")


def test_train_is_reproducible_and_evaluates(workspace, capsys, tmp_path):
    root, cfg = workspace
    for name in ("a", "b"):
        run_json(capsys, "train", "--features", root / "f.bin", "--out", tmp_path / f"{name}.serm", "--config", cfg)
    assert (tmp_path / "a.serm.history.json").read_bytes() == (tmp_path / "b.serm.history.json").read_bytes()
    assert (tmp_path / "a.serm").read_bytes() == (tmp_path / "b.serm").read_bytes()
    history = json.loads((tmp_path / "a.serm.history.json").read_text())
    assert len(history["train_loss"]) == 3

    summary = run_json(capsys, "evaluate", "--features", root / "f.bin", "--checkpoint", tmp_path / "a.serm",
                       "--out", tmp_path / "rep.json")
    report = json.loads((tmp_path / "rep.json").read_text())
    assert summary["macro_f1"] == report["macro_avg"]["f1"]
    assert len(report["classes"]) == 8 and report["split"] == "test"

    wav = sorted((root / "data").rglob("*.wav"))[0]
    pred = run_json(capsys, "predict", "--wav", wav, "--checkpoint", tmp_path / "a.serm")
    assert pred["confidence"] == max(pred["probabilities"].values())
    assert pred["emotion"] in pred["probabilities"]

    other = run_json(capsys, "train", "--features", root / "f.bin", "--out", tmp_path / "c.serm",
                     "--config", cfg, "--seed", "6", "--epochs", "2")
    assert other["epochs"] == 2
    assert (tmp_path / "c.serm").read_bytes() != (tmp_path / "a.serm").read_bytes()
    model, _, _, extra = load_checkpoint(tmp_path / "c.serm")
    assert model.config.seed == 6 and extra["best_epoch"] == other["best_epoch"]


def test_spectrogram(workspace, capsys, tmp_path):
    root, _ = workspace
    wav = sorted((root / "data").rglob("*.wav"))[0]
    summary = run_json(capsys, "spectrogram", "--wav", wav, "--out", tmp_path / "s.npy")
    assert summary["bins"] == 1025 and summary["frames"] > 100


def test_bleu_command(capsys, tmp_path):
    tsv = tmp_path / "t.tsv"
    tsv.write_text("hello\tمرحبا بكم\tمرحبا بكم\nhow are you\tكيف حالك اليوم\tكيف حالك اليوم\n", encoding="utf-8")
    summary = run_json(capsys, "bleu", "--tsv", tsv, "--out", tmp_path / "b.json", "--human-eval", "4.5")
    assert summary["bleu"] == 100.0
    block = json.loads((tmp_path / "b.json").read_text())
    assert block["ci"] == [100.0, 100.0] and block["human_eval_mean"] == 4.5 and block["sentences"] == 2


def test_textprep_and_corpus_stats(capsys, tmp_path):
    lines = [f"Sentence {i}, number {i}!\tجملة رقم {i} hello" for i in range(20)]
    src = tmp_path / "pairs.tsv"
    src.write_text("\n".join(lines) + "\n", encoding="utf-8")
    summary = run_json(capsys, "textprep", "--in", src, "--out", tmp_path / "en.tsv", "--lang", "en", "--split")
    assert summary == {"rows": 20, "train": 16, "val": 2, "test": 2}
    first = (tmp_path / "en.tsv").read_text(encoding="utf-8").splitlines()[0].split("\t")
    assert first[0] == "sentence number"
    run_json(capsys, "textprep", "--in", tmp_path / "en.tsv", "--out", tmp_path / "both.tsv", "--lang", "ar")
    assert (tmp_path / "both.tsv").read_text(encoding="utf-8").splitlines()[0] == "sentence number\tجملة رقم"
    assert (tmp_path / "en.train.tsv").exists()

    stats = run_json(capsys, "corpus-stats", "--in", tmp_path / "both.tsv", "--k", "2")
    assert stats["en"]["average_length"] == 2.0
    assert stats["ar"]["top"] == [{"word": "جملة", "count": 20}, {"word": "رقم", "count": 20}]


def test_usage_and_runtime_errors(capsys, tmp_path):
    code, _, err = run(capsys, "train")
    assert code == 2 and json.loads(err)["error"] == "usage"
    code, _, err = run(capsys, "predict", "--wav", tmp_path / "none.wav", "--checkpoint", tmp_path / "none.serm")
    assert code == 1 and "message" in json.loads(err.strip().splitlines()[-1])


# -- pipeline command ---------------------------------------------------------------

@pytest.fixture(scope="module")
def stage_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("stages")
    (root / "asr.json").write_text(json.dumps({"*": "kids are talking by the door"}))
    (root / "mt.json").write_text(json.dumps({"kids are talking by the door": "الأطفال يتحدثون عند الباب"}),
                                  encoding="utf-8")
    (root / "tts.json").write_text(json.dumps({"*": "out/tts.wav"}))
    (root / "asr_fail.json").write_text(json.dumps({"*": {"status": "error", "error_message": "no speech"}}))
    good = {k: {"transport": "mock", "fixture": f"{k}.json"} for k in ("asr", "mt", "tts")}
    (root / "good.json").write_text(json.dumps(good))
    (root / "bad.json").write_text(json.dumps({**good, "asr": {"transport": "mock", "fixture": "asr_fail.json"}}))
    return root


def test_pipeline_command(capsys, tmp_path, stage_files):
    from helpers import memorization_checkpoint

    ckpt, paths, labels, _ = memorization_checkpoint(tmp_path)
    code, out, err = run(capsys, "pipeline", "--wav", paths[12], "--checkpoint", ckpt,
                         "--stages", stage_files / "good.json", "--out", tmp_path / "s.json")
    assert code == 0, err
    record = json.loads(out)
    assert record["emotion"] == labels[12]
    assert record["translation_ar"] == "الأطفال يتحدثون عند الباب"
    assert json.loads((tmp_path / "s.json").read_text(encoding="utf-8")) == record

    code, out, err = run(capsys, "pipeline", "--wav", paths[12], "--checkpoint", ckpt,
                         "--stages", stage_files / "bad.json", "--out", tmp_path / "p.json")
    assert code == 1 and out == ""
    line = json.loads(err.strip().splitlines()[-1])
    assert line["stage"] == "asr" and line["record"]["emotion"] == labels[12]
    assert "transcript_en" not in json.loads((tmp_path / "p.json").read_text(encoding="utf-8"))


def test_console_script_entry_point():
    exe = shutil.which("ser-engine")
    cmd = [exe] if exe else [sys.executable, "-m", "ser_engine.cli"]
    proc = subprocess.run(cmd + ["--version"], capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0 and proc.stdout.strip()


# -- configuration -----------------------------------------------------------------

def test_config_errors_reported_together(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("model:\n  epochs: -3\n  colour: red\naudio:\n  split: [0.5, 0.5, 0.5]\nbogus: 1\nseed: -1\n")
    with pytest.raises(ConfigError) as info:
        load_config(bad)
    text = "\n".join(info.value.problems)
    for needle in ("epochs", "colour", "audio.split", "bogus", "seed"):
        assert needle in text
    code, _, err = run(capsys, "synth", "--out", tmp_path / "x", "--config", bad)
    assert code == 1 and len(json.loads(err)["problems"]) >= 5


def test_seed_precedence(tmp_path, monkeypatch):
    with_seed = tmp_path / "a.yaml"
    with_seed.write_text("seed: 11\n")
    without = tmp_path / "b.yaml"
    without.write_text("model:\n  epochs: 2\n")
    monkeypatch.setenv("SER_ENGINE_SEED", "7")
    assert load_config(with_seed, seed=3).seed == 3
    assert load_config(with_seed).seed == 11
    assert load_config(without).seed == 7
    cfg = load_config(without)
    assert cfg.model.seed == 7 and cfg.augment.seed == 7
    monkeypatch.delenv("SER_ENGINE_SEED")
    assert load_config(without).seed == 0
