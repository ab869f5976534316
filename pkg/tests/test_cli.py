"""End-to-end command tests driving entry() in-process: exit codes, file
outputs, idempotence, and the flag/config precedence rules."""
import json

import pytest

from cssda.cli import entry
from cssda.data import LabelVocab, load_embeddings, load_labels
from cssda.training import load_checkpoint

DIM = 16


def synth_pair(tmp_path, per_class=30, test_per_class=20, seed=7, classes=3):
    paths = {name: tmp_path / name for name in
             ("train.emb", "train.csv", "test.emb", "test.csv")}
    code = entry(["synth", "--classes", str(classes), "--dim", str(DIM),
                  "--per-class", str(per_class),
                  "--test-per-class", str(test_per_class),
                  "--separation", "8", "--seed", str(seed),
                  "--out", str(paths["train.emb"]),
                  "--labels-out", str(paths["train.csv"]),
                  "--test-out", str(paths["test.emb"]),
                  "--test-labels-out", str(paths["test.csv"])])
    assert code == 0
    return paths


def write_config(tmp_path, **fields):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(fields))
    return path


def train_args(paths, out, config=None, fraction="0.5"):
    argv = ["train", "--embeddings", str(paths["train.emb"]),
            "--labels", str(paths["train.csv"]),
            "--labeled-fraction", fraction, "--out", str(out)]
    if config is not None:
        argv += ["--config", str(config)]
    return argv


# --- synth ---------------------------------------------------------------


def test_synth_defaults_round_trip(tmp_path):
    out, labels_out = tmp_path / "e.emb", tmp_path / "l.csv"
    assert entry(["synth", "--out", str(out),
                  "--labels-out", str(labels_out)]) == 0
    vectors = load_embeddings(out)
    assert len(vectors) == 600 and vectors[0].dim == 64
    mapping = load_labels(labels_out, LabelVocab(("class0", "class1", "class2")))
    assert len(mapping) == 600
    assert sorted(set(mapping.values())) == [0, 1, 2]


def test_synth_same_seed_identical_bytes(tmp_path):
    blobs = []
    for run in range(2):
        out = tmp_path / f"e{run}.emb"
        labels_out = tmp_path / f"l{run}.csv"
        assert entry(["synth", "--per-class", "20", "--dim", "8",
                      "--out", str(out), "--labels-out", str(labels_out)]) == 0
        blobs.append((out.read_bytes(), labels_out.read_bytes()))
    assert blobs[0] == blobs[1]


def test_synth_usage_errors(tmp_path):
    out = str(tmp_path / "e.emb")
    labels_out = str(tmp_path / "l.csv")
    assert entry(["synth", "--classes", "1", "--out", out,
                  "--labels-out", labels_out]) == 1
    # dim below class count cannot give orthogonal cluster means
    assert entry(["synth", "--classes", "5", "--dim", "3", "--out", out,
                  "--labels-out", labels_out]) == 1
    # paired test flags must come as a set
    assert entry(["synth", "--out", out, "--labels-out", labels_out,
                  "--test-per-class", "10"]) == 1


# --- train ---------------------------------------------------------------


def test_train_writes_checkpoint_and_epoch_lines(tmp_path, capsys):
    paths = synth_pair(tmp_path)
    config = write_config(tmp_path, epochs=3)
    ckpt = tmp_path / "model.ckpt"
    assert entry(train_args(paths, ckpt, config)) == 0
    assert ckpt.exists()
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3
    for i, line in enumerate(lines):
        row = json.loads(line)
        assert row["epoch"] == i
        assert set(row["losses"]) == {
            "d_supervised", "d_unsupervised", "d_total",
            "g_feature_match", "g_unsupervised", "g_total"}
    models = load_checkpoint(ckpt)
    assert (models.dim, models.k) == (DIM, 3)


def test_train_missing_embeddings_is_data_error(tmp_path):
    paths = synth_pair(tmp_path)
    code = entry(["train", "--embeddings", str(tmp_path / "absent.emb"),
                  "--labels", str(paths["train.csv"]),
                  "--out", str(tmp_path / "m.ckpt")])
    assert code == 2


def test_train_zero_fraction_is_usage_error(tmp_path):
    paths = synth_pair(tmp_path)
    assert entry(train_args(paths, tmp_path / "m.ckpt", fraction="0")) == 1


def test_train_determinism(tmp_path):
    paths = synth_pair(tmp_path)
    config = write_config(tmp_path, epochs=2, seed=5)
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    assert entry(train_args(paths, a, config)) == 0
    assert entry(train_args(paths, b, config)) == 0
    assert a.read_bytes() == b.read_bytes()


def test_train_config_precedence(tmp_path, capsys):
    # the file asks for 4 epochs; nothing overrides it, so 4 lines appear;
    # the fraction flag beats the file's value
    paths = synth_pair(tmp_path)
    config = write_config(tmp_path, epochs=4, labeled_fraction=0.9)
    assert entry(train_args(paths, tmp_path / "m.ckpt", config,
                            fraction="0.5")) == 0
    captured = capsys.readouterr()
    assert len(captured.out.strip().splitlines()) == 4
    assert "(45 labeled)" in captured.err  # 0.5 of 90, not 0.9


def test_train_bad_config_file(tmp_path):
    paths = synth_pair(tmp_path)
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert entry(train_args(paths, tmp_path / "m.ckpt", bad)) == 2
    unknown = write_config(tmp_path, learning_rate=0.1)
    assert entry(train_args(paths, tmp_path / "m.ckpt", unknown)) == 2


def test_train_rejects_resplitting_partial_labels(tmp_path):
    paths = synth_pair(tmp_path)
    text = paths["train.csv"].read_text().splitlines()
    text[1] = text[1].rsplit(",", 1)[0] + ","  # blank one label
    partial = tmp_path / "partial.csv"
    partial.write_text("\n".join(text) + "\n")
    code = entry(["train", "--embeddings", str(paths["train.emb"]),
                  "--labels", str(partial), "--labeled-fraction", "0.5",
                  "--out", str(tmp_path / "m.ckpt")])
    assert code == 2
    # without the flag the file's own labeled/unlabeled split is used as-is
    code = entry(["train", "--embeddings", str(paths["train.emb"]),
                  "--labels", str(partial),
                  "--config", str(write_config(tmp_path, epochs=1)),
                  "--out", str(tmp_path / "m.ckpt")])
    assert code == 0


# --- eval ----------------------------------------------------------------


def trained_model(tmp_path, paths):
    ckpt = tmp_path / "model.ckpt"
    config = write_config(tmp_path, epochs=4)
    assert entry(train_args(paths, ckpt, config)) == 0
    return ckpt


def test_eval_report_json(tmp_path, capsys):
    paths = synth_pair(tmp_path)
    ckpt = trained_model(tmp_path, paths)
    capsys.readouterr()  # drop the training epoch lines
    report = tmp_path / "report.json"
    code = entry(["eval", "--model", str(ckpt),
                  "--embeddings", str(paths["test.emb"]),
                  "--labels", str(paths["test.csv"]),
                  "--report", str(report)])
    assert code == 0
    row = json.loads(report.read_text())
    for key in ("balanced_accuracy", "macro_precision", "macro_recall",
                "macro_f_score", "per_class", "auc", "confusion"):
        assert key in row
    out = capsys.readouterr().out
    assert out.startswith("balanced_accuracy ")
    assert "macro_f_score" in out


def test_eval_csv_row_count(tmp_path):
    paths = synth_pair(tmp_path)
    ckpt = trained_model(tmp_path, paths)
    report = tmp_path / "report.csv"
    code = entry(["eval", "--model", str(ckpt),
                  "--embeddings", str(paths["test.emb"]),
                  "--labels", str(paths["test.csv"]),
                  "--report", str(report), "--format", "csv",
                  "--infer", "per-label"])
    assert code == 0
    lines = report.read_text().strip().splitlines()
    assert len(lines) == 1 + 3 + 1  # header, one row per class, macro row


def test_eval_idempotent(tmp_path):
    paths = synth_pair(tmp_path)
    ckpt = trained_model(tmp_path, paths)
    blobs = []
    for run in range(2):
        report = tmp_path / f"r{run}.json"
        assert entry(["eval", "--model", str(ckpt),
                      "--embeddings", str(paths["test.emb"]),
                      "--labels", str(paths["test.csv"]),
                      "--report", str(report)]) == 0
        blobs.append(report.read_bytes())
    assert blobs[0] == blobs[1]


def test_eval_vocab_size_mismatch(tmp_path):
    paths = synth_pair(tmp_path)
    ckpt = trained_model(tmp_path, paths)
    two = tmp_path / "two"
    two.mkdir()
    other = synth_pair(two, test_per_class=10, classes=2)
    code = entry(["eval", "--model", str(ckpt),
                  "--embeddings", str(other["test.emb"]),
                  "--labels", str(other["test.csv"]),
                  "--report", str(tmp_path / "r.json")])
    assert code == 2


def test_eval_requires_full_labels(tmp_path):
    paths = synth_pair(tmp_path)
    ckpt = trained_model(tmp_path, paths)
    text = paths["test.csv"].read_text().splitlines()
    text[2] = text[2].rsplit(",", 1)[0] + ","
    holey = tmp_path / "holey.csv"
    holey.write_text("\n".join(text) + "\n")
    code = entry(["eval", "--model", str(ckpt),
                  "--embeddings", str(paths["test.emb"]),
                  "--labels", str(holey),
                  "--report", str(tmp_path / "r.json")])
    assert code == 2


# --- ablate / sweep ---------------------------------------------------------


def comparison_args(paths, report, config):
    return ["--embeddings", str(paths["train.emb"]),
            "--labels", str(paths["train.csv"]),
            "--test-embeddings", str(paths["test.emb"]),
            "--test-labels", str(paths["test.csv"]),
            "--config", str(config), "--report", str(report)]


def test_ablate_two_row_comparison(tmp_path):
    paths = synth_pair(tmp_path)
    config = write_config(tmp_path, epochs=2)
    report = tmp_path / "ablate.csv"
    code = entry(["ablate", "--mode", "no-augment", "--seeds", "0,1",
                  "--labeled-fraction", "0.5"]
                 + comparison_args(paths, report, config))
    assert code == 0
    lines = report.read_text().strip().splitlines()
    assert lines[0] == ("mode,labeled_fraction,balanced_accuracy,"
                        "macro_f_score,numeric_error_count")
    assert len(lines) == 3
    assert lines[1].startswith("full,")
    assert lines[2].startswith("no-augment,")


def test_ablate_naive_mode_reports_error_count(tmp_path):
    paths = synth_pair(tmp_path)
    config = write_config(tmp_path, epochs=1)
    report = tmp_path / "ablate.csv"
    code = entry(["ablate", "--mode", "naive-loss"]
                 + comparison_args(paths, report, config))
    assert code == 0
    rows = report.read_text().strip().splitlines()
    naive = [r for r in rows if r.startswith("naive-loss,")]
    assert len(naive) == 1
    assert naive[0].split(",")[-1] == "0"  # moderate data: no overflow


def test_sweep_row_per_fraction(tmp_path):
    paths = synth_pair(tmp_path)
    config = write_config(tmp_path, epochs=2)
    report = tmp_path / "sweep.csv"
    code = entry(["sweep", "--fractions", "0.25,0.5,0.75"]
                 + comparison_args(paths, report, config))
    assert code == 0
    lines = report.read_text().strip().splitlines()
    assert len(lines) == 4
    assert [line.split(",")[0] for line in lines[1:]] == ["0.25", "0.5", "0.75"]


def test_sweep_rejects_bad_fraction(tmp_path):
    paths = synth_pair(tmp_path)
    config = write_config(tmp_path, epochs=1)
    code = entry(["sweep", "--fractions", "0.5,2.0"]
                 + comparison_args(paths, tmp_path / "s.csv", config))
    assert code == 1


# --- top level ----------------------------------------------------------------


def test_no_command_is_usage_error():
    assert entry([]) == 1


def test_unknown_flag_is_usage_error(tmp_path):
    assert entry(["synth", "--out", str(tmp_path / "e.emb"),
                  "--labels-out", str(tmp_path / "l.csv"),
                  "--fancy"]) == 1
