import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from bilinear_decomp import container
from bilinear_decomp.cli import main
from bilinear_decomp.decompose import evaluate_tree
from bilinear_decomp.model import BilinearLayer, forward
from bilinear_decomp.ngram import TokenWeights, residual_scores, skip_trigram_matrix
from bilinear_decomp.render import read_ppm
from bilinear_decomp.train import accuracy


def run(*argv):
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:
        return exc.code


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def synthetic_model(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "syn.blnr"
    code = run("train", "--dataset", "synthetic", "--synthetic-n", 200, "--synthetic-d", 8,
               "--d-model", 6, "--epochs", 4, "--seed", 3, "--out", out)
    assert code == 0
    return out


def test_train_writes_model_and_progress(tmp_path, capsys):
    out = tmp_path / "m.blnr"
    assert run("train", "--dataset", "synthetic", "--d-model", 4, "--epochs", 2, "--out", out) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert [l.split()[0] for l in lines] == ["epoch=1", "epoch=2"]
    model, config = container.load_model(out)
    assert config["weight_decay"] == 0.5 and config["latent_noise"] == 0.33 and config["epochs"] == 2
    assert model.meta["dataset"]["name"] == "synthetic" and model.meta["image_shape"] == [1, 8]


def test_train_deterministic(tmp_path):
    args = ["train", "--dataset", "synthetic", "--d-model", 4, "--epochs", 2, "--seed", 5]
    run(*args, "--out", tmp_path / "a.blnr")
    run(*args, "--out", tmp_path / "b.blnr")
    assert (tmp_path / "a.blnr").read_bytes() == (tmp_path / "b.blnr").read_bytes()


def test_eval(synthetic_model, capsys):
    assert run("eval", "--model", synthetic_model) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("val_acc=") and 0.0 <= float(line.split("=")[1]) <= 1.0


def test_truncate_sweep_full_equals_eval(synthetic_model, tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    assert run("truncate-sweep", "--model", synthetic_model, "--ks", "0-2,6", "--out", out) == 0
    rows = read_csv(out)
    assert rows[0] == ["k", "accuracy"]
    assert [r[0] for r in rows[1:]] == ["0", "1", "2", "6"]
    run("eval", "--model", synthetic_model)
    val = float(capsys.readouterr().out.strip().split("=")[1])
    assert float(rows[-1][1]) == pytest.approx(val, abs=5e-7)


def test_decompose_then_render(synthetic_model, tmp_path):
    spec_path, ppm = tmp_path / "s.blnr", tmp_path / "f.ppm"
    assert run("decompose", "--model", synthetic_model, "--class", 2, "--out", spec_path) == 0
    spectrum, shape = container.load_spectrum(spec_path)
    assert shape == (1, 8) and spectrum.output_index == 2 and len(spectrum) == 6
    assert run("render", "--spectrum", spec_path, "--rank", 0, "--sign", "pos", "--out", ppm) == 0
    assert ppm.read_bytes().startswith(b"P6\n8 1\n255\n")
    assert read_ppm(ppm).shape == (1, 8, 3)
    assert run("render", "--spectrum", spec_path, "--sign", "neg", "--width", 4, "--height", 2,
               "--out", ppm) == 0
    assert read_ppm(ppm).shape == (2, 4, 3)


def test_decompile_json(synthetic_model, tmp_path):
    out = tmp_path / "tree.json"
    assert run("decompile", "--model", synthetic_model, "--branch", 6, "--out", out) == 0
    doc = json.loads(out.read_text())
    assert [t["class"] for t in doc["trees"]] == [0, 1, 2, 3]
    trees = container.load_trees(out)
    model, _ = container.load_model(synthetic_model)
    x = np.random.default_rng(0).random((5, 8))
    for tree in trees:
        np.testing.assert_allclose(evaluate_tree(tree, x), forward(model, x)[:, tree.output_index], rtol=1e-9)


def test_similarity_self(synthetic_model, tmp_path, capsys):
    out = tmp_path / "sim.csv"
    assert run("similarity", "--model-a", synthetic_model, "--model-b", synthetic_model,
               "--top", 2, "--out", out) == 0
    rows = read_csv(out)
    assert rows[0] == ["class", "rank", "similarity", "match_index"]
    assert all(float(r[2]) == pytest.approx(1.0) for r in rows[1:])
    keys = [(int(r[0]), int(r[1])) for r in rows[1:]]
    assert keys == sorted(keys)
    assert capsys.readouterr().out.strip() == "mean_similarity=1.000000"


@pytest.fixture
def token_files(tmp_path):
    rng = np.random.default_rng(0)
    layer = BilinearLayer(rng.standard_normal((3, 3)), rng.standard_normal((3, 3)))
    tw = TokenWeights(rng.standard_normal((3, 5)), rng.standard_normal((5, 3)), layer)
    ov = rng.standard_normal((3, 3))
    container.save_token_weights(tmp_path / "tw.blnr", tw)
    container.save_matrix(tmp_path / "ov.blnr", "ov", ov)
    return tw, ov, tmp_path


def test_ngram_residual(token_files):
    tw, _, d = token_files
    assert run("ngram", "--weights", d / "tw.blnr", "--mode", "residual", "--top", 4, "--out", d / "r.csv") == 0
    rows = read_csv(d / "r.csv")
    assert rows[0] == ["rank", "context", "output", "score"] and len(rows) == 5
    scores = residual_scores(tw)
    for rank, ctx, out, score in rows[1:]:
        assert float(score) == scores[int(out), int(ctx)]
    assert float(rows[1][3]) == scores.max()


def test_ngram_skip_trigram(token_files):
    tw, ov, d = token_files
    assert run("ngram", "--weights", d / "tw.blnr", "--mode", "skip-trigram", "--ov", d / "ov.blnr",
               "--class", 1, "--top", 25, "--out", d / "s.csv") == 0
    rows = read_csv(d / "s.csv")
    assert rows[0] == ["rank", "virtual", "direct", "score"] and len(rows) == 26
    expected = skip_trigram_matrix(tw, ov, 1)
    for _, a, b, score in rows[1:]:
        assert float(score) == pytest.approx(expected[int(a), int(b)], abs=1e-12)


def test_ngram_mode_errors(token_files, capsys):
    _, _, d = token_files
    assert run("ngram", "--weights", d / "tw.blnr", "--mode", "skip-trigram", "--class", 0,
               "--out", d / "x.csv") == 2
    assert run("ngram", "--weights", d / "tw.blnr", "--mode", "residual", "--ov", d / "ov.blnr",
               "--out", d / "x.csv") == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert all(line.startswith("error: ") for line in err) and len(err) == 2


def test_usage_errors(tmp_path):
    assert run("train", "--bogus") == 2
    assert run("frobnicate") == 2
    assert run("train", "--dataset", "mnist", "--out", tmp_path / "m.blnr") == 2
    assert run("truncate-sweep", "--model", tmp_path / "m.blnr") == 2


def test_runtime_errors(tmp_path, synthetic_model, capsys):
    assert run("eval", "--model", tmp_path / "missing.blnr") == 1
    (tmp_path / "bad.blnr").write_bytes(b"NOPE" + bytes(20))
    assert run("eval", "--model", tmp_path / "bad.blnr") == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 2 and "BLNR" in err[1]
    assert run("decompose", "--model", synthetic_model, "--class", 9, "--out", tmp_path / "s.blnr") == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "bilinear_decomp", "eval", "--model", tmp_path / "nope"],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and proc.stderr.startswith("error: ")


@pytest.mark.mnist
def test_mnist_recipe(mnist_runs, tmp_path, capsys):
    from conftest import mnist_dir
    paths = []
    for seed in (0, 1):
        path = tmp_path / f"seed{seed}.blnr"
        container.save_model(path, mnist_runs.model(seed))
        paths.append(path)
    out = tmp_path / "sim.csv"
    assert run("similarity", "--model-a", paths[0], "--model-b", paths[1], "--top", 5, "--out", out) == 0
    rows = read_csv(out)
    assert len(rows) == 1 + 10 * 5
    sweep = tmp_path / "sweep.csv"
    assert run("truncate-sweep", "--model", paths[0], "--data-dir", mnist_dir(), "--ks", "10,300",
               "--out", sweep) == 0
    full = accuracy(mnist_runs.model(0), mnist_runs.test_set)
    assert float(read_csv(sweep)[-1][1]) == full
