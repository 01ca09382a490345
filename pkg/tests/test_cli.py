import re
import subprocess
import sys

import pytest

from apslda.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_missing_dataset_is_usage_error(capsys):
    code, _, err = run(capsys, "train", "--topics", 3)
    assert code == 1 and "usage:" in err and "--dataset" in err


def test_unknown_flag_exits_one(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code == 1


def test_bad_values_exit_one(capsys, dataset_file):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--dataset", str(dataset_file), "--drop", "2"])
    assert exc.value.code == 1
    code, _, _ = run(capsys, "train", "--dataset", dataset_file, "--split", "1.5")
    assert code == 1


def test_malformed_dataset_exits_one(capsys, tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("0 1:1\n0 oops\n")
    code, _, err = run(capsys, "train", "--dataset", p)
    assert code == 1 and "line 2" in err


def test_train_prints_series(capsys, dataset_file):
    code, out, err = run(capsys, "train", "--dataset", dataset_file, "--topics", 4, "--iterations", 4,
                         "--eval-every", 2)
    assert code == 0
    lines = out.splitlines()
    assert re.fullmatch(r"iter=2 perplexity=[0-9.e+]+", lines[0])
    assert lines[1].startswith("iter=4 ") and lines[2].startswith("final_perplexity=")
    assert err.count("drained_pushes=") == 4


def test_simulated_runs_are_reproducible(capsys, dataset_file):
    argv = ["train", "--dataset", dataset_file, "--topics", 4, "--iterations", 3, "--eval-every", 1,
            "--sim", "--drop", 0.3, "--seed", 7, "--workers", 2, "--shards", 2]
    first = run(capsys, *argv)
    second = run(capsys, *argv)
    assert first[0] == 0 and first[1] == second[1]


def test_transport_failure_exits_two(capsys, dataset_file):
    code, _, err = run(capsys, "train", "--dataset", dataset_file, "--iterations", 1, "--drop", 1.0,
                       "--max-retries", 2)
    assert code == 2 and "transport failure" in err


def test_out_then_eval_reproduces(capsys, dataset_file, tmp_path):
    model = tmp_path / "model.csv"
    code, out, _ = run(capsys, "train", "--dataset", dataset_file, "--topics", 4, "--iterations", 3,
                       "--out", model, "--seed", 2)
    assert code == 0
    final = out.splitlines()[-1].split("=")[1]
    code, out, _ = run(capsys, "eval", "--model", model, "--dataset", dataset_file, "--split", 0.9)
    assert code == 0 and out.strip() == f"perplexity={final}"


def test_uniform_model_evaluates_to_V(capsys, tmp_path):
    model = tmp_path / "u.csv"
    model.write_text("word,topic,count,phi\n")
    data = tmp_path / "t.txt"
    data.write_text("0 1:2 3:1\n0 7:4\n")
    code, out, _ = run(capsys, "eval", "--model", model, "--dataset", data, "--topics", 3,
                       "--vocab-size", 7)
    assert code == 0 and out.strip() == "perplexity=7"


def test_eval_empty_test_set(capsys, tmp_path):
    model = tmp_path / "u.csv"
    model.write_text("word,topic,count,phi\n")
    empty = tmp_path / "e.txt"
    empty.write_text("")
    code, _, err = run(capsys, "eval", "--model", model, "--dataset", empty, "--vocab-size", 3)
    assert code == 1 and "no tokens" in err


def test_topwords_lines_per_refresh(capsys, dataset_file):
    code, out, _ = run(capsys, "topwords", "--dataset", dataset_file, "--topics", 3, "--iterations", 3,
                       "--n", 5, "--interval", 0.02, "--eval-every", 0)
    assert code == 0
    lines = out.splitlines()
    assert len(lines) % 3 == 0 and len(lines) >= 6
    for i, line in enumerate(lines):
        assert line.startswith(f"topic {i % 3}: ")
        assert len(line.split(": ", 1)[1].split()) == 5


def test_topwords_refresh_limit(capsys, dataset_file):
    code, out, _ = run(capsys, "topwords", "--dataset", dataset_file, "--topics", 2, "--iterations", 3,
                       "--n", 2, "--interval", 0.001, "--refreshes", 1, "--eval-every", 0)
    assert code == 0 and len(out.splitlines()) == 4  # one refresh + final view


def test_topwords_n_zero(capsys, dataset_file):
    code, _, err = run(capsys, "topwords", "--dataset", dataset_file, "--n", 0)
    assert code == 1 and "usage:" in err


def test_topwords_unreachable_run(capsys):
    code, _, err = run(capsys, "topwords", "--peers", "127.0.0.1:9", "--listen", "127.0.0.1:0",
                       "--vocab-size", 10, "--topics", 2)
    assert code == 2 and "unreachable" in err


def test_vocab_labels_in_output(capsys, tmp_path):
    data = tmp_path / "d.txt"
    data.write_text("0 1:3 2:1\n0 1:2\n0 2:2\n")
    vocab = tmp_path / "v.txt"
    vocab.write_text("alpha\nbeta\n")
    code, out, _ = run(capsys, "topwords", "--dataset", data, "--vocab", vocab, "--topics", 1,
                       "--iterations", 1, "--n", 2, "--split", 0.5, "--interval", 100)
    assert code == 0
    assert re.fullmatch(r"topic 0: (alpha|beta)\(\d+\) (alpha|beta)\(\d+\)", out.splitlines()[-1])


def test_module_entry_point(dataset_file):
    proc = subprocess.run([sys.executable, "-m", "apslda.cli", "train", "--dataset", str(dataset_file),
                           "--iterations", "1", "--topics", "2"], capture_output=True, text=True)
    assert proc.returncode == 0 and "final_perplexity=" in proc.stdout


def test_eval_takes_the_split_from_the_sidecar(capsys, dataset_file, tmp_path):
    model = tmp_path / "model.csv"
    code, out, _ = run(capsys, "train", "--dataset", dataset_file, "--topics", 4, "--iterations", 3,
                       "--split", 0.7, "--out", model)
    final = out.splitlines()[-1].split("=")[1]
    code, out, _ = run(capsys, "eval", "--model", model, "--dataset", dataset_file)
    assert code == 0 and out.strip() == f"perplexity={final}"
