import json
import subprocess
import sys

import pytest

from adaplr import cli
from adaplr.labels import read_label_csv
from adaplr.model import load_checkpoint

FAST = ["--preset", "desk", "--epochs-source", "8", "--epochs-refine", "30", "--epochs-target", "4",
        "--task", json.dumps({"rotation_deg": 50.0, "n_source": 500, "n_target": 300})]


def run(argv, capsys):
    code = cli.main(argv)
    return code, capsys.readouterr()


def test_stagewise_commands(tmp_path, capsys):
    d = tmp_path / "data"
    assert run(["gen-data", "--out", str(d)] + FAST, capsys)[0] == 0
    assert (d / "source.csv").exists() and (d / "target.json").exists()
    ck = str(tmp_path / "s.ckpt")
    code, out = run(["pretrain", "--source", str(d / "source.csv"), "--out", ck] + FAST, capsys)
    assert code == 0 and "holdout_acc" in json.loads(out.out)
    init = str(tmp_path / "init.csv")
    assert run(["infer", "--model", ck, "--target", str(d / "target.csv"), "--out", init], capsys)[0] == 0
    fused = str(tmp_path / "fused.csv")
    assert run(["infer", "--model", ck, ck, "--target", str(d / "target.csv"), "--out", fused], capsys)[0] == 0
    assert (read_label_csv(init, 10).labels == read_label_csv(fused, 10).labels).all()
    ref, met = str(tmp_path / "ref.csv"), tmp_path / "m.csv"
    code, out = run(["refine", "--model", ck, "--target", str(d / "target.csv"), "--labels", init,
                     "--out", ref, "--metrics", str(met)] + FAST, capsys)
    assert code == 0 and met.read_text().startswith("epoch,noise_pct,gamma,")
    tk = str(tmp_path / "t.ckpt")
    code, out = run(["train-target", "--model", ck, "--target", str(d / "target.csv"), "--labels", ref,
                     "--out", tk] + FAST, capsys)
    assert code == 0 and load_checkpoint(tk, num_classes=10).input_dim == 4
    code, out = run(["eval", "--model", tk, "--data", str(d / "target.csv"), "--labels", ref], capsys)
    assert code == 0 and 0 <= json.loads(out.out)["accuracy_pct"] <= 100


def test_run_all_and_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 2, "alpha": 0.9}))
    code, out = run(["run-all", "--config", str(cfg), "--out", str(tmp_path / "o")] + FAST, capsys)
    assert code == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["seed"] == 2 and json.loads(out.out) == summary


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"alpha": 0.8, "n_members": 2}))
    args = cli.build_parser().parse_args(["run-all", "--config", str(cfg), "--alpha", "0.7",
                                          "--no-reassignment", "--hidden", "16", "16"])
    c = cli.config_from_args(args)
    assert (c.alpha, c.n_members, c.reassignment, c.hidden) == (0.7, 2, False, (16, 16))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_codes(tmp_path, capsys):
    assert run(["run-all", "--alpha", "1.5"], capsys)[0] == 2
    assert run(["run-all", "--n-members", "4", "--n-rl", "3"], capsys)[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["run-all", "--config", str(bad)], capsys)[0] == 2
    assert run(["run-all", "--lr-source", "1e200", "--epochs-source", "2"] + FAST[4:], capsys)[0] == 3
    # one refine epoch leaves every consensus confidence far below alpha
    code, out = run(["run-all", "--epochs-refine", "1", "--epochs-source", "2"] + FAST[8:], capsys)
    assert code == 4 and "alpha" in out.err


def test_ablate_command(tmp_path, capsys):
    out_csv = tmp_path / "a.csv"
    code, out = run(["ablate", "--axis", "alpha", "--values", "0.9", "--seeds", "0", "--out",
                     str(out_csv)] + FAST, capsys)
    assert code == 0 and json.loads(out.out)["cells"] == 1
    assert out_csv.read_text().count("\n") == 2


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "adaplr.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for name in ("gen-data", "pretrain", "infer", "refine", "train-target", "run-all", "ablate", "eval"):
        assert name in res.stdout


def test_partial_task_merges_over_default():
    args = cli.build_parser().parse_args(["run-all", "--task", '{"n_target": 123}'])
    task = cli.config_from_args(args).task
    assert task["n_target"] == 123 and task["rotation_deg"] == 50.0
