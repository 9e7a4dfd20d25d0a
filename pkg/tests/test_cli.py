"""Command-line interface: exit codes, output schemas, error mapping."""

import json
import os

import pytest

from odconv import cli

SMALL_TRAIN = """
# fast settings for tests
variant odconv
epochs 2
train_per_class 8
eval_per_class 4
n 2
r 0.25
hidden_floor 2
learning_rate 0.05
"""


def run(argv):
    return cli.main(argv)


def test_no_command_is_usage_error(capsys):
    with pytest.raises(SystemExit) as err:
        run([])
    assert err.value.code == 2
    capsys.readouterr()


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as err:
        run(["verify", "--frobnicate"])
    assert err.value.code == 2
    capsys.readouterr()


def test_verify_passes(capsys):
    assert run(["verify"]) == 0
    out = capsys.readouterr().out
    for name in ("conv-oracle", "reduction", "mixture-equivalence",
                 "se-variant", "linearity"):
        assert name in out
    assert "FAIL" not in out


def test_verify_json_and_filter(capsys):
    assert run(["verify", "--filter", "reduction,linearity",
                "--format", "json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert [p["name"] for p in payload] == ["reduction", "linearity"]
    for p in payload:
        assert p["passed"] is True
        assert p["max_error"] <= p["tolerance"]
        assert p["instances"] >= 20


def test_verify_unknown_filter(capsys):
    assert run(["verify", "--filter", "quantum"]) == 2
    capsys.readouterr()


def test_verify_injected_fault_fails(capsys):
    assert run(["verify", "--inject-fault", "combine-order"]) == 1
    out = capsys.readouterr().out
    assert "FAIL" in out


def test_gradcheck_default_passes(capsys):
    assert run(["gradcheck"]) == 0
    out = capsys.readouterr().out
    for group in ("x", "weights", "w_reduce", "w_kernel"):
        assert group in out


def test_gradcheck_impossible_tolerance_fails(capsys):
    assert run(["gradcheck", "--tol", "1e-15"]) == 1
    capsys.readouterr()


def test_gradcheck_bad_ratio_is_usage(capsys):
    assert run(["gradcheck", "--r", "2.0"]) == 2
    capsys.readouterr()


def test_complexity_static_table(capsys):
    assert run(["complexity", "--arch", "resnet18"]) == 0
    out = capsys.readouterr().out
    assert "11,689,512" in out.replace(" ", "").replace("_", ",") or "11689512" in out


def test_complexity_json_schema(capsys):
    assert run(["complexity", "--arch", "resnet18", "--variant", "odconv",
                "--n", "4", "--format", "json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["arch"] == "resnet18"
    assert payload["placement"] == "all-but-first"
    assert payload["dynamic"] == {"family": "odconv", "n": 4,
                                  "r": 1.0 / 16.0, "hidden_floor": 16}
    assert payload["total_params"] == sum(
        r["params"] + r["extra_params"] for r in payload["layers"])
    assert payload["total_madds"] == sum(
        r["madds"] + r["extra_madds"] for r in payload["layers"])
    row = payload["layers"][0]
    for key in ("index", "kind", "role", "block", "shape",
                "params", "extra_params", "madds", "extra_madds"):
        assert key in row


def test_complexity_csv(capsys):
    assert run(["complexity", "--arch", "mobilenetv2-1.0",
                "--format", "csv"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "index,kind,role,block,params,extra_params,madds,extra_madds"
    assert lines[-1].startswith("total,")
    assert len(lines) > 50


def test_complexity_arch_file(tmp_path, capsys):
    path = tmp_path / "t.arch"
    path.write_text("name t\ninput 3 8 8\nlayer kind=conv c_out=4 k=3 padding=1\n")
    assert run(["complexity", "--arch-file", str(path)]) == 0
    assert "6,912" in capsys.readouterr().out.replace("6912", "6,912")


def test_complexity_unknown_arch(capsys):
    assert run(["complexity", "--arch", "vgg16"]) == 2
    capsys.readouterr()


def test_complexity_missing_arch_file(capsys):
    assert run(["complexity", "--arch-file", "/no/such/file.arch"]) == 3
    capsys.readouterr()


def test_complexity_check_all_references(capsys):
    assert run(["complexity", "--check"]) == 0
    out = capsys.readouterr().out
    assert "resnet18-od4x" in out
    assert "FAIL" not in out


def test_complexity_check_unknown_id(capsys):
    assert run(["complexity", "--check", "--ids", "resnet18", "vgg16"]) == 2
    capsys.readouterr()


def test_train_writes_outputs(tmp_path, capsys):
    cfg = tmp_path / "train.cfg"
    cfg.write_text(SMALL_TRAIN)
    out_dir = tmp_path / "run"
    assert run(["train", "--config", str(cfg), "--out", str(out_dir)]) == 0
    capsys.readouterr()
    csv_path = out_dir / "train.csv"
    ckpt_path = out_dir / "model.ckpt"
    assert csv_path.exists() and ckpt_path.exists()
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "epoch,temperature,train_loss,train_acc,eval_acc"
    assert len(lines) == 3
    from odconv.persistence import load_checkpoint
    ck = load_checkpoint(str(ckpt_path))
    assert ck.epoch == 2
    # final temperature follows the schedule at the stop epoch
    assert ck.temperature == 30.0 + (1.0 - 30.0) * 2 / 10


def test_train_is_deterministic(tmp_path, capsys):
    cfg = tmp_path / "train.cfg"
    cfg.write_text(SMALL_TRAIN)
    for d in ("a", "b"):
        assert run(["train", "--config", str(cfg),
                    "--out", str(tmp_path / d)]) == 0
    capsys.readouterr()
    a = (tmp_path / "a" / "train.csv").read_bytes()
    b = (tmp_path / "b" / "train.csv").read_bytes()
    assert a == b


def test_train_zero_epochs(tmp_path, capsys):
    cfg = tmp_path / "train.cfg"
    cfg.write_text(SMALL_TRAIN)
    assert run(["train", "--config", str(cfg), "--epochs", "0",
                "--out", str(tmp_path / "z")]) == 0
    capsys.readouterr()
    lines = (tmp_path / "z" / "train.csv").read_text().strip().splitlines()
    assert lines == ["epoch,temperature,train_loss,train_acc,eval_acc"]


def test_train_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("epochs 1\nwizardry 9\n")
    assert run(["train", "--config", str(cfg)]) == 2
    capsys.readouterr()


def test_train_missing_config_file(capsys):
    assert run(["train", "--config", "/no/such/train.cfg"]) == 3
    capsys.readouterr()


def test_bench_requires_minimum_iterations(capsys):
    assert run(["bench", "--iters", "5"]) == 2
    capsys.readouterr()


def test_bench_json_payload(capsys):
    assert run(["bench", "--layer", "odconv4x", "--shape", "2x4x8x8",
                "--c-out", "4", "--iters", "100", "--warmup", "2",
                "--format", "json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    for key in ("layer", "shape", "c_out", "k", "backend", "iters",
                "median_ms", "p90_ms", "analytic_madds_per_example"):
        assert key in payload
    analytic = payload["analytic_madds_per_example"]
    assert analytic["total"] == analytic["conv"] + analytic["attention_extra"]
    assert payload["median_ms"] > 0.0
    assert payload["p90_ms"] >= payload["median_ms"]


def test_bench_static_has_no_attention_overhead(capsys):
    assert run(["bench", "--layer", "static", "--shape", "2x4x8x8",
                "--c-out", "4", "--iters", "100", "--warmup", "2",
                "--format", "json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["analytic_madds_per_example"]["attention_extra"] == 0


def test_attention_stats_fresh_model(capsys):
    assert run(["attention-stats", "--samples", "8", "--bins", "5"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["samples"] == 8
    assert payload["bins"] == 5
    assert len(payload["layers"]) == 3
    first = payload["layers"][0]["branches"]
    # zero-initialized heads: flat sigmoid gates and a uniform mixture
    assert abs(first["alpha_s"]["mean"] - 0.5) < 1e-12
    assert abs(first["alpha_w"]["mean"] - 0.25) < 1e-12


def test_attention_stats_from_checkpoint(tmp_path, capsys):
    from odconv.model import build_toy_model
    from odconv.persistence import save_checkpoint
    model = build_toy_model("odconv", seed=0, n=2, r=0.25, hidden_floor=2)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, str(path))
    assert run(["attention-stats", "--checkpoint", str(path),
                "--samples", "4"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["samples"] == 4
    assert len(payload["layers"]) == 3


def test_attention_stats_missing_checkpoint(capsys):
    assert run(["attention-stats", "--checkpoint", "/no/such.ckpt"]) == 3
    capsys.readouterr()


def test_console_entry_point_is_exposed():
    # the installed script calls main() with sys.argv
    from importlib.metadata import entry_points
    eps = entry_points(group="console_scripts")
    names = {ep.name: ep.value for ep in eps}
    assert names.get("odconv") == "odconv.cli:main"
