import json

import pytest

from mmm4rec.cli import cli_main


def test_verify_exit_zero(capsys):
    assert cli_main(["verify", "--seed", "7"]) == 0
    assert "PASS" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [["verify", "--bogus"], ["explode"], [], ["evaluate", "--data", "x"]])
def test_usage_errors_exit_two(argv, capsys):
    assert cli_main(argv) == 2
    assert "usage" in capsys.readouterr().err


def test_contract_errors_exit_one(tmp_path, capsys):
    assert cli_main(["prepare", "--data", str(tmp_path)]) == 1
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("nonsense_key = 1\n")
    assert cli_main(["prepare", "--data", str(tmp_path), "--config", str(cfg)]) == 1
    assert "nonsense_key" in capsys.readouterr().err


def test_synthetic_pipeline(tmp_path, capsys):
    d, run = tmp_path / "d", tmp_path / "run"
    cfg = tmp_path / "small.cfg"
    cfg.write_text("latent_dim = 16\nstate_dim = 8\nmax_len = 12\ndropout = 0.0\n"
                   "lr = 0.003\nbatch_size = 32\nepochs = 3\npretrain_epochs = 1\nk_core = 3\n")
    common = ["--config", str(cfg)]
    assert cli_main(["synth", "--users", "60", "--items", "30", "--dim", "8", "--out", str(d)]) == 0
    assert cli_main(["prepare", "--data", str(d)] + common) == 0
    assert cli_main(["pretrain", "--data", str(d), "--out", str(run / "pt")] + common) == 0
    assert cli_main(["finetune", "--data", str(d), "--out", str(run / "ft"),
                     "--checkpoint", str(run / "pt" / "pretrain.mmck")] + common) == 0
    report = json.loads((run / "ft" / "eval_report.json").read_text())
    assert set(report) == {"recall", "ndcg", "users", "mean_rank"}
    conv = json.loads((run / "ft" / "convergence.json").read_text())
    assert conv["epochs_run"] >= 1 and "seconds_per_epoch" not in conv
    assert cli_main(["evaluate", "--data", str(d), "--checkpoint", str(run / "ft" / "finetune.mmck"),
                     "--out", str(run / "ev")]) == 0
    assert json.loads((run / "ev" / "eval_report.json").read_text()) == report
    assert cli_main(["probe", "--data", str(d), "--checkpoint", str(run / "ft" / "finetune.mmck"),
                     "--out", str(run / "probe"), "--lengths", "1,5"]) == 0
    assert len((run / "probe" / "truncation.csv").read_text().splitlines()) == 3
    assert cli_main(["finetune", "--data", str(d), "--out", str(run / "x"), "--ablation", "no-pt",
                     "--checkpoint", str(run / "pt" / "pretrain.mmck")] + common) == 1
