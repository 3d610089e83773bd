import os

import pytest

from latent_imagination import audit, cli
from latent_imagination.trainer import Trainer, TrainingAborted

TINY = """\
episodes = 2
episode_length = 5
warmup_steps = 4
explore_steps = 4
batch_size = 8
hidden = 16
latent_dim = 4
model_hidden = 8
actor_critic_steps = 1
model_steps = 1
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY)
    return str(p)


def test_train_writes_outputs(tmp_path, cfg_path):
    out = tmp_path / "run"
    assert cli.main(["train", "--config", cfg_path, "--out", str(out), "--seed", "3",
                     "--mode", "adaptive"]) == 0
    for name in ("metrics_seed0.csv", "curve_mean.csv", "itm_snapshot.txt", "config.txt"):
        assert (out / name).exists(), name
    assert (out / "checkpoint_final" / "critic.txt").exists()


def test_train_several_seeds(tmp_path, cfg_path):
    out = tmp_path / "run"
    assert cli.main(["train", "--config", cfg_path, "--out", str(out), "--seeds", "0,1"]) == 0
    assert (out / "metrics_seed1.csv").exists()
    assert (out / "seed1" / "itm_snapshot.txt").exists()


def test_ablate_labels_curves(tmp_path, cfg_path):
    out = tmp_path / "abl"
    assert cli.main(["ablate", "--config", cfg_path, "--out", str(out), "--depths", "0,2",
                     "--seeds", "0"]) == 0
    assert (out / "curve_depth0.csv").exists() and (out / "curve_depth2.csv").exists()


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("gamma = 4\n")
    assert cli.main(["train", "--config", str(p), "--out", str(tmp_path / "x")]) == 2
    assert "gamma" in capsys.readouterr().err


def test_aborted_run_exit_code(tmp_path, cfg_path, monkeypatch):
    def boom(self):
        raise TrainingAborted("non-finite critic loss")
        yield

    monkeypatch.setattr(Trainer, "run", boom)
    assert cli.main(["train", "--config", cfg_path, "--out", str(tmp_path / "x")]) == 3


def test_audit_exit_codes(monkeypatch, capsys):
    assert cli.main(["audit", "--only", "gate,cacla"]) == 0
    assert capsys.readouterr().out.count("PASS") == 2
    failing = lambda: audit.CheckResult("gate", False, "forced")
    monkeypatch.setitem(audit.SUITES, "gate", failing)
    assert cli.main(["audit", "--only", "gate"]) == 1
    assert cli.main(["audit", "--only", "bogus"]) == 2


def test_bad_depth_list_rejected():
    with pytest.raises(SystemExit):
        cli.main(["ablate", "--depths", "a,b"])
