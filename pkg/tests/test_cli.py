import json
import shutil
import struct
import subprocess
import sys

import pytest

from acmr.cli import main
from acmr.config import ConfigError, RunConfig, config_from_dict, dumps, load_config
from acmr.data import load_dataset, validate_split

SMALL = {
    "train": {"epochs": 3, "latent_dim": 4, "seed": 11, "hidden_visual_enc": 12, "hidden_visual_dec": 10,
              "hidden_semantic_enc": 9, "hidden_semantic_dec": 8, "hidden_iem": 6, "batch_size_acmr": 10,
              "classifier_epochs": 3, "unseen_samples_per_class": 20,
              "beta_schedule": {"start_epoch": 0, "end_epoch": 1, "max_value": 5.0},
              "lambda_schedule": {"start_epoch": 1, "end_epoch": 2, "max_value": 3.0}},
    "synthetic": {"num_seen": 3, "num_unseen": 2, "d_visual": 8, "d_attr": 4, "samples_per_class": 10,
                  "prototype_noise": 0.2, "seed": 11},
}


def write_config(tmp_path, doc=SMALL, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("trained")
    cfg = write_config(tmp)
    assert run("train", "--config", cfg, "--out", tmp / "run") == 0
    return tmp, cfg


class TestSynth:
    def test_round_trip(self, tmp_path):
        assert run("synth", "--config", write_config(tmp_path), "--out", tmp_path / "d") == 0
        d = tmp_path / "d"
        ds = load_dataset(d / "features.acmx", d / "attributes.acmx", d / "labels.csv", d / "split.json")
        assert validate_split(ds).ok and ds.visual.shape == (50, 8)

    def test_default_spec(self, tmp_path):
        assert run("synth", "--out", tmp_path / "d") == 0
        d = tmp_path / "d"
        ds = load_dataset(d / "features.acmx", d / "attributes.acmx", d / "labels.csv", d / "split.json")
        assert ds.visual.shape == (600, 64)

    def test_invalid_spec(self, tmp_path, capsys):
        doc = json.loads(json.dumps(SMALL))
        doc["synthetic"]["num_seen"] = 0
        assert run("synth", "--config", write_config(tmp_path, doc), "--out", tmp_path / "d") == 1
        assert "num_seen" in capsys.readouterr().err

    def test_same_seed_byte_identical(self, tmp_path):
        # the echoed config records out_dir, so both runs write to the same place
        cfg = write_config(tmp_path)
        run("synth", "--config", cfg, "--out", tmp_path / "a")
        shutil.move(tmp_path / "a", tmp_path / "b")
        run("synth", "--config", cfg, "--out", tmp_path / "a")
        for name in ("features.acmx", "attributes.acmx", "labels.csv", "split.json", "config.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_flag_changes_output(self, tmp_path):
        cfg = write_config(tmp_path)
        run("synth", "--config", cfg, "--out", tmp_path / "a")
        run("synth", "--config", cfg, "--seed", 12, "--out", tmp_path / "b")
        assert (tmp_path / "a" / "features.acmx").read_bytes() != (tmp_path / "b" / "features.acmx").read_bytes()


class TestTrain:
    def test_outputs(self, trained):
        tmp, _ = trained
        out = tmp / "run"
        metrics = json.loads((out / "metrics.json").read_text())
        assert {"aca_u", "aca_s", "h"} <= set(metrics)
        history = [json.loads(line) for line in (out / "history.jsonl").read_text().splitlines()]
        assert len(history) == 3
        assert (out / "checkpoint.acmr").read_bytes()[:4] == b"ACMR"

    def test_config_echo_parses_back_equal(self, trained):
        tmp, cfg = trained
        echo = load_config(tmp / "run" / "config.json")
        expected = load_config(cfg)
        expected.out_dir = str(tmp / "run")
        assert echo == expected
        assert dumps(echo) == (tmp / "run" / "config.json").read_text()

    def test_rerun_identical(self, trained, tmp_path):
        tmp, cfg = trained
        shutil.copytree(tmp / "run", tmp_path / "first")
        assert run("train", "--config", cfg, "--out", tmp / "run") == 0
        for name in ("metrics.json", "history.jsonl", "checkpoint.acmr", "config.json"):
            assert (tmp_path / "first" / name).read_bytes() == (tmp / "run" / name).read_bytes()

    def test_periodic_checkpoints(self, tmp_path):
        doc = json.loads(json.dumps(SMALL))
        doc["train"]["checkpoint_every"] = 2
        assert run("train", "--config", write_config(tmp_path, doc), "--out", tmp_path / "r") == 0
        assert sorted(p.name for p in (tmp_path / "r").glob("checkpoint_epoch*")) == ["checkpoint_epoch0002.acmr"]

    def test_numeric_failure(self, tmp_path, capsys):
        doc = json.loads(json.dumps(SMALL))
        doc["train"].update(lr_vae=1e300, lr_vsa=1e300)
        assert run("train", "--config", write_config(tmp_path, doc), "--out", tmp_path / "r") == 3
        assert "train_acmr" in capsys.readouterr().err

    def test_bad_data(self, tmp_path, capsys):
        doc = {"train": SMALL["train"], "data": {"features": str(tmp_path / "none.acmx"),
                                                 "attributes": "a", "labels": "l", "split": "s"}}
        assert run("train", "--config", write_config(tmp_path, doc), "--out", tmp_path / "r") == 2
        assert "load" in capsys.readouterr().err


class TestEval:
    def test_round_trip_matches_train_metrics(self, trained, tmp_path):
        tmp, cfg = trained
        assert run("eval", "--config", cfg, "--checkpoint", tmp / "run" / "checkpoint.acmr",
                   "--out", tmp_path / "e") == 0
        assert (tmp_path / "e" / "metrics.json").read_bytes() == (tmp / "run" / "metrics.json").read_bytes()

    def test_missing_checkpoint(self, trained, tmp_path, capsys):
        _, cfg = trained
        assert run("eval", "--config", cfg, "--checkpoint", tmp_path / "none.acmr") == 2
        assert "not found" in capsys.readouterr().err

    def test_version_bump(self, trained, tmp_path, capsys):
        tmp, cfg = trained
        raw = bytearray((tmp / "run" / "checkpoint.acmr").read_bytes())
        struct.pack_into("<I", raw, 4, 99)
        (tmp_path / "v.acmr").write_bytes(bytes(raw))
        assert run("eval", "--config", cfg, "--checkpoint", tmp_path / "v.acmr") == 2
        assert "version 99" in capsys.readouterr().err


class TestExport:
    def test_export_and_reexport(self, trained, tmp_path):
        tmp, cfg = trained
        ckpt = tmp / "run" / "checkpoint.acmr"
        assert run("export-embeddings", "--config", cfg, "--checkpoint", ckpt, "--out", tmp_path / "a") == 0
        assert run("export-embeddings", "--config", cfg, "--checkpoint", ckpt, "--out", tmp_path / "b") == 0
        a = (tmp_path / "a" / "embeddings.csv").read_bytes()
        assert a == (tmp_path / "b" / "embeddings.csv").read_bytes()
        lines = a.decode().splitlines()
        # 3 x 2 test-seen + 20 test-unseen images + 5 class rows, plus the header
        assert len(lines) == 1 + 6 + 20 + 5
        assert all(len(ln.split(",")) == 3 + 4 for ln in lines)


class TestGradcheck:
    def test_passes(self, capsys):
        assert run("gradcheck") == 0
        out = capsys.readouterr().out
        for name in ("L_Rec", "L_MA", "L_Rep", "L_IEM", "composite"):
            assert name in out

    def test_corrupted_names_component(self, capsys):
        assert run("gradcheck", "--corrupt", "ma") == 3
        err = capsys.readouterr().err
        assert "L_MA" in err and "L_Rec" not in err

    def test_deterministic(self, capsys):
        run("gradcheck", "--seed", 3)
        a = capsys.readouterr().out
        run("gradcheck", "--seed", 3)
        assert capsys.readouterr().out == a


class TestConfig:
    def test_unknown_key_exit_1(self, tmp_path, capsys):
        doc = json.loads(json.dumps(SMALL))
        doc["train"]["learning_rate"] = 0.1
        assert run("train", "--config", write_config(tmp_path, doc)) == 1
        assert "learning_rate" in capsys.readouterr().err

    def test_unknown_top_level(self):
        with pytest.raises(ConfigError):
            config_from_dict({"trian": {}})

    def test_type_errors(self):
        with pytest.raises(ConfigError):
            config_from_dict({"train": {"epochs": "ten"}})
        with pytest.raises(ConfigError):
            config_from_dict({"train": {"use_iem": 1}})

    def test_int_promoted_to_float(self):
        assert config_from_dict({"train": {"alpha": 3}}).train.alpha == 3.0

    def test_both_sources_rejected(self):
        with pytest.raises(ConfigError):
            config_from_dict({"synthetic": {}, "data": {"features": "f", "attributes": "a", "labels": "l",
                                                        "split": "s"}})

    def test_defaults_round_trip(self):
        assert config_from_dict(json.loads(dumps(RunConfig()))) == RunConfig()

    def test_invalid_json(self, tmp_path):
        (tmp_path / "c.json").write_text("{")
        assert run("train", "--config", tmp_path / "c.json") == 1

    def test_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 1


@pytest.mark.skipif(shutil.which("acmr") is None, reason="console script not installed")
def test_console_script(tmp_path):
    out = subprocess.run(["acmr", "synth", "--config", write_config(tmp_path), "--out", str(tmp_path / "d")],
                         capture_output=True, text=True)
    assert out.returncode == 0 and (tmp_path / "d" / "split.json").exists()


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "acmr.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "export-embeddings" in out.stdout
