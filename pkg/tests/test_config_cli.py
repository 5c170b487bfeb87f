import json

import numpy as np
import pytest

from tiwlab.cli import main
from tiwlab.config import (
    DEFAULT_CONFIG,
    ExperimentConfig,
    apply_overrides,
    config_hash,
    load_config,
)
from tiwlab.errors import ConfigError
from tiwlab.sampling import read_samples_csv


@pytest.fixture()
def tiny_config(tmp_path):
    def make(**extra):
        raw = {
            "output_dir": str(tmp_path / "out"),
            "split": {"n_bias": 150, "n_ref": 30},
            "disc_train": {"steps": 120, "batch_size": 64},
            "score_train": {"steps": 150, "batch_size": 64, "telemetry_every": 50},
            "eval": {"n_samples": 128, "n_oracle": 128, "dre_n": 1000,
                     "dre_grid": [0.0, 0.25, 0.5, 0.75, 1.0]},
            "sampler": {"steps": 24},
        }
        raw.update(extra)
        path = tmp_path / "config.yaml"
        import yaml

        path.write_text(yaml.safe_dump(raw))
        return path, tmp_path / "out"

    return make


# ---------------------------------------------------------------------------
# config machinery
# ---------------------------------------------------------------------------

def test_default_config_is_valid():
    cfg = ExperimentConfig(raw={})
    assert cfg.raw == DEFAULT_CONFIG
    assert cfg.mixture("bias").weights[0] == 0.9
    assert cfg.schedule.beta_max == 20.0


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="(?i)additional"):
        ExperimentConfig(raw={"scheduel": {"beta_min": 0.2}})
    with pytest.raises(ConfigError):
        ExperimentConfig(raw={"schedule": {"beta_mni": 0.2}})


def test_bad_value_rejected():
    with pytest.raises(ConfigError, match="n_ref"):
        ExperimentConfig(raw={"split": {"n_ref": 0}})
    with pytest.raises(ConfigError, match="beta_max"):
        ExperimentConfig(raw={"schedule": {"beta_min": 5.0, "beta_max": 1.0}})


def test_overrides_parse_yaml_scalars():
    raw = apply_overrides({}, ["split.n_bias=777", "objective.alpha=0.25",
                               "score_train.lr_decay=none"])
    cfg = ExperimentConfig(raw=raw)
    assert cfg.raw["split"]["n_bias"] == 777
    assert cfg.raw["objective"]["alpha"] == 0.25
    with pytest.raises(ConfigError):
        apply_overrides({}, ["no-equals-sign"])


def test_config_round_trip_lossless():
    cfg = ExperimentConfig(raw={"split": {"n_bias": 42, "n_ref": 7}})
    clone = ExperimentConfig(raw=cfg.to_dict())
    assert clone.raw == cfg.raw
    assert config_hash(clone) == config_hash(cfg)


def test_config_hash_changes_iff_field_changes():
    a = ExperimentConfig(raw={})
    b = ExperimentConfig(raw={"seeds": {"data": 101}})  # same as default
    c = ExperimentConfig(raw={"seeds": {"data": 102}})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)


def test_load_config_missing_file(tmp_path):
    from tiwlab.errors import IoError

    with pytest.raises(IoError):
        load_config(tmp_path / "nope.yaml")


# ---------------------------------------------------------------------------
# CLI commands
# ---------------------------------------------------------------------------

def test_gen_data_writes_expected_rows(tiny_config):
    config, out = tiny_config()
    assert main(["gen-data", "--config", str(config)]) == 0
    bias = read_samples_csv(out / "bias.csv")
    ref = read_samples_csv(out / "ref.csv")
    assert bias.shape == (150, 2) and ref.shape == (30, 2)


def test_gen_data_byte_deterministic(tiny_config, tmp_path):
    config, out = tiny_config()
    main(["gen-data", "--config", str(config)])
    first = (out / "bias.csv").read_bytes()
    main(["gen-data", "--config", str(config)])
    assert (out / "bias.csv").read_bytes() == first


def test_exit_codes(tiny_config, capsys):
    config, out = tiny_config()
    # config error: schema violation
    assert main(["gen-data", "--config", str(config), "--set", "split.n_ref=0"]) == 3
    assert "config" in capsys.readouterr().err
    # input error: training data missing
    assert main(["train-disc", "--config", str(config)]) == 2
    assert "gen-data" in capsys.readouterr().err


def test_sample_oracle_deterministic(tiny_config, tmp_path):
    config, out = tiny_config()
    main(["gen-data", "--config", str(config)])
    args = ["sample", "--config", str(config), "--source", "oracle-data",
            "--steps", "24", "--seed", "9"]
    assert main(args) == 0
    first = (out / "samples.csv").read_bytes()
    prov = json.loads((out / "provenance.json").read_text())
    assert prov["steps"] == 24 and prov["seed"] == 9
    assert main(args) == 0
    assert (out / "samples.csv").read_bytes() == first


def test_field_lattices(tiny_config):
    config, out = tiny_config()
    assert main(["repro-fig3", "--config", str(config)]) == 0
    res = DEFAULT_CONFIG["field_grid"]["resolution"]

    def load(name):
        return np.loadtxt(out / name, delimiter=",", skiprows=1, ndmin=2)

    sb = load("field_score_bias.csv")
    sd = load("field_score_data.csv")
    gw = load("field_grad_log_w.csv")
    w = load("field_w.csv")
    assert sb.shape[0] == res * res
    np.testing.assert_array_equal(sb[:, :2], sd[:, :2])
    # correction field is exactly the score difference
    np.testing.assert_allclose(gw[:, 2:], sd[:, 2:] - sb[:, 2:], rtol=1e-10,
                               atol=1e-12)
    # ratio at the minority mode
    at_mode = np.all(w[:, :2] == [2.0, 2.0], axis=1)
    assert at_mode.sum() == 1
    assert w[at_mode, 2][0] == pytest.approx(5.0, rel=1e-4)


def test_dre_curve_grid_increasing(tiny_config):
    config, out = tiny_config()
    main(["gen-data", "--config", str(config)])
    assert main(["repro-fig2", "--config", str(config)]) == 0
    rows = np.loadtxt(out / "dre_curve.csv", delimiter=",", skiprows=1, ndmin=2)
    assert np.all(np.diff(rows[:, 0]) > 0)
    assert np.all(rows[:, 1:] >= 0)
    summary = json.loads((out / "dre_summary.json").read_text())
    assert summary["integrated_ratio"] >= 0


def test_debias_report_lists_artifacts(tiny_config):
    config, out = tiny_config()
    assert main(["debias", "--config", str(config)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["config_hash"]
    assert report["library_version"]
    for artifact in report["artifacts"]:
        if artifact.endswith("report.json"):
            continue
        assert (out / artifact).exists() or artifact.startswith(str(out))
    labels = [m["label"] for m in report["metrics"]]
    assert labels == ["tiw_dsm"]
    assert (out / "tiw_dsm" / "samples.csv").exists()


def test_debias_byte_deterministic(tiny_config, tmp_path):
    config, out = tiny_config()
    main(["debias", "--config", str(config)])
    rows_first = (out / "eval_rows.csv").read_bytes()
    disc_first = (out / "disc.ckpt").read_bytes()
    main(["debias", "--config", str(config)])
    assert (out / "eval_rows.csv").read_bytes() == rows_first
    assert (out / "disc.ckpt").read_bytes() == disc_first


def test_sweep_alpha_identities_and_ordering(tiny_config):
    config, out = tiny_config()
    rc = main(["sweep-alpha", "--config", str(config), "--alphas", "0,1"])
    assert rc == 0
    checks = (out / "identity_checks.txt").read_text()
    assert checks.count("max |diff| = 0.0") == 2
    rows = np.loadtxt(out / "alpha_sweep.csv", delimiter=",", skiprows=1, ndmin=2)
    assert rows[:, 0].tolist() == [0.0, 1.0]
    # ratio scaling at alpha=1 should not increase the bias statistic
    assert rows[1, 1] <= rows[0, 1]


def test_sweep_alpha_one_matches_tiw_checkpoint(tiny_config):
    config, out = tiny_config()
    main(["debias", "--config", str(config)])
    main(["sweep-alpha", "--config", str(config), "--alphas", "1"])
    tiw = (out / "tiw_dsm" / "score.ckpt").read_bytes()
    alpha1 = (out / "alpha_1" / "score.ckpt").read_bytes()
    # parameter payloads coincide bit for bit (headers differ by objective label)
    assert tiw[-64:] == alpha1[-64:]
    import numpy as np
    from tiwlab.net import load_net

    net_a, _ = load_net(out / "tiw_dsm" / "score.ckpt")
    net_b, _ = load_net(out / "alpha_1" / "score.ckpt")
    assert net_a.params.tobytes() == net_b.params.tobytes()


def test_eval_command(tiny_config):
    config, out = tiny_config()
    main(["gen-data", "--config", str(config)])
    main(["sample", "--config", str(config), "--source", "oracle-data"])
    assert main(["eval", "--config", str(config), "--label", "oracle"]) == 0
    text = (out / "eval.csv").read_text().splitlines()
    assert text[0].startswith("bias,proportion_0,proportion_1,energy_distance")
    assert text[1].endswith("oracle")
