import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from chanhom import cli, harness
from chanhom.errors import ConfigError

REPO = Path(__file__).resolve().parents[1]
B1 = REPO / "configs" / "b1.json"


def mini_config(**overrides):
    raw = json.loads(B1.read_text())
    raw["epsilon"] = ["1/4"]
    raw["time"] = {"T": 0.125, "dt": {"rule": "fixed", "value": 1 / 128}}
    raw["refinement"] = {"k": 4, "m": 4, "n_sigma": 8}
    raw["snapshot_stride"] = 4
    raw.update(overrides)
    return raw


def test_b1_config_parses_and_echoes_defaults():
    cfg = harness.load_config(B1)
    assert [str(e) for e in cfg.epsilons] == ["1/4", "1/8", "1/16"]
    assert cfg.dt == pytest.approx(1 / 128)  # eps_min / 8
    assert cfg.echo["time"]["dt"] == {"rule": "fixed", "value": cfg.dt}
    assert cfg.echo["refinement"]["n_sigma"] == 32
    # the echo is itself a valid config and parses to the same study
    again = harness.parse_config(cfg.echo)
    assert again.echo == cfg.echo


def test_invalid_epsilon_is_named_in_the_error():
    raw = mini_config(epsilon=["1/4", "0.3"])
    with pytest.raises(ConfigError, match=r"epsilon\[1\]"):
        harness.parse_config(raw)


def test_missing_channel_diffusivity_is_named():
    raw = mini_config()
    del raw["diffusivity"]["channel"]
    with pytest.raises(ConfigError, match="diffusivity.channel required"):
        harness.parse_config(raw)


def test_missing_kinetics_entry_is_named():
    raw = mini_config()
    del raw["kinetics"]["g"]
    with pytest.raises(ConfigError, match="kinetics.g required"):
        harness.parse_config(raw)


def test_misaligned_refinement_is_rejected_with_path():
    raw = mini_config()
    raw["geometry"]["profile"]["segments"] = [
        {"interval": ["-1", "-1/4"], "width": "3/4"},
        {"interval": ["-1/4", "1/4"], "width": "1/4"},
        {"interval": ["1/4", "1"], "width": "3/4"},
    ]
    raw["diffusivity"]["channel"] = [[0.5, 0.5]] * 3
    raw["refinement"] = {"k": 2, "m": 2, "n_sigma": 8}
    with pytest.raises(ConfigError, match="refinement.k"):
        harness.parse_config(raw)


def test_decreasing_epsilon_required():
    raw = mini_config(epsilon=["1/8", "1/4"])
    with pytest.raises(ConfigError, match="decreasing"):
        harness.parse_config(raw)


def test_non_integer_step_count_rejected():
    raw = mini_config(time={"T": 0.1, "dt": {"rule": "fixed", "value": 1 / 128}})
    with pytest.raises(ConfigError, match="integer multiple"):
        harness.parse_config(raw)


def run_mini(tmp_path, name="run1", threads=1):
    cfg = harness.parse_config(mini_config())
    out = tmp_path / name
    rep, manifest = harness.run_study(cfg, out_dir=out, threads=threads)
    return cfg, out, rep, manifest


def test_study_writes_report_fields_and_complete_manifest(tmp_path):
    _, out, rep, manifest = run_mini(tmp_path)
    assert len(rep.eps) == 1
    text = (out / "report.csv").read_text()
    assert text.splitlines()[0] == harness.REPORT_HEADER
    assert len(text.splitlines()) == 2
    for rel, digest in manifest["files"].items():
        data = (out / rel).read_bytes()
        assert hashlib.sha256(data).hexdigest() == digest
    listed = set(manifest["files"])
    on_disk = {
        str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()
    } - {"manifest.json"}
    assert listed == on_disk


def test_rerun_is_bit_identical(tmp_path):
    _, out1, _, _ = run_mini(tmp_path, "a")
    _, out2, _, _ = run_mini(tmp_path, "b")
    assert (out1 / "report.csv").read_bytes() == (out2 / "report.csv").read_bytes()
    man1 = json.loads((out1 / "manifest.json").read_text())
    man2 = json.loads((out2 / "manifest.json").read_text())
    assert man1["files"] == man2["files"]


def test_threaded_run_matches_serial(tmp_path):
    cfg = harness.parse_config(mini_config(epsilon=["1/4", "1/8"]))
    rep1, man1 = harness.run_study(cfg, out_dir=tmp_path / "serial", threads=1)
    rep2, man2 = harness.run_study(cfg, out_dir=tmp_path / "par", threads=2)
    assert man1["files"] == man2["files"]


def test_report_rederivation_is_bit_exact(tmp_path):
    _, out, _, _ = run_mini(tmp_path)
    original = (out / "report.csv").read_bytes()
    harness.rederive_report(out)
    assert (out / "report.csv").read_bytes() == original


def test_hourglass_profile_study_end_to_end(tmp_path):
    raw = mini_config(epsilon=["1/4", "1/8"])
    raw["geometry"]["profile"]["segments"] = [
        {"interval": ["-1", "-1/4"], "width": "3/4"},
        {"interval": ["-1/4", "1/4"], "width": "1/4"},
        {"interval": ["1/4", "1"], "width": "3/4"},
    ]
    raw["diffusivity"]["channel"] = [[0.5, 0.5], [0.8, 0.3], [0.5, 0.5]]
    raw["kinetics"]["h"]["modulation"] = {"kind": "arc_cos", "amplitude": 0.3}
    raw["refinement"] = {"k": 8, "m": 8, "n_sigma": 8}
    cfg = harness.parse_config(raw)
    rep, _ = harness.run_study(cfg, out_dir=tmp_path / "hg")
    for row in rep.rows():
        assert all(np.isfinite(v) and v >= 0 for v in row)
    assert rep.e_chan[1] < rep.e_chan[0]  # wall ledges included in the remap
    worst, flat_max, ok = harness.verify_operators(cfg, n_fields=10)
    assert ok, worst


def test_verify_operators_residuals_are_tiny():
    cfg = harness.load_config(B1)
    cfg.epsilons = cfg.epsilons[:2]
    worst, flat_max, ok = harness.verify_operators(cfg, n_fields=10)
    assert ok
    assert flat_max <= 1e-12


def write_config(tmp_path, raw):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(raw))
    return p


def test_cli_run_and_report_round_trip(tmp_path, capsys):
    p = write_config(tmp_path, mini_config())
    out = tmp_path / "study"
    assert cli.main(["run", str(p), "--out", str(out)]) == 0
    captured = capsys.readouterr()
    assert harness.REPORT_HEADER in captured.out
    assert cli.main(["report", str(out)]) == 0


def test_cli_verify_operators_exit_zero(tmp_path, capsys):
    p = write_config(tmp_path, mini_config())
    assert cli.main(["verify-operators", str(p)]) == 0
    assert "max identity residual" in capsys.readouterr().out


def test_cli_micro_macro_commands(tmp_path, capsys):
    p = write_config(tmp_path, mini_config())
    assert cli.main(["micro", str(p), "--out", str(tmp_path / "m1")]) == 0
    assert cli.main(["macro", str(p), "--out", str(tmp_path / "m2")]) == 0
    assert (tmp_path / "m1" / "fields").exists()
    assert (tmp_path / "m2" / "fields").exists()


def test_cli_unknown_subcommand_exits_one(capsys):
    assert cli.main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_cli_validation_failure_exits_one(tmp_path, capsys):
    raw = mini_config(epsilon=["0.3"])
    p = write_config(tmp_path, raw)
    assert cli.main(["run", str(p), "--out", str(tmp_path / "x")]) == 1
    assert "epsilon[0]" in capsys.readouterr().err


def test_cli_misaligned_refinement_exits_one(tmp_path, capsys):
    raw = mini_config()
    raw["geometry"]["profile"]["segments"] = [
        {"interval": ["-1", "0"], "width": "1/3"},
        {"interval": ["0", "1"], "width": "2/3"},
    ]
    raw["diffusivity"]["channel"] = [[0.5, 0.5]] * 2
    p = write_config(tmp_path, raw)
    assert cli.main(["run", str(p), "--out", str(tmp_path / "x")]) == 1
    err = capsys.readouterr().err
    assert "refinement.k" in err or "alignment" in err


def test_cli_missing_config_file(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "nope.json")]) == 1
    assert "not found" in capsys.readouterr().err
