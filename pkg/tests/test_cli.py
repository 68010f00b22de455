import csv
import json
import math

import numpy as np
import pytest
import yaml

from rydtomo import cli
from rydtomo.cli import ConfigError, RunConfig, dispatch, load_config, main
from rydtomo.dissipation import Decoherence


def write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_empty_config_lists_required_keys(tmp_path):
    with pytest.raises(ConfigError, match="kappa_newton_meter"):
        load_config(write(tmp_path, ""))


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError, match="colour"):
        load_config(write(tmp_path, "preset: table-s1\ncolour: blue\n"))
    with pytest.raises(ConfigError, match="unknown parameter"):
        load_config(write(tmp_path, "preset: table-s1\nparams: {kappa: 1.0}\n"))


def test_parse_error_has_line(tmp_path):
    with pytest.raises(ConfigError, match="line 3"):
        load_config(write(tmp_path, "preset: table-s1\nseed: 1\nsamples: a: 2\n"))


def test_invariant_violation_is_reported(tmp_path):
    with pytest.raises(ConfigError, match="physical invariant"):
        load_config(write(tmp_path, "preset: table-s1\nparams: {kappa_newton_meter_per_radian: -1.0}\n"))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "preset: table-s1\ndrive_ramp_microsecond: -0.1\n"))


def test_n_max_override_reaches_every_space(tmp_path):
    cfg = load_config(write(tmp_path, "preset: table-s1\nparams: {n_max: 7}\n"))
    p = cfg.system_params()
    assert p.n_max == 7 and p.space.oscillator.dim == 8 and p.space.dim == 16


def test_preset_summary_reports_coupling():
    s = cli.summary(RunConfig().system_params())
    assert s["K0_2pi_megahertz"] == pytest.approx(0.64, rel=0.01)


def test_round_trip(tmp_path):
    cfg = RunConfig(
        seed=2**63 + 5,
        params={"n_max": 12, "kappa_newton_meter_per_radian": 1.0e-14},
        decoherence=Decoherence(bbr=False),
        method="b",
        state={"kind": "superposition", "amplitudes": {0: [0.5, 0.25], 2: 1.0}},
        drive_rabi_2pi_megahertz=(0.3, -0.1),
        drive_ramp_microsecond=0.4,
        grid_extent=0.1 + 0.2,
    )
    p = write(tmp_path, yaml.safe_dump(cfg.to_dict()))
    back = load_config(p)
    assert back == cfg
    assert back.to_dict() == cfg.to_dict()
    assert back.drive_ramp == pytest.approx(0.4e-6)
    assert back.settings().drive_ramp == back.drive_ramp


def test_state_errors():
    with pytest.raises(ConfigError):
        RunConfig(state={"kind": "squeezed"})
    with pytest.raises(ConfigError, match="needs key"):
        RunConfig(state={"kind": "fock"})
    with pytest.raises(ConfigError):
        RunConfig(state={"kind": "fock", "n": 1, "extra": 2})


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_design(tmp_path):
    assert main(["design", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "design.csv")
    assert [int(r["n"]) for r in rows] == list(range(6))
    assert all(0 <= float(r["phase_rad"]) <= math.pi for r in rows)
    man = json.loads((tmp_path / "design.manifest.json").read_text())
    assert man["status"] == "complete" and set(man["files"]) == {"design.csv", "derived.json"}
    assert RunConfig.from_dict(man["config"]) == RunConfig()


SMOKE = """\
preset: table-s1
grid_size: 3
grid_extent: 0.8
samples: 4
seed: 99
workers: 1
decoherence: {thermal: false, bbr: false, dephasing: false, beam: false}
"""


def test_tomography_smoke_and_determinism(tmp_path):
    conf = write(tmp_path, SMOKE)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["tomography", "--config", str(conf), "--out", str(a)]) == 0
    assert main(["tomography", "--config", str(conf), "--out", str(b)]) == 0
    g = json.loads((a / "wigner.json").read_text())
    assert np.array(g["W"]).shape == (3, 3)
    assert len(read_csv(a / "wigner.csv")) == 9
    for name in ("wigner.csv", "wigner.json", "tomography.manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_worker_count_does_not_change_results(tmp_path):
    conf = write(tmp_path, SMOKE.replace("samples: 4", "samples: 2"))
    one, two = tmp_path / "one", tmp_path / "two"
    assert main(["tomography", "--config", str(conf), "--out", str(one)]) == 0
    assert main(["tomography", "--config", str(conf), "--workers", "2", "--out", str(two)]) == 0
    assert (one / "wigner.json").read_bytes() == (two / "wigner.json").read_bytes()


def test_exact_mode_flag(tmp_path):
    assert main(["tomography", "--exact-mode", "--out", str(tmp_path)]) == 0
    g = json.loads((tmp_path / "wigner.json").read_text())
    assert g["mode"] == "exact"
    W = np.array(g["W"])
    assert W[3, 3] == pytest.approx(-2 / math.pi, abs=1e-9)


def test_collapse_and_displace(tmp_path):
    conf = write(tmp_path, "preset: table-s1\nstate: {kind: fock, n: 2}\ngrid_size: 3\n")
    assert main(["collapse", "--config", str(conf), "--no-bbr", "--no-dephasing", "--no-thermal", "--out", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "collapse.json").read_text())
    assert res["fock_estimate_a"] == 2
    assert len(read_csv(tmp_path / "collapse.csv")) == 43
    assert main(["displace", "--config", str(conf), "--out", str(tmp_path)]) == 0
    d = json.loads((tmp_path / "displace.json").read_text())
    assert d["abs_alpha_N"] == pytest.approx(1.35, rel=0.02)


def test_exit_codes(tmp_path, monkeypatch, capsys):
    assert main(["design", "--config", str(write(tmp_path, "seed: x\n")), "--out", str(tmp_path)]) == 1
    assert "config error" in capsys.readouterr().err
    assert main(["design", "--config", str(tmp_path / "missing.yaml")]) == 1
    huge = write(tmp_path, "preset: table-s1\ndrive_rabi_2pi_megahertz: 9.0\n", "huge.yaml")
    # out of regime is diagnosed, not refused
    with pytest.warns(UserWarning):
        assert main(["displace", "--config", str(huge), "--out", str(tmp_path)]) == 0

    def boom(*a, **k):
        raise cli.PropagationError("integration failed near t=1e-06 s")

    monkeypatch.setattr(cli, "run_tomography_grid", boom)
    out = tmp_path / "failed"
    assert main(["tomography", "--out", str(out)]) == 2
    man = json.loads((out / "tomography.manifest.json").read_text())
    assert man["status"] == "failed" and "integration failed" in man["error"]


def test_unknown_subcommand():
    with pytest.raises(ConfigError):
        dispatch(RunConfig(), "plot")
    with pytest.raises(SystemExit):
        main(["plot"])
