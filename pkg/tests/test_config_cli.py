import json
import os

import numpy as np
import pytest

from qjumps import cli, config
from qjumps.exceptions import ConfigurationError, GeometryError

TWO_LEVEL = """
[model]
kind = two_level
alpha = 1.0
initial_state = 0

[dynamics]
dt = 0.01
horizon = 5.0
t_max = 5.0
ode_dt = 0.01
sampler = {sampler}

[ensemble]
n_trajectories = {m}
master_seed = 31
snapshot_times = 0.5, 1.0

[output]
formats = csv, records
"""

SMALL_CAVITY = """
[model]
grid_shape = 10, 6
wall_column = 4
slits = 1:2, 4:5
n_pixels = 6
kernel_range = 0.8
alpha = 1.0
packet_center = 2.0, 3.5
packet_width = 1.0
packet_momentum = 1.0, 0.0

[dynamics]
dt = 0.05
horizon = 4.0
t_max = 4.0
ode_dt = 0.05
snapshot_interval = 1.0

[ensemble]
n_trajectories = 200
master_seed = 5
snapshot_times = 1.0, 2.0
"""


def _write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _files(directory):
    return {n: open(os.path.join(directory, n), "rb").read() for n in sorted(os.listdir(directory))}


# ---- configuration ----

@pytest.mark.parametrize("name", ["double_slit", "double_slit_large", "two_level"])
def test_presets_round_trip(name):
    cfg = config.preset(name)
    text = config.dumps(cfg)
    again = config.loads(text)
    assert again == cfg
    assert config.dumps(again) == text


def test_partial_config_takes_defaults():
    cfg = config.loads("[dynamics]\nhorizon = 3.5\n")
    assert cfg.dynamics.horizon == 3.5
    assert cfg.model == config.ModelSection()


def test_float_values_survive_round_trip():
    cfg = config.loads("[model]\nalpha = 0.1\n[dynamics]\ndt = 0.003\nhorizon = 0.30000000000000004\n")
    assert config.loads(config.dumps(cfg)).dynamics.horizon == 0.30000000000000004


@pytest.mark.parametrize("text,match", [
    ("[model]\nalpah = 1.0\n", "unknown key"),
    ("[modle]\nalpha = 1.0\n", "unknown section"),
    ("[model]\nalpha = fast\n", "cannot parse"),
    ("[model]\nkind = triple_slit\n", "kind"),
    ("[dynamics]\nsampler = euler\n", "sampler"),
    ("[dynamics]\ndt = -1\n", "dt"),
    ("[ensemble]\nsnapshot_times = 500\n", "snapshot"),
    ("[ensemble]\nmaster_seed = -3\n", "seed"),
    ("[output]\nformats = hdf5\n", "format"),
    ("[model]\nkernel_range = 0.05\n", "h/10"),
    ("not an ini file", "malformed"),
])
def test_invalid_configs_are_rejected(text, match):
    with pytest.raises(ConfigurationError, match=match):
        config.loads(text)


def test_overlapping_slits_raise_geometry_error():
    with pytest.raises(GeometryError):
        config.loads("[model]\nslits = 1:4, 3:6\n")


def test_overrides_and_hash():
    cfg = config.preset("two_level")
    other = cfg.with_overrides(seed=7, workers=3, directory="x")
    assert other.ensemble.master_seed == 7 and other.ensemble.workers == 3
    assert other.output.directory == "x"
    assert config.config_hash(cfg) != config.config_hash(other)
    assert config.config_hash(cfg) == config.config_hash(config.loads(config.dumps(cfg)))


def test_missing_file_is_a_configuration_error(tmp_path):
    with pytest.raises(ConfigurationError):
        config.load(str(tmp_path / "nope.ini"))


def test_build_model_cavity_and_pixel_start():
    cfg = config.loads(SMALL_CAVITY)
    built = config.build_model(cfg)
    assert built.generator.dim == 66
    assert built.bins == tuple(range(60, 66))
    pix = config.loads(SMALL_CAVITY.replace("packet_width = 1.0", "packet_width = 1.0\ninitial_state = pixel:2"))
    psi = config.build_model(pix).psi0
    assert psi[62] == 1 and np.count_nonzero(psi) == 1
    with pytest.raises(ConfigurationError):
        config.loads(SMALL_CAVITY.replace("packet_width = 1.0", "packet_width = 1.0\ninitial_state = pixel:9"))


# ---- command line ----

def test_master_command(tmp_path, capsys):
    out = tmp_path / "m"
    rc = cli.main(["master", "--config", _write(tmp_path, SMALL_CAVITY), "--out", str(out)])
    assert rc == 0
    files = _files(out)
    assert {"master_observables.csv", "pixel_populations.csv", "manifest.json",
            "effective_config.ini"} <= set(files)
    manifest = json.loads(files["manifest.json"])
    assert manifest["command"] == "master" and float(manifest["results"]["trace_drift"]) < 1e-10
    assert "master:" in capsys.readouterr().out


def test_master_closed_system_has_empty_screen(tmp_path):
    out = tmp_path / "m0"
    text = SMALL_CAVITY.replace("alpha = 1.0", "alpha = 0.0")
    assert cli.main(["master", "--config", _write(tmp_path, text), "--out", str(out)]) == 0
    rows = (out / "pixel_populations.csv").read_text().splitlines()[1:]
    assert all(float(r.split(",")[2]) == 0.0 for r in rows)


def test_master_stationary_pixel_start_is_constant(tmp_path):
    out = tmp_path / "ms"
    text = SMALL_CAVITY.replace("packet_width = 1.0", "packet_width = 1.0\ninitial_state = pixel:1")
    assert cli.main(["master", "--config", _write(tmp_path, text), "--out", str(out)]) == 0
    lines = (out / "master_observables.csv").read_text().splitlines()[1:]
    values = {}
    for line in lines:
        t, name, v = line.split(",")
        values.setdefault(name, set()).add(v)
    assert all(len(v) == 1 for v in values.values())


def test_master_refuses_large_models(tmp_path, capsys):
    rc = cli.main(["master", "--preset", "double_slit_large", "--out", str(tmp_path / "big")])
    assert rc == 2
    assert "trajectories" in capsys.readouterr().err


def test_configuration_errors_exit_with_2(tmp_path, capsys):
    bad = _write(tmp_path, "[model]\nkernel_range = 0.01\n")
    assert cli.main(["validate", "--config", bad]) == 2
    bad = _write(tmp_path, "[model]\nslits = 1:4, 2:6\n", "slits.ini")
    assert cli.main(["validate", "--config", bad]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_validate_default_passes(tmp_path, capsys):
    rc = cli.main(["validate", "--out", str(tmp_path / "v")])
    out = capsys.readouterr().out
    assert rc == 0, out
    assert "FAIL" not in out and out.count("PASS") == 7


def test_numerical_failures_exit_with_3(tmp_path, monkeypatch):
    from qjumps import doubleslit
    from qjumps.exceptions import IntegrationError

    def broken(*a, **k):
        raise IntegrationError("survival increased")

    monkeypatch.setattr(cli, "escape_probability", broken)
    assert cli.main(["escape", "--config", _write(tmp_path, SMALL_CAVITY),
                     "--out", str(tmp_path / "e")]) == 3


def test_escape_command(tmp_path):
    out = tmp_path / "e"
    text = SMALL_CAVITY.replace("ode_dt = 0.05", "ode_dt = 0.02")
    assert cli.main(["escape", "--config", _write(tmp_path, text), "--out", str(out)]) == 0
    summary = dict(line.split(",") for line in (out / "escape_summary.csv").read_text().splitlines()[1:])
    assert abs(float(summary["p_esc"]) - float(summary["unnormalized_survival"])) <= 1e-8
    curve = [float(l.split(",")[1]) for l in (out / "escape_curve.csv").read_text().splitlines()[1:]]
    assert curve[0] == 1.0 and all(b <= a for a, b in zip(curve, curve[1:]))


@pytest.mark.parametrize("sampler", ["waiting", "spectral"])
def test_trajectories_two_level_outputs(tmp_path, sampler):
    out = tmp_path / sampler
    path = _write(tmp_path, TWO_LEVEL.format(sampler=sampler, m=500))
    assert cli.main(["trajectories", "--config", path, "--out", str(out)]) == 0
    files = _files(out)
    assert {"histogram.csv", "observables.csv", "records.txt", "ks_report.csv"} <= set(files)
    hist = files["histogram.csv"].decode().splitlines()
    assert hist[0] == "pixel_index,pixel_row,count,frequency,stderr"
    assert files["records.txt"].decode().count("# qjumps trajectory record v1") == 500


def test_trajectories_are_byte_identical_across_runs_and_workers(tmp_path):
    path = _write(tmp_path, SMALL_CAVITY)
    runs = []
    for k, workers in enumerate((1, 1, 4)):
        out = tmp_path / f"run{k}"
        assert cli.main(["trajectories", "--config", path, "--workers", str(workers),
                         "--out", str(out)]) == 0
        runs.append(_files(out))
    for name in ("histogram.csv", "observables.csv"):
        assert runs[0][name] == runs[1][name] == runs[2][name]


def test_single_trajectory_is_reproducible(tmp_path):
    path = _write(tmp_path, TWO_LEVEL.format(sampler="waiting", m=1))
    out = tmp_path / "a"
    assert cli.main(["trajectories", "--config", path, "--seed", "77", "--out", str(out)]) == 0
    first = _files(out)
    assert cli.main(["trajectories", "--config", path, "--seed", "77", "--out", str(out)]) == 0
    assert _files(out) == first


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "qjumps", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "qjumps" in res.stdout
