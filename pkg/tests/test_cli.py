import json

import numpy as np
import pytest

from crowdflow import runner
from crowdflow import scenario as scn
from crowdflow.cli import main
from crowdflow.history import DelayLine, PiecewiseLinear


# ---------------------------------------------------------------- scenarios

@pytest.mark.parametrize("name", scn.PRESET_NAMES)
def test_presets_resolve(name):
    sc = scn.resolve(scn.load(name))
    assert sc["mode"] == name.replace("_", "-")
    assert scn.validate(sc) == []


def test_validation_lists_every_problem():
    raw = scn.load("station")
    raw = scn.apply_overrides(raw, ["perception.theta=1.3", "solver.cfl=2.0", "grid.n1=-3"])
    with pytest.raises(scn.ScenarioError) as info:
        scn.resolve(raw)
    msgs = "\n".join(info.value.problems)
    assert "perception.theta must lie in [0.0, 1.0]" in msgs
    assert "solver.cfl" in msgs and "grid.n1" in msgs


def test_unknown_gate_segment_and_bad_edges_are_reported():
    raw = {"mode": "custom", "grid": {"n1": 10, "n2": 10, "dx": 0.1},
           "domain": {"segments": [{"kind": "exit", "edge": "north", "start": 0.0, "end": 0.5}]},
           "gates": [{"axis": 0, "position": 0.5, "lo": 0, "hi": 1, "exit": "nowhere"}]}
    problems = scn.validate(scn._merge(scn.DEFAULTS, raw))
    assert any("edge must be one of" in p for p in problems)
    assert any("unknown segment" in p for p in problems)


def test_overrides_parse_toml_values():
    raw = scn.apply_overrides({}, ["a.b=3", "c='s2'", "d=[1, 2]", "e=true", "f=bare"])
    assert raw == {"a": {"b": 3}, "c": "s2", "d": [1, 2], "e": True, "f": "bare"}
    with pytest.raises(scn.ScenarioError):
        scn.apply_overrides({}, ["noequals"])


def test_resolved_scenario_carries_defaults():
    sc = scn.resolve({"mode": "custom", "grid": {"n1": 10, "n2": 1, "dx": 0.1}})
    assert sc["perception"]["alpha_bar_deg"] == 85.0
    assert sc["perception"]["theta"] == 0.7
    assert sc["perception"]["epsilon"] == 1e-4
    assert sc["diagnostics"]["lowpass_window"] == pytest.approx(0.1 * sc["t_end"])


# ----------------------------------------------------------------- history

def test_piecewise_linear():
    h = PiecewiseLinear([[0, 0], [1, 2], [3, 2], [4, 0]])
    assert h(0.5) == 1.0 and h(-1) == 0.0 and h(10) == 0.0
    assert h.last_nonzero_time() == 4.0
    assert PiecewiseLinear([[0, 1]]).last_nonzero_time() == float("inf")
    with pytest.raises(ValueError):
        PiecewiseLinear([[1, 0], [0, 1]])


def test_delay_line_interpolates_and_forgets():
    d = DelayLine(1.0, np.zeros(2))
    for t in np.arange(0, 5.01, 0.5):
        d.push(t, np.array([t, -t]))
    assert np.allclose(d.at(4.25), [4.25, -4.25])
    assert np.allclose(d.at(100), [5, -5])
    assert len(d._t) <= 4
    with pytest.raises(ValueError):
        d.push(1.0, np.zeros(2))


# --------------------------------------------------------------------- cli

def test_perception_1d_s1_is_flat(tmp_path):
    out = tmp_path / "p1"
    assert main(["run", "perception_test_1d", "--strategy", "s1", "--out-dir", str(out)]) == 0
    header, data = runner.read_csv(out / "perceived.csv")
    rho_p = data[:, header.index("rho_p")]
    assert np.max(np.abs(rho_p - 0.25)) <= 4 * np.finfo(float).eps
    man = runner.read_manifest(out)
    assert man["scenario"]["perception"]["strategy"] == "s1"
    assert man["results"]["status"] == "ok"


def test_invalid_theta_exits_nonzero_with_report(tmp_path, capsys):
    out = tmp_path / "bad"
    code = main(["run", "station", "--override", "perception.theta=1.3", "--out-dir", str(out)])
    assert code != 0
    err = json.loads((out / "error.json").read_text())
    assert err["status"] == "error"
    assert any("theta must lie in [0.0, 1.0]" in p for p in err["problems"])
    assert "theta" in capsys.readouterr().err


def test_missing_scenario_file(tmp_path):
    assert main(["run", str(tmp_path / "nope.toml"), "--out-dir", str(tmp_path / "o")]) == 2


def test_runs_are_byte_identical_and_self_compare_to_zero(tmp_path, capsys):
    dirs = []
    for k in range(2):
        d = tmp_path / f"r{k}"
        assert main(["run", "station", "--t-end", "0.15", "--dump-every", "0.05", "--out-dir", str(d)]) == 0
        dirs.append(d)
    names = sorted(p.name for p in dirs[0].glob("*.csv"))
    assert "flux.csv" in names and "diagnostics.csv" in names and "density_0000.csv" in names
    for n in names:
        assert (dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes()
    man = runner.read_manifest(dirs[0])
    assert abs(man["results"]["mass_audit"]) < 1e-10
    capsys.readouterr()
    rep_path = tmp_path / "rep.json"
    assert main(["compare", str(dirs[0]), str(dirs[1]), "--metric", "diff", "--out", str(rep_path)]) == 0
    rep = json.loads(rep_path.read_text())
    assert all(v == 0.0 for v in rep["max_abs_difference"].values())
    assert main(["compare", str(dirs[0]), str(dirs[1]), "--metric", "flux-peaks"]) == 0
    assert main(["compare", str(dirs[0]), str(dirs[1]), "--metric", "emptying"]) == 0


def test_compare_rejects_incompatible_domains(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "footbridge", "--t-end", "0.05", "--out-dir", str(a)]) == 0
    assert main(["run", "footbridge", "--t-end", "0.05", "--override", "grid.n1=100",
                 "--override", "grid.dx=0.01", "--out-dir", str(b)]) == 0
    capsys.readouterr()
    assert main(["compare", str(a), str(b), "--metric", "diff"]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["kind"] == "incompatible"


def test_footbridge_run_writes_probes_and_snapshots(tmp_path):
    out = tmp_path / "fb"
    assert main(["run", "footbridge", "--t-end", "1.0", "--out-dir", str(out)]) == 0
    header, data = runner.read_csv(out / "probes.csv")
    assert header[0] == "t" and "acc@0.3" in header
    snaps = sorted(out.glob("density_*.csv"))
    assert len(snaps) >= 3
    h, d = runner.read_csv(snaps[-1])
    assert h == ["t", "x", "rho", "rho_p", "v", "g", "envelope"]
    assert abs(runner.read_manifest(out)["results"]["mass_audit"]) < 1e-10


def test_speed_crossing_metric(tmp_path, capsys):
    a, b = tmp_path / "loc", tmp_path / "s3"
    assert main(["run", "footbridge", "--strategy", "s1", "--t-end", "1.0", "--out-dir", str(a)]) == 0
    assert main(["run", "footbridge", "--strategy", "s3", "--t-end", "1.0", "--out-dir", str(b)]) == 0
    capsys.readouterr()
    assert main(["compare", str(a), str(b), "--metric", "speed-crossing"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["metric"] == "speed-crossing" and rep["snapshots"]
