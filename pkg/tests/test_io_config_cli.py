import json
import math

import numpy as np
import pytest

from cgl_lab import config as cfgmod
from cgl_lab.cli import run
from cgl_lab.errors import ConfigInvalid, ValidationError
from cgl_lab.io import fmt_float, read_csv, read_field, read_json, to_json, write_csv, write_field, write_json
from cgl_lab.spectral import SpectralField, make_grid


# ---------------------------------------------------------------------------
# io


def test_json_floats_round_trip(tmp_path):
    vals = [0.1, 1 / 3, 1e-300, -2.5e17, 3.0, np.float64(np.pi)]
    obj = {"a": vals, "b": {"n": 3, "flag": True, "none": None, "z": 1 + 2j}, "arr": np.arange(3) / 7}
    write_json(tmp_path / "x.json", obj)
    back = read_json(tmp_path / "x.json")
    assert back["a"] == [float(v) for v in vals]
    assert back["b"] == {"n": 3, "flag": True, "none": None, "z": [1.0, 2.0]}
    assert back["arr"] == (np.arange(3) / 7).tolist()
    assert "\\u0000" not in (tmp_path / "x.json").read_text()


def test_json_text_is_deterministic():
    assert to_json({"x": 0.1}) == '{\n  "x": 0.10000000000000001\n}\n'
    assert fmt_float(float("nan")) == "NaN"
    assert fmt_float(-math.inf) == "-Infinity"


def test_csv_round_trip(tmp_path):
    rows = [(0, 0.1, 1 / 3), (1, 2.0, -1e-20)]
    write_csv(tmp_path / "x.csv", ["k", "a", "b"], rows)
    head, back = read_csv(tmp_path / "x.csv")
    assert head == ["k", "a", "b"]
    assert back == [[float(v) for v in r] for r in rows]


@pytest.mark.parametrize("d,n", [(1, 32), (2, 8)])
def test_field_snapshot_round_trip(tmp_path, rng, d, n):
    g = make_grid(d, n)
    u = SpectralField.random(g, rng)
    write_field(tmp_path / "u.cglf", u, 1.5)
    v, s = read_field(tmp_path / "u.cglf")
    assert s == 1.5 and v.grid == g
    np.testing.assert_array_equal(v.coeffs, u.coeffs)
    raw = (tmp_path / "u.cglf").read_bytes()
    assert raw[:4] == b"CGLF" and len(raw) == 4 + 4 * 3 + 8 + 16 * n**d


def test_field_snapshot_errors(tmp_path):
    (tmp_path / "bad").write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(ValidationError):
        read_field(tmp_path / "bad")
    (tmp_path / "short").write_bytes(b"CG")
    with pytest.raises(ValidationError):
        read_field(tmp_path / "short")


# ---------------------------------------------------------------------------
# config


def test_defaults():
    cfg = cfgmod.validate({})
    assert cfg.grid.n == 64 and cfg.params.p == 1 and cfg.seed == 0
    assert cfg.mix.members == 256 and cfg.mix.stream == "coupled"
    assert cfg.gramian.n_time_slots == 32
    d = cfg.normalized()
    assert "probe-limit" in d
    assert cfgmod.validate(json.loads(json.dumps(d))) == cfg


def test_alias_and_fields():
    cfg = cfgmod.loads("""
probe-limit:
  deltas: [0.1, 0.01]
solve:
  u0:
    - {kind: const, amp: 0.5}
    - {kind: exp, k: [2], amp: [0.0, 1.0]}
""")
    assert cfg.probe_limit.deltas == [0.1, 0.01]
    g = make_grid(1, 16)
    u = cfgmod.build_field(g, cfg.solve.u0)
    assert u.coefficient((0,)) == 0.5 and u.coefficient((2,)) == 1j


def test_all_violations_reported_with_lines():
    text = "grid:\n  n: 48\nparams:\n  gamma: -1\n  bogus: 3\n"
    with pytest.raises(ConfigInvalid) as info:
        cfgmod.loads(text)
    v = info.value.violations
    assert len(v) == 3
    assert any("grid.n" in m and "(line 2)" in m for m in v)
    assert any("gamma must be >= 0" in m and "(line 4)" in m for m in v)
    assert any("bogus" in m and "(line 5)" in m for m in v)


@pytest.mark.parametrize("doc,needle", [
    ({"params": {"s": 1}, "grid": {"d": 3}}, "s must be > d/2"),
    ({"noise": {"decay": 1.0}}, "decay must be > 1"),
    ({"noise": {"amps_cos": [1.0, 0.0]}}, "amplitudes must be > 0"),
    ({"gramian": {"nsteps": 100, "n_time_slots": 32}}, "multiple"),
    ({"probe-limit": {"deltas": [0.01, 0.1]}}, "decreasing"),
    ({"mix": {"stream": "bad"}}, "mix.stream"),
    ([1, 2], "mapping"),
])
def test_violations(doc, needle):
    with pytest.raises(ConfigInvalid) as info:
        cfgmod.validate(doc)
    assert needle in str(info.value)


def test_yaml_syntax_error():
    with pytest.raises(ConfigInvalid):
        cfgmod.loads("grid: [1,\n")


def test_build_field_dimension_check():
    cfg = cfgmod.loads("solve:\n  u0:\n    - {kind: cos, k: [1, 1]}\n")
    with pytest.raises(ConfigInvalid):
        cfgmod.build_field(make_grid(1, 16), cfg.solve.u0)


# ---------------------------------------------------------------------------
# cli


def _write(tmp_path, text):
    p = tmp_path / "cfg.yaml"
    p.write_text(text)
    return p


def test_cli_exit_2_on_bad_config(tmp_path, capsys):
    p = _write(tmp_path, "grid:\n  n: 48\nparams:\n  gamma: -1\n")
    assert run(["solve", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "line 2" in err and "gamma must be >= 0" in err


def test_cli_exit_2_on_usage():
    assert run(["nosuch"]) == 2
    assert run([]) == 2


def test_cli_exit_3_on_numerical_failure(tmp_path, capsys):
    p = _write(tmp_path, "grid: {n: 32}\nsteer:\n  eps: 1.0e-12\n  N_max: 0\n")
    assert run(["steer", "--config", str(p), "--out", str(tmp_path / "o")]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_cli_solve_outputs_and_determinism(tmp_path):
    p = _write(tmp_path, """
grid: {n: 32}
solve:
  u0: [{kind: cos, k: [1], amp: 0.5}]
  control: [{kind: const, amp: 0.1}]
  T: 0.2
  samples: 4
""")
    for name in ("a", "b"):
        assert run(["solve", "--config", str(p), "--out", str(tmp_path / name), "--quiet"]) == 0
    for f in ("trajectory.csv", "final.cglf", "report.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    head, rows = read_csv(tmp_path / "a" / "trajectory.csv")
    assert head == ["t", "l2", "hs", "lyapunov"] and len(rows) == 5
    rep = read_json(tmp_path / "a" / "report.json")
    assert rep["config"]["grid"]["n"] == 32


def test_cli_saturate(tmp_path):
    p = _write(tmp_path, "grid: {n: 32}\nsaturate: {j_max: 2, diagnostic_levels: 1}\n")
    assert run(["saturate", "--config", str(p), "--out", str(tmp_path / "o"), "--quiet"]) == 0
    rep = read_json(tmp_path / "o" / "report.json")
    assert rep["generator"] is True and rep["monotone"] is True
    assert [lv["count"] for lv in rep["levels"]] == [2, 4, 10]


def test_cli_probe_limit(tmp_path):
    p = _write(tmp_path, "grid: {n: 32}\nprobe-limit:\n  deltas: [0.1, 0.01]\n")
    assert run(["probe-limit", "--config", str(p), "--out", str(tmp_path / "o"), "--quiet"]) == 0
    head, rows = read_csv(tmp_path / "o" / "probe.csv")
    assert head == ["delta", "error", "relative"] and len(rows) == 2


def test_cli_gramian_small(tmp_path):
    p = _write(tmp_path, "grid: {n: 16}\ngramian: {nsteps: 64, n_time_slots: 4, probe_kmax: 2, T: 0.25}\n")
    assert run(["gramian", "--config", str(p), "--out", str(tmp_path / "o"), "--quiet"]) == 0
    head, rows = read_csv(tmp_path / "o" / "singular_values.csv")
    assert head == ["index", "sigma"] and len(rows) == 10


def test_cli_mix_seed_reproducible(tmp_path):
    p = _write(tmp_path, "grid: {n: 16}\nnoise: {j_max: 1}\nmix: {members: 4, steps: 3}\n")
    for name in ("a", "b"):
        assert run(["mix", "--config", str(p), "--seed", "9", "--out", str(tmp_path / name), "--quiet"]) == 0
    for f in ("series.csv", "report.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert read_json(tmp_path / "a" / "report.json")["config"]["seed"] == 9
    assert run(["mix", "--config", str(p), "--seed", "10", "--out", str(tmp_path / "c"), "--quiet"]) == 0
    assert (tmp_path / "c" / "series.csv").read_bytes() != (tmp_path / "a" / "series.csv").read_bytes()


def test_cli_steer_full(tmp_path):
    p = _write(tmp_path, """
grid: {n: 32}
mask: {kind: constant}
steer:
  mode: full
  u1: [{kind: cos, k: [1], amp: 0.1}]
  eps: 0.05
""")
    assert run(["steer", "--config", str(p), "--out", str(tmp_path / "o"), "--quiet"]) == 0
    rep = read_json(tmp_path / "o" / "report.json")
    assert rep["replay_gap"] == 0.0
    assert rep["duration"] == pytest.approx(1.0)
    for f in ("plan.json", "trace.csv", "final.cglf"):
        assert (tmp_path / "o" / f).exists()
