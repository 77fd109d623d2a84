import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phs_mfem.cli import (ConfigError, compile_expression, emit_svg, main, parse_config, read_csv,
                          run_command, write_csv)
from phs_mfem.model import TAPER, make_wave_preset

INLINE_WAVE = """
[system]
n = 1
domain = [0.0, 1.0]
A = [[1.0]]
K = [0.5]
theta_q = ["(10 - x)/10"]
theta_p = ["10/(10 - x)"]
b_p = ["where((x >= 0) & (x <= 0.1), 3e4*x**2*(x - 0.1)**2, 0)"]
"""


def test_minimal_config_defaults():
    cfg = parse_config('[system]\npreset = "wave"\n')
    assert cfg.system.name == "wave"
    assert cfg.N_list == (10, 20, 40, 80, 160, 320)
    assert cfg.scheme == "mfem" and cfg.T == 20.0 and cfg.dt is None
    assert cfg.state_weight == 10.0 and cfg.control_weight == 1e-3
    assert cfg.formats == ("csv", "svg") and cfg.seed == 0


def test_empty_document_is_wave():
    assert parse_config("").system.name == "wave"


def test_negative_damping_message():
    with pytest.raises(ConfigError, match="K must be positive definite") as info:
        parse_config('[system]\npreset = "wave"\nkappa1 = -1\n')
    assert info.value.line == 3


def test_taper_expression_matches_preset():
    f = compile_expression("(10 - x)/10")
    x = np.linspace(0, 1, 1001)
    assert np.max(np.abs(f(x) - TAPER(x))) <= 1e-15


def test_inline_system_matches_preset():
    cfg = parse_config(INLINE_WAVE)
    ref = make_wave_preset()
    x = np.linspace(0, 1, 501)
    np.testing.assert_allclose(cfg.system.theta_q[0](x), ref.theta_q[0](x), rtol=0, atol=1e-15)
    np.testing.assert_allclose(cfg.system.theta_p[0](x), ref.theta_p[0](x), rtol=1e-15)
    np.testing.assert_allclose(cfg.system.b_p(x, 0, 0), ref.b_p(x, 0, 0), rtol=1e-14, atol=1e-300)
    assert cfg.system.input_dim == 1


@pytest.mark.parametrize("text,line,kind", [
    ('[system]\npreset = "wave"\nkapa = 1\n', 3, "unknown_key"),
    ('speed = 3\n', 1, "unknown_key"),
    ('[plot]\ncolour = "red"\n', 1, "unknown_key"),
    ('[mesh]\nN = [10, "20"]\n', 2, "type"),
    ('[mesh]\nN = [20, 10]\n', 2, "invariant"),
    ('[mesh]\nscheme = "dg"\n', 2, "invariant"),
    ('[simulate]\nT = "long"\n', 2, "type"),
    ('[mesh]\nN = [10,\n', 2, "syntax"),
    ('seed = -1\n', 1, "type"),
    ('[system]\npreset = "wave"\n\nrho0 = 0\n', 4, "invariant"),
])
def test_config_errors_have_locations(text, line, kind):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == line
    assert info.value.kind == kind


def test_inline_expression_errors():
    bad = INLINE_WAVE.replace('"(10 - x)/10"', '"__import__(1)"')
    with pytest.raises(ConfigError, match="unsupported|unknown") as info:
        parse_config(bad)
    assert info.value.line == 7
    with pytest.raises(ConfigError, match="positive"):
        parse_config(INLINE_WAVE.replace('"(10 - x)/10"', '"x - 0.5"'))


def test_expression_grammar():
    f = compile_expression("sqrt(x) + exp(-x) * sin(pi * x) - 2**x + where(0.2 < x < 0.5, 1, 0)")
    x = np.array([0.3, 0.7])
    expect = np.sqrt(x) + np.exp(-x) * np.sin(np.pi * x) - 2.0**x + np.array([1.0, 0.0])
    np.testing.assert_allclose(f(x), expect, rtol=1e-15)
    for bad in ("x.real", "open('f')", "[1, 2]", "lambda: 1", "y + 1"):
        with pytest.raises(ValueError):
            compile_expression(bad)


def test_overrides_change_hash():
    cfg = parse_config("")
    other = cfg.with_overrides(N_list=[10, 20])
    assert cfg.digest != other.digest
    assert parse_config("").digest == cfg.digest
    assert other.N_list == (10, 20)


def test_empty_table_is_header_only(tmp_path):
    p = write_csv(tmp_path / "t.csv", ["a", "b"], [])
    assert p.read_bytes() == b"a,b\n"


@settings(max_examples=50)
@given(st.lists(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=3, max_size=3),
                max_size=8))
def test_csv_round_trip(tmp_path_factory, rows):
    p = tmp_path_factory.mktemp("csv") / "t.csv"
    write_csv(p, ["x", "y", "z"], rows)
    header, back = read_csv(p)
    assert header == ["x", "y", "z"]
    assert back == [[float(v) for v in r] for r in rows]
    assert b"\r" not in p.read_bytes()


def test_csv_nan_round_trip(tmp_path):
    write_csv(tmp_path / "n.csv", ["v"], [[float("nan")], [1.5]])
    _, rows = read_csv(tmp_path / "n.csv")
    assert math.isnan(rows[0][0]) and rows[1][0] == 1.5


def test_svg_is_deterministic(tmp_path):
    x = np.linspace(0, 1, 50)
    a = emit_svg(tmp_path / "a.svg", [("s", x, np.sin(x))], xlabel="x", ylabel="y")
    b = emit_svg(tmp_path / "b.svg", [("s", x, np.sin(x))], xlabel="x", ylabel="y")
    assert a.read_bytes() == b.read_bytes()
    text = a.read_text()
    assert text.count("<polyline") == 1 and ">x<" in text and ">y<" in text


def _run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_verify_defaults(tmp_path, capsys):
    code, out, err = _run(["verify", "--out", str(tmp_path)], capsys)
    assert code == 0, err
    rec = json.loads(out)
    assert rec["contracts"]["oracle_suite"]
    header, rows = read_csv(rec["artifacts"][0])
    assert all(r[-1] == 1.0 for r in rows)


def test_stability_piezo_csv(tmp_path, capsys):
    cfg = tmp_path / "piezo.toml"
    cfg.write_text('[system]\npreset = "piezo"\n')
    code, out, err = _run(["stability", "--config", str(cfg), "--out", str(tmp_path), "--n-list", "10,100"],
                          capsys)
    assert code == 0, err
    sweep = next(p for p in json.loads(out)["artifacts"] if "sweep" in p)
    header, rows = read_csv(sweep)
    col = header.index("delta_d")
    assert all(abs(r[col] - 8 / 9) <= 1e-6 for r in rows)


def test_sweep_fem_degenerates(tmp_path, capsys):
    code, out, err = _run(["sweep", "--out", str(tmp_path), "--scheme", "fem", "--n-list", "10,20,40"], capsys)
    assert code == 0, err
    path = next(p for p in json.loads(out)["artifacts"] if p.endswith("fem.csv"))
    header, rows = read_csv(path)
    col = header.index("sigma_max_open")
    assert abs(rows[-1][col]) < abs(rows[0][col])


def test_lqr_and_simulate(tmp_path, capsys):
    code, out, err = _run(["lqr", "--out", str(tmp_path), "--n-list", "10,20"], capsys)
    assert code == 0, err
    arts = json.loads(out)["artifacts"]
    assert sum(p.endswith(".svg") for p in arts) == 2
    code, out, err = _run(["simulate", "--out", str(tmp_path), "--format", "csv"], capsys)
    assert code == 0, err
    rec = json.loads(out)
    assert all(rec["contracts"].values())
    assert all(p.endswith(".csv") for p in rec["artifacts"])


def test_artifacts_are_reproducible(tmp_path, capsys):
    argv = ["simulate", "--out", str(tmp_path), "--format", "svg"]
    _, first, _ = _run(argv, capsys)
    path = json.loads(first)["artifacts"][0]
    blob = open(path, "rb").read()
    _, second, _ = _run(argv, capsys)
    assert json.loads(second)["artifacts"][0] == path
    assert open(path, "rb").read() == blob


def test_error_record(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text('[system]\npreset = "wave"\nkappa1 = -1\n')
    code, out, err = _run(["stability", "--config", str(cfg), "--out", str(tmp_path)], capsys)
    assert code == 2 and out == ""
    rec = json.loads(err)
    assert rec == {"command": "stability", "kind": "invariant", "line": 3,
                   "message": "K must be positive definite", "status": "error"}


def test_missing_config_file(tmp_path, capsys):
    code, _, err = _run(["verify", "--config", str(tmp_path / "nope.toml")], capsys)
    assert code == 3 and json.loads(err)["kind"] == "io"


def test_lqr_without_inputs(tmp_path, capsys):
    cfg = tmp_path / "p.toml"
    cfg.write_text('[system]\npreset = "piezo"\n')
    code, _, err = _run(["lqr", "--config", str(cfg), "--out", str(tmp_path)], capsys)
    assert code == 2 and "no inputs" in json.loads(err)["message"]


def test_run_command_rejects_unknown(tmp_path):
    with pytest.raises(ConfigError):
        run_command("plot", parse_config("").with_overrides(out_dir=tmp_path))
