import math

import numpy as np
import pytest

from ksns import cli
from ksns.config import ConfigError, RunConfig, dump_config, load_config, parse_config
from ksns.presets import PRESETS, preset, stokes_pair

SMALL = """
# tiny grid for the tests
dim = 2
cells = 16
lengths = pi, pi
t_end = 2
dt = auto
output.every = 0.1
seed = 3
"""


def test_parse_config_values():
    cfg = parse_config(SMALL + "tensor.kind = rotational\ntensor.c_s = 0.25\nepsilon = 0.02\n")
    assert cfg.cells == (16,) and cfg.lengths == (math.pi, math.pi)
    assert cfg.dt is None and cfg.seed == 3 and cfg.tensor_kind == "rotational"
    sc = cfg.scenarios()[0]
    assert sc.domain.cells == (16, 16) and sc.tensor.c_s == 0.25 and sc.epsilon == 0.02


def test_parse_config_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match=r"^3: unknown key 'celss'"):
        parse_config("dim = 2\n\ncelss = 8\n")
    with pytest.raises(ConfigError, match=r"^2: bad value"):
        parse_config("dim = 2\nt_end = soon\n")
    with pytest.raises(ConfigError, match=r"^1: expected"):
        parse_config("dim 2\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("dim = 2\ndim = 3\n")
    with pytest.raises(ConfigError, match=r"^2: fluid_model"):
        parse_config("dim = 2\nfluid_model = euler\n")
    with pytest.raises(ConfigError, match="custom-cutoff"):
        parse_config("tensor.kind = custom-cutoff\n")


def test_config_round_trip(tmp_path):
    cfg = parse_config(SMALL)
    path = tmp_path / "c.cfg"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_presets_equilibria():
    for name in PRESETS:
        sc = preset(name, 0.0, cells=8)
        assert sc.allow_trivial
    sp = preset("sperm_excess", 0.01, cells=32)
    assert sp.rho_inf == pytest.approx(1.0, abs=1e-14) and sp.m_inf == 0.0
    eg = preset("egg_excess", 0.01, cells=32)
    assert eg.m_inf == pytest.approx(1.0, abs=1e-14) and eg.rho_inf == 0.0
    bal = preset("balanced", 0.01, cells=32)
    assert bal.rho0.mean() == pytest.approx(bal.m0.mean(), rel=1e-14)
    with pytest.raises(ValueError):
        preset("nope")


def test_preset_deviation_scales_with_epsilon():
    a = preset("sperm_excess", 0.01, cells=16)
    b = preset("sperm_excess", 0.02, cells=16)
    assert np.allclose(b.rho0.values - 1, 2 * (a.rho0.values - 1), atol=1e-15)
    assert max(np.abs(c).max() for c in a.u0.components) == pytest.approx(0.01)


def test_stokes_pair():
    ns, st = stokes_pair(0.01, cells=8)
    assert ns.fluid_model == "navier_stokes" and st.fluid_model == "stokes"
    assert np.array_equal(ns.rho0.values, st.rho0.values)
    cfg = RunConfig(cells=(8,), preset="stokes_ab")
    assert [s.fluid_model for s in cfg.scenarios()] == ["navier_stokes", "stokes"]


def test_run_missing_config_exits_2(capsys):
    assert cli.main(["run", "--config", "does-not-exist.cfg"]) == 2
    assert "does-not-exist.cfg" in capsys.readouterr().err


def test_run_bad_config_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("dim = 2\nbogus = 1\n")
    assert cli.main(["run", "--config", str(p)]) == 2
    assert ":2:" in capsys.readouterr().err


def test_run_writes_csv_and_snapshots(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SMALL)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--snapshots", "--deterministic"]) == 0
    header = (out / "diagnostics.csv").read_text().splitlines()[0]
    assert header.startswith("t,mass_rho,mass_m,mass_diff")
    assert (out / "rho_00000.ksf").exists()


def test_out_dir_from_environment(tmp_path, monkeypatch):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SMALL.replace("t_end = 2", "t_end = 0.2"))
    monkeypatch.setenv("KSNS_OUT_DIR", str(tmp_path / "env"))
    assert cli.main(["run", "--config", str(cfg), "--preset", "egg_excess"]) == 0
    assert (tmp_path / "env" / "diagnostics.csv").exists()


def test_semigroup_check_csv(tmp_path):
    code = cli.main(["semigroup-check", "--variant", "i", "--p", "inf", "--q", "1", "--cells", "16", "--out", str(tmp_path)])
    assert code == 0
    lines = (tmp_path / "semigroup_check.csv").read_text().splitlines()
    assert lines[0] == "variant,p,q,t,probe_id,ratio"
    assert lines[1].startswith("i,inf,1.0,")


def test_duhamel_check(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SMALL)
    assert cli.main(["duhamel-check", "--config", str(cfg), "--T", "0.1", "--out", str(tmp_path)]) == 0
    assert cli.main(["duhamel-check", "--config", str(cfg), "--linear", "--T", "0.1"]) == 0
    assert (tmp_path / "duhamel_check.csv").read_text().startswith("kind,key,value")


def test_verify_small_and_deterministic(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SMALL.replace("t_end = 2", "t_end = 12"))
    outs = []
    for k in range(2):
        out = tmp_path / f"v{k}"
        assert cli.main(["verify", "--config", str(cfg), "--out", str(out), "--deterministic"]) == 0
        outs.append(out)
    for name in ("diagnostics.csv", "verify.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_sweep(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SMALL.replace("t_end = 2", "t_end = 6"))
    assert cli.main(["sweep", "--config", str(cfg), "--epsilons", "0.01,0.1", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(rows) == 3


def test_threads_flag():
    from ksns import grid

    assert cli.main(["semigroup-check", "--cells", "8", "--threads", "2", "--times", "5"]) == 0
    assert grid.fft_workers() == 2
    grid.set_fft_workers(1)
