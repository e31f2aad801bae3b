import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from elastohom import config as cfgmod
from elastohom.cli import build_parser, main
from elastohom.coefficients import isotropic_constant, save_coefficient_file
from elastohom.errors import EXIT_CODES, GridMismatch, InvalidInput
from elastohom.grid import CellGrid


def write_cfg(path, **kw):
    path.write_text(cfgmod.serialize(cfgmod.RunConfig(**kw)))
    return str(path)


def test_default_roundtrip():
    c = cfgmod.RunConfig()
    assert cfgmod.parse(cfgmod.serialize(c)) == c


@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(-0.95, 0.95), st.integers(2, 20).map(lambda k: 2 * k),
       st.integers(0, 2 ** 31), st.lists(st.floats(1e-4, 0.5), min_size=1, max_size=6))
def test_roundtrip_lossless(lam, mu, delta, n, seed, eps):
    c = cfgmod.RunConfig(lam=lam, mu=mu, delta=delta, n=n, seed=seed, eps=tuple(eps))
    assert cfgmod.parse(cfgmod.serialize(c)) == c


@pytest.mark.parametrize("text", [
    "[nonsense]\nx = 1\n",
    "[grid]\nbogus = 3\n",
    "[grid]\nn = seven\n",
    "[grid]\nn = 7\n",
    "[harness]\ntruncation = exact\n",
    "[coefficients]\npreset = file\n",
    "not an ini file",
])
def test_parse_rejects(text):
    with pytest.raises(InvalidInput):
        cfgmod.parse(text)


def test_file_grid_mismatch(tmp_path):
    p = tmp_path / "c.txt"
    save_coefficient_file(isotropic_constant(CellGrid(4), 1, 1), p)
    with pytest.raises(GridMismatch):
        cfgmod.RunConfig(preset="file", file=str(p), n=8).coefficients()


def test_help_lists_exit_codes():
    text = build_parser().format_help()
    for name, code in EXIT_CODES.items():
        assert name in text and str(code) in text


def test_exit_codes_distinct():
    assert len(set(EXIT_CODES.values())) == len(EXIT_CODES)
    assert all(c not in (0, 1) for c in EXIT_CODES.values())


def test_constants_command(capsys):
    assert main(["constants", "--nu", "1", "--korn", "1"]) == 0
    assert json.loads(capsys.readouterr().out) == {"C0": 3.0, "C1": 3.0, "C2": 30.0, "C": 30.0, "C_error": 32.0}
    assert main(["constants", "--nu", "-1", "--korn", "1"]) == EXIT_CODES["InvalidInput"]


def test_validate_isotropic_constant(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "run.ini", preset="isotropic_constant", n=8, out=str(tmp_path / "out"))
    assert main(["validate", "--config", cfg]) == 0
    assert json.loads(capsys.readouterr().out)["nu"] == pytest.approx(2.0)
    cert = json.loads((tmp_path / "out" / "certificate.json").read_text())
    assert cert["passed"] and cert["symmetric"]


def test_validate_strong_modulation(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "run.ini", delta=0.99, n=8, out=str(tmp_path / "out"))
    assert main(["validate", "--config", cfg]) == 0
    assert json.loads(capsys.readouterr().out)["nu"] == pytest.approx(0.02, rel=1e-9)


def test_validate_corrupted_file(tmp_path):
    A = isotropic_constant(CellGrid(4), 1.0, 1.0)
    p = tmp_path / "coef.txt"
    save_coefficient_file(A, p)
    lines = p.read_text().split()
    lines[1 + 27] = "5.0"  # component (1,0,0,0) of the first node, breaking minor symmetry
    p.write_text(" ".join(lines))
    cfg = write_cfg(tmp_path / "run.ini", preset="file", file=str(p), n=4, out=str(tmp_path / "out"))
    assert main(["validate", "--config", cfg]) == EXIT_CODES["SymmetryViolation"] == 2


def test_bands_without_separation_exits_3(tmp_path):
    # constant tensor at mu = pi: the k = -e1 band touches the lowest one at the cell boundary
    cfg = write_cfg(tmp_path / "run.ini", preset="isotropic_constant", n=8, mu_candidates=(np.pi,),
                    out=str(tmp_path / "out"))
    assert main(["bands", "--config", cfg]) == EXIT_CODES["NoSeparation"] == 3


def test_missing_config_is_invalid_input(tmp_path):
    assert main(["validate", "--config", str(tmp_path / "nope.ini")]) == EXIT_CODES["InvalidInput"]


@pytest.fixture(scope="module")
def converge_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    contour = base / "contour.json"
    contour.write_text(json.dumps({"center": 1.967, "radius": 1.489, "M": 64, "mu": np.pi / 2,
                                   "rho0_measured": 0.478}))
    outs = []
    for tag in ("a", "b"):
        cfg = write_cfg(base / f"{tag}.ini", n=8, max_cycles=1, eps=(0.5,) + tuple(2.0 ** -k for k in range(3, 8)),
                        out=str(base / tag))
        code = main(["converge", "--config", cfg, "--contour", str(contour)])
        outs.append((code, base / tag))
    return outs


def test_converge_outputs(converge_runs):
    code, out = converge_runs[0]
    assert code == 0
    for name in ("report.json", "points.csv", "plot.dat", "convergence_reduced_l2.png"):
        assert (out / name).stat().st_size > 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["passed"] and 0.5 not in rep["metadata"]["eps"]


def test_converge_csv_byte_identical(converge_runs):
    (_, a), (_, b) = converge_runs
    assert (a / "points.csv").read_bytes() == (b / "points.csv").read_bytes()
    assert (a / "plot.dat").read_bytes() == (b / "plot.dat").read_bytes()
