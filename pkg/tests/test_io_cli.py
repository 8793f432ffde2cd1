import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lattice_qms import io
from lattice_qms.algebra import SM, SX, SZ, LocalOperator, Volume
from lattice_qms.cli import main
from lattice_qms.generators import LindbladSpec
from lattice_qms.models import ising_model

MANIFESTS = Path(__file__).resolve().parent.parent / "manifests"


def write_toml(path, text):
    path.write_text(text)
    return str(path)


def run_cli(*argv):
    return main(list(argv))


def summary(out):
    return json.loads((Path(out) / "summary.json").read_text())


def read_table(path):
    lines = Path(path).read_text().splitlines()
    assert lines[0].startswith("# manifest_sha256=")
    return lines[1].split(","), [r.split(",") for r in lines[2:]]


@given(st.complex_numbers(allow_nan=False, allow_infinity=False))
def test_complex_round_trip_is_exact(z):
    assert io.parse_complex(io.format_complex(z)) == z


def test_parse_complex_forms():
    assert io.parse_complex([1.5, -2]) == 1.5 - 2j
    assert io.parse_complex("0.25 - 1j") == 0.25 - 1j
    assert io.parse_complex(3) == 3


def test_matrix_text_round_trip():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    assert np.array_equal(io.matrix_from_text(io.matrix_to_text(m)), m)
    assert np.array_equal(io.matrix_from_text("sz"), SZ)
    with pytest.raises(ValueError):
        io.matrix_from_text("sq")


def test_manifest_round_trip_and_hash(tmp_path):
    m = io.load_manifest(MANIFESTS / "expand_ising_weak.toml")
    io.dump_manifest(m, tmp_path / "m.json")
    again = io.load_manifest(tmp_path / "m.json")
    assert again == m
    assert io.manifest_hash(again) == io.manifest_hash(m)
    changed = json.loads(json.dumps(m))
    changed["model"]["J"] = 0.003
    assert io.manifest_hash(changed) != io.manifest_hash(m)


def test_to_jsonable():
    out = io.to_jsonable({"a": np.float64(math.inf), "b": 1 + 2j, "v": Volume.of(1, 2),
                          "n": np.arange(2)})
    assert out == {"a": "inf", "b": "1+2j", "v": [[1], [2]], "n": [0, 1]}


def test_explicit_model_round_trip():
    spec = LindbladSpec(LocalOperator.site(0, 0.3 * SZ), (LocalOperator.site(0, SM),))
    edge = Volume.chain(2)
    block = io.model_block(spec, {edge: (0.05 * np.kron(SX, SX), [])}, N=4)
    model = io.build_model(json.loads(json.dumps(block)))
    ref = ising_model(0.3, 0.05, 4)
    assert np.allclose(model.generator().matrix.toarray(), ref.generator().matrix.toarray(), atol=1e-14)
    with pytest.raises(ValueError):
        io.build_model({"preset": "potts"})


def test_observable_blocks():
    a = io.observable_from_block({"site": 2, "matrix": "sx"})
    assert a.support == Volume.of(2) and np.array_equal(a.matrix, SX)
    b = io.observable_from_block({"sites": [[0], [1]], "matrix": io.matrix_to_text(np.kron(SZ, SZ))})
    assert b.support == Volume.chain(2)


def test_validate(tmp_path):
    assert run_cli("run", "--manifest", str(MANIFESTS / "validate_ising.toml"), "--out", str(tmp_path)) == 0
    res = summary(tmp_path)["result"]
    assert abs(res["gap"] - 0.5) < 1e-10 and res["M"] <= 4 and res["verdict"]
    assert res["feasible"] is False and "epsilon" in res["infeasibility"]


def test_gap(tmp_path, frozen):
    assert run_cli("run", "--manifest", str(MANIFESTS / "gap_ising.toml"), "--out", str(tmp_path)) == 0
    assert abs(summary(tmp_path)["result"]["gap"] - frozen["finite_volume"]["n4_gap"]) < 1e-10


def test_evolve(tmp_path, frozen):
    assert run_cli("run", "--manifest", str(MANIFESTS / "evolve_ising.toml"), "--out", str(tmp_path)) == 0
    header, rows = read_table(tmp_path / "table_relaxation.csv")
    assert header == ["t", "distance", "bound"] and len(rows) == 41
    ref = frozen["finite_volume"]["n5_centered"]["distances"]
    assert np.allclose([float(r[1]) for r in rows], ref, rtol=1e-6, atol=1e-13)
    assert summary(tmp_path)["result"]["fitted_rate"] > 0.5


def test_stationary_and_bounds(tmp_path):
    m = tmp_path / "m.toml"
    write_toml(m, """command = "stationary"
[model]
preset = "ising"
h = 0.3
J = 0.002
N = 3
centered = true
[observable]
matrix = "sz"
[params]
g_prime = 0.2
""")
    assert run_cli("run", "--manifest", str(m), "--out", str(tmp_path / "s")) == 0
    s = summary(tmp_path / "s")
    assert set(s["values"]) == {"sz@-1", "sz@0", "sz@1"}
    assert s["params"]["mode"] == "theorem" and s["result"]["kernel_dimension"] == 1
    assert run_cli("run", "--manifest", str(MANIFESTS / "bounds.toml"), "--out", str(tmp_path / "b")) == 0
    header, rows = read_table(tmp_path / "b" / "table_truncation_tail.csv")
    tails = [float(r[1]) for r in rows]
    assert tails == sorted(tails, reverse=True)


def test_correlations(tmp_path, frozen):
    assert run_cli("run", "--manifest", str(MANIFESTS / "correlations_ising.toml"),
                   "--out", str(tmp_path)) == 0
    _, rows = read_table(tmp_path / "table_correlations.csv")
    assert [int(r[0]) for r in rows] == [2, 3, 4, 5]
    assert abs(float(rows[0][2]) - frozen["finite_volume"]["n6_correlations"]["2"]) < 1e-12
    assert summary(tmp_path)["result"]["log_slope"] < 0


def test_transport(tmp_path, frozen):
    assert run_cli("run", "--manifest", str(MANIFESTS / "transport.toml"), "--out", str(tmp_path)) == 0
    res = summary(tmp_path)["result"]
    assert abs(res["j_sc"] - frozen["transport"]["self_consistent"]["4"]["j_sc"]) < 2e-8
    assert res["max_bulk_current"] <= 1e-8 and res["max_residual"] <= 1e-9


def test_scaling_manifest_requires_heatbath(tmp_path):
    m = write_toml(tmp_path / "m.toml", 'command = "scaling"\n[model]\npreset = "ising"\nN = 2\n')
    assert run_cli("run", "--manifest", m, "--out", str(tmp_path / "o")) == 1


def test_expand_is_bit_identical(tmp_path):
    manifest = str(MANIFESTS / "expand_ising_weak.toml")
    assert run_cli("run", "--manifest", manifest, "--out", str(tmp_path / "a")) == 0
    assert run_cli("run", "--manifest", manifest, "--out", str(tmp_path / "b"), "--threads", "2") == 0
    for name in ("summary.json", "table_partial_sums.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    res = summary(tmp_path / "a")["result"]
    assert res["truncation_bound"] > 0 and res["diagram_count"] > 0


def test_exit_codes(tmp_path):
    assert run_cli("run", "--manifest", str(MANIFESTS / "expand_ising.toml"), "--out", str(tmp_path)) == 2
    m = write_toml(tmp_path / "edge.toml", 'command = "bounds"\n[model]\npreset = "ising"\nN = 1\n'
                   '[params]\ninv_l = 0.6931471805599453\n')
    assert run_cli("run", "--manifest", m, "--out", str(tmp_path / "e")) == 2
    m = write_toml(tmp_path / "deg.toml", 'command = "validate"\n[model]\npreset = "explicit"\n'
                   'hamiltonian = "sz"\n')
    assert run_cli("run", "--manifest", m, "--out", str(tmp_path / "d")) == 3
    m = write_toml(tmp_path / "bad.toml", 'command = "dance"\n')
    assert run_cli("run", "--manifest", m, "--out", str(tmp_path / "x")) == 1
    assert run_cli("run", "--manifest", str(tmp_path / "missing.toml")) == 1
    with pytest.raises(SystemExit) as err:
        run_cli("frobnicate")
    assert err.value.code == 1


def test_compare(tmp_path):
    weak = str(MANIFESTS / "expand_ising_weak.toml")
    assert run_cli("run", "--manifest", weak, "--out", str(tmp_path / "e")) == 0
    m = write_toml(tmp_path / "s.toml", """command = "stationary"
[model]
preset = "ising"
h = 0.3
J = 0.002
N = 5
centered = true
[observable]
site = 0
matrix = "sz"
[params]
g_prime = 0.2
""")
    assert run_cli("run", "--manifest", m, "--out", str(tmp_path / "s")) == 0
    assert run_cli("compare", str(tmp_path / "e"), str(tmp_path / "s"), "--out", str(tmp_path / "c")) == 0
    report = json.loads((tmp_path / "c" / "compare.json").read_text())
    assert report["all_within"] and report["rows"][0]["key"] == "sz@0"
    # same model, values pushed apart beyond both bounds
    bad = summary(tmp_path / "s")
    bad["values"]["sz@0"]["value"] = "10+0j"
    (tmp_path / "bad").mkdir()
    (tmp_path / "bad" / "summary.json").write_text(json.dumps(bad))
    assert run_cli("compare", str(tmp_path / "e"), str(tmp_path / "bad")) == 4
    assert run_cli("compare", str(tmp_path / "e"), str(tmp_path / "nowhere")) == 1
    other = summary(tmp_path / "s")
    other["manifest"]["model"]["J"] = 0.004
    (tmp_path / "other").mkdir()
    (tmp_path / "other" / "summary.json").write_text(json.dumps(other))
    assert run_cli("compare", str(tmp_path / "e"), str(tmp_path / "other")) == 1


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "lattice_qms.cli", "run", "--manifest",
                           str(MANIFESTS / "validate_ising.toml"), "--out", str(tmp_path)],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["verdict"] is True
