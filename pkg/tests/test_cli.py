import json

import pytest

from operstokes.cli import main

WEBER = ["--n", "2", "--k", "1", "--poly", "0,0,1"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_verify_passes(capsys):
    code, out, _ = run(capsys, "verify", "--n-max", "4")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines == [f"n={n} ok (a-formula=ok c-corner=ok c-next=ok "
                     f"c-null=ok commuting=ok signs=ok span=ok)"
                     if n >= 3 else
                     f"n={n} ok (a-formula=ok c-corner=ok commuting=ok "
                     f"signs=ok span=ok)"
                     for n in (2, 3, 4)]


def test_verify_corruption_is_detected(capsys):
    code, out, _ = run(capsys, "verify", "--n-max", "3", "--self-test-corrupt")
    assert code == 0
    assert "self-test corrupt: ok (corruption detected)" in out


def test_verify_rejects_bad_range(capsys):
    code, _, err = run(capsys, "verify", "--n-max", "1")
    assert code == 2
    assert "error:" in err


def test_basis_output(capsys):
    code, out, _ = run(capsys, "basis", "--n", "3")
    assert code == 0
    assert "v 1 -1" in out and "v 2 2" in out
    assert "violations: 0" in out


def test_basis_needs_n(capsys):
    code, _, err = run(capsys, "basis")
    assert code == 2 and "error:" in err


def test_kernel_document(capsys):
    code, out, _ = run(capsys, "kernel", *WEBER)
    assert code == 0
    doc = json.loads(out)
    assert doc["tangent_dim"] == 0
    assert doc["injective"] is True
    assert doc["homogeneous_kernel_dim"] == 1
    assert doc["traceless_homogeneous_kernel_dim"] == 0
    assert doc["exact"] is True


def test_kernel_rejects_inexact_point(capsys):
    code, _, err = run(capsys, "kernel", "--n", "2", "--k", "1",
                       "--poly", "0.5+0.1j", "--degree", "2")
    assert code == 2
    assert "exact rational" in err


def test_stokes_document(capsys, tmp_path):
    target = tmp_path / "out.json"
    code, out, _ = run(capsys, "stokes", *WEBER, "--output", str(target))
    assert code == 0 and out == ""
    doc = json.loads(target.read_text())
    assert doc["n"] == 2 and doc["k"] == 1 and doc["d"] == 2
    assert doc["det_twist"] == -1
    assert all(abs(re) <= 1e-12 and abs(im) <= 1e-12
               for re, im in doc["lambda"])
    assert len(doc["directions"]) == 8
    assert len(doc["stokes_matrices"]) == 4
    assert sorted(doc["permutation"]) == [0, 1]
    assert doc["residuals"]["identity"] <= 1e-8
    assert doc["settings"]["M"] == 20
    assert doc["settings"]["method"] == "collocation"


def test_stokes_is_byte_deterministic(capsys, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run(capsys, "stokes", *WEBER, "--output", str(a))[0] == 0
    assert run(capsys, "stokes", *WEBER, "--output", str(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_stokes_csv(capsys, tmp_path):
    target = tmp_path / "rays.csv"
    code, _, _ = run(capsys, "stokes", *WEBER, "--csv", str(target),
                     "--output", str(tmp_path / "doc.json"))
    assert code == 0
    rows = target.read_text().strip().splitlines()
    assert rows[0] == "index,fraction_of_pi,radians"
    assert len(rows) == 9
    assert rows[1].startswith("1,1/4,")


def test_config_input(capsys, tmp_path):
    cfg = tmp_path / "point.json"
    cfg.write_text(json.dumps(
        {"n": 2, "k": 1, "coefficients": [[0.3, 0.2]]}))
    code, out, _ = run(capsys, "stokes", "--config", str(cfg))
    assert code == 0
    doc = json.loads(out)
    assert doc["coefficients"] == [[0.3, 0.2]]
    assert doc["residuals"]["identity"] <= 1e-7


def test_config_and_poly_conflict(capsys, tmp_path):
    cfg = tmp_path / "point.json"
    cfg.write_text(json.dumps({"n": 2, "k": 1, "coefficients": [[0, 0]]}))
    code, _, err = run(capsys, "stokes", "--config", str(cfg),
                       "--poly", "0,0,1")
    assert code == 2 and "not both" in err


def test_poly_normalization_errors(capsys):
    code, _, err = run(capsys, "stokes", "--n", "2", "--k", "1",
                       "--poly", "0,1,1")
    assert code == 2 and "z^{d-1}" in err
    code, _, err = run(capsys, "stokes", "--n", "2", "--k", "1",
                       "--poly", "0,0,0,1")
    assert code == 2 and "coefficients" in err


def test_base_direction_on_ray_is_usage_error(capsys):
    code, _, err = run(capsys, "stokes", *WEBER, "--v0", "1/4")
    assert code == 2
    assert "anti-Stokes" in err


def test_lost_closure_maps_to_numeric_exit(capsys):
    code, _, err = run(capsys, "jacobian", *WEBER, "--fd-step", "50")
    assert code == 3
    assert "numerical failure" in err


def test_jacobian_document(capsys):
    code, out, _ = run(capsys, "jacobian", "--n", "2", "--k", "2",
                       "--poly", "0,0,0,0,1")
    assert code == 0
    doc = json.loads(out)
    assert doc["rank"] == 3
    assert doc["full_rank"] is True
    assert doc["sv_gap"] >= 1e-4
    assert len(doc["singular_values"]) == 3


def test_env_override_and_flag_precedence(capsys, monkeypatch):
    monkeypatch.setenv("OPERSTOKES_TRUNC_ORDER", "12")
    _, out, _ = run(capsys, "stokes", *WEBER)
    assert json.loads(out)["settings"]["M"] == 12
    _, out, _ = run(capsys, "stokes", *WEBER, "--trunc-order", "14")
    assert json.loads(out)["settings"]["M"] == 14


def test_seed_is_recorded(capsys):
    _, out, _ = run(capsys, "stokes", *WEBER, "--seed", "7")
    assert json.loads(out)["seed"] == 7
