import json
import os
import subprocess

import numpy as np
import pytest

from dysonmc import (CorrelationProfile, FilterSpec, InputError, KernelView,
                     sample, solve_finite)
from dysonmc.io import (load_model_file, model_content_hash, parse_model,
                        read_cmat, write_csv, write_report, write_sample_cmat,
                        write_solution_cmat)
from conftest import two_tap_spec


# ---------------------------------------------------------------------------
# model files

def test_parse_model_dispatches_on_radius():
    c = np.zeros((1, 1, 3, 3))
    c[0, 0, 1, 1] = 1.0
    filt = parse_model({"radius_r": 1, "coefficients": c.tolist()})
    assert isinstance(filt, FilterSpec)
    assert filt.kind == "constant" and filt.driver == "gaussian"

    v = np.zeros((1, 1, 3, 3))
    v[0, 0, 1, 1] = 0.75
    prof = parse_model({"K": 1, "values": v.tolist()})
    assert isinstance(prof, CorrelationProfile)
    assert prof.range_K == 1


def test_parse_model_reports_missing_keys():
    with pytest.raises(InputError, match="missing"):
        parse_model({"K": 1})
    with pytest.raises(InputError):
        parse_model("not a dict")


def test_load_model_file(models_dir):
    model, profile, solver, experiment = load_model_file(
        os.path.join(models_dir, "two_tap.json"))
    assert isinstance(model, FilterSpec)
    assert profile.range_K == 2
    assert solver["tol"] == 1e-9
    assert solver["K_trunc"] == 64
    assert solver["max_iter"] == 500  # default fills the gaps
    assert experiment["N"] == 1000


def test_load_model_file_rejects_bad_json(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(InputError, match="not valid JSON"):
        load_model_file(str(p))
    q = tmp_path / "empty.json"
    q.write_text("[1, 2]")
    with pytest.raises(InputError, match="'model' section"):
        load_model_file(str(q))


def test_content_hash_matches_git_blob(tmp_path):
    p = tmp_path / "m.json"
    p.write_text('{"model": {}}\n')
    want = subprocess.run(["git", "hash-object", str(p)],
                          capture_output=True, text=True).stdout.strip()
    assert model_content_hash(str(p)) == want


# ---------------------------------------------------------------------------
# reports

def test_report_document_structure(tmp_path, models_dir):
    out = tmp_path / "r.json"
    doc = write_report(str(out), "density",
                       {"trace": 0.5 + 0.25j, "flags": np.array([True])},
                       seed=7, config={"tol": np.float64(1e-9)},
                       model_path=os.path.join(models_dir, "wigner.json"))
    on_disk = json.loads(out.read_text())
    assert on_disk == doc
    assert on_disk["schema_version"] == 1
    assert on_disk["kind"] == "density"
    assert on_disk["seed"] == 7
    assert on_disk["data"]["trace"] == [0.5, 0.25]
    assert on_disk["data"]["flags"] == [True]
    assert on_disk["config"]["tol"] == 1e-9
    assert len(on_disk["model_hash"]) == 40
    assert "generated_at" in on_disk


def test_reports_idempotent_up_to_timestamp(tmp_path):
    a = write_report(str(tmp_path / "a.json"), "k", {"x": 1}, seed=0, config={})
    b = write_report(str(tmp_path / "b.json"), "k", {"x": 1}, seed=0, config={})
    a.pop("generated_at")
    b.pop("generated_at")
    assert a == b


def test_csv_round_trip(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(str(p), ["E", "rho"], [[0.0, 1.0 / 3.0], [0.5, 0.25]])
    lines = p.read_text().strip().splitlines()
    assert lines[0] == "E,rho"
    got = [float(x) for x in lines[1].split(",")]
    assert got == [0.0, 1.0 / 3.0]  # repr round-trips doubles exactly


# ---------------------------------------------------------------------------
# binary matrix dumps

def test_sample_cmat_round_trip(tmp_path):
    s = sample(two_tap_spec(), 16, 99)
    p = tmp_path / "s.cmat"
    write_sample_cmat(str(p), s)
    back = read_cmat(str(p))
    assert back["kind"] == "sample"
    assert back["N"] == 16
    assert back["seed"] == 99
    assert back["time_t"] == 0.0
    assert np.array_equal(back["matrix"], s.entries)


def test_solution_cmat_round_trip(tmp_path, wigner_profile):
    sol = solve_finite(KernelView(wigner_profile, 12), 0.5 + 0.25j, tol=1e-10)
    p = tmp_path / "m.cmat"
    write_solution_cmat(str(p), sol)
    back = read_cmat(str(p))
    assert back["kind"] == "solution"
    assert back["N"] == 12
    assert back["E"] == 0.5 and back["eta"] == 0.25
    assert back["residual"] == sol.final_residual
    assert np.array_equal(back["matrix"], sol.M)


def test_cmat_rejects_foreign_files(tmp_path):
    p = tmp_path / "x.cmat"
    p.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(InputError, match="bad magic"):
        read_cmat(str(p))


def test_cmat_rejects_unknown_version(tmp_path):
    import struct
    p = tmp_path / "v.cmat"
    p.write_bytes(b"CMAT" + struct.pack("<IB", 9, 1) + bytes(24))
    with pytest.raises(InputError, match="version"):
        read_cmat(str(p))


def test_cmat_rejects_unknown_kind(tmp_path):
    import struct
    p = tmp_path / "k.cmat"
    p.write_bytes(b"CMAT" + struct.pack("<IB", 1, 7) + bytes(24))
    with pytest.raises(InputError, match="kind"):
        read_cmat(str(p))
