"""Model files, report serialization, and binary matrix dumps.

Model files are JSON documents with three sections: model (the kernel or
filter), solver (numerical knobs), experiment (what to run).  Reports are
self-describing JSON with a schema version, the resolved configuration,
the master seed, and a content hash of the model file; complex numbers
serialize as [re, im] pairs.  Matrices dump to a small binary format:
magic "CMAT", version, a kind tag, a kind-specific header, then the
row-major float64 payload (complex values interleaved re, im).
"""

from __future__ import annotations

import csv
import datetime
import hashlib
import json
import struct
from typing import Optional

import numpy as np

from .errors import InputError
from .mde import DysonSolution
from .profiles import CorrelationProfile, FilterSpec, profile_from_filter
from .sampling import MatrixSample

SCHEMA_VERSION = 1
CMAT_MAGIC = b"CMAT"
CMAT_VERSION = 1
CMAT_KIND_SAMPLE = 1
CMAT_KIND_SOLUTION = 2


# ---------------------------------------------------------------------------
# model files

def model_content_hash(path: str) -> str:
    """Content hash of a file, computed the way git hashes blobs."""
    with open(path, "rb") as fh:
        data = fh.read()
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


DEFAULT_SOLVER = {
    "tol": 1e-9,
    "max_iter": 500,
    "n_theta": 64,
    "n_s": None,
    "K_trunc": None,
    "eta_ladder_factor": 2.0,
    "anderson": None,
}


def parse_model(doc: dict):
    """Build the model object from the 'model' section of a model file.

    A section with radius_r describes a moving-average filter; otherwise
    it is a kernel table with range K.
    """
    if not isinstance(doc, dict):
        raise InputError("model section must be a JSON object")
    m = dict(doc)
    m.pop("name", None)
    try:
        if "radius_r" in m:
            return FilterSpec(
                radius_r=int(m["radius_r"]),
                kind=m.get("kind", "constant"),
                coefficients=np.asarray(m["coefficients"], dtype=float),
                breakpoints=tuple(m.get("breakpoints", ())),
                driver=m.get("driver", "gaussian"),
                tau=m.get("tau"),
                iid_floor=float(m.get("iid_floor", 0.0)),
            )
        return CorrelationProfile(
            range_K=int(m["K"]),
            kind=m.get("kind", "constant"),
            values=np.asarray(m["values"], dtype=float),
            breakpoints=tuple(m.get("breakpoints", ())),
            iid_floor=float(m.get("iid_floor", 0.0)),
        )
    except KeyError as err:
        raise InputError(f"model section is missing {err}") from None


def load_model_file(path: str):
    """Read a model file; returns (model, profile, solver_cfg, experiment_cfg)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as err:
        raise InputError(f"model file is not valid JSON: {err}") from None
    if not isinstance(doc, dict) or "model" not in doc:
        raise InputError("model file must be an object with a 'model' section")
    model = parse_model(doc["model"])
    profile = profile_from_filter(model) if isinstance(model, FilterSpec) else model
    solver = dict(DEFAULT_SOLVER)
    solver.update(doc.get("solver", {}))
    experiment = dict(doc.get("experiment", {}))
    return model, profile, solver, experiment


# ---------------------------------------------------------------------------
# JSON reports

def _jsonable(obj):
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_report(path: str, kind: str, data, seed: Optional[int],
                 config: dict, model_path: Optional[str] = None) -> dict:
    """Write a self-describing JSON report; returns the document."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "generated_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "seed": seed,
        "model_hash": model_content_hash(model_path) if model_path else None,
        "config": _jsonable(config),
        "data": _jsonable(data),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return doc


def write_csv(path: str, header, rows) -> None:
    """Plain CSV: comma separator, dot decimals, one header row."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating))
                        else v for v in row])


# ---------------------------------------------------------------------------
# binary matrix dumps

def write_sample_cmat(path: str, sample: MatrixSample) -> None:
    X = np.ascontiguousarray(sample.entries, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(CMAT_MAGIC)
        fh.write(struct.pack("<IB", CMAT_VERSION, CMAT_KIND_SAMPLE))
        fh.write(struct.pack("<QQd", sample.N,
                             int(sample.seed) & 0xFFFFFFFFFFFFFFFF,
                             float(sample.time_t)))
        fh.write(X.tobytes())


def write_solution_cmat(path: str, sol: DysonSolution) -> None:
    M = np.ascontiguousarray(sol.M, dtype=np.complex128)
    with open(path, "wb") as fh:
        fh.write(CMAT_MAGIC)
        fh.write(struct.pack("<IB", CMAT_VERSION, CMAT_KIND_SOLUTION))
        fh.write(struct.pack("<Qddd", M.shape[0], sol.z.E, sol.z.eta,
                             float(sol.final_residual)))
        fh.write(M.view(np.float64).tobytes())


def read_cmat(path: str) -> dict:
    """Read either kind of matrix dump; returns header fields plus 'matrix'."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CMAT_MAGIC:
            raise InputError(f"not a CMAT file: bad magic {magic!r}")
        version, kind = struct.unpack("<IB", fh.read(5))
        if version != CMAT_VERSION:
            raise InputError(f"unsupported CMAT version {version}")
        if kind == CMAT_KIND_SAMPLE:
            N, seed, time_t = struct.unpack("<QQd", fh.read(24))
            X = np.frombuffer(fh.read(8 * N * N), dtype=np.float64).reshape(N, N)
            return {"kind": "sample", "N": int(N), "seed": int(seed),
                    "time_t": float(time_t), "matrix": X.copy()}
        if kind == CMAT_KIND_SOLUTION:
            N, E, eta, residual = struct.unpack("<Qddd", fh.read(32))
            raw = np.frombuffer(fh.read(16 * N * N), dtype=np.float64)
            M = raw.view(np.complex128).reshape(N, N)
            return {"kind": "solution", "N": int(N), "E": float(E),
                    "eta": float(eta), "residual": float(residual),
                    "matrix": M.copy()}
        raise InputError(f"unknown CMAT kind {kind}")
