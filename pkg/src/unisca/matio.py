"""Shared on-disk matrix format: raw little-endian float64 plus a JSON header.

A matrix named `foo` in directory `d` is stored as `d/foo.bin` (row-major
float64, little-endian) and `d/foo.json` describing shape, role, and any
caller-supplied metadata. Datasets, fitted models, and embedding tables all
reuse this format, so a header is enough to reload any artifact.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .numerics import ValidationError

DTYPE = "<f8"


def write_matrix(directory: str, name: str, a: np.ndarray, role: str = "",
                 meta: dict | None = None, dtype: str = DTYPE) -> None:
    a = np.ascontiguousarray(np.asarray(a, dtype=np.dtype(dtype)))
    os.makedirs(directory, exist_ok=True)
    header = {
        "name": name,
        "shape": list(a.shape),
        "dtype": dtype,
        "order": "C",
        "role": role,
        "meta": meta or {},
    }
    with open(os.path.join(directory, name + ".json"), "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    a.tofile(os.path.join(directory, name + ".bin"))


def read_matrix(directory: str, name: str) -> tuple[np.ndarray, dict]:
    """Load a matrix and its header; validates the byte count against shape."""
    path_json = os.path.join(directory, name + ".json")
    path_bin = os.path.join(directory, name + ".bin")
    if not os.path.exists(path_json) or not os.path.exists(path_bin):
        raise FileNotFoundError(f"matrix '{name}' not found in {directory}")
    with open(path_json, encoding="utf-8") as fh:
        header = json.load(fh)
    shape = tuple(int(s) for s in header["shape"])
    data = np.fromfile(path_bin, dtype=np.dtype(header.get("dtype", DTYPE)))
    expected = int(np.prod(shape)) if shape else data.size
    if data.size != expected:
        raise ValidationError(
            f"matrix '{name}': file holds {data.size} values, header says {expected}")
    return data.reshape(shape), header


def write_csv(path: str, a: np.ndarray, columns: list[str]) -> None:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != len(columns):
        raise ValidationError(
            f"CSV export: array shape {a.shape} does not match {len(columns)} columns")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        for row in a:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
