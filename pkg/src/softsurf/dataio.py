"""Versioned on-disk formats: simulation datasets, weight checkpoints with a
text manifest, and JSON-lines records.

Dataset and checkpoint files start with a magic line and a single-line JSON
header, followed by raw little-endian arrays. Coordinates are stored exactly
as produced (float64 millimetres), so read(write(x)) is bit-identical. All
writes go to a temporary file and are renamed into place.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from softsurf import autodiff as ad
from softsurf.errors import DataFormatError
from softsurf.model import ModelConfig
from softsurf.msm import IndentationRun, MsmConfig

DATASET_MAGIC = b"softsurf-dataset v1\n"
CHECKPOINT_MAGIC = b"softsurf-checkpoint v1\n"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config) -> str:
    """Stable hash of a config dataclass (or plain dict)."""
    if dataclasses.is_dataclass(config):
        config = dataclasses.asdict(config)
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


class _AtomicFile:
    """Write-temp-then-rename; nothing appears at ``path`` on failure."""

    def __init__(self, path):
        self.path = Path(path)
        self._tmp = None
        self._fh = None

    def __enter__(self):
        fd, tmp = tempfile.mkstemp(dir=self.path.parent, prefix=self.path.name + ".tmp")
        self._tmp = tmp
        self._fh = os.fdopen(fd, "wb")
        return self._fh

    def __exit__(self, exc_type, exc, tb):
        self._fh.close()
        if exc_type is None:
            os.replace(self._tmp, self.path)
        else:
            os.unlink(self._tmp)
        return False


def _read_header(fh, magic: bytes, path) -> dict:
    got = fh.readline()
    if got != magic:
        raise DataFormatError(
            f"{path}: bad magic {got[:40]!r}, expected {magic.strip().decode()}"
        )
    try:
        return json.loads(fh.readline().decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"{path}: unreadable header: {e}") from e


def _read_array(fh, dtype, shape, path) -> np.ndarray:
    count = int(np.prod(shape))
    buf = fh.read(count * np.dtype(dtype).itemsize)
    arr = np.frombuffer(buf, dtype=dtype)
    if arr.size != count:
        raise DataFormatError(f"{path}: truncated file ({arr.size} of {count} values)")
    return arr.reshape(shape).copy()


def write_dataset(path, runs: Iterable[IndentationRun], config: MsmConfig, seed: int, n_runs: int):
    """Stream runs to disk; ``n_runs`` must match what ``runs`` yields."""
    header = {
        "format_version": 1,
        "kind": "dataset",
        "msm_config": dataclasses.asdict(config),
        "config_hash": config_hash(config),
        "seed": seed,
        "n_runs": n_runs,
        "n_points": config.n_points,
        "n_t": config.n_t,
        "units": {"positions": "mm", "velocities": "mm/s", "forces": "N"},
    }
    with _AtomicFile(path) as fh:
        fh.write(DATASET_MAGIC)
        fh.write((canonical_json(header) + "\n").encode())
        written = 0
        for run in runs:
            fh.write(np.int64(run.location_index).tobytes())
            fh.write(np.int64(run.direction_index).tobytes())
            fh.write(run.direction.astype("<f8").tobytes())
            fh.write(run.forces.astype("<f8").tobytes())
            fh.write(run.positions.astype("<f8").tobytes())
            fh.write(run.velocities.astype("<f8").tobytes())
            written += 1
        if written != n_runs:
            raise DataFormatError(f"expected {n_runs} runs, generator produced {written}")


@dataclass(frozen=True)
class DatasetHeader:
    msm_config: MsmConfig
    config_hash: str
    seed: int
    n_runs: int
    n_points: int
    n_t: int


def read_dataset_header(path) -> DatasetHeader:
    with open(path, "rb") as fh:
        header = _read_header(fh, DATASET_MAGIC, path)
    if header.get("format_version") != 1 or header.get("kind") != "dataset":
        raise DataFormatError(f"{path}: unsupported dataset header {header!r}")
    return DatasetHeader(
        msm_config=MsmConfig(**header["msm_config"]),
        config_hash=header["config_hash"],
        seed=header["seed"],
        n_runs=header["n_runs"],
        n_points=header["n_points"],
        n_t=header["n_t"],
    )


def iter_dataset_file(path) -> Iterator[IndentationRun]:
    with open(path, "rb") as fh:
        header = _read_header(fh, DATASET_MAGIC, path)
        n_points = header["n_points"]
        n_states = header["n_t"] + 1
        for _ in range(header["n_runs"]):
            loc = int(_read_array(fh, "<i8", (1,), path)[0])
            d_idx = int(_read_array(fh, "<i8", (1,), path)[0])
            direction = _read_array(fh, "<f8", (3,), path)
            forces = _read_array(fh, "<f8", (n_states,), path)
            positions = _read_array(fh, "<f8", (n_states, n_points, 3), path)
            velocities = _read_array(fh, "<f8", (n_states, n_points, 3), path)
            yield IndentationRun(
                location_index=loc, direction_index=d_idx, direction=direction,
                forces=forces, positions=positions, velocities=velocities,
            )


def read_dataset(path) -> tuple[DatasetHeader, list[IndentationRun]]:
    return read_dataset_header(path), list(iter_dataset_file(path))


def write_checkpoint(path, params: dict[str, ad.Tensor], manifest: dict):
    """Binary weights (32-bit little-endian) plus a JSON manifest alongside."""
    names = list(params)
    header = {
        "format_version": 1,
        "kind": "checkpoint",
        "params": [{"name": n, "shape": list(params[n].data.shape)} for n in names],
    }
    with _AtomicFile(path) as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write((canonical_json(header) + "\n").encode())
        for n in names:
            fh.write(params[n].data.astype("<f4").tobytes())
    manifest_path = str(path) + ".json"
    with _AtomicFile(manifest_path) as fh:
        fh.write(json.dumps(manifest, indent=2, sort_keys=True).encode() + b"\n")


def read_checkpoint(path) -> tuple[dict[str, ad.Tensor], dict]:
    with open(path, "rb") as fh:
        header = _read_header(fh, CHECKPOINT_MAGIC, path)
        if header.get("format_version") != 1 or header.get("kind") != "checkpoint":
            raise DataFormatError(f"{path}: unsupported checkpoint header {header!r}")
        params = {}
        for entry in header["params"]:
            arr = _read_array(fh, "<f4", tuple(entry["shape"]), path)
            params[entry["name"]] = ad.tensor(arr, requires_grad=True, dtype=np.float32)
    manifest_path = str(path) + ".json"
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DataFormatError(f"checkpoint manifest {manifest_path} is missing")
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{manifest_path}: invalid manifest: {e}") from e
    return params, manifest


def model_config_from_manifest(manifest: dict) -> ModelConfig:
    raw = dict(manifest["model_config"])
    for key in ("edgeconv_widths", "displacement_hidden", "force_widths"):
        raw[key] = tuple(raw[key])
    return ModelConfig(**raw)


def write_jsonl(path, records: Iterable[dict]):
    with _AtomicFile(path) as fh:
        for rec in records:
            fh.write((json.dumps(rec, sort_keys=True) + "\n").encode())


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
