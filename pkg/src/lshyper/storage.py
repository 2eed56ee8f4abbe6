"""On-disk formats.

Metadata is indented JSON.  Numeric tables are CSV with a header row.
Parameter vectors are written one value per line with 17 significant digits,
which round-trips every 64-bit float exactly.  All writes go to a temporary
file in the target directory and are renamed into place.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .datagen import TrajectoryEnsemble


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_atomic(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    return write_atomic(path, dump_json(obj))


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def config_hash(config: dict) -> str:
    canon = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def write_table(path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, (int, np.integer, str)) else format_float(v) for v in row])
    return write_atomic(path, buf.getvalue())


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty table")
    return rows[0], rows[1:]


def write_matrix(path, header, array) -> Path:
    return write_table(path, header, np.atleast_2d(np.asarray(array, dtype=float)))


def read_matrix(path) -> tuple[list[str], np.ndarray]:
    header, rows = read_table(path)
    return header, np.array([[float(v) for v in r] for r in rows], dtype=float).reshape(len(rows), len(header))


# ------------------------------------------------------------ datasets


def save_dataset(stem, data: TrajectoryEnsemble, extra_meta: dict | None = None) -> tuple[Path, Path]:
    """``<stem>.csv`` (trajectory_id, time_index, value..., input...) and ``<stem>.json``."""
    stem = Path(stem)
    n_obs = data.values.shape[2]
    n_in = 0 if data.inputs is None else data.inputs.shape[2]
    header = ["trajectory_id", "time_index"] + [f"value_{i}" for i in range(n_obs)]
    header += [f"input_{i}" for i in range(n_in)]
    rows = []
    for j in range(data.n_traj):
        for k in range(data.n_times):
            row = [j, k] + list(data.values[j, k])
            if n_in:
                row += list(data.inputs[j, k])
            rows.append(row)
    table = write_table(stem.with_suffix(".csv"), header, rows)
    meta = dict(data.metadata, times=[format_float(t) for t in data.times], n_traj=data.n_traj,
                n_times=data.n_times, n_obs=n_obs, n_inputs=n_in, **(extra_meta or {}))
    return table, write_json(stem.with_suffix(".json"), meta)


def load_dataset(stem) -> TrajectoryEnsemble:
    stem = Path(stem)
    if stem.suffix in (".csv", ".json"):
        stem = stem.with_suffix("")
    meta = read_json(stem.with_suffix(".json"))
    header, arr = read_matrix(stem.with_suffix(".csv"))
    n_traj, n_times, n_obs, n_in = (int(meta[k]) for k in ("n_traj", "n_times", "n_obs", "n_inputs"))
    if arr.shape[0] != n_traj * n_times:
        raise ValueError(f"{stem}: expected {n_traj * n_times} rows, found {arr.shape[0]}")
    order = np.lexsort((arr[:, 1], arr[:, 0]))
    arr = arr[order]
    values = arr[:, 2:2 + n_obs].reshape(n_traj, n_times, n_obs)
    inputs = arr[:, 2 + n_obs:2 + n_obs + n_in].reshape(n_traj, n_times, n_in) if n_in else None
    times = np.array([float(t) for t in meta.pop("times")])
    for k in ("n_traj", "n_times", "n_obs", "n_inputs"):
        meta.pop(k)
    return TrajectoryEnsemble(times, values, meta, inputs)


# ------------------------------------------------------------ checkpoints


def save_checkpoint(stem, params, meta: dict) -> tuple[Path, Path]:
    """``<stem>.json`` metadata and ``<stem>.params`` with one value per line."""
    stem = Path(stem)
    p = np.asarray(params, dtype=float).ravel()
    text = "".join(format_float(v) + "\n" for v in p)
    values = write_atomic(stem.with_suffix(".params"), text)
    return values, write_json(stem.with_suffix(".json"), dict(meta, n_params=int(p.size)))


def load_checkpoint(stem) -> tuple[np.ndarray, dict]:
    stem = Path(stem)
    if stem.suffix in (".params", ".json"):
        stem = stem.with_suffix("")
    meta = read_json(stem.with_suffix(".json"))
    with open(stem.with_suffix(".params"), encoding="utf-8") as fh:
        p = np.array([float(line) for line in fh if line.strip()])
    if p.size != int(meta.get("n_params", p.size)):
        raise ValueError(f"{stem}: parameter count does not match metadata")
    return p, meta
