"""Dataset directory format.

One directory per dataset: `meta.json` holds generation parameters, dt,
step count, the split map and per-file checksums; each trajectory is a CSV
with header

    t,q1x,q1y,p1x,p1y,s1,q2x,q2y,p2x,p2y,s2

written with 17 significant digits so float64 values round-trip exactly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ChecksumError, InvalidInputError
from .state import COLUMNS, Dataset, Trajectory

SCHEMA_VERSION = 1


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _traj_name(i: int) -> str:
    return f"traj_{i:03d}"


def save_dataset(ds: Dataset, directory) -> Path:
    """Write the dataset; returns the directory path. Overwrites existing files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for i, traj in enumerate(ds.trajectories):
        name = _traj_name(i)
        path = directory / f"{name}.csv"
        t = traj.times()
        with open(path, "w", newline="\n") as fh:
            fh.write("t," + ",".join(COLUMNS) + "\n")
            for row_t, row in zip(t, traj.states):
                fields = [f"{row_t:.17g}"] + [f"{v:.17g}" for v in row]
                fh.write(",".join(fields) + "\n")
        files[name] = {"path": path.name, "sha256": _sha256(path)}
    meta = {
        "schema_version": SCHEMA_VERSION,
        "dt": ds.dt,
        "n_states": len(ds.trajectories[0]),
        "n_trajectories": len(ds.trajectories),
        "split": {_traj_name(i): tag for i, tag in enumerate(ds.split)},
        "files": files,
        "metadata": ds.metadata,
    }
    with open(directory / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


def load_dataset(directory, verify: bool = True) -> Dataset:
    """Read a dataset directory; checksums are verified unless disabled."""
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.is_file():
        raise InvalidInputError(f"not a dataset directory (missing meta.json): {directory}")
    meta = json.loads(meta_path.read_text())
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise InvalidInputError(f"unsupported dataset schema_version {meta.get('schema_version')}")
    trajectories = []
    split = []
    for i in range(meta["n_trajectories"]):
        name = _traj_name(i)
        entry = meta["files"][name]
        path = directory / entry["path"]
        if verify and _sha256(path) != entry["sha256"]:
            raise ChecksumError(f"checksum mismatch for {path}")
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        trajectories.append(Trajectory(dt=meta["dt"], states=raw[:, 1:]))
        split.append(meta["split"][name])
    return Dataset(trajectories=tuple(trajectories), split=tuple(split), metadata=meta.get("metadata", {}))
