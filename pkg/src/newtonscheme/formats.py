"""On-disk formats: trajectory CSV, run manifests, atomic writes.

See ``docs/FORMATS.md`` for the full layouts.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

from .scenario import Trajectory

__all__ = [
    "trajectory_to_csv",
    "trajectory_from_csv",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "manifest_path",
    "read_manifest",
    "write_files",
    "format_float",
]


def format_float(x) -> str:
    """Shortest decimal string that round-trips to the same double."""
    return repr(float(x))


def trajectory_to_csv(traj: Trajectory) -> str:
    lines = [",".join(("t",) + traj.channel_names)]
    for t, row in zip(traj.times.tolist(), traj.values.tolist()):
        lines.append(",".join(map(repr, [t] + row)))
    return "\n".join(lines) + "\n"


def trajectory_from_csv(text: str) -> Trajectory:
    """Parse a trajectory CSV; raises ValueError on any malformed content."""
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    if not rows:
        raise ValueError("empty trajectory file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0] != "t":
        raise ValueError("header must be 't,<channel>[,<channel>...]'")
    width = len(header)
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise ValueError(f"line {lineno}: expected {width} fields, got {len(row)}")
        try:
            data.append([float(v) for v in row])
        except ValueError:
            raise ValueError(f"line {lineno}: non-numeric field") from None
    if not data:
        raise ValueError("trajectory file has no samples")
    arr = np.array(data, dtype=float)
    return Trajectory(tuple(header[1:]), arr[:, 0], arr[:, 1:])


def write_trajectory_csv(traj: Trajectory, path) -> None:
    write_files({path: trajectory_to_csv(traj)})


def read_trajectory_csv(path) -> Trajectory:
    return trajectory_from_csv(Path(path).read_text())


def manifest_path(path) -> Path:
    """Sidecar manifest location for an output file."""
    p = Path(path)
    return p.with_name(p.name + ".manifest.json")


def read_manifest(path) -> Mapping | None:
    """Manifest stored next to ``path``, or None when there is none."""
    mp = manifest_path(path)
    if not mp.exists():
        return None
    return json.loads(mp.read_text())


def write_files(contents: Mapping) -> None:
    """Write several text files so that either all appear or none do.

    Each file is staged in a temporary sibling and renamed into place only
    after every file has been staged.
    """
    staged = []
    try:
        for path, text in contents.items():
            path = Path(path)
            if path.parent and not path.parent.exists():
                path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            staged.append((tmp, path))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, path in staged:
        os.replace(tmp, path)
