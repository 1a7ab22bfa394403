"""On-disk formats: counts and curve CSVs, JSON summaries and run manifests.

Counts files have columns ``trial,bin_index,t_us,counts``; curve files have
``x,y,yerr``. Floats are written with ``repr`` so they re-parse exactly.
"""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .counting import CountStream

COUNTS_HEADER = ["trial", "bin_index", "t_us", "counts"]
CURVE_HEADER = ["x", "y", "yerr"]


class FormatError(ValueError):
    """A data file does not follow the expected layout."""


def _num(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def write_counts(path, stream: CountStream) -> Path:
    path = Path(path)
    prefix = [f"{j},{_num(t)}," for j, t in enumerate(stream.times)]
    with path.open("w", newline="") as fh:
        fh.write(",".join(COUNTS_HEADER) + "\n")
        for i, row in enumerate(stream.counts.tolist()):
            fh.write("".join(f"{i},{p}{k}\n" for p, k in zip(prefix, row)))
    return path


def read_counts(path) -> CountStream:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file")
    if lines[0].split(",") != COUNTS_HEADER:
        raise FormatError(f"{path}: expected header {','.join(COUNTS_HEADER)}")
    if len(lines) < 2:
        raise FormatError(f"{path}: no data rows")
    try:
        data = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed row: {exc}") from exc
    if data.shape[1] != 4:
        raise FormatError(f"{path}: expected 4 columns")
    trial = data[:, 0].astype(int)
    idx = data[:, 1].astype(int)
    n_trials, n_bins = trial.max() + 1, idx.max() + 1
    if data.shape[0] != n_trials * n_bins:
        raise FormatError(f"{path}: ragged trials (expected {n_trials} x {n_bins} rows)")
    counts = np.zeros((n_trials, n_bins), dtype=np.int64)
    counts[trial, idx] = data[:, 3].astype(np.int64)
    times = np.full(n_bins, np.nan)
    times[idx] = data[:, 2]
    width = float(times[1] - times[0]) if n_bins > 1 else 1.0
    return CountStream(width, counts, float(times[0]))


def write_curve(path, x, y, yerr=None) -> Path:
    path = Path(path)
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    yerr = np.zeros_like(y) if yerr is None else np.asarray(yerr, dtype=float)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for row in zip(x, y, yerr):
            w.writerow([_num(v) for v in row])
    return path


def read_curve(path) -> dict:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CURVE_HEADER:
        raise FormatError(f"{path}: expected header {','.join(CURVE_HEADER)}")
    arr = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, 3)
    return {"x": arr[:, 0], "y": arr[:, 1], "yerr": arr[:, 2]}


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def write_json(path, payload) -> Path:
    path = Path(path)
    path.write_text(json.dumps(to_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    tool_version: str
    seed: int
    config: dict
    started: str
    finished: str = ""
    outputs: list = field(default_factory=list)

    @classmethod
    def start(cls, command: str, version: str, seed: int, config: dict) -> "RunManifest":
        return cls(command, version, seed, config, _now())

    def add(self, path) -> None:
        path = Path(path)
        self.outputs.append({"path": path.name, "sha256": sha256_file(path),
                             "bytes": path.stat().st_size})

    def finish(self, out_dir) -> Path:
        self.finished = _now()
        return write_json(Path(out_dir) / "manifest.json", asdict(self))

    def checksums(self) -> dict:
        return {o["path"]: o["sha256"] for o in self.outputs}


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
