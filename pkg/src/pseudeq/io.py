"""Datasets, CSV metrics and experiment manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from . import __version__


def fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return "%.17g" % v
    try:
        import numpy as np
        if isinstance(v, np.integer):
            return str(int(v))
        if isinstance(v, np.floating):
            return "%.17g" % float(v)
    except ImportError:  # pragma: no cover
        pass
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([fmt(v) for v in row])
    except OSError as err:
        raise OSError(f"cannot write {path}: {err}") from err
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_jsonl(path, records: Iterable[dict]) -> Path:
    path = Path(path)
    try:
        with open(path, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    except OSError as err:
        raise OSError(f"cannot write {path}: {err}") from err
    return path


def read_jsonl(path) -> list[dict]:
    try:
        with open(path) as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except OSError as err:
        raise OSError(f"cannot read {path}: {err}") from err


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def dir_hash(paths: Sequence) -> str:
    h = hashlib.sha256()
    for p in sorted(str(p) for p in paths):
        h.update(Path(p).name.encode())
        h.update(file_hash(p).encode())
    return h.hexdigest()[:16]


def json_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ExperimentManifest:
    command: str
    config_hash: str
    dataset_path: Optional[str]
    dataset_hash: Optional[str]
    seed: int
    version: str = __version__
    started: Optional[str] = None
    finished: Optional[str] = None
    outputs: list = field(default_factory=list)
    status: str = "ok"
    notes: dict = field(default_factory=dict)

    def stamp_start(self, timing: bool = True) -> None:
        self.started = time.strftime("%Y-%m-%dT%H:%M:%S") if timing else None

    def stamp_end(self, timing: bool = True) -> None:
        self.finished = time.strftime("%Y-%m-%dT%H:%M:%S") if timing else None

    def write(self, out_dir) -> Path:
        missing = [p for p in self.outputs if not os.path.exists(Path(out_dir) / p)]
        if missing:
            raise FileNotFoundError(f"manifest lists missing outputs: {missing}")
        path = Path(out_dir) / "manifest.json"
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    @classmethod
    def read(cls, path) -> "ExperimentManifest":
        with open(path) as fh:
            return cls(**json.load(fh))
