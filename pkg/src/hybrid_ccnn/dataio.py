"""On-disk dataset format.

A dataset is a JSON manifest plus one text file per snapshot set. Each text
file holds ``count`` blocks of ``h`` lines of ``w`` characters from ``{0,1}``,
blocks separated by a blank line.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from . import __version__
from .core import Dataset, ParameterPoint, SnapshotSet
from .errors import DataError

FORMAT_NAME = "hybrid-ccnn-dataset"
FORMAT_VERSION = 1


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def provenance(config=None, seed=None) -> dict:
    return {"tool": "hybrid-ccnn", "version": __version__,
            "config_hash": config_hash(config), "seed": seed}


def point_key(point: ParameterPoint) -> str:
    return f"{point.delta_over_omega!r},{point.rb_over_a!r}"


def format_snapshots(bits: np.ndarray) -> str:
    blocks = ["\n".join("".join("1" if v else "0" for v in row) for row in snap) for snap in bits]
    return "\n\n".join(blocks) + "\n"


def parse_snapshots(text: str, height: int, width: int, count: int, source="<string>") -> np.ndarray:
    bad = set(text) - {"0", "1", "\n"}
    if bad:
        raise DataError(f"{source}: invalid characters {sorted(bad)!r}")
    blocks = [b for b in text.strip("\n").split("\n\n")] if text.strip("\n") else []
    if len(blocks) != count:
        raise DataError(f"{source}: expected {count} snapshots, found {len(blocks)}")
    out = np.empty((count, height, width), dtype=np.uint8)
    for i, block in enumerate(blocks):
        lines = block.split("\n")
        if len(lines) != height or any(len(line) != width for line in lines):
            raise DataError(f"{source}: snapshot {i} is not {height}x{width}")
        out[i] = np.frombuffer("".join(lines).encode(), dtype=np.uint8).reshape(height, width) - ord("0")
    return out


def save_dataset(dataset: Dataset, directory, prov=None) -> Path:
    """Write ``manifest.json`` and one data file per set into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(dataset.sets):
        name = f"set_{i:04d}.txt"
        h, w = s.lattice.shape
        (directory / name).write_text(format_snapshots(s.bits))
        entries.append({"delta_over_omega": s.point.delta_over_omega,
                        "rb_over_a": s.point.rb_over_a,
                        "lattice": [h, w], "count": len(s), "data_file": name})
    manifest = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "sets": entries,
                "grid": dataset.grid.tolist() if dataset.grid is not None else None}
    if prov is not None:
        manifest["provenance"] = prov
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


def load_dataset(manifest_path, with_truth: bool = True) -> Dataset:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except OSError as exc:
        raise DataError(f"{manifest_path}: cannot read manifest ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if isinstance(manifest, list):
        entries, grid = manifest, None
    else:
        entries, grid = manifest.get("sets"), manifest.get("grid")
    if not entries:
        raise DataError(f"{manifest_path}: manifest lists no snapshot sets")
    sets = []
    for e in entries:
        try:
            h, w = (int(v) for v in e["lattice"])
            count = int(e["count"])
            data_path = manifest_path.parent / e["data_file"]
            point = ParameterPoint(float(e["delta_over_omega"]), float(e["rb_over_a"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{manifest_path}: malformed entry {e!r}") from exc
        try:
            text = data_path.read_text()
        except OSError as exc:
            raise DataError(f"{data_path}: cannot read data file ({exc.strerror})") from exc
        sets.append(SnapshotSet(point, parse_snapshots(text, h, w, count, source=str(data_path))))
    dataset = Dataset(sets, grid=np.asarray(grid) if grid is not None else None)
    truth_path = manifest_path.parent / "truth.json"
    if with_truth and truth_path.exists():
        truth = load_ground_truth(truth_path)
        try:
            dataset.truth = [truth[point_key(s.point)] for s in sets]
        except KeyError:
            dataset.truth = None
    return dataset


def save_ground_truth(dataset: Dataset, path) -> Path:
    if dataset.truth is None:
        raise DataError("dataset carries no ground-truth labels")
    path = Path(path)
    mapping = {point_key(s.point): name for s, name in zip(dataset.sets, dataset.truth)}
    path.write_text(json.dumps(mapping, indent=1) + "\n")
    return path


def load_ground_truth(path) -> dict:
    return json.loads(Path(path).read_text())


def write_csv(path, header, rows, prov=None):
    """Write a CSV with an optional ``#``-prefixed provenance preamble."""
    path = Path(path)
    os.makedirs(path.parent, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if prov is not None:
            for k in ("tool", "version", "config_hash", "seed"):
                fh.write(f"# {k}: {prov.get(k)}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([_fmt(v) for v in row] for row in rows)
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def read_csv(path):
    """Return ``(header, rows)`` skipping comment lines; values kept as strings."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(ln for ln in fh if ln.strip() and not ln.startswith("#")))
    return rows[0], rows[1:]
