"""On-disk artifacts: trajectory caches, signal caches, manifests, metrics.

Trajectory caches come in two formats (config choice):

* binary: magic ``CASIM1``, three little-endian uint64 (n_samples, n_cells,
  n_pools=3), the sample times as float64, then the c/E/IP3 pools each as a
  row-major (n_samples, n_cells) float64 block.
* csv: one file per pool (``<base>_c.csv`` etc.) with header
  ``tau,cell_0,...,cell_{N-1}``.

Every command writes a ``manifest.json`` holding the fully resolved config,
per-file sha256 digests, and run provenance. Floats are written with
``repr`` (shortest round trip), so re-running a manifest reproduces byte-
identical files; the manifest's own timestamp is the only varying field.
"""

import csv
import hashlib
import json
import struct
import time
from pathlib import Path

import numpy as np

from .simulate import Trajectory

MAGIC = b"CASIM1"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_trajectory(traj: Trajectory, base: Path, fmt="binary") -> list:
    """Write the trajectory under ``base``; returns the created file paths."""
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "binary":
        path = base.with_suffix(".casim")
        n_samples, n_cells = traj.c_series.shape
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<QQQ", n_samples, n_cells, 3))
            fh.write(np.ascontiguousarray(traj.times, dtype="<f8").tobytes())
            for series in (traj.c_series, traj.e_series, traj.ip3_series):
                fh.write(np.ascontiguousarray(series, dtype="<f8").tobytes())
        return [path]
    if fmt == "csv":
        paths = []
        header = ["tau"] + [f"cell_{i}" for i in range(traj.n_cells)]
        for tag, series in (("c", traj.c_series), ("e", traj.e_series),
                            ("ip3", traj.ip3_series)):
            path = base.parent / f"{base.name}_{tag}.csv"
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(header)
                for t, row in zip(traj.times, series):
                    writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
            paths.append(path)
        return paths
    raise ValueError(f"unknown trajectory format {fmt!r}")


def read_trajectory(base: Path, meta=None) -> Trajectory:
    """Read a trajectory written by ``write_trajectory`` (either format)."""
    base = Path(base)
    binary = base.with_suffix(".casim")
    if binary.exists():
        with open(binary, "rb") as fh:
            magic = fh.read(len(MAGIC))
            if magic != MAGIC:
                raise ValueError(f"{binary}: bad magic {magic!r}")
            n_samples, n_cells, n_pools = struct.unpack("<QQQ", fh.read(24))
            if n_pools != 3:
                raise ValueError(f"{binary}: expected 3 pools, found {n_pools}")
            times = np.frombuffer(fh.read(8 * n_samples), dtype="<f8").copy()
            pools = [
                np.frombuffer(fh.read(8 * n_samples * n_cells), dtype="<f8")
                .reshape(n_samples, n_cells).copy()
                for _ in range(3)
            ]
        return Trajectory(times=times, c_series=pools[0], e_series=pools[1],
                          ip3_series=pools[2], meta=meta or {})
    pools = []
    times = None
    for tag in ("c", "e", "ip3"):
        path = base.parent / f"{base.name}_{tag}.csv"
        if not path.exists():
            raise FileNotFoundError(f"no trajectory cache at {base}(.casim/_{tag}.csv)")
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        times = rows[:, 0]
        pools.append(np.ascontiguousarray(rows[:, 1:]))
    return Trajectory(times=times, c_series=pools[0], e_series=pools[1],
                      ip3_series=pools[2], meta=meta or {})


def write_signal_stream(stream: np.ndarray, path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step"] + [f"synapse_{i}" for i in range(stream.shape[1])])
        for k, row in enumerate(stream):
            writer.writerow([k] + [repr(float(v)) for v in row])
    return path


def read_signal_stream(path: Path) -> np.ndarray:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return np.ascontiguousarray(rows[:, 1:])


def _cell(v):
    # repr of a builtin float is the shortest round-trip form; numpy scalars
    # must be unwrapped first (their repr is not a bare number)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_metrics_csv(metrics, path: Path):
    """Per-epoch training metrics: epoch,loss,accuracy,tp,fp,tn,fn."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "accuracy", "tp", "fp", "tn", "fn"])
        for m in metrics:
            writer.writerow([m.epoch, _cell(m.loss), _cell(m.accuracy),
                             m.tp, m.fp, m.tn, m.fn])
    return path


def write_rows_csv(path: Path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def _json_safe(obj):
    # non-finite floats have no standard JSON form; write null instead
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_json(doc: dict, path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_json_safe(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_json(path: Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_manifest(out_dir: Path, command: str, config: dict, files,
                   extra=None) -> Path:
    """Manifest with resolved config and per-file digests.

    The timestamp lives only here, so everything else re-runs byte-identical.
    """
    out_dir = Path(out_dir)
    doc = {
        "command": command,
        "config": config,
        "outputs": {Path(p).name: sha256_file(p) for p in files},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    if extra:
        doc.update(extra)
    return write_json(doc, out_dir / "manifest.json")
