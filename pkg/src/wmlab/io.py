"""File formats: CSV tables, binary state and control files, JSON reports.

Binary layouts (little-endian):

GridState  ``WMGS``: magic[4], n u32, k u32, flags u32, then phi and phi_t
as float64 arrays of shape (n, k+1), row-major. Flag bit 0 marks the
presence of phi_t (always set when written here).

Control    ``WMCF``: magic[4], n u32, k u32, nseg u32; per segment
t0 f64, t1 f64, steps u64, mask u8[n], samples f64[(steps+1) * n * (k+1)].

Trajectory ``WMTR``: magic[4], n u32, k u32, count u32; per record a time
f64 followed by phi and phi_t as in a GridState body.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import struct
from pathlib import Path

import numpy as np

from . import __version__
from .evolver import ControlField, ControlSchedule, RunRecord
from .grid import Grid1D, GridState

SCHEMA_VERSION = 1
_HDR = struct.Struct("<4sIII")
_SEG = struct.Struct("<ddQ")


def fmt(v) -> str:
    """Shortest round-trip text for a number; empty for None."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in r])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


# states ---------------------------------------------------------------------

def state_columns(k: int) -> list[str]:
    return ["x"] + [f"phi{i}" for i in range(k + 1)] + [f"phi_t{i}" for i in range(k + 1)]


def write_state_csv(path, s: GridState) -> Path:
    rows = np.column_stack([s.grid.x, s.phi, s.phi_t])
    return write_csv(path, state_columns(s.k), rows.tolist())


def read_state_csv(path, check: bool = True) -> GridState:
    header, rows = read_csv(path)
    data = np.array(rows, dtype=float)
    m = (len(header) - 1) // 2
    grid = Grid1D(data.shape[0])
    return GridState(grid, data[:, 1:1 + m], data[:, 1 + m:], check=check)


def _state_body(s: GridState) -> bytes:
    return (np.ascontiguousarray(s.phi, dtype="<f8").tobytes()
            + np.ascontiguousarray(s.phi_t, dtype="<f8").tobytes())


def write_state_bin(path, s: GridState) -> Path:
    path = Path(path)
    path.write_bytes(_HDR.pack(b"WMGS", s.grid.n, s.k, 1) + _state_body(s))
    return path


def _read_header(buf: bytes, magic: bytes) -> tuple[int, int, int]:
    if len(buf) < _HDR.size:
        raise ValueError("file too short for a header")
    mg, a, b, c = _HDR.unpack_from(buf, 0)
    if mg != magic:
        raise ValueError(f"bad magic {mg!r}, expected {magic!r}")
    return a, b, c


def read_state_bin(path, check: bool = True) -> GridState:
    buf = Path(path).read_bytes()
    n, k, flags = _read_header(buf, b"WMGS")
    size = n * (k + 1)
    need = _HDR.size + 8 * size * (2 if flags & 1 else 1)
    if len(buf) != need:
        raise ValueError("state file length does not match its header")
    arr = np.frombuffer(buf, dtype="<f8", offset=_HDR.size)
    phi = arr[:size].reshape(n, k + 1).copy()
    phi_t = arr[size:].reshape(n, k + 1).copy() if flags & 1 else np.zeros_like(phi)
    return GridState(Grid1D(n), phi, phi_t, check=check)


def write_trajectory(path, traj) -> Path:
    pairs = traj.trajectory if hasattr(traj, "trajectory") else traj
    if not pairs:
        raise ValueError("empty trajectory")
    s0 = pairs[0][1]
    parts = [_HDR.pack(b"WMTR", s0.grid.n, s0.k, len(pairs))]
    for t, s in pairs:
        parts.append(struct.pack("<d", float(t)) + _state_body(s))
    path = Path(path)
    path.write_bytes(b"".join(parts))
    return path


def read_trajectory(path) -> list[tuple[float, GridState]]:
    buf = Path(path).read_bytes()
    n, k, count = _read_header(buf, b"WMTR")
    size = n * (k + 1)
    rec = 8 + 16 * size
    if len(buf) != _HDR.size + count * rec:
        raise ValueError("trajectory file length does not match its header")
    grid = Grid1D(n)
    out = []
    for i in range(count):
        off = _HDR.size + i * rec
        t = struct.unpack_from("<d", buf, off)[0]
        arr = np.frombuffer(buf, dtype="<f8", count=2 * size, offset=off + 8)
        out.append((t, GridState(grid, arr[:size].reshape(n, k + 1).copy(),
                                 arr[size:].reshape(n, k + 1).copy(), check=False)))
    return out


# controls -------------------------------------------------------------------

def write_control_bin(path, control) -> Path:
    segs = control.segments
    grid = segs[0].grid
    m = segs[0].m
    parts = [_HDR.pack(b"WMCF", grid.n, m - 1, len(segs))]
    for seg in segs:
        parts.append(_SEG.pack(seg.t0, seg.t1, seg.steps))
        parts.append(np.asarray(seg.mask, dtype=np.uint8).tobytes())
        parts.append(np.ascontiguousarray(seg.samples, dtype="<f8").tobytes())
    path = Path(path)
    path.write_bytes(b"".join(parts))
    return path


def read_control_bin(path) -> ControlSchedule:
    buf = Path(path).read_bytes()
    n, k, nseg = _read_header(buf, b"WMCF")
    grid = Grid1D(n)
    m = k + 1
    off = _HDR.size
    segs = []
    for _ in range(nseg):
        t0, t1, steps = _SEG.unpack_from(buf, off)
        off += _SEG.size
        mask = np.frombuffer(buf, dtype=np.uint8, count=n, offset=off).astype(bool)
        off += n
        count = (steps + 1) * n * m
        samples = np.frombuffer(buf, dtype="<f8", count=count, offset=off)
        off += 8 * count
        dt = (t1 - t0) / steps
        segs.append(ControlField(grid, t0, dt, samples.reshape(steps + 1, n, m).copy(), mask))
    if off != len(buf):
        raise ValueError("control file has trailing bytes")
    return ControlSchedule(segs)


# tables ---------------------------------------------------------------------

def write_run_record(path, rec: RunRecord) -> Path:
    return write_csv(path, rec.columns(), rec.rows())


def write_iterates(path, iterates) -> Path:
    cols = ["k", "residual", "contraction", "control_norm"]
    return write_csv(path, cols, [[it.k, it.residual, it.contraction, it.control_norm]
                                  for it in iterates])


def write_gramian(path, gram) -> Path:
    cols = ["row"] + list(gram.labels)
    rows = [[lab] + list(r) for lab, r in zip(gram.labels, gram.matrix)]
    return write_csv(path, cols, rows)


def write_spectrum(path, gram) -> Path:
    return write_csv(path, ["index", "eigenvalue"],
                     [[i, float(v)] for i, v in enumerate(gram.eigenvalues)])


# JSON -------------------------------------------------------------------------

def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        f = float(o)
        return f if math.isfinite(f) else str(f)
    return o


def write_json(path, obj: dict) -> Path:
    doc = {"schema_version": SCHEMA_VERSION}
    doc.update(_jsonable(obj))
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def versions() -> dict:
    import scipy
    return {"wmlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_manifest(out_dir, command: str, config_text: str, seed: int, n: int, k: int,
                   outputs: list[str]) -> Path:
    return write_json(Path(out_dir) / "manifest.json", {
        "command": command, "config_hash": config_hash(config_text), "config": config_text,
        "seed": seed, "resolution": {"n": n, "k": k}, "versions": versions(),
        "outputs": sorted(outputs)})


def write_gnuplot(path, csv_name: str, xcol: int, ycols: list[tuple[int, str]],
                  logy: bool = False, xlabel: str = "t", ylabel: str = "") -> Path:
    lines = ["set datafile separator ','", f"set xlabel '{xlabel}'"]
    if ylabel:
        lines.append(f"set ylabel '{ylabel}'")
    if logy:
        lines.append("set logscale y")
    plots = [f"'{csv_name}' using {xcol}:{c} skip 1 with lines title '{title}'"
             for c, title in ycols]
    lines.append("plot " + ", \\\n     ".join(plots))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path
