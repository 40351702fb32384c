"""Trajectory files.

Binary layout (all integers little-endian)::

    8 bytes   magic  b"PGNPTRJ\\x00"
    4 bytes   uint32 format version
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header (sorted keys): law, dt, seed, meta, array table, body sha256
    ...       raw little-endian array bodies in header order

The header holds no timestamps, so the same trajectory always serializes to
the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .sim import Trajectory

MAGIC = b"PGNPTRJ\x00"
FORMAT_VERSION = 1
_ARRAYS = ("positions", "velocities", "accelerations", "masses", "charges", "receivers",
           "senders", "forces", "potentials")


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def trajectory_header(traj: Trajectory) -> dict:
    return {"law": _to_jsonable(traj.law), "dt": float(traj.dt), "seed": int(traj.seed),
            "dim": traj.dim, "n_particles": traj.n_particles, "n_steps": traj.n_steps,
            "meta": _to_jsonable(traj.meta)}


def encode_trajectory(traj: Trajectory) -> bytes:
    table, chunks, offset = [], [], 0
    for name in _ARRAYS:
        arr = getattr(traj, name)
        if arr is None:
            continue
        arr = np.asarray(arr)
        dtype = "<i8" if np.issubdtype(arr.dtype, np.integer) else "<f8"
        raw = np.ascontiguousarray(arr, dtype=dtype).tobytes(order="C")
        table.append({"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset,
                      "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    body = b"".join(chunks)
    header = trajectory_header(traj)
    header["arrays"] = table
    header["body_sha256"] = hashlib.sha256(body).hexdigest()
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(head)) + head + body


def decode_trajectory(blob: bytes) -> Trajectory:
    if blob[:8] != MAGIC:
        raise DataError("not a trajectory file (bad magic)")
    version, hlen = struct.unpack("<IQ", blob[8:20])
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported trajectory format version {version}")
    header = json.loads(blob[20:20 + hlen].decode("utf-8"))
    body = blob[20 + hlen:]
    if hashlib.sha256(body).hexdigest() != header["body_sha256"]:
        raise DataError("trajectory body checksum mismatch (file truncated or corrupted)")
    arrays = {}
    for entry in header["arrays"]:
        raw = body[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
    return Trajectory(law=header["law"], dt=header["dt"], seed=header["seed"],
                      meta=header.get("meta", {}), **arrays)


def save_trajectory(traj: Trajectory, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_trajectory(traj))
    return path


def load_trajectory(path) -> Trajectory:
    path = Path(path)
    if not path.exists():
        raise DataError(f"trajectory file {path} does not exist")
    return decode_trajectory(path.read_bytes())


def export_jsonl(traj: Trajectory, path) -> Path:
    """Human-readable dump: a header line, then one line per time step."""
    path = Path(path)
    with path.open("w") as fh:
        head = trajectory_header(traj)
        head["masses"] = traj.masses.tolist()
        head["charges"] = traj.charges.tolist()
        if traj.receivers is not None:
            head["receivers"] = traj.receivers.tolist()
            head["senders"] = traj.senders.tolist()
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        for t in range(traj.n_steps):
            row = {"t": t, "positions": traj.positions[t].tolist(),
                   "velocities": traj.velocities[t].tolist(),
                   "accelerations": traj.accelerations[t].tolist()}
            if traj.forces is not None:
                row["forces"] = traj.forces[t].tolist()
                row["potentials"] = traj.potentials[t].tolist()
            fh.write(json.dumps(row) + "\n")
    return path
