"""Binary trajectory/model files and CSV exports.

All binary layouts are little-endian.

WFTRAJ01::

    b"WFTRAJ01" | u32 version=1 | u8 ndim
    ndim x (u64 n_points, f64 x_min, f64 x_max)
    f64 dt | u64 n_frames
    n_frames x prod(n_points) complex samples as interleaved f64 (re, im)

ESNMOD01::

    b"ESNMOD01" | u32 version=1 | u32 json_len | json_len bytes UTF-8 config
    u64 nnz | nnz x (u64 row, u64 col, f64 value)          W (COO)
    N x L f64 row-major                                     W_back
    N x K f64 row-major, only when input_dim > 0            W_in
    L x N complex (re, im) f64 row-major                    W_out
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import FormatError
from .qdyn import Axis, SpatialGrid, Trajectory

TRAJ_MAGIC = b"WFTRAJ01"
MODEL_MAGIC = b"ESNMOD01"
VERSION = 1

_COO = np.dtype([("row", "<u8"), ("col", "<u8"), ("value", "<f8")])


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        # mkstemp creates 0600; apply the usual umask-derived mode instead
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.what} is truncated (needed {n} bytes at offset {self.pos})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype, count: int) -> np.ndarray:
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(dtype.itemsize * count), dtype=dtype, count=count)


def _check_magic(r: _Reader, magic: bytes) -> None:
    got = r.take(len(magic))
    if got != magic:
        raise FormatError(f"bad magic {got!r} in {r.what}; expected {magic.decode()}")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"unsupported {magic.decode()} version {version} in {r.what}")


# -- trajectories ------------------------------------------------------------

def encode_trajectory(traj: Trajectory) -> bytes:
    buf = io.BytesIO()
    buf.write(TRAJ_MAGIC)
    buf.write(struct.pack("<IB", VERSION, traj.grid.ndim))
    for ax in traj.grid.axes:
        buf.write(struct.pack("<Qdd", ax.n_points, ax.x_min, ax.x_max))
    buf.write(struct.pack("<dQ", traj.dt, len(traj)))
    buf.write(np.ascontiguousarray(traj.frames, dtype="<c16").tobytes())
    return buf.getvalue()


def decode_trajectory(data: bytes, what: str = "trajectory") -> Trajectory:
    r = _Reader(data, what)
    _check_magic(r, TRAJ_MAGIC)
    (ndim,) = r.unpack("<B")
    if ndim not in (1, 2):
        raise FormatError(f"{what}: ndim must be 1 or 2, got {ndim}")
    axes = []
    for _ in range(ndim):
        n, lo, hi = r.unpack("<Qdd")
        axes.append(Axis(lo, hi, int(n)))
    try:
        grid = SpatialGrid(tuple(axes))
    except ValueError as exc:
        raise FormatError(f"{what}: invalid grid header ({exc})") from None
    dt, n_frames = r.unpack("<dQ")
    frames = r.array("<c16", n_frames * grid.size).reshape(n_frames, grid.size)
    if r.pos != len(data):
        raise FormatError(f"{what} has {len(data) - r.pos} trailing bytes")
    return Trajectory(grid, dt, frames.astype(np.complex128))


def write_trajectory(path, traj: Trajectory) -> None:
    atomic_write_bytes(path, encode_trajectory(traj))


def read_trajectory(path) -> Trajectory:
    return decode_trajectory(Path(path).read_bytes(), what=str(path))


# -- models ------------------------------------------------------------------

def encode_model(config: dict, W: sp.spmatrix, W_back: np.ndarray,
                 W_in: np.ndarray | None, W_out: np.ndarray) -> bytes:
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    coo = sp.coo_matrix(W)
    # canonical order so identical matrices always encode identically
    order = np.lexsort((coo.col, coo.row))
    entries = np.empty(coo.nnz, dtype=_COO)
    entries["row"] = coo.row[order]
    entries["col"] = coo.col[order]
    entries["value"] = coo.data[order]

    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(struct.pack("<II", VERSION, len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<Q", coo.nnz))
    buf.write(entries.tobytes())
    buf.write(np.ascontiguousarray(W_back, dtype="<f8").tobytes())
    if config.get("input_dim", 0) > 0:
        if W_in is None:
            raise ValueError("config has input_dim > 0 but W_in is missing")
        buf.write(np.ascontiguousarray(W_in, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(W_out, dtype="<c16").tobytes())
    return buf.getvalue()


def decode_model(data: bytes, what: str = "model"):
    """Return ``(config_dict, W, W_back, W_in, W_out)``."""
    r = _Reader(data, what)
    _check_magic(r, MODEL_MAGIC)
    (n_json,) = r.unpack("<I")
    try:
        config = json.loads(r.take(n_json).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{what}: config blob is not valid JSON ({exc})") from None
    try:
        N, L, K = int(config["n_internal"]), int(config["output_dim"]), int(config["input_dim"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{what}: config blob lacks dimensions ({exc})") from None
    (nnz,) = r.unpack("<Q")
    entries = r.array(_COO, nnz)
    if nnz and (entries["row"].max() >= N or entries["col"].max() >= N):
        raise FormatError(f"{what}: W entry outside {N}x{N}")
    W = sp.csr_matrix(
        (entries["value"].astype(np.float64), (entries["row"].astype(np.int64), entries["col"].astype(np.int64))),
        shape=(N, N))
    W_back = r.array("<f8", N * L).reshape(N, L).astype(np.float64)
    W_in = r.array("<f8", N * K).reshape(N, K).astype(np.float64) if K > 0 else None
    W_out = r.array("<c16", L * N).reshape(L, N).astype(np.complex128)
    if r.pos != len(data):
        raise FormatError(f"{what} has {len(data) - r.pos} trailing bytes")
    return config, W, W_back, W_in, W_out


# -- CSV ---------------------------------------------------------------------

def csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv(path, header: list[str], rows) -> None:
    atomic_write_text(path, csv_text(header, rows))
