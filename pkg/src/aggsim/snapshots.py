"""Binary state snapshots and the diagnostics CSV.

Snapshot layout (all little-endian): a fixed header

    magic "AGG1" | version u32 | nx u32 | ny u32 | bc_x u8 | bc_y u8 |
    pad u16 | time f64 | step u64 | sha256(config) 32 bytes

followed by raw float64 arrays phi, mu, p, u, w in that order.  Loading a
snapshot written by this module is bitwise lossless, which is what makes
restarted trajectories reproduce uninterrupted ones exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .coupled import State
from .diagnostics import CSV_COLUMNS, DiagnosticsRecord
from .errors import ValidationError
from .grid_ops import PERIODIC, WALL, GridSpec, ScalarField, VectorField

MAGIC = b"AGG1"
VERSION = 1
_HEADER = struct.Struct("<4sIIIBBHdQ32s")
_BC_CODE = {PERIODIC: 0, WALL: 1}
_BC_NAME = {0: PERIODIC, 1: WALL}


def save_snapshot(path, state: State, cfg_hash: bytes = b"") -> None:
    grid = state.phi.grid
    digest = (cfg_hash or b"\x00" * 32).ljust(32, b"\x00")[:32]
    header = _HEADER.pack(MAGIC, VERSION, grid.nx, grid.ny,
                          _BC_CODE[grid.bc_x], _BC_CODE[grid.bc_y], 0,
                          state.t, state.step_index, digest)
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in (state.phi.values, state.mu.values, state.p.values,
                    state.v.u, state.v.w):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_snapshot(path, expected_hash: bytes | None = None,
                  Lx: float = 1.0, Ly: float = 1.0
                  ) -> tuple[State, GridSpec, bytes]:
    """Read a snapshot back; domain lengths come from the config, not the file."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size or raw[:4] != MAGIC:
        raise ValidationError(f"{path}: not a snapshot file")
    (_magic, version, nx, ny, bcx, bcy, _pad, t, step,
     digest) = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported snapshot version {version}")
    if expected_hash is not None and digest != expected_hash:
        raise ValidationError(
            f"{path}: snapshot was written under a different configuration"
        )
    grid = GridSpec(nx=nx, ny=ny, Lx=Lx, Ly=Ly,
                    bc_x=_BC_NAME[bcx], bc_y=_BC_NAME[bcy])
    offset = _HEADER.size
    arrays = []
    for shape in (grid.shape_cc, grid.shape_cc, grid.shape_cc,
                  grid.shape_xface, grid.shape_yface):
        count = shape[0] * shape[1]
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        arrays.append(arr.reshape(shape).astype(np.float64))
        offset += count * 8
    if offset != len(raw):
        raise ValidationError(f"{path}: truncated or oversized payload")
    phi, mu, p, u, w = arrays
    state = State(t=t, v=VectorField(grid, u, w),
                  phi=ScalarField(grid, phi), mu=ScalarField(grid, mu),
                  p=ScalarField(grid, p), step_index=int(step))
    return state, grid, digest


# ---------------------------------------------------------------------------
# diagnostics CSV (self-readable; 17 significant digits round-trips float64)
# ---------------------------------------------------------------------------

def format_row(values) -> str:
    return ",".join(f"{v:.17g}" for v in values)


def csv_header() -> str:
    return ",".join(CSV_COLUMNS)


def write_diag_csv(path, records) -> None:
    with open(path, "w") as fh:
        fh.write(csv_header() + "\n")
        for rec in records:
            fh.write(format_row(rec.as_row()) + "\n")


def read_diag_csv(path) -> list[dict]:
    """Parse our own diagnostics CSV back into per-row dicts."""
    with open(path) as fh:
        header = fh.readline().strip()
        names = header.split(",")
        rows = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(names):
                raise ValidationError(f"{path}: ragged CSV row {line!r}")
            rows.append({n: float(v) for n, v in zip(names, parts)})
    return rows


def records_from_rows(rows) -> list[DiagnosticsRecord]:
    return [DiagnosticsRecord(**{k: row[k] for k in CSV_COLUMNS})
            for row in rows]


def write_generic_csv(path, columns, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(format_row(row) + "\n")
