"""Binary and CSV artifacts.

Every binary file starts with a little-endian header

    magic "VPMG" | version u16 | section tag 4s | flags u16 | count u64 |
    n_steps u64 | dt f64 | threads u32 | scenario sha256 (32 raw bytes)

followed by packed little-endian float64 payloads:

    TRAJ  per step: z (count x 6), then M and N (count x 36 each) when flagged
    COST  per step: g (count), then G (count x 6)
    CTRL  grid header origin 3d | spacing 3d | dims 3I | n_knots I | T d,
          then node values (n_knots, nx, ny, nz, 3)
"""

import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np
import pandas as pd

from src.config import SNAPSHOT_MAGIC, SNAPSHOT_VERSION
from src.core_model.phase_space import FieldGrid
from src.forward.control_field import ControlField
from src.forward.solver import TrajectoryStore
from src.logger import get_logger

logger = get_logger(__name__)

HEADER = struct.Struct("<4sH4sHQQdI32s")
GRID_HEADER = struct.Struct("<3d3d3IId")
FLAG_FORWARD_JACOBIANS = 1
FLAG_INVERSE_JACOBIANS = 2
F8 = np.dtype("<f8")

PathLike = Union[str, Path]


def _digest(scenario_hash: str) -> bytes:
    raw = bytes.fromhex(scenario_hash) if scenario_hash else b""
    return raw.ljust(32, b"\0")[:32]


def _header(tag: bytes, flags: int, count: int, n_steps: int, dt: float, threads: int,
            scenario_hash: str) -> bytes:
    return HEADER.pack(
        SNAPSHOT_MAGIC, SNAPSHOT_VERSION, tag, flags, count, n_steps, dt, threads,
        _digest(scenario_hash),
    )


def _write(path: PathLike, header: bytes, payloads) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(header)
        for array in payloads:
            handle.write(np.ascontiguousarray(array, dtype=F8).tobytes())
    logger.debug(f"Wrote {path}")
    return path


def write_trajectory(
    path: PathLike, traj: TrajectoryStore, scenario_hash: str, threads: int
) -> Path:
    flags = 0
    if traj.forward_jacobians is not None:
        flags |= FLAG_FORWARD_JACOBIANS
    if traj.inverse_jacobians is not None:
        flags |= FLAG_INVERSE_JACOBIANS
    header = _header(
        b"TRAJ", flags, traj.ensemble.count, traj.n_steps, traj.dt, threads, scenario_hash
    )

    def payloads():
        for n in range(traj.n_steps + 1):
            yield traj.states[n]
            if flags & FLAG_FORWARD_JACOBIANS:
                yield traj.forward_jacobians[n]
            if flags & FLAG_INVERSE_JACOBIANS:
                yield traj.inverse_jacobians[n]

    return _write(path, header, payloads())


def write_costate(path: PathLike, costate, scenario_hash: str, threads: int) -> Path:
    n_steps = costate.times.shape[0] - 1
    dt = float(costate.times[1] - costate.times[0])
    header = _header(
        b"COST", 0, costate.values.shape[1], n_steps, dt, threads, scenario_hash
    )

    def payloads():
        for n in range(n_steps + 1):
            yield costate.values[n]
            yield costate.gradients[n]

    return _write(path, header, payloads())


def write_control(
    path: PathLike, field: ControlField, scenario_hash: str, threads: int
) -> Path:
    grid = field.grid
    n_nodes = int(np.prod(grid.dims))
    gap = field.final_time / (grid.n_time_knots - 1)
    header = _header(
        b"CTRL", 0, n_nodes, grid.n_time_knots - 1, gap, threads, scenario_hash
    ) + GRID_HEADER.pack(
        *grid.origin, *grid.spacing, *grid.dims, grid.n_time_knots, field.final_time
    )
    return _write(path, header, [field.values])


def read_header(path: PathLike) -> Dict:
    with open(path, "rb") as handle:
        raw = handle.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise ValueError(f"{path} is too short for a snapshot header")
    magic, version, tag, flags, count, n_steps, dt, threads, digest = HEADER.unpack(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path} is not a snapshot file (magic {magic!r})")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path} has unsupported snapshot version {version}")
    return {
        "tag": tag.decode("ascii"),
        "flags": flags,
        "count": count,
        "n_steps": n_steps,
        "dt": dt,
        "threads": threads,
        "scenario_hash": digest.hex(),
    }


def read_control(path: PathLike) -> ControlField:
    """Load a control field written by write_control."""
    header = read_header(path)
    if header["tag"] != "CTRL":
        raise ValueError(f"{path} holds a {header['tag']} section, expected CTRL")
    with open(path, "rb") as handle:
        handle.seek(HEADER.size)
        grid_raw = handle.read(GRID_HEADER.size)
        values = np.frombuffer(handle.read(), dtype=F8)
    fields = GRID_HEADER.unpack(grid_raw)
    grid = FieldGrid(
        origin=fields[0:3], spacing=fields[3:6], dims=fields[6:9], n_time_knots=fields[9]
    )
    final_time = fields[10]
    return ControlField(grid, final_time, values.reshape(grid.n_time_knots, *grid.dims, 3))


def write_csv(path: PathLike, frame: pd.DataFrame, scenario_hash: str, threads: int) -> Path:
    """CSV with a provenance comment line carrying the scenario hash."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(f"# scenario_sha256={scenario_hash} threads={threads}\n")
        frame.to_csv(handle, index=False, float_format="%.17g")
    logger.debug(f"Wrote {path}")
    return path


def read_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")
