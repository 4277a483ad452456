"""On-disk formats: heightfields, validity bitmaps, point clouds, local
map blobs, and the JSON-lines logs. Binary layouts are little-endian.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .geometry import Pose, Quaternion, quat_normalize
from .sensors import ImuSample, LidarScan
from .terrain import Heightfield

HFLD_MAGIC = b"HFLD"
HVLD_MAGIC = b"HVLD"
PCLD_MAGIC = b"PCLD"
FORMAT_VERSION = 1

_HFLD_HEAD = struct.Struct("<4sHIIddd")
_HVLD_HEAD = struct.Struct("<4sHII")
_PCLD_HEAD = struct.Struct("<4sQI")
_LOCAL_HEAD = struct.Struct("<HHf8x")  # rows, cols, resolution, reserved


def write_heightfield(hf: Heightfield, path) -> None:
    head = _HFLD_HEAD.pack(HFLD_MAGIC, FORMAT_VERSION, hf.width, hf.height,
                           hf.resolution, hf.origin[0], hf.origin[1])
    body = np.ascontiguousarray(hf.heights, dtype="<f4").tobytes()
    Path(path).write_bytes(head + body)


def read_heightfield(path) -> Heightfield:
    data = Path(path).read_bytes()
    if len(data) < _HFLD_HEAD.size:
        raise ValueError("truncated heightfield file")
    magic, ver, w, h, res, ox, oy = _HFLD_HEAD.unpack_from(data)
    if magic != HFLD_MAGIC:
        raise ValueError("not a heightfield file")
    if ver != FORMAT_VERSION:
        raise ValueError(f"unsupported heightfield version {ver}")
    cells = np.frombuffer(data, dtype="<f4", count=w * h, offset=_HFLD_HEAD.size)
    heights = cells.reshape(w, h).astype(float)
    return Heightfield(width=w, height=h, resolution=res,
                       origin=np.array([ox, oy]), heights=heights)


def heightfield_to_csv(hf: Heightfield, path) -> None:
    np.savetxt(path, hf.heights, delimiter=",", fmt="%.6f")


def write_validity(valid: np.ndarray, path) -> None:
    """Bit-pack a boolean grid, one byte-aligned run per row."""
    v = np.asarray(valid, dtype=bool)
    head = _HVLD_HEAD.pack(HVLD_MAGIC, FORMAT_VERSION, v.shape[0], v.shape[1])
    rows = [np.packbits(row).tobytes() for row in v]
    Path(path).write_bytes(head + b"".join(rows))


def read_validity(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, ver, w, h = _HVLD_HEAD.unpack_from(data)
    if magic != HVLD_MAGIC:
        raise ValueError("not a validity file")
    if ver != FORMAT_VERSION:
        raise ValueError(f"unsupported validity version {ver}")
    row_bytes = (h + 7) // 8
    out = np.empty((w, h), dtype=bool)
    off = _HVLD_HEAD.size
    for i in range(w):
        packed = np.frombuffer(data, dtype=np.uint8, count=row_bytes, offset=off)
        out[i] = np.unpackbits(packed)[:h].astype(bool)
        off += row_bytes
    return out


def write_pointcloud(scan: LidarScan, path) -> None:
    pts = np.ascontiguousarray(scan.points, dtype="<f4")
    head = _PCLD_HEAD.pack(PCLD_MAGIC, scan.timestamp_ns, len(pts))
    Path(path).write_bytes(head + pts.tobytes())


def read_pointcloud(path) -> LidarScan:
    data = Path(path).read_bytes()
    magic, ts, count = _PCLD_HEAD.unpack_from(data)
    if magic != PCLD_MAGIC:
        raise ValueError("not a point cloud file")
    pts = np.frombuffer(data, dtype="<f4", count=count * 3, offset=_PCLD_HEAD.size)
    return LidarScan(timestamp_ns=ts, points=pts.reshape(count, 3).astype(float))


def encode_local_map(heights: np.ndarray, resolution: float) -> bytes:
    """16-byte header (rows u16, cols u16, resolution f32, reserved) then
    f32 cells row-major."""
    h = np.asarray(heights)
    if h.ndim != 2:
        raise ValueError("local map must be 2-D")
    head = _LOCAL_HEAD.pack(h.shape[0], h.shape[1], resolution)
    return head + np.ascontiguousarray(h, dtype="<f4").tobytes()


def decode_local_map(blob: bytes) -> tuple[np.ndarray, float]:
    rows, cols, res = _LOCAL_HEAD.unpack_from(blob)
    cells = np.frombuffer(blob, dtype="<f4", count=rows * cols,
                          offset=_LOCAL_HEAD.size)
    return cells.reshape(rows, cols).astype(float), float(res)


LOCAL_BLOB_HEADER_SIZE = _LOCAL_HEAD.size


def pose_record(pose: Pose) -> dict:
    q = pose.orientation
    return {
        "timestamp_ns": pose.timestamp_ns,
        "px": float(pose.position[0]), "py": float(pose.position[1]),
        "pz": float(pose.position[2]),
        "qw": q.w, "qx": q.x, "qy": q.y, "qz": q.z,
    }


def pose_from_record(rec: dict) -> Pose:
    q = quat_normalize(Quaternion(rec["qw"], rec["qx"], rec["qy"], rec["qz"]))
    return Pose(np.array([rec["px"], rec["py"], rec["pz"]]), q,
                int(rec["timestamp_ns"]))


def imu_record(sample: ImuSample) -> dict:
    w, a = sample.angular_velocity, sample.linear_acceleration
    return {
        "timestamp_ns": sample.timestamp_ns,
        "wx": float(w[0]), "wy": float(w[1]), "wz": float(w[2]),
        "ax": float(a[0]), "ay": float(a[1]), "az": float(a[2]),
    }


def write_jsonl(records, path) -> None:
    # repr-based float formatting keeps identical runs byte-identical
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
