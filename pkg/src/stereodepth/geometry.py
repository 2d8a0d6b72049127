"""Disparity/depth conversion, point clouds, voxelization, and the
first-order depth-accuracy budget.

The default rig mirrors the target sensor head: 10 cm baseline, 100 x 80
degree rectified field of view at 2560 x 2048, giving fx*b of about
107.4 px*m, so a 1 cm depth budget at 2 m allows roughly 0.27 px of
disparity error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .postproc import FilteredDisparity


@dataclass
class CameraRig:
    fx: float
    fy: float
    cx: float
    cy: float
    baseline: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0 or self.baseline <= 0:
            raise ValueError("fx, fy and baseline must be > 0")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")


def rig_from_fov(width: int = 2560, height: int = 2048, hfov_deg: float = 100.0,
                 baseline: float = 0.1) -> CameraRig:
    """Derive intrinsics from a horizontal field of view; fy defaults to fx
    and the principal point to the image center."""
    fx = (width / 2.0) / np.tan(np.deg2rad(hfov_deg) / 2.0)
    return CameraRig(fx=float(fx), fy=float(fx), cx=width / 2.0, cy=height / 2.0,
                     baseline=baseline, width=width, height=height)


def default_rig() -> CameraRig:
    return rig_from_fov()


def disparity_to_depth(d, rig: CameraRig):
    """Z = fx * b / d. Scalars with d <= 0 raise; in arrays such pixels
    (and non-finite ones) come back as NaN with no depth emitted."""
    fb = rig.fx * rig.baseline
    if np.isscalar(d):
        if d <= 0:
            raise ValueError(f"disparity must be > 0, got {d}")
        return fb / float(d)
    arr = np.asarray(d, dtype=np.float64)
    out = np.full(arr.shape, np.nan)
    ok = np.isfinite(arr) & (arr > 0)
    out[ok] = fb / arr[ok]
    return out


def depth_to_disparity(z, rig: CameraRig):
    """Inverse of disparity_to_depth (the relation is an involution scaled
    by fx * b)."""
    fb = rig.fx * rig.baseline
    if np.isscalar(z):
        if z <= 0:
            raise ValueError(f"depth must be > 0, got {z}")
        return fb / float(z)
    arr = np.asarray(z, dtype=np.float64)
    out = np.full(arr.shape, np.nan)
    ok = np.isfinite(arr) & (arr > 0)
    out[ok] = fb / arr[ok]
    return out


def expected_depth_error(z: float, delta_d: float, rig: CameraRig) -> float:
    """First-order depth error for a disparity error of delta_d pixels."""
    if z <= 0:
        raise ValueError("depth must be > 0")
    return z * z * delta_d / (rig.fx * rig.baseline)


def disparity_budget(z: float, depth_error: float, rig: CameraRig) -> float:
    """Largest disparity error keeping depth error within the budget;
    inverts expected_depth_error."""
    if z <= 0 or depth_error < 0:
        raise ValueError("depth must be > 0 and the budget >= 0")
    return depth_error * rig.fx * rig.baseline / (z * z)


@dataclass
class PointCloud:
    """Points are [N,3] float32 (X right, Y down, Z forward, meters);
    colors, when present, are [N,3] uint8."""

    points: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.ascontiguousarray(np.asarray(self.points, dtype=np.float32)
                                           .reshape(-1, 3))
        if self.colors is not None:
            self.colors = np.ascontiguousarray(np.asarray(self.colors, dtype=np.uint8)
                                               .reshape(-1, 3))
            if len(self.colors) != len(self.points):
                raise ValueError(f"{len(self.colors)} colors for {len(self.points)} points")

    def __len__(self) -> int:
        return len(self.points)


def depth_to_points(depth, rig: CameraRig, color=None, valid=None) -> PointCloud:
    """Back-project a depth map; invalid (masked, non-finite, or Z <= 0)
    pixels are skipped. A FilteredDisparity is converted through the rig.

    color, when given, is a [3,H,W] float image in [0,1] sampled per point.
    """
    if isinstance(depth, FilteredDisparity):
        z = disparity_to_depth(depth.disparity, rig)
        mask = depth.valid
    else:
        z = np.asarray(depth, dtype=np.float64)
        mask = None
    if valid is not None:
        mask = np.asarray(valid, dtype=bool) if mask is None else (mask & valid)
    ok = np.isfinite(z) & (z > 0)
    if mask is not None:
        ok &= mask

    ys, xs = np.nonzero(ok)
    zs = z[ys, xs]
    pts = np.empty((len(ys), 3), dtype=np.float32)
    pts[:, 0] = (xs - rig.cx) * zs / rig.fx
    pts[:, 1] = (ys - rig.cy) * zs / rig.fy
    pts[:, 2] = zs
    colors = None
    if color is not None:
        img = np.asarray(color)
        colors = np.clip(np.rint(img[:, ys, xs].T * 255.0), 0, 255).astype(np.uint8)
    return PointCloud(points=pts, colors=colors)


def voxelize(cloud, voxel_size: float = 0.02) -> set[tuple[int, int, int]]:
    """Occupied voxel indices, index = floor(coordinate / voxel_size)."""
    if voxel_size <= 0:
        raise ValueError("voxel_size must be > 0")
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud).reshape(-1, 3)
    if len(pts) == 0:
        return set()
    idx = np.floor(pts.astype(np.float64) / voxel_size).astype(np.int64)
    return {tuple(row) for row in idx.tolist()}


def voxel_centers(voxels: set[tuple[int, int, int]], voxel_size: float = 0.02) -> PointCloud:
    """Cloud of voxel centers, sorted for deterministic output."""
    if not voxels:
        return PointCloud(points=np.empty((0, 3), dtype=np.float32))
    idx = np.array(sorted(voxels), dtype=np.float64)
    return PointCloud(points=(idx + 0.5) * voxel_size)


# -- PLY --------------------------------------------------------------------

def _ply_header(n: int, binary: bool, with_color: bool) -> bytes:
    lines = ["ply",
             "format binary_little_endian 1.0" if binary else "format ascii 1.0",
             f"element vertex {n}",
             "property float x", "property float y", "property float z"]
    if with_color:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def _fmt_f32(v: np.float32) -> str:
    # shortest decimal that parses back to the identical float32
    return np.format_float_positional(v, unique=True, trim="0")


def write_ply(cloud: PointCloud, binary: bool = True) -> bytes:
    """Encode a cloud; binary output is float32/uchar little-endian, ascii
    output uses shortest round-trippable decimals."""
    with_color = cloud.colors is not None
    out = [_ply_header(len(cloud), binary, with_color)]
    if binary:
        if with_color:
            rec = np.empty(len(cloud),
                           dtype=np.dtype([("xyz", "<f4", 3), ("rgb", "u1", 3)]))
            rec["xyz"] = cloud.points
            rec["rgb"] = cloud.colors
            out.append(rec.tobytes())
        else:
            out.append(cloud.points.astype("<f4", copy=False).tobytes())
    else:
        rows = []
        for i in range(len(cloud)):
            row = " ".join(_fmt_f32(v) for v in cloud.points[i])
            if with_color:
                row += " " + " ".join(str(int(c)) for c in cloud.colors[i])
            rows.append(row + "\n")
        out.append("".join(rows).encode("ascii"))
    return b"".join(out)


def write_ply_file(path, cloud: PointCloud, binary: bool = True) -> None:
    with open(path, "wb") as f:
        f.write(write_ply(cloud, binary))


def read_ply(source) -> PointCloud:
    """Decode PLY bytes (or a path): float32 x,y,z plus optional uchar rgb."""
    buf = bytes(source) if isinstance(source, (bytes, bytearray)) else open(source, "rb").read()
    end = buf.find(b"end_header\n")
    if not buf.startswith(b"ply\n") or end < 0:
        raise ValueError("not a PLY file")
    header = buf[:end].decode("ascii").splitlines()
    body = buf[end + len(b"end_header\n"):]

    binary = None
    n = None
    props = []
    for line in header[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            binary = parts[1] == "binary_little_endian"
            if parts[1] not in ("binary_little_endian", "ascii"):
                raise ValueError(f"unsupported PLY format {parts[1]!r}")
        elif parts[0] == "element":
            if parts[1] != "vertex":
                raise ValueError(f"unsupported PLY element {parts[1]!r}")
            n = int(parts[2])
        elif parts[0] == "property":
            props.append((parts[1], parts[2]))
    if binary is None or n is None:
        raise ValueError("malformed PLY header")
    names = [p[1] for p in props]
    if names[:3] != ["x", "y", "z"]:
        raise ValueError(f"expected x,y,z leading properties, got {names}")
    with_color = names[3:6] == ["red", "green", "blue"]

    if binary:
        stride = 12 + (3 if with_color else 0)
        if len(body) < n * stride:
            raise ValueError("truncated PLY payload")
        rec = np.frombuffer(body[:n * stride],
                            dtype=np.dtype([("xyz", "<f4", 3), ("rgb", "u1", 3)]
                                           if with_color else [("xyz", "<f4", 3)]))
        return PointCloud(points=rec["xyz"].copy(),
                          colors=rec["rgb"].copy() if with_color else None)

    rows = body.decode("ascii").split("\n")
    pts = np.empty((n, 3), dtype=np.float32)
    colors = np.empty((n, 3), dtype=np.uint8) if with_color else None
    for i in range(n):
        parts = rows[i].split()
        pts[i] = [np.float32(parts[j]) for j in range(3)]
        if with_color:
            colors[i] = [int(parts[3 + j]) for j in range(3)]
    return PointCloud(points=pts, colors=colors)
