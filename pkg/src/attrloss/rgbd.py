"""Depth-map geometry preprocessing: unprojection, spherical crop around the
nose tip, recentering and bilinear reprojection to a fixed grid, and
six-channel normalization to [-1, 1]."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DATASET_MAGIC, DegenerateInputError, DimensionError

OUT_HEIGHT = 112
OUT_WIDTH = 96
DEFAULT_RADIUS_MM = 90.0
# extents below this fraction of the coordinate magnitude are splatting round-off
EXTENT_RTOL = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Depth in millimetres, row-major (height, width); 0 marks a missing pixel."""

    depth_mm: np.ndarray
    intrinsics: Intrinsics

    def __post_init__(self):
        d = np.asarray(self.depth_mm, dtype=np.float64)
        if d.ndim != 2:
            raise DimensionError("depth must be a 2-D array")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise ValueError("depth must be finite and non-negative")
        object.__setattr__(self, "depth_mm", d)

    @property
    def height(self) -> int:
        return self.depth_mm.shape[0]

    @property
    def width(self) -> int:
        return self.depth_mm.shape[1]

    @property
    def mask(self) -> np.ndarray:
        return self.depth_mm > 0


def unproject(depth: DepthImage) -> np.ndarray:
    """(P, 3) camera-space points for every valid pixel, in row-major pixel order."""
    k = depth.intrinsics
    v, u = np.nonzero(depth.mask)
    z = depth.depth_mm[v, u]
    return np.stack([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z], axis=1)


def project(points: np.ndarray, intr: Intrinsics) -> np.ndarray:
    """(P, 2) pixel coordinates (u, v) of camera-space points."""
    p = np.asarray(points, dtype=np.float64)
    return np.stack([intr.fx * p[:, 0] / p[:, 2] + intr.cx, intr.fy * p[:, 1] / p[:, 2] + intr.cy], axis=1)


def crop_sphere(points: np.ndarray, nose_tip, radius_mm: float = DEFAULT_RADIUS_MM) -> np.ndarray:
    """Points strictly closer than ``radius_mm`` to the nose tip."""
    if radius_mm <= 0:
        raise ValueError("radius must be positive")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    d2 = ((pts - np.asarray(nose_tip, dtype=np.float64)) ** 2).sum(axis=1)
    out = pts[d2 < radius_mm * radius_mm]
    if len(out) == 0:
        raise DegenerateInputError("no points inside the crop sphere")
    return out


def optimal_depth(radius_mm: float, intr: Intrinsics, width: int = OUT_WIDTH, height: int = OUT_HEIGHT) -> float:
    """Smallest depth at which a sphere of the crop diameter still fits the output frame."""
    return max(2.0 * radius_mm * intr.fx / width, 2.0 * radius_mm * intr.fy / height)


def recenter_and_project(
    points: np.ndarray,
    intr: Intrinsics,
    radius_mm: float = DEFAULT_RADIUS_MM,
    width: int = OUT_WIDTH,
    height: int = OUT_HEIGHT,
):
    """Move the cloud's centroid to ``(0, 0, z_opt)`` and splat it onto a new depth map.

    The output camera keeps ``fx, fy`` and puts its principal point at the
    frame centre. Each point spreads its depth over the four surrounding
    pixels with bilinear weights; a pixel's depth is the weighted mean of the
    contributions and pixels with no weight stay missing (0). Returns
    ``(DepthImage, z_opt)``.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise DegenerateInputError("empty point cloud")
    z_opt = optimal_depth(radius_mm, intr, width, height)
    out_intr = Intrinsics(intr.fx, intr.fy, (width - 1) / 2.0, (height - 1) / 2.0)
    moved = pts - pts.mean(axis=0) + np.array([0.0, 0.0, z_opt])
    if np.any(moved[:, 2] <= 0):
        raise DegenerateInputError("points behind the camera after recentering")
    uv = project(moved, out_intr)

    acc = np.zeros(height * width)
    wsum = np.zeros(height * width)
    u0 = np.floor(uv[:, 0]).astype(np.int64)
    v0 = np.floor(uv[:, 1]).astype(np.int64)
    du = uv[:, 0] - u0
    dv = uv[:, 1] - v0
    for ou, ov, w in (
        (0, 0, (1 - du) * (1 - dv)),
        (1, 0, du * (1 - dv)),
        (0, 1, (1 - du) * dv),
        (1, 1, du * dv),
    ):
        uu, vv = u0 + ou, v0 + ov
        ok = (uu >= 0) & (uu < width) & (vv >= 0) & (vv < height) & (w > 0)
        flat = vv[ok] * width + uu[ok]
        np.add.at(acc, flat, w[ok] * moved[ok, 2])
        np.add.at(wsum, flat, w[ok])
    depth = np.zeros(height * width)
    hit = wsum > 0
    depth[hit] = acc[hit] / wsum[hit]
    return DepthImage(depth.reshape(height, width), out_intr), z_opt


@dataclass(frozen=True, eq=False)
class NormalizedFaceTensor:
    """(112, 96, 6) array with channels R, G, B, x, y, z, all in [-1, 1]."""

    data: np.ndarray
    mask: np.ndarray

    def flatten(self) -> np.ndarray:
        return self.data.reshape(-1)


def normalize_rgb(rgb) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float64) * (2.0 / 255.0) - 1.0


def normalize_axis(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """``(2v - hi - lo) / (hi - lo)``, arranged so the extremes map to exactly -1 and +1."""
    return ((values - lo) - (hi - values)) / (hi - lo)


def normalize_tensor(rgb, projected: DepthImage) -> NormalizedFaceTensor:
    """Stack normalized RGB with the per-axis min/max-normalized point coordinates.

    Coordinates come from unprojecting ``projected``; missing pixels get 0 in
    the geometry channels.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    H, W = projected.height, projected.width
    if rgb.shape != (H, W, 3):
        raise DimensionError(f"rgb has shape {rgb.shape}, expected {(H, W, 3)}")
    mask = projected.mask
    pts = unproject(projected)
    geom = np.zeros((H, W, 3))
    for axis, name in enumerate("xyz"):
        vals = pts[:, axis] if len(pts) else np.zeros(0)
        if len(vals) == 0 or vals.max() - vals.min() <= EXTENT_RTOL * max(np.abs(vals).max(), 1.0):
            raise DegenerateInputError(f"{name} axis has zero extent")
        plane = np.zeros((H, W))
        plane[mask] = normalize_axis(vals, vals.min(), vals.max())
        geom[..., axis] = plane
    data = np.concatenate([normalize_rgb(rgb), geom], axis=2)
    return NormalizedFaceTensor(data=data, mask=mask)


def preprocess(depth: DepthImage, rgb, nose_tip, radius_mm: float = DEFAULT_RADIUS_MM) -> NormalizedFaceTensor:
    cloud = crop_sphere(unproject(depth), nose_tip, radius_mm)
    projected, _ = recenter_and_project(cloud, depth.intrinsics, radius_mm)
    return normalize_tensor(rgb, projected)


# --- raster I/O -----------------------------------------------------------------
# depth: "<path>.header" with key = value lines (width, height, fx, fy, cx, cy),
# payload is width*height little-endian uint16 millimetres.
# rgb: width*height*3 raw uint8, row-major, channel-last.


def read_header(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def header_path(path) -> Path:
    return Path(str(path) + ".header")


def write_depth(path, depth: DepthImage) -> None:
    k = depth.intrinsics
    Path(path).write_bytes(np.round(depth.depth_mm).astype("<u2").tobytes())
    header_path(path).write_text(
        f"width = {depth.width}\nheight = {depth.height}\n"
        f"fx = {k.fx!r}\nfy = {k.fy!r}\ncx = {k.cx!r}\ncy = {k.cy!r}\n",
        encoding="utf-8",
    )


def read_depth(path, intrinsics: Intrinsics | None = None) -> DepthImage:
    meta = read_header(header_path(path))
    w, h = int(meta["width"]), int(meta["height"])
    raw = np.frombuffer(Path(path).read_bytes(), dtype="<u2")
    if raw.size != w * h:
        raise ValueError(f"{path}: expected {w * h} depth values, found {raw.size}")
    if intrinsics is None:
        intrinsics = Intrinsics(*(float(meta[k]) for k in ("fx", "fy", "cx", "cy")))
    return DepthImage(raw.reshape(h, w).astype(np.float64), intrinsics)


def read_rgb(path, width: int = OUT_WIDTH, height: int = OUT_HEIGHT) -> np.ndarray:
    raw = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
    if raw.size != width * height * 3:
        raise ValueError(f"{path}: expected {width * height * 3} bytes, found {raw.size}")
    return raw.reshape(height, width, 3)


def append_record(path, tensor_input: np.ndarray, label: int, attributes) -> int:
    """Append one sample to an ATTRSET1 file, creating it if needed; returns the new N.

    ``label`` may introduce at most one new class (label == C).
    """
    path = Path(path)
    x = np.asarray(tensor_input, dtype="<f8").reshape(-1)
    p = np.asarray(attributes, dtype="<f8").reshape(-1)
    head = struct.Struct("<8sIIII")
    if path.exists():
        blob = bytearray(path.read_bytes())
        magic, N, D, C, H = head.unpack_from(blob)
        if magic != DATASET_MAGIC:
            raise ValueError(f"{path}: not an ATTRSET1 file")
        if D != x.size or H != p.size:
            raise DimensionError(f"record has D={x.size}, H={p.size}; file has D={D}, H={H}")
    else:
        blob = bytearray(head.pack(DATASET_MAGIC, 0, x.size, 0, p.size))
        N, D, C, H = 0, x.size, 0, p.size
    if not 0 <= label <= C:
        raise ValueError(f"label {label} would leave classes {C}..{label - 1} empty")
    C = max(C, label + 1)
    blob[: head.size] = head.pack(DATASET_MAGIC, N + 1, D, C, H)
    blob += struct.pack("<I", label) + p.tobytes() + x.tobytes()
    path.write_bytes(bytes(blob))
    return N + 1
