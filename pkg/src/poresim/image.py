"""3D binary pore-space images.

Voxel tags: 0 = pore (void, water filled), 1 = solid. Images are stored as
dense uint8 arrays of shape (nx, ny, nz) indexed ``tags[i, j, k]``. The
linear (file) order is x-fastest: ``lin = i + nx*(j + ny*k)``, which is the
Fortran ravel of the tag array. Node indices derived from an image are
stable across runs because they follow this order.

On-disk format:
  * raw file: one unsigned byte per voxel, x-fastest, no header;
  * metadata sidecar: text lines ``nx = <int>``, ``ny = <int>``, ``nz = <int>``;
  * ball list: CSV with header ``cx,cy,cz,r``, coordinates in voxel units.

Any nonzero byte in a raw file is read as solid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

PORE = 0
SOLID = 1


@dataclass(frozen=True)
class Ball:
    """Spherical primitive, center and radius in voxel units."""

    cx: float
    cy: float
    cz: float
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"ball radius must be > 0, got {self.radius}")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz], dtype=float)


@dataclass(frozen=True)
class BinaryImage3D:
    """Dense voxel tag grid; ``tags[i, j, k]`` is 0 (pore) or 1 (solid)."""

    tags: np.ndarray

    def __post_init__(self):
        if self.tags.ndim != 3:
            raise ValueError(f"tags must be 3D, got shape {self.tags.shape}")
        if self.tags.dtype != np.uint8:
            object.__setattr__(self, "tags", self.tags.astype(np.uint8))
        bad = (self.tags > 1).sum()
        if bad:
            raise ValueError(f"{bad} voxel tags outside {{0, 1}}")

    @property
    def dims(self) -> tuple[int, int, int]:
        nx, ny, nz = self.tags.shape
        return nx, ny, nz

    @property
    def n_voxels(self) -> int:
        return int(self.tags.size)

    @property
    def n_pore(self) -> int:
        return int((self.tags == PORE).sum())

    @property
    def porosity(self) -> float:
        return self.n_pore / self.n_voxels

    def linear_tags(self) -> np.ndarray:
        """Tags in x-fastest linear order (the raw-file order)."""
        return self.tags.ravel(order="F")


def _parse_meta(path_meta) -> tuple[int, int, int]:
    dims = {}
    try:
        text = Path(path_meta).read_text()
    except OSError as exc:
        raise ValueError(f"unreadable metadata file {path_meta}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path_meta}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in ("nx", "ny", "nz"):
            raise ValueError(f"{path_meta}:{lineno}: unknown key {key!r}")
        try:
            dims[key] = int(value.strip())
        except ValueError:
            raise ValueError(f"{path_meta}:{lineno}: {key} is not an integer") from None
    missing = [k for k in ("nx", "ny", "nz") if k not in dims]
    if missing:
        raise ValueError(f"{path_meta}: missing keys {missing}")
    if min(dims.values()) <= 0:
        raise ValueError(f"{path_meta}: dimensions must be positive, got {dims}")
    return dims["nx"], dims["ny"], dims["nz"]


def load_image(path_raw, path_meta) -> BinaryImage3D:
    """Read a raw byte image with its metadata sidecar.

    Any nonzero byte maps to solid. Raises ValueError if the raw length
    does not match the declared dimensions.
    """
    nx, ny, nz = _parse_meta(path_meta)
    raw = Path(path_raw).read_bytes()
    if len(raw) != nx * ny * nz:
        raise ValueError(
            f"{path_raw}: raw length {len(raw)} does not match dims "
            f"({nx}, {ny}, {nz}) = {nx * ny * nz} voxels"
        )
    flat = (np.frombuffer(raw, dtype=np.uint8) != 0).astype(np.uint8)
    tags = flat.reshape((nx, ny, nz), order="F")
    return BinaryImage3D(tags)


def save_image(img: BinaryImage3D, path_raw, path_meta) -> None:
    """Write the raw bytes and metadata sidecar (inverse of load_image)."""
    nx, ny, nz = img.dims
    Path(path_raw).write_bytes(img.linear_tags().tobytes())
    Path(path_meta).write_text(f"nx = {nx}\nny = {ny}\nnz = {nz}\n")


def voxel_centers(dims: tuple[int, int, int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coordinate grids of voxel centers; voxel (i,j,k) is centered at (i+.5, j+.5, k+.5)."""
    nx, ny, nz = dims
    return np.meshgrid(
        np.arange(nx) + 0.5, np.arange(ny) + 0.5, np.arange(nz) + 0.5, indexing="ij"
    )


def rasterize_balls(balls: Sequence[Ball], dims: tuple[int, int, int]) -> BinaryImage3D:
    """Rasterize a ball union into a binary image.

    A voxel is pore iff its center lies within (distance <= radius of) at
    least one ball. An empty ball list yields an all-solid image.
    """
    nx, ny, nz = dims
    if min(dims) <= 0:
        raise ValueError(f"dims must be positive, got {dims}")
    tags = np.full(dims, SOLID, dtype=np.uint8)
    for b in balls:
        # only the ball's bounding box needs testing
        lo = [max(0, int(np.floor(c - b.radius - 0.5))) for c in (b.cx, b.cy, b.cz)]
        hi = [
            min(n, int(np.ceil(c + b.radius - 0.5)) + 1)
            for c, n in zip((b.cx, b.cy, b.cz), dims)
        ]
        if any(l >= h for l, h in zip(lo, hi)):
            continue
        xs = np.arange(lo[0], hi[0]) + 0.5 - b.cx
        ys = np.arange(lo[1], hi[1]) + 0.5 - b.cy
        zs = np.arange(lo[2], hi[2]) + 0.5 - b.cz
        d2 = (
            xs[:, None, None] ** 2 + ys[None, :, None] ** 2 + zs[None, None, :] ** 2
        )
        inside = d2 <= b.radius**2
        sub = tags[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]]
        sub[inside] = PORE
    return BinaryImage3D(tags)


def extract_subvolume(
    img: BinaryImage3D, origin: tuple[int, int, int], dims: tuple[int, int, int]
) -> BinaryImage3D:
    """Axis-aligned crop; origin + dims must lie within the source bounds."""
    ox, oy, oz = origin
    nx, ny, nz = dims
    if min(dims) <= 0:
        raise ValueError(f"crop dims must be positive, got {dims}")
    src = img.dims
    if min(origin) < 0 or ox + nx > src[0] or oy + ny > src[1] or oz + nz > src[2]:
        raise ValueError(f"crop origin={origin} dims={dims} exceeds source dims {src}")
    return BinaryImage3D(img.tags[ox : ox + nx, oy : oy + ny, oz : oz + nz].copy())


def load_balls(path) -> list[Ball]:
    """Read a ball list CSV (header cx,cy,cz,r)."""
    balls = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["cx", "cy", "cz", "r"]
        if reader.fieldnames != expected:
            raise ValueError(f"{path}: expected header {expected}, got {reader.fieldnames}")
        for row in reader:
            balls.append(
                Ball(float(row["cx"]), float(row["cy"]), float(row["cz"]), float(row["r"]))
            )
    return balls


def save_balls(balls: Sequence[Ball], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cx", "cy", "cz", "r"])
        for b in balls:
            writer.writerow([repr(b.cx), repr(b.cy), repr(b.cz), repr(b.radius)])
