"""Chaos-game sampling and rasterization of 1-D and 2-D clouds to grayscale PGM images.

The chaos game picks symbols uniformly at random. It is a heuristic picture
of the attractor and is only ever checked against the deterministic engine.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from geometry import PointSet
from ifs_system import IFSSystem
from maps import DomainBox

logger = logging.getLogger(__name__)

MAX_PIXELS = 16_000_000
PGM_MAXVAL = 255


def chaos_game(system: IFSSystem, iters: int, burn_in: int, seed: int) -> PointSet:
    """Random orbit x_{n+1} = f_{i_n}(x_n) from the box centre, first burn_in points dropped."""
    if not iters > burn_in >= 0:
        raise ValueError(f"chaos_game needs iters > burn_in >= 0, got iters={iters} burn_in={burn_in}")
    rng = np.random.default_rng(seed)
    choices = rng.integers(0, len(system.symbols), size=iters)
    maps = [system.maps[s] for s in system.symbols]
    x = system.box.center.reshape(1, -1)
    out = np.empty((iters - burn_in, system.dim))
    for n, k in enumerate(choices):
        x = maps[k].apply(x)
        if n >= burn_in:
            out[n - burn_in] = x[0]
    logger.info(f"Chaos game: {iters} steps, kept {iters - burn_in} points (seed {seed})")
    return PointSet(out)


@dataclass(frozen=True, eq=False)
class Raster:
    """Visit counts; counts[row, col] with row 0 at the bottom of the viewport."""
    width: int
    height: int
    counts: np.ndarray
    viewport: DomainBox
    dropped: int = 0

    @property
    def dim(self) -> int:
        return self.viewport.dim

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def pixel_pitch(self) -> float:
        """Largest side of one cell in viewport units."""
        sizes = [self.viewport.extent[0] / self.width]
        if self.dim == 2:
            sizes.append(self.viewport.extent[1] / self.height)
        return float(max(sizes))


def parse_size(text: str) -> Tuple[int, int]:
    """'512x256' -> (512, 256)."""
    try:
        w, h = (int(v) for v in text.lower().split('x'))
    except ValueError:
        raise ValueError(f"Image size must look like WIDTHxHEIGHT, got '{text}'") from None
    return w, h


def _cells(values: np.ndarray, lo: float, hi: float, n: int) -> np.ndarray:
    # Half-open cells [lo + k h, lo + (k+1) h); the upper edge itself joins the last cell.
    # Rounding can push values just below hi to n as well.
    idx = np.floor((values - lo) / (hi - lo) * n).astype(np.int64)
    idx[(values <= hi) & (idx >= n)] = n - 1
    return idx


def rasterize(points: PointSet, width: int, height: int, viewport: DomainBox) -> Raster:
    """Bin points into a width x height grid over viewport; points outside are counted as dropped.

    1-D clouds are drawn on the middle row. A degenerate viewport cannot be
    built: DomainBox raises ValueError for zero extent.
    """
    if width < 1 or height < 1:
        raise ValueError(f"Raster size must be positive, got {width}x{height}")
    if width * height > MAX_PIXELS:
        raise ValueError(f"Raster {width}x{height} exceeds {MAX_PIXELS} pixels")
    if viewport.dim > 2:
        raise ValueError(f"Only 1-D and 2-D clouds can be rasterized, viewport has dimension {viewport.dim}")
    if points.dim != viewport.dim:
        raise ValueError(f"Cloud dimension {points.dim} does not match viewport dimension {viewport.dim}")

    pts = points.points
    cols = _cells(pts[:, 0], viewport.lo[0], viewport.hi[0], width)
    if viewport.dim == 2:
        rows = _cells(pts[:, 1], viewport.lo[1], viewport.hi[1], height)
    else:
        rows = np.full(pts.shape[0], height // 2, dtype=np.int64)
    inside = (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)
    counts = np.zeros((height, width), dtype=np.int64)
    np.add.at(counts, (rows[inside], cols[inside]), 1)
    dropped = int(pts.shape[0] - inside.sum())
    if dropped:
        logger.warning(f"{dropped} of {pts.shape[0]} points fall outside the viewport")
    return Raster(width, height, counts, viewport, dropped)


def to_grayscale(raster: Raster) -> np.ndarray:
    """Log-scaled counts as uint8, image orientation (row 0 on top).

    1-D rasters are stretched from their strip over the whole height.
    """
    counts = raster.counts
    if raster.dim == 1:
        counts = np.broadcast_to(counts[raster.height // 2], counts.shape)
    peak = counts.max()
    if peak == 0:
        return np.zeros((raster.height, raster.width), dtype=np.uint8)
    scaled = np.log1p(counts) / np.log1p(peak) * PGM_MAXVAL
    return np.flipud(np.rint(scaled).astype(np.uint8)).copy()


def write_pgm(path: str, image: np.ndarray) -> None:
    """Binary P5, maxval 255, rows top to bottom."""
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError(f"PGM needs a 2-D uint8 image, got {img.dtype} with shape {img.shape}")
    height, width = img.shape
    with open(path, 'wb') as f:
        f.write(f"P5\n{width} {height}\n{PGM_MAXVAL}\n".encode('ascii'))
        f.write(np.ascontiguousarray(img).tobytes())
    logger.info(f"Wrote {width}x{height} PGM to {path}")


def read_pgm(path: str) -> np.ndarray:
    """Read a binary P5 file with maxval <= 255 back into a (height, width) uint8 array."""
    with open(path, 'rb') as f:
        data = f.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b'#':
            while pos < len(data) and data[pos:pos + 1] not in (b'\n', b'\r'):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"Truncated PGM header in {path}")
        tokens.append(data[start:pos].decode('ascii'))
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != 'P5' or maxval > PGM_MAXVAL:
        raise ValueError(f"{path} is not an 8-bit binary PGM (magic {magic}, maxval {maxval})")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos + 1)
    return pixels.reshape(height, width)
