"""Parallel-beam CT experiment construction.

Builds the ingredients of a reconstruction instance: a head phantom (or
any grayscale image), the ray-by-pixel intersection-length system matrix,
a noisy observation with its fidelity budget, and row-block partitions of
the matrix. Images use the row-major layout of :mod:`epirecon.linops`
with an eight-bit intensity range [0, 255].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linops import (
    BlockPartition,
    FileFormatError,
    SparseMatrix,
    atomic_write_bytes,
    partition_rows,
)

# classic head phantom: additive ellipses as
# (value, x semi-axis, y semi-axis, x center, y center, rotation degrees)
_PHANTOM_ELLIPSES = (
    (2.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.98, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.02, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.02, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.01, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.01, 0.0460, 0.0460, 0.0, 0.10, 0.0),
    (0.01, 0.0460, 0.0460, 0.0, -0.10, 0.0),
    (0.01, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.01, 0.0230, 0.0230, 0.0, -0.605, 0.0),
    (0.01, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)


def shepp_logan_phantom(n):
    """Head phantom rendered at n x n, scaled to [0, 255], flattened row-major.

    Pixel centers sample the unit square [-1, 1]^2 with image row 0 at the
    top. Ellipse values superpose additively, then the image is rescaled
    so the brightest tissue maps to 255. Deterministic for a given n.
    """
    if n < 8:
        raise ValueError("phantom size must be at least 8 pixels")
    xs = (np.arange(n) + 0.5) * (2.0 / n) - 1.0
    ys = 1.0 - (np.arange(n) + 0.5) * (2.0 / n)
    grid_x, grid_y = np.meshgrid(xs, ys)
    img = np.zeros((n, n))
    for value, a, b, x0, y0, deg in _PHANTOM_ELLIPSES:
        phi = math.radians(deg)
        cos_p, sin_p = math.cos(phi), math.sin(phi)
        xr = (grid_x - x0) * cos_p + (grid_y - y0) * sin_p
        yr = -(grid_x - x0) * sin_p + (grid_y - y0) * cos_p
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += value
    img *= 255.0 / img.max()
    return img.ravel()


def default_detector_count(n):
    """Detectors spanning the circumscribed circle at roughly pixel pitch."""
    return math.ceil(math.sqrt(2.0) * n) + 1


@dataclass(eq=False)
class RadonGeometry:
    """Parallel-beam acquisition: n x n image, equispaced angles in [0, pi),
    detectors uniformly covering the circumscribed circle."""

    image_side: int
    num_angles: int
    num_detectors: int | None = None
    angles: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.image_side < 2:
            raise ValueError("image side must be at least 2 pixels")
        if self.num_angles < 1:
            raise ValueError("need at least one projection angle")
        if self.num_detectors is None:
            self.num_detectors = default_detector_count(self.image_side)
        if self.num_detectors < 1:
            raise ValueError("need at least one detector")
        self.angles = np.arange(self.num_angles) * (math.pi / self.num_angles)

    @property
    def num_rays(self):
        return self.num_angles * self.num_detectors

    @property
    def num_pixels(self):
        return self.image_side * self.image_side


def build_radon_matrix(geometry):
    """Line-integral system matrix: entry (ray, pixel) is the length of the
    ray's intersection with the pixel (unit pixel pitch).

    Rays for angle theta travel along (cos theta, sin theta); the detector
    offset t shifts them along the perpendicular. Each ray is clipped to
    the image square, the crossings with the pixel grid lines are merged,
    and segment midpoints attribute each chord piece to its pixel. Row
    order is angle-major, detector-minor.
    """
    n = geometry.image_side
    half = n / 2.0
    span = n / math.sqrt(2.0)
    ndet = geometry.num_detectors
    pitch = 2.0 * span / ndet
    offsets = (np.arange(ndet) + 0.5) * pitch - span
    grid = np.arange(n + 1) - half
    tiny = 1e-12

    counts = np.zeros(geometry.num_rays, dtype=np.int64)
    col_chunks = []
    val_chunks = []
    ray = 0
    for theta in geometry.angles:
        dx, dy = math.cos(theta), math.sin(theta)
        ex, ey = -dy, dx
        for t in offsets:
            px, py = t * ex, t * ey
            s_min, s_max = -math.inf, math.inf
            hit = True
            for direction, origin in ((dx, px), (dy, py)):
                if abs(direction) > tiny:
                    s1 = (grid[0] - origin) / direction
                    s2 = (grid[-1] - origin) / direction
                    s_min = max(s_min, min(s1, s2))
                    s_max = min(s_max, max(s1, s2))
                elif not grid[0] <= origin <= grid[-1]:
                    hit = False
                    break
            if not hit or s_max - s_min <= tiny:
                ray += 1
                continue
            pieces = [np.array([s_min, s_max])]
            if abs(dx) > tiny:
                sx = (grid - px) / dx
                pieces.append(sx[(sx > s_min) & (sx < s_max)])
            if abs(dy) > tiny:
                sy = (grid - py) / dy
                pieces.append(sy[(sy > s_min) & (sy < s_max)])
            s = np.sort(np.concatenate(pieces))
            lengths = np.diff(s)
            keep = lengths > tiny
            if not keep.any():
                ray += 1
                continue
            mids = 0.5 * (s[1:] + s[:-1])[keep]
            lengths = lengths[keep]
            cols_j = np.clip(np.floor(px + mids * dx + half).astype(np.int64), 0, n - 1)
            rows_i = np.clip(np.floor(py + mids * dy + half).astype(np.int64), 0, n - 1)
            pixels = rows_i * n + cols_j
            order = np.argsort(pixels, kind="stable")
            pixels = pixels[order]
            lengths = lengths[order]
            starts = np.concatenate([[0], np.flatnonzero(np.diff(pixels)) + 1])
            col_chunks.append(pixels[starts])
            val_chunks.append(np.add.reduceat(lengths, starts))
            counts[ray] = starts.size
            ray += 1

    row_offsets = np.zeros(geometry.num_rays + 1, dtype=np.int64)
    np.cumsum(counts, out=row_offsets[1:])
    if col_chunks:
        col_indices = np.concatenate(col_chunks)
        values = np.concatenate(val_chunks)
    else:
        col_indices = np.zeros(0, dtype=np.int64)
        values = np.zeros(0)
    return SparseMatrix(geometry.num_rays, n * n, row_offsets, col_indices, values)


@dataclass(eq=False)
class Observation:
    """Noisy projection data with its fidelity budget."""

    data: np.ndarray
    noise_sigma: float
    seed: int
    epsilon_bar: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if not np.all(np.isfinite(self.data)):
            raise ValueError("observed data must be finite")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be nonnegative")
        if not self.epsilon_bar > 0:
            raise ValueError("epsilon_bar must be positive")


def simulate_observation(phi, u_true, sigma, seed, epsilon_floor=1e-6):
    """v = Phi u + white Gaussian noise from a seeded generator.

    The fidelity budget is the realized squared noise norm; in the
    noiseless case it falls back to epsilon_floor * ||v||^2 so the
    constraint set keeps an interior.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    clean = phi.matvec(u_true)
    if sigma > 0:
        noise = np.random.default_rng(seed).normal(0.0, sigma, phi.rows)
    else:
        noise = np.zeros(phi.rows)
    v = clean + noise
    epsilon_bar = float(noise @ noise)
    if epsilon_bar == 0.0:
        epsilon_bar = epsilon_floor * float(v @ v)
    return Observation(v, float(sigma), int(seed), epsilon_bar)


def partition_for_blocks(geometry, num_blocks, mode="rows"):
    """Row partition of the system matrix.

    "rows": near-equal contiguous row ranges. "angles": the angles are
    split into near-equal contiguous groups and each block takes all rows
    of its angles, which balances the per-block geometry.
    """
    if mode == "rows":
        return partition_rows(geometry.num_rays, num_blocks)
    if mode == "angles":
        if not 1 <= num_blocks <= geometry.num_angles:
            raise ValueError(
                f"need 1 <= num_blocks <= num_angles, got {num_blocks} blocks for {geometry.num_angles} angles"
            )
        ndet = geometry.num_detectors
        base, extra = divmod(geometry.num_angles, num_blocks)
        ranges = []
        first = 0
        for l in range(num_blocks):
            count = base + (1 if l < extra else 0)
            ranges.append((first * ndet, (first + count) * ndet))
            first += count
        return BlockPartition(ranges)
    raise ValueError(f"unknown partition mode {mode!r}")


def write_pgm(path, u, height, width):
    """Eight-bit binary PGM; values are clamped to [0, 255] and rounded
    half-to-even for export only."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (height * width,):
        raise ValueError(f"expected a vector of length {height * width}, got shape {u.shape}")
    quantized = np.rint(np.clip(u, 0.0, 255.0)).astype(np.uint8)
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + quantized.tobytes())


def read_pgm(path):
    """Read an eight-bit binary PGM; returns (vector, height, width)."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError:
        raise FileFormatError(f"{path}: no such file") from None
    tokens = []
    pos = 0
    while len(tokens) < 4 and pos < len(data):
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if pos > start:
            tokens.append(data[start:pos])
    if len(tokens) != 4 or tokens[0] != b"P5":
        raise FileFormatError(f"{path}: not a binary PGM file")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FileFormatError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise FileFormatError(f"{path}: only 8-bit PGM is supported")
    pos += 1  # single whitespace after maxval
    body = data[pos : pos + width * height]
    if len(body) != width * height:
        raise FileFormatError(f"{path}: truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8).astype(np.float64), height, width
