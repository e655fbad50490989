"""Sparse and matrix-free linear operators.

CSR storage with contiguous row-block views, forward-difference image
gradients with Neumann boundary, power-iteration operator norms, and the
binary file formats ("CSR1" / "VEC1") used by the command-line driver.

Images are vectorized row-major throughout the package: pixel (i, j) of
an H x W image maps to index i * W + j.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse


class FileFormatError(ValueError):
    """Raised when a binary artifact file is missing or malformed."""


def _as_vector(x, n, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != n:
        raise ValueError(f"{name} must be a vector of length {n}, got shape {x.shape}")
    return x


@dataclass(eq=False)
class SparseMatrix:
    """Compressed sparse row matrix with float64 values.

    Per-row column indices are strictly increasing, so matrix-vector
    products accumulate each row in a fixed order and are bitwise
    reproducible run to run.
    """

    rows: int
    cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    _csr: object = field(default=None, init=False, repr=False)
    _csc: object = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.rows = int(self.rows)
        self.cols = int(self.cols)
        self.row_offsets = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        self.col_indices = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.rows < 0 or self.cols < 0:
            raise ValueError("matrix dimensions must be nonnegative")
        if self.row_offsets.shape != (self.rows + 1,):
            raise ValueError("row_offsets must have length rows + 1")
        nnz = self.col_indices.shape[0]
        if self.values.shape[0] != nnz:
            raise ValueError("values and col_indices must have equal length")
        if self.row_offsets[0] != 0 or self.row_offsets[-1] != nnz:
            raise ValueError("row_offsets must start at 0 and end at nnz")
        if np.any(np.diff(self.row_offsets) < 0):
            raise ValueError("row_offsets must be non-decreasing")
        if nnz:
            if self.col_indices.min() < 0 or self.col_indices.max() >= self.cols:
                raise ValueError("column indices out of range")
            if nnz > 1:
                increasing = np.diff(self.col_indices) > 0
                # entries straddling a row boundary are exempt
                starts = self.row_offsets[1:-1]
                starts = starts[(starts > 0) & (starts < nnz)]
                increasing[starts - 1] = True
                if not increasing.all():
                    raise ValueError("column indices must be strictly increasing within each row")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("matrix values must be finite")

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def nnz(self):
        return int(self.col_indices.shape[0])

    @classmethod
    def from_dense(cls, a):
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        s = sparse.csr_matrix(a)
        return cls(a.shape[0], a.shape[1], s.indptr, s.indices, s.data)

    @classmethod
    def identity(cls, n):
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n))

    def to_dense(self):
        return self._handle().toarray()

    def _handle(self):
        if self._csr is None:
            self._csr = sparse.csr_matrix(
                (self.values, self.col_indices, self.row_offsets), shape=self.shape
            )
        return self._csr

    def _adjoint_handle(self):
        if self._csc is None:
            self._csc = self._handle().T
        return self._csc

    def matvec(self, x):
        x = _as_vector(x, self.cols, "x")
        return self._handle() @ x

    def rmatvec(self, y):
        y = _as_vector(y, self.rows, "y")
        return self._adjoint_handle() @ y


@dataclass(eq=False)
class BlockPartition:
    """Ordered contiguous row intervals [start, end) tiling [0, num_rows),
    optionally with per-block operator-norm estimates."""

    block_ranges: list
    block_norms: np.ndarray | None = None

    def __post_init__(self):
        ranges = [(int(s), int(e)) for s, e in self.block_ranges]
        if not ranges:
            raise ValueError("partition needs at least one block")
        if ranges[0][0] != 0:
            raise ValueError("first block must start at row 0")
        for start, end in ranges:
            if end <= start:
                raise ValueError("blocks must be non-empty")
        for (_, end), (start, _) in zip(ranges, ranges[1:]):
            if start != end:
                raise ValueError("blocks must tile the rows without gaps or overlaps")
        self.block_ranges = ranges
        if self.block_norms is not None:
            norms = np.asarray(self.block_norms, dtype=np.float64)
            if norms.shape != (len(ranges),):
                raise ValueError("block_norms must have one entry per block")
            if not np.all(np.isfinite(norms)) or np.any(norms < 0):
                raise ValueError("block_norms must be finite and nonnegative")
            self.block_norms = norms

    @property
    def num_blocks(self):
        return len(self.block_ranges)

    @property
    def num_rows(self):
        return self.block_ranges[-1][1]

    def row_slice(self, l):
        start, end = self.block_ranges[l]
        return slice(start, end)

    def with_norms(self, a, tol=1e-4, max_iters=1000, seed=0):
        """Return a copy with block_norms estimated by power iteration."""
        norms = np.array(
            [operator_norm(block_view(a, self, l), tol, max_iters, seed) for l in range(self.num_blocks)]
        )
        return BlockPartition(self.block_ranges, norms)


def partition_rows(num_rows, num_blocks):
    """Contiguous near-equal row blocks, remainder spread over the leading ones."""
    if not 1 <= num_blocks <= num_rows:
        raise ValueError(f"need 1 <= num_blocks <= num_rows, got {num_blocks} blocks for {num_rows} rows")
    base, extra = divmod(num_rows, num_blocks)
    ranges = []
    start = 0
    for l in range(num_blocks):
        size = base + (1 if l < extra else 0)
        ranges.append((start, start + size))
        start += size
    return BlockPartition(ranges)


@dataclass(frozen=True)
class GradientOperator:
    """Forward-difference gradient of a row-major H x W image, one direction,
    with zero rows on the far boundary (Neumann)."""

    height: int
    width: int
    direction: str

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("image dimensions must be positive")
        if self.direction not in ("vertical", "horizontal"):
            raise ValueError(f"direction must be 'vertical' or 'horizontal', got {self.direction!r}")

    @property
    def shape(self):
        n = self.height * self.width
        return (n, n)

    def matvec(self, u):
        u = _as_vector(u, self.height * self.width, "u")
        img = u.reshape(self.height, self.width)
        out = np.zeros_like(img)
        if self.direction == "vertical":
            out[:-1, :] = img[1:, :] - img[:-1, :]
        else:
            out[:, :-1] = img[:, 1:] - img[:, :-1]
        return out.ravel()

    def rmatvec(self, p):
        p = _as_vector(p, self.height * self.width, "p")
        img = p.reshape(self.height, self.width)
        out = np.zeros_like(img)
        if self.direction == "vertical":
            out[:-1, :] -= img[:-1, :]
            out[1:, :] += img[:-1, :]
        else:
            out[:, :-1] -= img[:, :-1]
            out[:, 1:] += img[:, :-1]
        return out.ravel()


@dataclass(eq=False)
class VStackOperator:
    """Vertical stack of operators sharing a common domain."""

    blocks: list

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("stack needs at least one block")
        cols = self.blocks[0].shape[1]
        for b in self.blocks:
            if b.shape[1] != cols:
                raise ValueError("stacked operators must share their domain dimension")
        self._offsets = np.cumsum([0] + [b.shape[0] for b in self.blocks])

    @property
    def shape(self):
        return (int(self._offsets[-1]), self.blocks[0].shape[1])

    def matvec(self, x):
        return np.concatenate([b.matvec(x) for b in self.blocks])

    def rmatvec(self, y):
        y = _as_vector(y, self.shape[0], "y")
        out = np.zeros(self.shape[1])
        for b, start, end in zip(self.blocks, self._offsets[:-1], self._offsets[1:]):
            out += b.rmatvec(y[start:end])
        return out


def matvec(a, x):
    """y = A x."""
    return a.matvec(x)


def rmatvec(a, y):
    """x = A^T y, the adjoint product."""
    return a.rmatvec(y)


def block_view(a, partition, l):
    """Submatrix of the rows in block l; index arrays are shared views."""
    if not 0 <= l < partition.num_blocks:
        raise ValueError(f"block index {l} out of range for {partition.num_blocks} blocks")
    if partition.num_rows != a.rows:
        raise ValueError("partition does not cover the matrix rows")
    start, end = partition.block_ranges[l]
    offsets = a.row_offsets[start : end + 1]
    lo, hi = offsets[0], offsets[-1]
    return SparseMatrix(end - start, a.cols, offsets - lo, a.col_indices[lo:hi], a.values[lo:hi])


def apply_gradient(g, u):
    """Forward difference of the image vector u along g.direction."""
    return g.matvec(u)


def apply_gradient_adjoint(g, p):
    """Adjoint of apply_gradient."""
    return g.rmatvec(p)


def operator_norm(a, tol=1e-4, max_iters=1000, seed=0):
    """Largest singular value of `a` by power iteration on A^T A.

    Stops when the relative change of the estimate ||A x|| / ||x|| drops
    below tol, or after max_iters rounds. Deterministic for a fixed seed;
    returns 0.0 for the zero operator.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    rows, cols = a.shape
    if rows == 0 or cols == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(cols)
    nx = np.linalg.norm(x)
    if nx == 0.0:
        return 0.0
    x /= nx
    estimate = 0.0
    for _ in range(max_iters):
        ax = a.matvec(x)
        new_estimate = float(np.linalg.norm(ax))
        if new_estimate == 0.0:
            return 0.0
        if abs(new_estimate - estimate) <= tol * new_estimate:
            return new_estimate
        estimate = new_estimate
        x = a.rmatvec(ax)
        nx = np.linalg.norm(x)
        if nx == 0.0:
            return 0.0
        x /= nx
    return estimate


# ---------------------------------------------------------------------------
# binary file formats
#
# CSR1: ASCII line "CSR1 <rows> <cols> <nnz>\n", then row_offsets (rows+1
# uint64), col_indices (nnz uint64), values (nnz float64), little-endian.
# VEC1: ASCII line "VEC1 <n>\n", then n float64, little-endian.

def atomic_write_bytes(path, data):
    """Write via a temp file in the same directory, then rename."""
    path = os.fspath(path)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _read_header(data, magic, count, path):
    newline = data.find(b"\n")
    if newline < 0:
        raise FileFormatError(f"{path}: missing header line")
    fields = data[:newline].decode("ascii", errors="replace").split()
    if len(fields) != count + 1 or fields[0] != magic:
        raise FileFormatError(f"{path}: expected '{magic}' header with {count} size fields")
    try:
        sizes = [int(f) for f in fields[1:]]
    except ValueError:
        raise FileFormatError(f"{path}: non-integer size in header") from None
    if any(s < 0 for s in sizes):
        raise FileFormatError(f"{path}: negative size in header")
    return sizes, data[newline + 1 :]


def write_csr(path, a):
    header = f"CSR1 {a.rows} {a.cols} {a.nnz}\n".encode("ascii")
    payload = (
        header
        + a.row_offsets.astype("<u8").tobytes()
        + a.col_indices.astype("<u8").tobytes()
        + a.values.astype("<f8").tobytes()
    )
    atomic_write_bytes(path, payload)


def read_csr(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError:
        raise FileFormatError(f"{path}: no such file") from None
    (rows, cols, nnz), body = _read_header(data, "CSR1", 3, path)
    expected = 8 * (rows + 1) + 8 * nnz + 8 * nnz
    if len(body) != expected:
        raise FileFormatError(f"{path}: payload has {len(body)} bytes, expected {expected}")
    row_offsets = np.frombuffer(body, dtype="<u8", count=rows + 1).astype(np.int64)
    col_indices = np.frombuffer(body, dtype="<u8", count=nnz, offset=8 * (rows + 1)).astype(np.int64)
    values = np.frombuffer(body, dtype="<f8", count=nnz, offset=8 * (rows + 1) + 8 * nnz).astype(np.float64)
    try:
        return SparseMatrix(rows, cols, row_offsets, col_indices, values)
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from None


def write_vec(path, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("only 1-D vectors are serialized")
    header = f"VEC1 {x.shape[0]}\n".encode("ascii")
    atomic_write_bytes(path, header + x.astype("<f8").tobytes())


def read_vec(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError:
        raise FileFormatError(f"{path}: no such file") from None
    (n,), body = _read_header(data, "VEC1", 1, path)
    if len(body) != 8 * n:
        raise FileFormatError(f"{path}: payload has {len(body)} bytes, expected {8 * n}")
    return np.frombuffer(body, dtype="<f8", count=n).astype(np.float64)
