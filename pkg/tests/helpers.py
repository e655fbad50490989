"""Shared independent oracles for the test suite.

Everything here recomputes expected values through a different route than
the library (dense algebra, brute-force search, quadrature) so tests are
dual-path checks rather than self-comparisons.
"""

import math

import numpy as np

from epirecon.linops import SparseMatrix
from epirecon.prox import (
    project_squared_distance_epigraph,
    project_sum_halfspace,
    soft_threshold,
)


def dense_matvec(a_dense, x):
    """Triple-loop matrix-vector product."""
    rows, cols = a_dense.shape
    out = np.zeros(rows)
    for r in range(rows):
        acc = 0.0
        for c in range(cols):
            acc += a_dense[r, c] * x[c]
        out[r] = acc
    return out


def random_csr(rng, rows, cols, density=0.4):
    dense = rng.standard_normal((rows, cols))
    dense[rng.random((rows, cols)) >= density] = 0.0
    return SparseMatrix.from_dense(dense), dense


def explicit_gradient_matrix(height, width, direction):
    """Dense forward-difference matrix built entry by entry."""
    n = height * width
    mat = np.zeros((n, n))
    for i in range(height):
        for j in range(width):
            row = i * width + j
            if direction == "vertical" and i < height - 1:
                mat[row, (i + 1) * width + j] = 1.0
                mat[row, i * width + j] = -1.0
            if direction == "horizontal" and j < width - 1:
                mat[row, i * width + j + 1] = 1.0
                mat[row, i * width + j] = -1.0
    return mat


def epigraph_nearest_radial(d, zeta, stages=4, points=2001):
    """Nearest point of {(s, s^2) : s >= 0} union the set interior to
    (d, zeta), by dense grid search with refinement. Returns (s, height,
    distance) in the radial plane."""
    if d * d <= zeta:
        return d, zeta, 0.0
    lo, hi = 0.0, max(d, math.sqrt(max(zeta, 0.0)) + 1.0) + 1.0
    best = None
    for _ in range(stages):
        s = np.linspace(lo, hi, points)
        obj = (s - d) ** 2 + (s**2 - zeta) ** 2
        k = int(np.argmin(obj))
        best = s[k]
        span = (hi - lo) / (points - 1)
        lo, hi = max(0.0, best - span), best + span
    dist = math.hypot(best - d, best * best - zeta)
    return float(best), float(best * best), dist


def epigraph_nearest_radial_batch(d, zeta, stages=4, points=2001):
    """Vectorized version of epigraph_nearest_radial for arrays d, zeta
    (all entries must satisfy d^2 > zeta). Returns (s, distance)."""
    d = np.asarray(d, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    lo = np.zeros_like(d)
    hi = np.maximum(d, np.sqrt(np.maximum(zeta, 0.0)) + 1.0) + 1.0
    best = np.zeros_like(d)
    for _ in range(stages):
        grid = lo[:, None] + (hi - lo)[:, None] * np.linspace(0.0, 1.0, points)[None, :]
        obj = (grid - d[:, None]) ** 2 + (grid**2 - zeta[:, None]) ** 2
        k = np.argmin(obj, axis=1)
        best = grid[np.arange(d.size), k]
        span = (hi - lo) / (points - 1)
        lo = np.maximum(0.0, best - span)
        hi = best + span
    dist = np.hypot(best - d, best**2 - zeta)
    return best, dist


def cubic_root_bisect(d, zeta):
    """Positive root of 2 x^3 + (1 - 2 zeta) x - d = 0 by pure bisection."""

    def f(x):
        return 2.0 * x**3 + (1.0 - 2.0 * zeta) * x - d

    lo, hi = 0.0, max(d, 1.0)
    while f(hi) < 0.0:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ray_integral_oracle(image, theta, offset, step=1.0 / 1024.0):
    """Supersampled line integral of a piecewise-constant square image.

    The image occupies [-n/2, n/2]^2 with unit pixels, row-major, row 0 at
    the lowest y values (matching the system-matrix convention). The ray
    passes through offset * (-sin, cos) with direction (cos, sin).
    """
    n = image.shape[0]
    half = n / 2.0
    dx, dy = math.cos(theta), math.sin(theta)
    px, py = -offset * math.sin(theta), offset * math.cos(theta)
    reach = n * math.sqrt(2.0)
    s = np.arange(-reach, reach, step) + 0.5 * step
    x = px + s * dx
    y = py + s * dy
    inside = (x >= -half) & (x < half) & (y >= -half) & (y < half)
    if not inside.any():
        return 0.0
    cols = np.floor(x[inside] + half).astype(int)
    rows = np.floor(y[inside] + half).astype(int)
    return float(np.sum(image[rows, cols]) * step)


class DensePdhgEpigraphOracle:
    """Straightforward dense primal-dual iteration on the epigraph-split
    saddle problem, with dual extrapolation y_bar = 2 y_new - y_old.

    Operators are materialized as dense matrices; only the scalar
    projections are shared with the library under test.
    """

    def __init__(self, problem, tau, rho_psi, rho_phi):
        self.problem = problem
        self.tau = tau
        self.rho_psi = rho_psi
        self.rho_phi = rho_phi
        n = problem.signal_size
        self.reg_mats = []
        for op, _ in problem.regularizers:
            mat = np.zeros((op.shape[0], n))
            for col in range(n):
                basis = np.zeros(n)
                basis[col] = 1.0
                mat[:, col] = op.matvec(basis)
            self.reg_mats.append(mat)
        self.phi_mats = [blk.to_dense() for blk in problem.phi_blocks]
        self.u = np.zeros(n)
        self.eps = np.full(problem.num_blocks, problem.eps_bar / problem.num_blocks)
        self.z = [np.zeros(m.shape[0]) for m in self.reg_mats]
        self.w = [np.zeros(m.shape[0]) for m in self.phi_mats]
        self.zeta = np.zeros(problem.num_blocks)
        self.z_prev = [zi.copy() for zi in self.z]
        self.w_prev = [wi.copy() for wi in self.w]
        self.zeta_prev = self.zeta.copy()

    def step(self):
        problem = self.problem
        num_reg = problem.num_regularizers
        num_blocks = problem.num_blocks
        grad_u = np.zeros(problem.signal_size)
        for j in range(num_reg):
            grad_u += self.reg_mats[j].T @ (2.0 * self.z[j] - self.z_prev[j])
        for l in range(num_blocks):
            grad_u += self.phi_mats[l].T @ (2.0 * self.w[l] - self.w_prev[l])
        grad_eps = 2.0 * self.zeta - self.zeta_prev
        u_new = np.clip(self.u - self.tau * grad_u, problem.box.lower, problem.box.upper)
        eps_new = project_sum_halfspace(self.eps - self.tau * grad_eps, problem.halfspace)
        self.z_prev = [zi.copy() for zi in self.z]
        self.w_prev = [wi.copy() for wi in self.w]
        self.zeta_prev = self.zeta.copy()
        for j in range(num_reg):
            q = self.z[j] + self.rho_psi * (self.reg_mats[j] @ u_new)
            self.z[j] = q - self.rho_psi * soft_threshold(q / self.rho_psi, 1.0 / self.rho_psi)
        for l in range(num_blocks):
            qw = self.w[l] + self.rho_phi * (self.phi_mats[l] @ u_new)
            qz = self.zeta[l] + self.rho_phi * eps_new[l]
            point, height = project_squared_distance_epigraph(
                qw / self.rho_phi, qz / self.rho_phi, problem.epigraphs[l]
            )
            self.w[l] = qw - self.rho_phi * point
            self.zeta[l] = qz - self.rho_phi * height
        self.u = u_new
        self.eps = eps_new
        return self.u, self.eps
