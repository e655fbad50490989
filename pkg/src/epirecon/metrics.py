"""Convergence criteria and reconstruction-quality metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class ConvergenceRecord:
    """One logged epoch; optional fields stay None when no reference is
    available. psnr_db may be +inf for an exact match."""

    epoch: int
    wall_seconds: float
    tv_objective: float
    constraint_error: float
    primal_distance: float | None = None
    psnr_db: float | None = None


def tv_objective(u, grad_v, grad_h):
    """Anisotropic total variation: l1 norms of both gradient images."""
    return float(np.abs(grad_v.matvec(u)).sum() + np.abs(grad_h.matvec(u)).sum())


def constraint_error(u, phi, data, eps_bar):
    """| eps_bar - ||Phi u - v||^2 |; zero exactly on the fidelity boundary."""
    residual = phi.matvec(u) - data
    return abs(float(eps_bar) - float(residual @ residual))


def primal_distance(u, u_star):
    """Squared Euclidean distance to a reference vector."""
    u = np.asarray(u, dtype=np.float64)
    u_star = np.asarray(u_star, dtype=np.float64)
    if u.shape != u_star.shape:
        raise ValueError(f"shape mismatch: {u.shape} vs {u_star.shape}")
    diff = u - u_star
    return float(diff @ diff)


def psnr(u, u_ref, peak=255.0):
    """10 log10(peak^2 N / ||u - u_ref||^2) in dB; +inf for identical inputs."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    err = primal_distance(u, u_ref)
    if err == 0.0:
        return math.inf
    n = np.asarray(u).size
    return 10.0 * math.log10(peak * peak * n / err)


@dataclass
class FeasibilityReport:
    """Signed slacks of every constraint; negative entries are violations."""

    block_slacks: np.ndarray  # eps_l - ||Phi_l u - v_l||^2 per block
    sum_slack: float          # eps_bar - sum(eps)
    box_violation: float      # largest distance of any entry outside the box


def feasibility_report(u, eps, problem):
    """Evaluate all constraints of a block-split problem at (u, eps)."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != (problem.num_blocks,):
        raise ValueError(f"expected {problem.num_blocks} block levels, got shape {eps.shape}")
    slacks = np.empty(problem.num_blocks)
    for l in range(problem.num_blocks):
        residual = problem.phi_blocks[l].matvec(u) - problem.data_blocks[l]
        slacks[l] = eps[l] - float(residual @ residual)
    sum_slack = float(problem.eps_bar - eps.sum())
    u = np.asarray(u, dtype=np.float64)
    box = problem.box
    box_violation = float(max(0.0, box.lower - u.min(), u.max() - box.upper))
    return FeasibilityReport(slacks, sum_slack, box_violation)
