"""Primal-dual solvers for box- and fidelity-constrained reconstruction.

The problem is

    min_u  sum_j R_j(Psi_j u)
    s.t.   ||Phi u - v||^2 <= eps_bar,   u in [lower, upper]^N.

``spdhg_epi_solve`` replaces the fidelity ball by per-row-block epigraph
constraints ||Phi_l u - v_l||^2 <= eps_l with sum(eps) <= eps_bar, which
makes the constraint separable across blocks: each iteration then touches
only one randomly drawn regularizer and one randomly drawn fidelity
block. ``pdhg_deterministic_solve`` is the classical primal-dual hybrid
gradient baseline that applies every operator per iteration and projects
onto the fidelity ball directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linops import (
    BlockPartition,
    GradientOperator,
    VStackOperator,
    block_view,
    operator_norm,
)
from .prox import (
    Box,
    EpigraphBall,
    SumHalfspace,
    conjugate_prox,
    project_box,
    project_l2_ball,
    project_squared_distance_epigraph,
    project_sum_halfspace,
    soft_threshold,
)

# power-method estimates are inflated by 1% before entering the stepsize
# rules, so a slight underestimate of a norm cannot produce oversized steps
NORM_SAFETY = 1.01

EXTRAPOLATION_MODES = ("algorithm1", "inverse_probability")


class DivergenceError(RuntimeError):
    """An iterate stopped being finite."""

    def __init__(self, iteration, variable):
        super().__init__(f"non-finite values in {variable!r} at iteration {iteration}")
        self.iteration = iteration
        self.variable = variable


@dataclass(eq=False)
class ProblemSpec:
    """Problem data shared by all solvers.

    regularizers: (operator, prox) pairs where prox(x, t) evaluates the
    prox of t * R_j at x. psi_norms and partition.block_norms must hold
    operator-norm bounds (estimates inflated for safety are fine); the
    stepsize rule consumes them as given.
    """

    regularizers: list
    psi_norms: np.ndarray
    phi: object
    partition: BlockPartition
    data: np.ndarray
    eps_bar: float
    box: Box

    phi_blocks: list = field(init=False, repr=False)
    data_blocks: list = field(init=False, repr=False)
    epigraphs: list = field(init=False, repr=False)
    halfspace: SumHalfspace = field(init=False, repr=False)

    def __post_init__(self):
        if not self.regularizers:
            raise ValueError("need at least one regularizer")
        self.psi_norms = np.asarray(self.psi_norms, dtype=np.float64)
        if self.psi_norms.shape != (len(self.regularizers),):
            raise ValueError("psi_norms must have one entry per regularizer")
        if not np.all(np.isfinite(self.psi_norms)) or np.any(self.psi_norms < 0):
            raise ValueError("psi_norms must be finite and nonnegative")
        n = self.phi.shape[1]
        for op, _ in self.regularizers:
            if op.shape[1] != n:
                raise ValueError("regularizer operators must share the signal dimension")
        if self.partition.num_rows != self.phi.shape[0]:
            raise ValueError("partition does not cover the rows of phi")
        if self.partition.block_norms is None:
            raise ValueError("partition must carry block norms")
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != (self.phi.shape[0],):
            raise ValueError("observed data length must match the rows of phi")
        if not self.eps_bar > 0:
            raise ValueError("eps_bar must be positive")
        self.phi_blocks = [block_view(self.phi, self.partition, l) for l in range(self.partition.num_blocks)]
        self.data_blocks = [self.data[self.partition.row_slice(l)] for l in range(self.partition.num_blocks)]
        self.epigraphs = [EpigraphBall(v_l) for v_l in self.data_blocks]
        self.halfspace = SumHalfspace(self.partition.num_blocks, self.eps_bar)

    @property
    def num_regularizers(self):
        return len(self.regularizers)

    @property
    def num_blocks(self):
        return self.partition.num_blocks

    @property
    def signal_size(self):
        return self.phi.shape[1]


@dataclass
class PrimalState:
    """Signal estimate plus the per-block fidelity levels (the levels stay
    None for the deterministic solver, which has no such variables)."""

    u: np.ndarray
    eps: np.ndarray | None = None

    def copy(self):
        return PrimalState(self.u.copy(), None if self.eps is None else self.eps.copy())


@dataclass
class DualState:
    """Dual blocks of the randomized solver plus the running aggregates:
    t tracks sum_j Psi_j^T z_j + sum_l Phi_l^T w_l, xi tracks zeta, and
    t_bar / xi_bar carry the extrapolated copies used by the primal step."""

    z: list
    w: list
    zeta: np.ndarray
    t: np.ndarray
    t_bar: np.ndarray
    xi: np.ndarray
    xi_bar: np.ndarray

    def copy(self):
        return DualState(
            [zi.copy() for zi in self.z],
            [wi.copy() for wi in self.w],
            self.zeta.copy(),
            self.t.copy(),
            self.t_bar.copy(),
            self.xi.copy(),
            self.xi_bar.copy(),
        )


@dataclass
class PdhgDualState:
    """Dual blocks of the deterministic solver."""

    z: list
    y: np.ndarray

    def copy(self):
        return PdhgDualState([zi.copy() for zi in self.z], self.y.copy())


@dataclass
class SolverConfig:
    gamma: float = 0.99
    epochs: int = 200
    seed: int = 0
    extrapolation: str = "algorithm1"
    record_every: int = 1
    debug: bool = False

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.record_every < 1:
            raise ValueError("record_every must be at least 1")
        if self.extrapolation not in EXTRAPOLATION_MODES:
            raise ValueError(f"extrapolation must be one of {EXTRAPOLATION_MODES}")


@dataclass
class SolveResult:
    primal: PrimalState
    dual: object
    records: list


def stepsizes(problem, gamma):
    """Stepsize rule of the randomized solver.

    rho_psi = gamma / max_j ||Psi_j||, rho_phi = gamma / max_l ||Phi_l||,
    tau = gamma / (max{J, L} * max of all the norms), with 0 < gamma < 1.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if np.any(problem.psi_norms <= 0) or np.any(problem.partition.block_norms <= 0):
        raise ValueError("all operator norms must be positive for the stepsize rule")
    psi_max = float(problem.psi_norms.max())
    phi_max = float(problem.partition.block_norms.max())
    count = max(problem.num_regularizers, problem.num_blocks)
    tau = gamma / (count * max(psi_max, phi_max))
    return tau, gamma / psi_max, gamma / phi_max


def sample_indices(num_regularizers, num_blocks, rng):
    """One independent uniform draw from each index set."""
    return int(rng.integers(num_regularizers)), int(rng.integers(num_blocks))


def default_states(problem):
    """Zero signal, evenly split fidelity levels, all duals zero."""
    n = problem.signal_size
    num_blocks = problem.num_blocks
    primal = PrimalState(np.zeros(n), np.full(num_blocks, problem.eps_bar / num_blocks))
    dual = DualState(
        z=[np.zeros(op.shape[0]) for op, _ in problem.regularizers],
        w=[np.zeros(blk.shape[0]) for blk in problem.phi_blocks],
        zeta=np.zeros(num_blocks),
        t=np.zeros(n),
        t_bar=np.zeros(n),
        xi=np.zeros(num_blocks),
        xi_bar=np.zeros(num_blocks),
    )
    return primal, dual


def _regularizer_dual_step(problem, j, u_new, z_j, rho_psi):
    op, prox = problem.regularizers[j]
    z_tilde = z_j + rho_psi * op.matvec(u_new)
    z_new = conjugate_prox(prox, z_tilde, rho_psi)
    return z_new, op.rmatvec(z_new - z_j)


def _fidelity_dual_step(problem, l, u_new, eps_new_l, w_l, zeta_l, rho_phi):
    blk = problem.phi_blocks[l]
    w_tilde = w_l + rho_phi * blk.matvec(u_new)
    zeta_tilde = zeta_l + rho_phi * eps_new_l
    point, height = project_squared_distance_epigraph(
        w_tilde / rho_phi, zeta_tilde / rho_phi, problem.epigraphs[l]
    )
    w_new = w_tilde - rho_phi * point
    zeta_new = zeta_tilde - rho_phi * height
    return w_new, zeta_new, blk.rmatvec(w_new - w_l)


def _check_finite(primal, dual, iteration):
    checks = [("u", primal.u)]
    if primal.eps is not None:
        checks.append(("eps", primal.eps))
    if dual is not None:
        checks += [("t", dual.t), ("xi", dual.xi)]
    for name, arr in checks:
        if not np.all(np.isfinite(arr)):
            raise DivergenceError(iteration, name)


def _check_aggregates(problem, dual, tol=1e-8):
    t_ref = np.zeros(problem.signal_size)
    for (op, _), z_j in zip(problem.regularizers, dual.z):
        t_ref += op.rmatvec(z_j)
    for blk, w_l in zip(problem.phi_blocks, dual.w):
        t_ref += blk.rmatvec(w_l)
    t_norm = float(np.linalg.norm(dual.t))
    if float(np.linalg.norm(dual.t - t_ref)) > tol * (1.0 + t_norm):
        raise RuntimeError("aggregate t drifted from sum of adjoint duals")
    if float(np.linalg.norm(dual.xi - dual.zeta)) > tol * (1.0 + float(np.linalg.norm(dual.zeta))):
        raise RuntimeError("aggregate xi drifted from zeta")


def spdhg_epi_solve(problem, config, init=None, on_epoch=None):
    """Randomized primal-dual solve of the epigraph-split problem.

    Each iteration projects the primal pair (u, eps) with the
    extrapolated aggregates, draws one regularizer index j and one
    fidelity block index l uniformly, updates only those two dual blocks,
    and refreshes the aggregates with the selected adjoint differences
    scaled by the extrapolation coefficients: (1 + J, 1 + L) in mode
    "algorithm1", (J, L) in mode "inverse_probability". An epoch is L
    iterations, one expected pass over the fidelity blocks.

    `on_epoch(epoch, primal_snapshot)` fires at epoch 0 and then every
    `record_every` epochs (plus the final epoch); non-None return values
    are collected into the result's `records`.
    """
    tau, rho_psi, rho_phi = stepsizes(problem, config.gamma)
    num_reg = problem.num_regularizers
    num_blocks = problem.num_blocks
    if config.extrapolation == "algorithm1":
        coeff_j, coeff_l = 1.0 + num_reg, 1.0 + num_blocks
    else:
        coeff_j, coeff_l = float(num_reg), float(num_blocks)
    if init is None:
        primal, dual = default_states(problem)
    else:
        primal, dual = init[0].copy(), init[1].copy()
    rng = np.random.default_rng(config.seed)
    records = []

    def emit(epoch):
        if on_epoch is not None:
            record = on_epoch(epoch, primal.copy())
            if record is not None:
                records.append(record)

    emit(0)
    iteration = 0
    for epoch in range(1, config.epochs + 1):
        for _ in range(num_blocks):
            iteration += 1
            u_new = project_box(primal.u - tau * dual.t_bar, problem.box)
            eps_new = project_sum_halfspace(primal.eps - tau * dual.xi_bar, problem.halfspace)
            j, l = sample_indices(num_reg, num_blocks, rng)
            try:
                z_new, z_hat = _regularizer_dual_step(problem, j, u_new, dual.z[j], rho_psi)
                w_new, zeta_new, w_hat = _fidelity_dual_step(
                    problem, l, u_new, eps_new[l], dual.w[l], dual.zeta[l], rho_phi
                )
            except ValueError:
                # the projections reject non-finite inputs; report which
                # iterate went bad instead of a bare validation error
                _check_finite(PrimalState(u_new, eps_new), dual, iteration)
                raise
            d_zeta = zeta_new - dual.zeta[l]
            dual.t += z_hat + w_hat
            dual.t_bar = dual.t + coeff_j * z_hat + coeff_l * w_hat
            dual.xi[l] += d_zeta
            xi_bar = dual.xi.copy()
            xi_bar[l] += coeff_l * d_zeta
            dual.xi_bar = xi_bar
            dual.z[j] = z_new
            dual.w[l] = w_new
            dual.zeta[l] = zeta_new
            primal.u = u_new
            primal.eps = eps_new
        _check_finite(primal, dual, iteration)
        if config.debug:
            _check_aggregates(problem, dual)
        if epoch % config.record_every == 0 or epoch == config.epochs:
            emit(epoch)
    return SolveResult(primal, dual, records)


def spdhg_full_activation_step(problem, primal, dual, tau, rho_psi, rho_phi):
    """One sweep of the randomized recursion with every index selected and
    unit extrapolation weights; returns the new (primal, dual) pair."""
    u_new = project_box(primal.u - tau * dual.t_bar, problem.box)
    eps_new = project_sum_halfspace(primal.eps - tau * dual.xi_bar, problem.halfspace)
    z_list = []
    t_delta = np.zeros(problem.signal_size)
    for j in range(problem.num_regularizers):
        z_new, z_hat = _regularizer_dual_step(problem, j, u_new, dual.z[j], rho_psi)
        z_list.append(z_new)
        t_delta += z_hat
    w_list = []
    zeta_new = np.empty(problem.num_blocks)
    d_zeta = np.empty(problem.num_blocks)
    for l in range(problem.num_blocks):
        w_new, zeta_l, w_hat = _fidelity_dual_step(
            problem, l, u_new, eps_new[l], dual.w[l], dual.zeta[l], rho_phi
        )
        w_list.append(w_new)
        zeta_new[l] = zeta_l
        d_zeta[l] = zeta_l - dual.zeta[l]
        t_delta += w_hat
    t_new = dual.t + t_delta
    xi_new = dual.xi + d_zeta
    new_dual = DualState(
        z=z_list,
        w=w_list,
        zeta=zeta_new,
        t=t_new,
        t_bar=t_new + t_delta,
        xi=xi_new,
        xi_bar=xi_new + d_zeta,
    )
    return PrimalState(u_new, eps_new), new_dual


def pdhg_deterministic_solve(problem, config, init=None, on_epoch=None):
    """Deterministic primal-dual baseline on the undecomposed problem.

    Dual blocks for every regularizer plus one for the full fidelity term,
    whose resolvent is the conjugate of the indicator of the l2 ball of
    radius sqrt(eps_bar) around the data. Primal extrapolation
    u_bar = 2 u_new - u; stepsizes tau = sigma = gamma / ||A|| with A the
    vertical stack of all operators (power-method estimate, inflated by
    NORM_SAFETY). One iteration counts as one epoch.
    """
    ops = [op for op, _ in problem.regularizers]
    stack = VStackOperator(ops + [problem.phi])
    stack_norm = NORM_SAFETY * operator_norm(stack, tol=1e-6, max_iters=10000, seed=0)
    if stack_norm <= 0:
        raise ValueError("stacked operator has zero norm")
    step = config.gamma / stack_norm
    radius = float(np.sqrt(problem.eps_bar))

    if init is None:
        u = np.zeros(problem.signal_size)
        dual = PdhgDualState([np.zeros(op.shape[0]) for op in ops], np.zeros(problem.phi.shape[0]))
    else:
        u = init[0].u.copy()
        dual = init[1].copy()
    u_bar = u.copy()
    records = []

    def emit(epoch):
        if on_epoch is not None:
            record = on_epoch(epoch, PrimalState(u.copy(), None))
            if record is not None:
                records.append(record)

    def ball_prox(x, _t):
        return project_l2_ball(x, problem.data, radius)

    emit(0)
    for epoch in range(1, config.epochs + 1):
        for j, (op, prox) in enumerate(problem.regularizers):
            q = dual.z[j] + step * op.matvec(u_bar)
            dual.z[j] = conjugate_prox(prox, q, step)
        q = dual.y + step * problem.phi.matvec(u_bar)
        dual.y = conjugate_prox(ball_prox, q, step)
        grad = problem.phi.rmatvec(dual.y)
        for op, z_j in zip(ops, dual.z):
            grad += op.rmatvec(z_j)
        u_new = project_box(u - step * grad, problem.box)
        u_bar = 2.0 * u_new - u
        u = u_new
        _check_finite(PrimalState(u), None, epoch)
        if epoch % config.record_every == 0 or epoch == config.epochs:
            emit(epoch)
    return SolveResult(PrimalState(u, None), dual, records)


def build_tv_problem(phi, partition, data, eps_bar, box, height, width,
                     norm_tol=1e-6, norm_max_iters=10000, norm_seed=0):
    """Assemble the anisotropic-TV instance: vertical and horizontal
    gradient regularizers with the soft-threshold prox over the given
    fidelity data.

    Operator norms are estimated by power iteration; the problem stores
    them inflated by NORM_SAFETY so the stepsize rule stays on the safe
    side. Returns (problem, raw_norms) with the uninflated estimates in
    raw_norms = {"psi": ..., "phi_blocks": ...} for logging.
    """
    grads = [
        GradientOperator(height, width, "vertical"),
        GradientOperator(height, width, "horizontal"),
    ]
    raw_psi = np.array([operator_norm(g, norm_tol, norm_max_iters, norm_seed) for g in grads])
    if partition.block_norms is None:
        partition = partition.with_norms(phi, tol=norm_tol, max_iters=norm_max_iters, seed=norm_seed)
    raw_phi = partition.block_norms
    problem = ProblemSpec(
        regularizers=[(g, soft_threshold) for g in grads],
        psi_norms=NORM_SAFETY * raw_psi,
        phi=phi,
        partition=BlockPartition(partition.block_ranges, NORM_SAFETY * raw_phi),
        data=data,
        eps_bar=eps_bar,
        box=box,
    )
    return problem, {"psi": raw_psi, "phi_blocks": raw_phi}
