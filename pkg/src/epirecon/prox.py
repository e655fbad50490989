"""Closed-form proximity operators and projections.

All functions are pure and stateless. The non-obvious one is
``project_squared_distance_epigraph``: the Euclidean projection onto
``{(x, eta) : ||x - z||^2 <= eta}``, which reduces to a scalar cubic
equation in the radial coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    """Interval [lower, upper] applied entrywise."""

    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError(f"need lower <= upper, got [{self.lower}, {self.upper}]")


@dataclass(eq=False)
class SumHalfspace:
    """{ e in R^L : sum(e) <= budget }."""

    dimension: int
    budget: float

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be at least 1")
        if not self.budget > 0:
            raise ValueError("budget must be positive")


@dataclass(eq=False)
class EpigraphBall:
    """Epigraph of the squared distance to `center`:
    { (x, eta) : ||x - center||^2 <= eta }."""

    center: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64)
        if center.ndim != 1 or center.size < 1:
            raise ValueError("center must be a nonempty vector")
        if not np.all(np.isfinite(center)):
            raise ValueError("center must be finite")
        self.center = center

    @property
    def dimension(self):
        return self.center.shape[0]


def soft_threshold(x, gamma):
    """prox of gamma * ||.||_1: shrink each entry toward zero by gamma."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - gamma, 0.0)


def project_box(x, box):
    """Entrywise clamp to [box.lower, box.upper]."""
    return np.clip(np.asarray(x, dtype=np.float64), box.lower, box.upper)


def project_sum_halfspace(eps, halfspace):
    """Projection onto {sum(e) <= budget}: shift all entries equally when
    the budget is exceeded, otherwise return the point unchanged."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != (halfspace.dimension,):
        raise ValueError(f"expected a vector of length {halfspace.dimension}, got shape {eps.shape}")
    total = float(eps.sum())
    if total <= halfspace.budget:
        return eps.copy()
    return eps + (halfspace.budget - total) / halfspace.dimension


def project_l2_ball(y, center, radius):
    """Projection onto the closed ball {x : ||x - center|| <= radius}."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    y = np.asarray(y, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    if y.shape != center.shape:
        raise ValueError(f"y and center must have equal shape, got {y.shape} vs {center.shape}")
    r = y - center
    dist = float(np.linalg.norm(r))
    if dist <= radius:
        return y.copy()
    return center + (radius / dist) * r


def squared_distance_epigraph_root(d, zeta):
    """Positive real root of 2 x^3 + (1 - 2 zeta) x - d = 0, for d > 0.

    The root is the radial coordinate of the projection onto the boundary
    parabola {(s, s^2) : s >= 0} and lies in (0, d] when d^2 > zeta. The
    closed-form branch depends on the sign of the discriminant
    d^2/16 - (zeta/3 - 1/6)^3; when it is negative there are three real
    roots and exactly one of them is positive. A guarded Newton polish
    drives the residual to roundoff either way.
    """
    if d <= 0:
        raise ValueError("d must be positive")
    shift = zeta / 3.0 - 1.0 / 6.0
    disc = d * d / 16.0 - shift**3
    if disc >= 0.0:
        crt = np.cbrt(d / 4.0 + math.sqrt(disc))
        beta = crt + shift / crt
    else:
        # three real roots: product d/2 > 0 and zero sum, so the largest
        # (k = 0 in the trigonometric form) is the unique positive one
        p = 0.5 * (1.0 - 2.0 * zeta)
        q = -0.5 * d
        r = 2.0 * math.sqrt(-p / 3.0)
        arg = 3.0 * q / (p * r)
        arg = min(1.0, max(-1.0, arg))
        beta = r * math.cos(math.acos(arg) / 3.0)
    scale = 1.0 + abs(d) + abs(zeta)
    for _ in range(40):
        residual = 2.0 * beta**3 + (1.0 - 2.0 * zeta) * beta - d
        if abs(residual) <= 1e-14 * scale:
            break
        slope = 6.0 * beta * beta + (1.0 - 2.0 * zeta)
        if slope <= 0.0:
            break
        beta -= residual / slope
    return float(beta)


def project_squared_distance_epigraph(y, zeta, epigraph):
    """Projection of (y, zeta) onto {(x, eta) : ||x - z||^2 <= eta}.

    With d = ||y - z||: inside the set (d^2 <= zeta) the point is returned
    unchanged; otherwise the projection moves y radially toward z by the
    factor beta/d, where beta solves the cubic of
    `squared_distance_epigraph_root`, and lifts the height to beta^2.
    Returns the pair (projected vector, projected height).
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (epigraph.dimension,):
        raise ValueError(f"expected a vector of length {epigraph.dimension}, got shape {y.shape}")
    if not (np.all(np.isfinite(y)) and math.isfinite(zeta)):
        raise ValueError("inputs must be finite")
    zeta = float(zeta)
    r = y - epigraph.center
    d = float(np.linalg.norm(r))
    if d * d <= zeta:
        return y.copy(), zeta
    if d == 0.0:
        # y coincides with the center but zeta < 0: the vertex is nearest
        return epigraph.center.copy(), max(0.0, zeta)
    beta = squared_distance_epigraph_root(d, zeta)
    alpha = beta / d
    return epigraph.center + alpha * r, max(beta * beta, zeta)


def conjugate_prox(prox_f, x, gamma):
    """prox of gamma * f^* evaluated through the prox of f:
    x - gamma * prox_{f/gamma}(x / gamma).

    `prox_f(v, t)` must return the prox of t * f at v.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    x = np.asarray(x, dtype=np.float64)
    return x - gamma * prox_f(x / gamma, 1.0 / gamma)
