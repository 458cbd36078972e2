"""Obstacle shapes, domain compression and pointset generation.

The unbounded exterior of the obstacle (upper half, by symmetry) is mapped
onto the bounded strip [0, ell] x [0, pi] through the radial compression
xi = ell * (1 - 1/r).  The obstacle surface becomes the curve
xi = xi_gamma(phi), the far field collapses onto the segment xi = ell, and
the symmetry axis is phi in {0, pi}.

All functions here are pure and all containers are immutable after
construction, so they are safe to share between threads.
"""

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np


class PointAtInfinityError(ValueError):
    """Raised when a transformed point sits exactly on the far-field edge."""


@dataclass(frozen=True)
class TransformParams:
    """Stretching factor of the radial compression map."""

    ell: float = 2.0

    def __post_init__(self):
        if not self.ell >= 1.0:
            raise ValueError(f"stretching factor must be >= 1, got {self.ell}")


@dataclass(frozen=True)
class Circle:
    """Unit circular cross-section."""


@dataclass(frozen=True)
class RoundedSquare:
    """Cross-section x^(2a) + y^(2a) = 1; a = 1 is the circle."""

    alpha: int = 2

    def __post_init__(self):
        if not (isinstance(self.alpha, int) and self.alpha >= 1):
            raise ValueError(f"rounding degree must be an integer >= 1, got {self.alpha}")


@dataclass(frozen=True)
class Square:
    """Perfectly square cross-section of half-width 1 (side length 2)."""


ObstacleShape = Circle | RoundedSquare | Square


@dataclass(frozen=True)
class ClusterParams:
    """Strength of the sinh node clustering towards the square's corners."""

    lam: float = 0.1

    def __post_init__(self):
        if not self.lam > 0.0:
            raise ValueError(f"clustering strength must be positive, got {self.lam}")


class NodeTag(IntEnum):
    INTERIOR = 0
    FAR = 1
    CYLINDER = 2
    AXIS = 3


@dataclass(frozen=True)
class Node:
    xi: float
    phi: float
    tag: NodeTag


def compress_radius(r, t: TransformParams):
    """Map physical radius r >= 1 to xi in [0, ell]; r = inf maps to ell."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 1.0):
        raise ValueError("radius inside the obstacle: r < 1")
    xi = t.ell * (1.0 - 1.0 / r)
    return xi if xi.ndim else float(xi)


def decompress_radius(xi, t: TransformParams):
    """Inverse of :func:`compress_radius` on [0, ell)."""
    xi = np.asarray(xi, dtype=float)
    if np.any(xi < 0.0) or np.any(xi > t.ell):
        raise ValueError("transformed coordinate outside [0, ell]")
    if np.any(xi == t.ell):
        raise PointAtInfinityError("xi = ell corresponds to the point at infinity")
    r = t.ell / (t.ell - xi)
    return r if r.ndim else float(r)


def physical_coords(xi, phi, t: TransformParams):
    """Cartesian (x, y) of a transformed point with xi < ell."""
    r = decompress_radius(xi, t)
    phi = np.asarray(phi, dtype=float)
    x = r * np.cos(phi)
    y = r * np.sin(phi)
    if np.ndim(x):
        return x, y
    return float(x), float(y)


def boundary_curve(shape: ObstacleShape, phi, t: TransformParams):
    """Transformed obstacle surface xi_gamma(phi), vectorised over phi."""
    phi = np.asarray(phi, dtype=float)
    if isinstance(shape, Circle):
        xi = np.zeros_like(phi)
    elif isinstance(shape, RoundedSquare):
        a2 = 2 * shape.alpha
        s = np.cos(phi) ** a2 + np.sin(phi) ** a2
        xi = t.ell * (1.0 - s ** (1.0 / a2))
    elif isinstance(shape, Square):
        xi = np.where(
            phi < np.pi / 4,
            t.ell * (1.0 - np.cos(phi)),
            np.where(
                phi < 3 * np.pi / 4,
                t.ell * (1.0 - np.sin(phi)),
                t.ell * (1.0 - np.cos(np.pi - phi)),
            ),
        )
    else:
        raise TypeError(f"unknown obstacle shape: {shape!r}")
    return xi if xi.ndim else float(xi)


def boundary_radius(shape: ObstacleShape, phi):
    """Physical surface radius r_gamma(phi) of the obstacle."""
    phi = np.asarray(phi, dtype=float)
    if isinstance(shape, Circle):
        r = np.ones_like(phi)
    elif isinstance(shape, RoundedSquare):
        a2 = 2 * shape.alpha
        s = np.cos(phi) ** a2 + np.sin(phi) ** a2
        r = s ** (-1.0 / a2)
    elif isinstance(shape, Square):
        r = np.where(
            phi < np.pi / 4,
            1.0 / np.cos(phi),
            np.where(phi < 3 * np.pi / 4, 1.0 / np.sin(phi), -1.0 / np.cos(phi)),
        )
    else:
        raise TypeError(f"unknown obstacle shape: {shape!r}")
    return r if r.ndim else float(r)


def boundary_radius_derivative(shape: ObstacleShape, phi):
    """d r_gamma / d phi, used for surface tangents and normals.

    For the square the derivative jumps at the corners; the returned value
    is the one-sided derivative of the face the angle falls on.
    """
    phi = np.asarray(phi, dtype=float)
    if isinstance(shape, Circle):
        dr = np.zeros_like(phi)
    elif isinstance(shape, RoundedSquare):
        a2 = 2 * shape.alpha
        c, s = np.cos(phi), np.sin(phi)
        ssum = c ** a2 + s ** a2
        dssum = a2 * s * c * (s ** (a2 - 2) - c ** (a2 - 2))
        dr = -(ssum ** (-1.0 / a2)) * dssum / (a2 * ssum)
    elif isinstance(shape, Square):
        dr = np.where(
            phi < np.pi / 4,
            np.sin(phi) / np.cos(phi) ** 2,
            np.where(
                phi < 3 * np.pi / 4,
                -np.cos(phi) / np.sin(phi) ** 2,
                -np.sin(phi) / np.cos(phi) ** 2,
            ),
        )
    else:
        raise TypeError(f"unknown obstacle shape: {shape!r}")
    return dr if dr.ndim else float(dr)


def is_inside_obstacle(shape: ObstacleShape, x, y, tol: float = 1e-12):
    """Strict interior test in physical coordinates."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = np.hypot(x, y)
    phi = np.abs(np.arctan2(y, x))
    inside = r < boundary_radius(shape, phi) * (1.0 - tol)
    return inside if inside.ndim else bool(inside)


def cluster_phi(n: int, c: ClusterParams) -> np.ndarray:
    """Angles on [0, pi/2] clustered towards the corner at pi/4.

    The angles are phi = pi/4 + lam * sinh(eta) with eta equispaced on
    [-asinh(pi/(4 lam)), +asinh(pi/(4 lam))], so the end points land exactly
    on 0 and pi/2 and the spacing is finest at pi/4.
    """
    if n < 3:
        raise ValueError(f"need at least 3 angles per face, got {n}")
    eta_max = math.asinh(math.pi / (4.0 * c.lam))
    eta = np.linspace(-eta_max, eta_max, n)
    phi = np.pi / 4 + c.lam * np.sinh(eta)
    # pin the analytically exact values so downstream tagging is exact
    phi[0] = 0.0
    phi[-1] = np.pi / 2
    if n % 2 == 1:
        phi[n // 2] = np.pi / 4
    return phi


@dataclass(frozen=True)
class Pointset:
    """Ordered collocation nodes with boundary classification.

    Nodes are stored as parallel arrays ordered interior first, then far
    field, then cylinder surface, then axis, so restrictions to any tag
    class are contiguous row slices.
    """

    xi: np.ndarray
    phi: np.ndarray
    tag: np.ndarray

    def __post_init__(self):
        order = self.tag.astype(int)
        if np.any(np.diff(order) < 0):
            raise ValueError("nodes must be ordered interior, far, cylinder, axis")
        pts = np.column_stack([self.xi, self.phi])
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ValueError("pointset contains duplicate nodes")

    @property
    def n(self) -> int:
        return self.xi.size

    @property
    def n_interior(self) -> int:
        return int(np.count_nonzero(self.tag == NodeTag.INTERIOR))

    @property
    def n_far(self) -> int:
        return int(np.count_nonzero(self.tag == NodeTag.FAR))

    @property
    def n_cylinder(self) -> int:
        return int(np.count_nonzero(self.tag == NodeTag.CYLINDER))

    @property
    def n_axis(self) -> int:
        return int(np.count_nonzero(self.tag == NodeTag.AXIS))

    @property
    def n_boundary(self) -> int:
        return self.n - self.n_interior

    def indices(self, tag: NodeTag) -> np.ndarray:
        return np.flatnonzero(self.tag == tag)

    @property
    def points(self) -> np.ndarray:
        """(N, 2) array of (xi, phi) coordinates."""
        return np.column_stack([self.xi, self.phi])

    def node(self, i: int) -> Node:
        return Node(float(self.xi[i]), float(self.phi[i]), NodeTag(self.tag[i]))


def _classify_and_order(xi, phi, tag):
    order = np.argsort(tag, kind="stable")
    return Pointset(xi=xi[order].copy(), phi=phi[order].copy(), tag=tag[order].copy())


def _phi_values(shape: ObstacleShape, h: float, c: ClusterParams | None):
    if isinstance(shape, Square):
        c = c if c is not None else ClusterParams()
        n_side = max(3, round((np.pi / 2) / h) + 1)
        face = cluster_phi(n_side, c)
        # mirror about pi/2; the shared endpoint appears once
        return np.concatenate([face, (np.pi - face[::-1])[1:]])
    n_phi = round(np.pi / h) + 1
    return np.linspace(0.0, np.pi, n_phi)


def generate_pointset(
    shape: ObstacleShape,
    h: float,
    t: TransformParams,
    c: ClusterParams | None = None,
) -> Pointset:
    """Discretise the transformed domain with target spacing h.

    The circle gets a tensor grid on [0, ell] x [0, pi].  Rounded and square
    shapes get body-fitted columns: each phi column carries its own evenly
    spaced xi values from xi_gamma(phi) up to ell, so spacing irregularities
    are pushed towards the far-field edge.
    """
    if not 0.0 < h < t.ell:
        raise ValueError(f"target spacing must lie in (0, ell), got {h}")
    phis = _phi_values(shape, h, c)
    n_xi_grid = round(t.ell / h) + 1
    xi_list, phi_list, tag_list = [], [], []
    for phi_j in phis:
        xi_gam = boundary_curve(shape, phi_j, t)
        if isinstance(shape, Circle):
            m = max(2, n_xi_grid)
        else:
            m = max(2, math.ceil((t.ell - xi_gam) / h - 1e-9) + 1)
        col = np.linspace(xi_gam, t.ell, m)
        on_axis = phi_j == 0.0 or phi_j == np.pi
        tags = np.full(m, NodeTag.INTERIOR, dtype=np.int8)
        if on_axis:
            tags[:] = NodeTag.AXIS
        tags[0] = NodeTag.CYLINDER  # Dirichlet rows own the shared corners
        tags[-1] = NodeTag.FAR
        xi_list.append(col)
        phi_list.append(np.full(m, phi_j))
        tag_list.append(tags)
    return _classify_and_order(
        np.concatenate(xi_list), np.concatenate(phi_list), np.concatenate(tag_list)
    )
