"""Patch covers and Shepard partition-of-unity weights.

A cover is a set of overlapping axis-aligned elliptic (or circular) patches
spanning every collocation node.  Each patch carries a compactly supported
Wendland bump; Shepard normalisation turns the bumps into weights that sum
to one wherever at least one patch is active.  First and second weight
derivatives are closed-form quotient-rule expressions, so the derivative
sums vanish identically.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Circle, ClusterParams, ObstacleShape, Pointset, Square, boundary_curve, cluster_phi

# nodes sitting exactly on a patch edge carry zero weight and are excluded
MEMBERSHIP_TOL = 1e-12


class CoverageError(RuntimeError):
    """A node (or evaluation point) is not strictly inside any patch."""


@dataclass(frozen=True)
class Patch:
    """Axis-aligned elliptic patch with the nodes strictly inside it."""

    center: tuple[float, float]
    semiaxes: tuple[float, float]
    members: np.ndarray


@dataclass
class Cover:
    """Patches plus the node -> covering-patches map.

    ``node_to_patches[i]`` lists (sorted) the patches node i is strictly
    inside of; ``k_max`` is the largest overlap count observed.  Instances
    are never mutated after construction.
    """

    patches: list[Patch]
    node_to_patches: list[np.ndarray]
    k_max: int
    centers: np.ndarray = field(init=False)
    semiaxes: np.ndarray = field(init=False)

    def __post_init__(self):
        self.centers = np.array([p.center for p in self.patches], dtype=float)
        self.semiaxes = np.array([p.semiaxes for p in self.patches], dtype=float)

    @property
    def n_patches(self) -> int:
        return len(self.patches)

    def covering(self, q) -> np.ndarray:
        """Indices of patches whose support contains the point q."""
        d = np.asarray(q, dtype=float) - self.centers
        rho = np.sqrt((d[:, 0] / self.semiaxes[:, 0]) ** 2 + (d[:, 1] / self.semiaxes[:, 1]) ** 2)
        return np.flatnonzero(rho < 1.0)


def wendland_c2(r):
    """C2 Wendland bump (1-r)^4 (4r+1), zero for r >= 1."""
    r = np.asarray(r, dtype=float)
    val = np.where(r < 1.0, (1.0 - r) ** 4 * (4.0 * r + 1.0), 0.0)
    return val if val.ndim else float(val)


def _bump_derivatives(dq, semiaxes):
    """Wendland bump and its partials in the elliptic argument.

    dq is an (M, 2) array of offsets from the patch centre.  Returns the
    six arrays (F, F1, F2, F11, F22, F12).  The apparent 1/r singularities
    cancel: F'(r)/r = -20 (1-r)^3 and (F'' - F'/r)/r = 60 (1-r)^2 / r with
    u^2/r bounded by r, so r = 0 is handled explicitly.
    """
    r1, r2 = semiaxes
    u = dq[:, 0] / r1
    v = dq[:, 1] / r2
    r = np.hypot(u, v)
    inside = r < 1.0
    omr = np.where(inside, 1.0 - r, 0.0)
    f = omr**4 * (4.0 * r + 1.0)
    fp_over_r = -20.0 * omr**3
    f1 = fp_over_r * u / r1
    f2 = fp_over_r * v / r2
    with np.errstate(divide="ignore", invalid="ignore"):
        curv = np.where(r > 0.0, 60.0 * omr**2 / r, 0.0)
        f11 = curv * u * u / r1**2 + fp_over_r / r1**2
        f22 = curv * v * v / r2**2 + fp_over_r / r2**2
        f12 = curv * u * v / (r1 * r2)
    return f, f1, f2, f11, f22, f12


def _patch_grid_circle(ell: float, rho: float):
    n1 = math.ceil(ell / rho) + 1
    n2 = math.ceil(np.pi / rho) + 1
    c1 = np.linspace(0.0, ell, n1)
    c2 = np.linspace(0.0, np.pi, n2)
    cc1, cc2 = np.meshgrid(c1, c2, indexing="ij")
    centers = np.column_stack([cc1.ravel(), cc2.ravel()])
    semi = np.full_like(centers, rho)
    return centers, semi


def _patch_columns(shape, ell: float, rho: float, phi_centers, phi_semiaxes):
    """Body-fitted patch columns: centres track the obstacle curve."""
    from .geometry import TransformParams

    t = TransformParams(ell=ell)
    centers, semi = [], []
    for phi_c, rho_phi in zip(phi_centers, phi_semiaxes):
        xi_gam = float(boundary_curve(shape, phi_c, t))
        m = max(2, math.ceil((ell - xi_gam) / rho - 1e-9) + 1)
        for xi_c in np.linspace(xi_gam, ell, m):
            centers.append((xi_c, phi_c))
            semi.append((rho, rho_phi))
    return np.asarray(centers), np.asarray(semi)


def _clustered_phi_centers(rho: float, cluster: ClusterParams, overlap: float):
    """Patch centres following the node clustering, with per-centre phi
    semiaxes wide enough to bridge the gaps to both neighbours.

    The centres on the symmetry axis get twice the semiaxis: only half of
    their ellipse lies inside the domain, so the widening keeps their node
    counts comparable to the interior patches.
    """
    n_c = max(3, math.ceil((np.pi / 2) / rho) + 1)
    face = cluster_phi(n_c, cluster)
    phi_c = np.concatenate([face, (np.pi - face[::-1])[1:]])
    gaps = np.diff(phi_c)
    left = np.concatenate([[gaps[0]], gaps])
    right = np.concatenate([gaps, [gaps[-1]]])
    rho_phi = overlap * np.maximum(left, right)
    rho_phi[0] *= 2.0
    rho_phi[-1] *= 2.0
    return phi_c, rho_phi


def build_cover(
    ps: Pointset,
    shape: ObstacleShape,
    patch_radius: float,
    spacing: float,
    cluster: ClusterParams | None = None,
    overlap: float = 1.25,
) -> Cover:
    """Construct a full cover of the pointset.

    Circles get a tensor grid of circular patches spaced by one radius.
    Rounded and square shapes get body-fitted columns whose first patch
    sits on the obstacle curve; for the clustered square grid the phi
    semiaxes shrink with the local node spacing so per-patch membership
    stays roughly constant.
    """
    if not patch_radius > spacing / 2:
        raise ValueError("patch radius must exceed half the node spacing, or coverage fails")
    ell = float(np.max(ps.xi))
    if isinstance(shape, Circle):
        centers, semi = _patch_grid_circle(ell, patch_radius)
    elif isinstance(shape, Square):
        cluster = cluster if cluster is not None else ClusterParams()
        phi_c, rho_phi = _clustered_phi_centers(patch_radius, cluster, overlap)
        centers, semi = _patch_columns(shape, ell, patch_radius, phi_c, rho_phi)
    else:
        n2 = math.ceil(np.pi / patch_radius) + 1
        phi_c = np.linspace(0.0, np.pi, n2)
        centers, semi = _patch_columns(shape, ell, patch_radius, phi_c, np.full(n2, patch_radius))
    return cover_from_arrays(ps, centers, semi)


def cover_from_arrays(ps: Pointset, centers: np.ndarray, semiaxes: np.ndarray) -> Cover:
    """Assemble a Cover from explicit patch geometry, dropping empty patches."""
    pts = ps.points
    patches = []
    for c, s in zip(centers, semiaxes):
        d = pts - c
        rho = np.hypot(d[:, 0] / s[0], d[:, 1] / s[1])
        members = np.flatnonzero(rho < 1.0 - MEMBERSHIP_TOL)
        if members.size:
            patches.append(Patch(center=(float(c[0]), float(c[1])), semiaxes=(float(s[0]), float(s[1])), members=members))
    node_lists = [[] for _ in range(ps.n)]
    for j, p in enumerate(patches):
        for m in p.members:
            node_lists[m].append(j)
    uncovered = [i for i, lst in enumerate(node_lists) if not lst]
    if uncovered:
        i = uncovered[0]
        raise CoverageError(
            f"{len(uncovered)} node(s) not covered by any patch; first is node {i} "
            f"at (xi={ps.xi[i]:.6g}, phi={ps.phi[i]:.6g})"
        )
    node_to_patches = [np.array(lst, dtype=np.int64) for lst in node_lists]
    k_max = max(len(lst) for lst in node_lists)
    return Cover(patches=patches, node_to_patches=node_to_patches, k_max=k_max)


def cover_from_patches(ps: Pointset, patch_geoms: list[tuple[tuple[float, float], tuple[float, float]]]) -> Cover:
    """Cover from explicit (center, semiaxes) pairs; mainly for tests."""
    centers = np.array([g[0] for g in patch_geoms], dtype=float)
    semi = np.array([g[1] for g in patch_geoms], dtype=float)
    return cover_from_arrays(ps, centers, semi)


def shepard_weights(q, cover: Cover) -> dict[int, float]:
    """Normalised weights of the patches covering q; they sum to one."""
    idx = cover.covering(q)
    if idx.size == 0:
        raise CoverageError(f"point {tuple(np.asarray(q, float))} is not covered by any patch")
    dq = np.asarray(q, dtype=float)[None, :] - cover.centers[idx]
    vals = np.array([_bump_derivatives(dq[i : i + 1], cover.semiaxes[idx[i]])[0][0] for i in range(idx.size)])
    total = vals.sum()
    return {int(j): float(v / total) for j, v in zip(idx, vals)}


def shepard_weight_derivatives(q, cover: Cover) -> dict[int, tuple[float, float, float, float, float, float]]:
    """Weights and their partials (w, w_1, w_2, w_11, w_22, w_12) at q."""
    idx = cover.covering(q)
    if idx.size == 0:
        raise CoverageError(f"point {tuple(np.asarray(q, float))} is not covered by any patch")
    q = np.asarray(q, dtype=float)
    bumps = np.empty((idx.size, 6))
    for i, j in enumerate(idx):
        parts = _bump_derivatives((q - cover.centers[j])[None, :], cover.semiaxes[j])
        bumps[i] = [p[0] for p in parts]
    s, s1, s2, s11, s22, s12 = bumps.sum(axis=0)
    out = {}
    for i, j in enumerate(idx):
        f, f1, f2, f11, f22, f12 = bumps[i]
        w = f / s
        w1 = (f1 - w * s1) / s
        w2 = (f2 - w * s2) / s
        w11 = (f11 - 2.0 * w1 * s1 - w * s11) / s
        w22 = (f22 - 2.0 * w2 * s2 - w * s22) / s
        w12 = (f12 - w1 * s2 - w2 * s1 - w * s12) / s
        out[int(j)] = (float(w), float(w1), float(w2), float(w11), float(w22), float(w12))
    return out


def nodal_weight_tables(cover: Cover, points: np.ndarray):
    """Per-patch weight-derivative tables at that patch's member nodes.

    Returns a list with one (n_members, 6) array per patch, columns
    (w, w_1, w_2, w_11, w_22, w_12).  Shepard sums are accumulated over all
    patches first, so the tables are consistent across overlaps.
    """
    n = points.shape[0]
    sums = np.zeros((n, 6))
    bumps = []
    for p in cover.patches:
        dq = points[p.members] - np.asarray(p.center)
        parts = np.column_stack(_bump_derivatives(dq, p.semiaxes))
        bumps.append(parts)
        sums[p.members] += parts
    tables = []
    for p, parts in zip(cover.patches, bumps):
        s = sums[p.members]
        w = parts[:, 0] / s[:, 0]
        w1 = (parts[:, 1] - w * s[:, 1]) / s[:, 0]
        w2 = (parts[:, 2] - w * s[:, 2]) / s[:, 0]
        w11 = (parts[:, 3] - 2.0 * w1 * s[:, 1] - w * s[:, 3]) / s[:, 0]
        w22 = (parts[:, 4] - 2.0 * w2 * s[:, 2] - w * s[:, 4]) / s[:, 0]
        w12 = (parts[:, 5] - w1 * s[:, 2] - w2 * s[:, 1] - w * s[:, 5]) / s[:, 0]
        tables.append(np.column_stack([w, w1, w2, w11, w22, w12]))
    return tables
