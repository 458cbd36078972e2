"""Collocation system: linear block, QR elimination, residual and Jacobian.

The nodal system vector stacks the radial velocity, angular velocity and
pressure values at all N nodes.  Boundary conditions plus the (linear)
incompressibility equation form the linear block, which is eliminated
exactly through a column-pivoted QR factorisation of its transpose; the
remaining unknowns y parametrise the affine constraint manifold
X = x_particular + O2 y.  The two momentum equations collocated at the
interior nodes are the square nonlinear system E(y) = 0, and their
Jacobian is assembled from closed-form coefficient functions times the
sparse differentiation matrices.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .geometry import NodeTag, ObstacleShape, Pointset, TransformParams
from .rbf import DiffOperators, Discretization, restrict_rows

QR_RANK_TOL = 1e-12


class RankDeficiencyError(RuntimeError):
    """The linear block lost row rank (duplicate or ill-tagged nodes)."""


@dataclass(frozen=True)
class FlowProblem:
    """One steady-flow problem instance at a fixed Reynolds number."""

    re: float
    ps: Pointset
    ops: DiffOperators
    transform: TransformParams
    disc: Discretization
    shape: ObstacleShape

    def __post_init__(self):
        if not self.re > 0.0:
            raise ValueError(f"Reynolds number must be positive, got {self.re}")


# ---------------------------------------------------------------------------
# pointwise transformed equations (shared by assembly, post-processing and
# the finite-difference oracles in the test suite)

def w1_momentum(re, ell, xi, vxi, vphi, d_xi_vxi, d_phi_vxi, d_xixi_vxi,
                d_phiphi_vxi, d_phi_vphi, d_xi_p):
    """Radial momentum residual in transformed variables."""
    f = ell - xi
    convective = 0.5 * re * (f * vxi * d_xi_vxi + vphi * d_phi_vxi - vphi**2 + f * d_xi_p)
    viscous = (-(f**3) * d_xixi_vxi - f * d_phiphi_vxi + f**2 * d_xi_vxi
               + 2.0 * f * d_phi_vphi + f * vxi) / ell
    return convective + viscous


def w2_momentum(re, ell, xi, vxi, vphi, d_phi_vxi, d_xi_vphi, d_phi_vphi,
                d_xixi_vphi, d_phiphi_vphi, d_phi_p):
    """Angular momentum residual in transformed variables."""
    f = ell - xi
    convective = 0.5 * re * (f * vxi * d_xi_vphi + vphi * d_phi_vphi + vxi * vphi + d_phi_p)
    viscous = (-(f**3) * d_xixi_vphi - f * d_phiphi_vphi + f**2 * d_xi_vphi
               - 2.0 * f * d_phi_vxi + f * vphi) / ell
    return convective + viscous


def w3_divergence(ell, xi, vxi, d_xi_vxi, d_phi_vphi):
    """Incompressibility residual in transformed variables."""
    return (ell - xi) * d_xi_vxi + d_phi_vphi + vxi


def frechet_coefficient_vectors(re, ell, xi, vxi, vphi,
                                d_xi_vxi, d_phi_vxi, d_xi_vphi, d_phi_vphi):
    """All nonzero partials of the two momentum operators.

    Keys are (equation, operator, field) with operator in the global
    differentiation-matrix vocabulary and field in {vxi, vphi, p}.  Inputs
    may be arrays (one entry per node); outputs broadcast accordingly.
    """
    f = ell - xi
    half_re = 0.5 * re
    like = np.broadcast(xi, vxi)
    const = lambda v: np.full(like.shape, v) if like.shape else float(v)
    return {
        ("w1", "id", "vxi"): half_re * f * d_xi_vxi + f / ell,
        ("w1", "dxi", "vxi"): half_re * f * vxi + f**2 / ell,
        ("w1", "dphi", "vxi"): half_re * vphi + np.zeros(like.shape),
        ("w1", "dxixi", "vxi"): -(f**3) / ell,
        ("w1", "dphiphi", "vxi"): -f / ell,
        ("w1", "id", "vphi"): half_re * (d_phi_vxi - 2.0 * vphi),
        ("w1", "dphi", "vphi"): 2.0 * f / ell,
        ("w1", "dxi", "p"): half_re * f,
        ("w2", "id", "vxi"): half_re * (f * d_xi_vphi + vphi),
        ("w2", "dphi", "vxi"): -2.0 * f / ell,
        ("w2", "id", "vphi"): half_re * (vxi + d_phi_vphi) + f / ell,
        ("w2", "dxi", "vphi"): half_re * f * vxi + f**2 / ell,
        ("w2", "dphi", "vphi"): half_re * vphi + np.zeros(like.shape),
        ("w2", "dxixi", "vphi"): -(f**3) / ell,
        ("w2", "dphiphi", "vphi"): -f / ell,
        ("w2", "dphi", "p"): const(half_re),
    }


# ---------------------------------------------------------------------------
# linear block and its QR elimination

@dataclass(frozen=True)
class LinearBlock:
    """Boundary conditions stacked over the divergence rows, with rhs."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_bc: int

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]


def _identity_rows(indices, n):
    m = len(indices)
    return sp.csr_matrix((np.ones(m), (np.arange(m), indices)), shape=(m, n))


def assemble_linear_block(problem: FlowProblem) -> LinearBlock:
    """Collocate the boundary conditions and the divergence equation.

    Row order: far-field Dirichlet rows for the three fields, cylinder
    no-slip rows for the two velocities, axis rows (normal-derivative
    conditions for the radial velocity and the pressure, a Dirichlet zero
    for the angular velocity), then the divergence rows at interior and
    cylinder nodes.  Row rank is verified by the pivoted QR in
    :func:`reduce_linear`.
    """
    ps, ops, ell = problem.ps, problem.ops, problem.transform.ell
    n = ps.n
    idx_far = ps.indices(NodeTag.FAR)
    idx_cyl = ps.indices(NodeTag.CYLINDER)
    idx_axis = ps.indices(NodeTag.AXIS)
    idx_int = ps.indices(NodeTag.INTERIOR)
    idx_w3 = np.concatenate([idx_int, idx_cyl])

    far_id = _identity_rows(idx_far, n)
    cyl_id = _identity_rows(idx_cyl, n)
    axis_id = _identity_rows(idx_axis, n)
    axis_dphi = restrict_rows(ops.d_phi, idx_axis)

    w3_vxi = _identity_rows(idx_w3, n) + sp.diags(ell - ps.xi[idx_w3]) @ restrict_rows(ops.d_xi, idx_w3)
    w3_vphi = restrict_rows(ops.d_phi, idx_w3)

    blocks = [
        (far_id, None, None),
        (None, far_id, None),
        (None, None, far_id),
        (cyl_id, None, None),
        (None, cyl_id, None),
        (axis_dphi, None, None),
        (None, axis_id, None),
        (None, None, axis_dphi),
        (w3_vxi, w3_vphi, None),
    ]
    matrix = sp.bmat(blocks, format="csr")
    rhs = np.zeros(matrix.shape[0])
    n_far = idx_far.size
    rhs[:n_far] = np.cos(ps.phi[idx_far])
    rhs[n_far : 2 * n_far] = -np.sin(ps.phi[idx_far])
    n_bc = 3 * (n_far + idx_axis.size) + 2 * idx_cyl.size
    return LinearBlock(matrix=matrix, rhs=rhs, n_bc=n_bc)


@dataclass
class Reduction:
    """Pivoted-QR factors mapping the reduced unknown y to the full vector.

    ``o1``, ``r`` and ``perm`` may be dropped (None) on large problems once
    the particular solution has been formed; ``o2`` and ``x_particular``
    are all the solver needs.
    """

    o2: np.ndarray
    x_particular: np.ndarray
    o1: np.ndarray | None
    r: np.ndarray | None
    perm: np.ndarray | None
    rank: int

    @property
    def n_reduced(self) -> int:
        return self.o2.shape[1]


def reduce_linear(lb: LinearBlock, keep_basis: bool = True) -> Reduction:
    """Eliminate the linear block through a pivoted QR of its transpose."""
    lin_t = lb.matrix.T.toarray()
    n_full, m = lin_t.shape
    q, r, piv = sla.qr(lin_t, mode="full", pivoting=True)
    diag = np.abs(np.diag(r[:m, :m]))
    rank = int(np.count_nonzero(diag > QR_RANK_TOL * diag[0]))
    if rank < m:
        raise RankDeficiencyError(
            f"linear block is rank deficient: rank {rank} < {m} rows "
            f"({m - rank} dependent rows; check for duplicate or ill-tagged nodes)"
        )
    o1 = q[:, :m]
    o2 = np.ascontiguousarray(q[:, m:])
    del q
    z = sla.solve_triangular(r[:m, :m], lb.rhs[piv], trans="T", lower=False)
    x_particular = o1 @ z
    if keep_basis:
        return Reduction(o2=o2, x_particular=x_particular, o1=o1, r=r[:m, :m], perm=piv, rank=rank)
    return Reduction(o2=o2, x_particular=x_particular, o1=None, r=None, perm=None, rank=rank)


# ---------------------------------------------------------------------------
# reduced nonlinear system

_JACOBIAN_TERMS = {
    "w1": (("id", "vxi"), ("dxi", "vxi"), ("dphi", "vxi"), ("dxixi", "vxi"),
           ("dphiphi", "vxi"), ("id", "vphi"), ("dphi", "vphi"), ("dxi", "p")),
    "w2": (("id", "vxi"), ("dphi", "vxi"), ("id", "vphi"), ("dxi", "vphi"),
           ("dphi", "vphi"), ("dxixi", "vphi"), ("dphiphi", "vphi"), ("dphi", "p")),
}

_FIELD_SLOT = {"vxi": 0, "vphi": 1, "p": 2}


class ReducedSystem:
    """Residual and Jacobian of the eliminated nonlinear system.

    Geometry-dependent quantities (interior-row operator restrictions and
    their products with the null-space basis) are precomputed once and
    shared across all Reynolds numbers on the same discretisation.
    """

    def __init__(self, problem: FlowProblem, reduction: Reduction):
        self.problem = problem
        self.reduction = reduction
        ps = problem.ps
        self.n = ps.n
        self.n_int = ps.n_interior
        self.ell = problem.transform.ell
        self.xi_int = ps.xi[: self.n_int]
        interior = np.arange(self.n_int)
        self.ops_int = {
            op: restrict_rows(problem.ops.by_name(op), interior)
            for op in ("dxi", "dphi", "dxixi", "dphiphi")
        }
        self._ablocks = None

    @property
    def n_reduced(self) -> int:
        return self.reduction.n_reduced

    def x_from_y(self, y: np.ndarray) -> np.ndarray:
        return self.reduction.x_particular + self.reduction.o2 @ y

    def fields(self, x: np.ndarray):
        n = self.n
        return x[:n], x[n : 2 * n], x[2 * n :]

    def _interior_state(self, x):
        vxi, vphi, p = self.fields(x)
        d = {
            "vxi": vxi[: self.n_int],
            "vphi": vphi[: self.n_int],
            "d_xi_vxi": self.ops_int["dxi"] @ vxi,
            "d_phi_vxi": self.ops_int["dphi"] @ vxi,
            "d_xixi_vxi": self.ops_int["dxixi"] @ vxi,
            "d_phiphi_vxi": self.ops_int["dphiphi"] @ vxi,
            "d_xi_vphi": self.ops_int["dxi"] @ vphi,
            "d_phi_vphi": self.ops_int["dphi"] @ vphi,
            "d_xixi_vphi": self.ops_int["dxixi"] @ vphi,
            "d_phiphi_vphi": self.ops_int["dphiphi"] @ vphi,
            "d_xi_p": self.ops_int["dxi"] @ p,
            "d_phi_p": self.ops_int["dphi"] @ p,
        }
        return d

    def residual_from_x(self, x: np.ndarray, re: float | None = None) -> np.ndarray:
        """Momentum residuals at the interior nodes for a full nodal vector."""
        re = self.problem.re if re is None else re
        s = self._interior_state(x)
        e1 = w1_momentum(re, self.ell, self.xi_int, s["vxi"], s["vphi"],
                         s["d_xi_vxi"], s["d_phi_vxi"], s["d_xixi_vxi"],
                         s["d_phiphi_vxi"], s["d_phi_vphi"], s["d_xi_p"])
        e2 = w2_momentum(re, self.ell, self.xi_int, s["vxi"], s["vphi"],
                         s["d_phi_vxi"], s["d_xi_vphi"], s["d_phi_vphi"],
                         s["d_xixi_vphi"], s["d_phiphi_vphi"], s["d_phi_p"])
        return np.concatenate([e1, e2])

    def residual(self, y: np.ndarray, re: float | None = None) -> np.ndarray:
        return self.residual_from_x(self.x_from_y(y), re)

    def _ablock(self, op, field):
        if self._ablocks is None:
            self._ablocks = {}
        key = (op, field)
        if key not in self._ablocks:
            n, n_int = self.n, self.n_int
            slot = _FIELD_SLOT[field]
            o2_field = self.reduction.o2[slot * n : (slot + 1) * n]
            if op == "id":
                self._ablocks[key] = o2_field[:n_int]
            else:
                self._ablocks[key] = self.ops_int[op] @ o2_field
        return self._ablocks[key]

    def jacobian(self, y: np.ndarray, re: float | None = None) -> np.ndarray:
        """Dense Jacobian dE/dy via the chain rule through X = x_p + O2 y."""
        re = self.problem.re if re is None else re
        x = self.x_from_y(y)
        s = self._interior_state(x)
        coeffs = frechet_coefficient_vectors(
            re, self.ell, self.xi_int, s["vxi"], s["vphi"],
            s["d_xi_vxi"], s["d_phi_vxi"], s["d_xi_vphi"], s["d_phi_vphi"],
        )
        n_int = self.n_int
        jac = np.zeros((2 * n_int, 2 * n_int))
        for row, eq in ((slice(0, n_int), "w1"), (slice(n_int, 2 * n_int), "w2")):
            block = jac[row]
            for op, field in _JACOBIAN_TERMS[eq]:
                c = np.asarray(coeffs[(eq, op, field)])
                block += c[:, None] * self._ablock(op, field)
        return jac

    def jacobian_hat(self, x: np.ndarray, re: float | None = None) -> sp.csr_matrix:
        """Sparse 2N_I x 3N momentum Jacobian with respect to the full vector."""
        re = self.problem.re if re is None else re
        s = self._interior_state(x)
        coeffs = frechet_coefficient_vectors(
            re, self.ell, self.xi_int, s["vxi"], s["vphi"],
            s["d_xi_vxi"], s["d_phi_vxi"], s["d_xi_vphi"], s["d_phi_vphi"],
        )
        n, n_int = self.n, self.n_int
        eye_int = _identity_rows(np.arange(n_int), n)
        rows = []
        for eq in ("w1", "w2"):
            fields = {}
            for op, field in _JACOBIAN_TERMS[eq]:
                c = np.asarray(coeffs[(eq, op, field)])
                base = eye_int if op == "id" else self.ops_int[op]
                term = sp.diags(c) @ base
                fields[field] = term if field not in fields else fields[field] + term
            rows.append(sp.hstack(
                [fields.get(f, sp.csr_matrix((n_int, n))) for f in ("vxi", "vphi", "p")],
                format="csr",
            ))
        return sp.vstack(rows, format="csr")

    def release_jacobian_cache(self):
        self._ablocks = None


def residual(rsys: ReducedSystem, y: np.ndarray) -> np.ndarray:
    """Nonlinear residual E(y) of the reduced system."""
    return rsys.residual(y)


def jacobian(rsys: ReducedSystem, y: np.ndarray) -> np.ndarray:
    """Analytic dense Jacobian of the reduced system."""
    return rsys.jacobian(y)


def frechet_coefficients(problem: FlowProblem, x: np.ndarray, node: int) -> dict:
    """Closed-form momentum partials evaluated at one node.

    Returns the map (equation, operator, field) -> coefficient used by the
    Jacobian assembly, evaluated at the node's coordinates and nodal
    derivative values.
    """
    ps, ops = problem.ps, problem.ops
    n = ps.n
    vxi, vphi = x[:n], x[n : 2 * n]
    row = lambda mat: mat[[node], :]
    d_xi_vxi = float(row(ops.d_xi) @ vxi)
    d_phi_vxi = float(row(ops.d_phi) @ vxi)
    d_xi_vphi = float(row(ops.d_xi) @ vphi)
    d_phi_vphi = float(row(ops.d_phi) @ vphi)
    return frechet_coefficient_vectors(
        problem.re, problem.transform.ell, float(ps.xi[node]),
        float(vxi[node]), float(vphi[node]),
        d_xi_vxi, d_phi_vxi, d_xi_vphi, d_phi_vphi,
    )


# ---------------------------------------------------------------------------
# sparse alternative: eliminate only the Dirichlet rows

class DirichletEliminatedSystem:
    """Square nonlinear system over the non-Dirichlet unknowns.

    The Dirichlet values (far field for all three fields, no-slip on the
    cylinder, zero angular velocity on the axis) are substituted directly;
    the remaining linear rows stay in the system, so the Jacobian is the
    sparse stack of the retained linear rows over the momentum block.
    """

    def __init__(self, problem: FlowProblem, rsys: ReducedSystem | None = None,
                 lb: LinearBlock | None = None):
        self.problem = problem
        self.rsys = rsys if rsys is not None else _geometry_only_rsys(problem)
        lb = lb if lb is not None else assemble_linear_block(problem)
        ps = problem.ps
        n = ps.n
        idx_far = ps.indices(NodeTag.FAR)
        idx_cyl = ps.indices(NodeTag.CYLINDER)
        idx_axis = ps.indices(NodeTag.AXIS)
        dir_idx = np.concatenate([
            idx_far, n + idx_far, 2 * n + idx_far,
            idx_cyl, n + idx_cyl,
            n + idx_axis,
        ])
        dir_val = np.concatenate([
            np.cos(ps.phi[idx_far]), -np.sin(ps.phi[idx_far]), np.zeros(idx_far.size),
            np.zeros(2 * idx_cyl.size),
            np.zeros(idx_axis.size),
        ])
        order = np.argsort(dir_idx)
        self.dirichlet_idx = dir_idx[order]
        self.dirichlet_val = dir_val[order]
        mask = np.ones(3 * n, dtype=bool)
        mask[self.dirichlet_idx] = False
        self.free_idx = np.flatnonzero(mask)
        # retained linear rows: everything except the Dirichlet identities
        n_far, n_cyl, n_axis = idx_far.size, idx_cyl.size, idx_axis.size
        keep = np.concatenate([
            3 * n_far + 2 * n_cyl + np.arange(n_axis),                 # axis d/dphi of vxi
            3 * n_far + 2 * n_cyl + 2 * n_axis + np.arange(n_axis),   # axis d/dphi of p
            lb.n_bc + np.arange(lb.n_rows - lb.n_bc),                 # divergence rows
        ])
        lin = sp.csr_matrix(lb.matrix)[keep, :]
        self.lin_free = lin[:, self.free_idx].tocsr()
        self.rhs = lb.rhs[keep] - lin[:, self.dirichlet_idx] @ self.dirichlet_val

    @property
    def n_unknowns(self) -> int:
        return self.free_idx.size

    def x_from_xp(self, xp: np.ndarray) -> np.ndarray:
        x = np.empty(3 * self.problem.ps.n)
        x[self.free_idx] = xp
        x[self.dirichlet_idx] = self.dirichlet_val
        return x

    def residual(self, xp: np.ndarray, re: float | None = None) -> np.ndarray:
        x = self.x_from_xp(xp)
        lin_part = self.lin_free @ xp - self.rhs
        return np.concatenate([lin_part, self.rsys.residual_from_x(x, re)])

    def jacobian(self, xp: np.ndarray, re: float | None = None) -> sp.csr_matrix:
        x = self.x_from_xp(xp)
        j_hat = self.rsys.jacobian_hat(x, re)[:, self.free_idx]
        return sp.vstack([self.lin_free, j_hat], format="csr")


def _geometry_only_rsys(problem: FlowProblem) -> ReducedSystem:
    # the sparse path never uses the QR factors; a placeholder reduction
    # keeps the interior-operator machinery available
    dummy = Reduction(o2=np.zeros((3 * problem.ps.n, 0)), x_particular=np.zeros(3 * problem.ps.n),
                      o1=None, r=None, perm=None, rank=0)
    return ReducedSystem(problem, dummy)


def sparse_jacobian_alternative(problem: FlowProblem, xp: np.ndarray,
                                system: DirichletEliminatedSystem | None = None) -> sp.csr_matrix:
    """Sparse square Jacobian over the Dirichlet-eliminated unknowns."""
    system = system if system is not None else DirichletEliminatedSystem(problem)
    return system.jacobian(xp)


def matrix_bandwidth(mat: sp.spmatrix) -> int:
    rows, cols = mat.nonzero()
    return int(np.max(np.abs(rows - cols))) if rows.size else 0


def cuthill_mckee_bandwidth(mat: sp.spmatrix) -> tuple[int, int, np.ndarray]:
    """Bandwidth before and after a symmetrised reverse Cuthill-McKee pass."""
    mat = sp.csr_matrix(mat)
    pattern = (abs(mat) + abs(mat.T)).tocsr()
    perm = reverse_cuthill_mckee(pattern, symmetric_mode=True)
    permuted = mat[perm][:, perm]
    return matrix_bandwidth(mat), matrix_bandwidth(permuted), perm
