"""Inverse-multiquadric kernels and sparse PU differentiation matrices.

Each patch carries a small symmetric interpolation system in the
inverse-multiquadric basis.  Solving it against operator-applied kernel
vectors yields derivatives of the local cardinal functions, which the
Leibniz rule combines with the Shepard weight derivatives into global
sparse matrices for the identity, first and second partials.  One
factorisation per patch is reused across all operators and evaluation
points, and the assembly order (patch index, then member index) is
deterministic.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .geometry import Pointset
from .pum import Cover, CoverageError, _bump_derivatives, nodal_weight_tables

OPERATOR_NAMES = ("id", "dxi", "dphi", "dxixi", "dphiphi")

# above this conditioning estimate the local system is flagged as unreliable
COND_WARN = 1e14


class FactorizationError(RuntimeError):
    """Local interpolation matrix could not be factorised."""


@dataclass(frozen=True)
class KernelParams:
    """Shape parameter of the inverse multiquadric."""

    epsilon: float = 2.0

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ValueError(f"shape parameter must be positive, got {self.epsilon}")


def imq(r, k: KernelParams):
    """Inverse multiquadric (1 + (eps r)^2)^(-1/2)."""
    r = np.asarray(r, dtype=float)
    val = (1.0 + (k.epsilon * r) ** 2) ** -0.5
    return val if val.ndim else float(val)


def imq_partials(dq, k: KernelParams):
    """Kernel value and Cartesian partials at offsets dq = q - centre.

    dq has shape (..., 2); returns (val, d1, d2, d11, d22) with the same
    leading shape.
    """
    dq = np.asarray(dq, dtype=float)
    dx, dy = dq[..., 0], dq[..., 1]
    e2 = k.epsilon**2
    g = 1.0 + e2 * (dx * dx + dy * dy)
    g32 = g**-1.5
    g52 = g**-2.5
    val = g**-0.5
    d1 = -e2 * dx * g32
    d2 = -e2 * dy * g32
    d11 = -e2 * g32 + 3.0 * e2 * e2 * dx * dx * g52
    d22 = -e2 * g32 + 3.0 * e2 * e2 * dy * dy * g52
    return val, d1, d2, d11, d22


def _kernel_op_matrix(pts, centres, k: KernelParams, op: str):
    """(len(pts), len(centres)) matrix of op-applied kernels."""
    dq = pts[:, None, :] - centres[None, :, :]
    val, d1, d2, d11, d22 = imq_partials(dq, k)
    return {"id": val, "dxi": d1, "dphi": d2, "dxixi": d11, "dphiphi": d22}[op]


class LocalInterp:
    """Factorised symmetric interpolation system of one patch.

    Uses a positive-definite Cholesky factorisation; if that reports
    non-positive pivots (severe ill-conditioning) it falls back to a
    column-pivoted QR solve.
    """

    def __init__(self, coords: np.ndarray, k: KernelParams, label=None, warn: bool = True):
        self.coords = np.asarray(coords, dtype=float)
        self.kernel = k
        gram = _kernel_op_matrix(self.coords, self.coords, k, "id")
        self.cond_estimate = float(np.linalg.cond(gram)) if gram.shape[0] > 1 else 1.0
        if warn and self.cond_estimate > COND_WARN:
            warnings.warn(
                f"patch {label}: local interpolation system condition estimate "
                f"{self.cond_estimate:.2e} exceeds {COND_WARN:.0e}",
                stacklevel=2,
            )
        try:
            self._cho = sla.cho_factor(gram, lower=True)
            self._qr = None
        except np.linalg.LinAlgError:
            try:
                q, r, piv = sla.qr(gram, pivoting=True)
            except Exception as exc:  # pragma: no cover - defensive
                raise FactorizationError(
                    f"patch {label}: factorisation failed (cond ~ {self.cond_estimate:.2e})"
                ) from exc
            if np.abs(r[-1, -1]) < 1e3 * np.finfo(float).eps * np.abs(r[0, 0]):
                raise FactorizationError(
                    f"patch {label}: numerically singular local system "
                    f"(cond ~ {self.cond_estimate:.2e})"
                )
            self._cho = None
            self._qr = (q, r, piv)

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self._cho is not None:
            return sla.cho_solve(self._cho, b)
        q, r, piv = self._qr
        y = sla.solve_triangular(r, q.T @ b)
        out = np.empty_like(y)
        out[piv] = y
        return out

    def cardinal_rows(self, pts: np.ndarray, op: str) -> np.ndarray:
        """Matrix of (op psi_n)(pts_m) over this patch's basis."""
        rhs = _kernel_op_matrix(pts, self.coords, self.kernel, op)
        return self.solve(rhs.T).T


def local_interp_factorization(coords, k: KernelParams, label=None) -> LocalInterp:
    """Factorise the symmetric kernel matrix of one patch."""
    return LocalInterp(coords, k, label=label)


@dataclass(frozen=True)
class DiffOperators:
    """Sparse N x N collocation matrices sharing one sparsity pattern."""

    identity: sp.csr_matrix
    d_xi: sp.csr_matrix
    d_phi: sp.csr_matrix
    d_xixi: sp.csr_matrix
    d_phiphi: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.identity.shape[0]

    def by_name(self, op: str) -> sp.csr_matrix:
        return {
            "id": self.identity,
            "dxi": self.d_xi,
            "dphi": self.d_phi,
            "dxixi": self.d_xixi,
            "dphiphi": self.d_phiphi,
        }[op]


class Discretization:
    """Pointset + cover + kernel bundle with cached local factorisations.

    Assembly and evaluation are read-only after construction, so a shared
    instance is safe to use from several threads.
    """

    def __init__(self, ps: Pointset, cover: Cover, kernel: KernelParams):
        self.ps = ps
        self.cover = cover
        self.kernel = kernel
        self.locals = [
            LocalInterp(ps.points[p.members], kernel, label=j, warn=False)
            for j, p in enumerate(cover.patches)
        ]
        bad = [(j, loc.cond_estimate) for j, loc in enumerate(self.locals)
               if loc.cond_estimate > COND_WARN]
        if bad:
            worst = max(bad, key=lambda t: t[1])
            warnings.warn(
                f"{len(bad)} of {len(self.locals)} local interpolation systems exceed "
                f"condition {COND_WARN:.0e} (worst: patch {worst[0]} at {worst[1]:.2e}); "
                "derivative accuracy near these patches is limited",
                stacklevel=2,
            )
        self._ops = None

    def diff_operators(self) -> DiffOperators:
        if self._ops is None:
            self._ops = self._assemble()
        return self._ops

    def _assemble(self) -> DiffOperators:
        ps, cover = self.ps, self.cover
        n = ps.n
        tables = nodal_weight_tables(cover, ps.points)
        rows, cols = [], []
        data = {op: [] for op in OPERATOR_NAMES}
        for j, patch in enumerate(cover.patches):
            members = patch.members
            m = members.size
            loc = self.locals[j]
            w, wx, wy, wxx, wyy, _ = tables[j].T
            psi_x = loc.cardinal_rows(loc.coords, "dxi")
            psi_y = loc.cardinal_rows(loc.coords, "dphi")
            psi_xx = loc.cardinal_rows(loc.coords, "dxixi")
            psi_yy = loc.cardinal_rows(loc.coords, "dphiphi")
            eye = np.eye(m)
            # Leibniz expansion; psi(q_m) = delta_mn exactly for member nodes
            b_id = w[:, None] * eye
            b_x = w[:, None] * psi_x + wx[:, None] * eye
            b_y = w[:, None] * psi_y + wy[:, None] * eye
            b_xx = w[:, None] * psi_xx + 2.0 * wx[:, None] * psi_x + wxx[:, None] * eye
            b_yy = w[:, None] * psi_yy + 2.0 * wy[:, None] * psi_y + wyy[:, None] * eye
            rows.append(np.repeat(members, m))
            cols.append(np.tile(members, m))
            data["id"].append(b_id.ravel())
            data["dxi"].append(b_x.ravel())
            data["dphi"].append(b_y.ravel())
            data["dxixi"].append(b_xx.ravel())
            data["dphiphi"].append(b_yy.ravel())
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)

        def build(op):
            mat = sp.coo_matrix((np.concatenate(data[op]), (rows, cols)), shape=(n, n))
            return mat.tocsr()

        return DiffOperators(
            identity=build("id"),
            d_xi=build("dxi"),
            d_phi=build("dphi"),
            d_xixi=build("dxixi"),
            d_phiphi=build("dphiphi"),
        )

    def evaluation_matrices(self, points: np.ndarray, ops) -> dict[str, sp.csr_matrix]:
        """Sparse (n_points, N) PU evaluation rows for each requested operator.

        Row p of the result for operator L holds the coefficients of
        (L f)(points[p]) as a linear combination of nodal values.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n_pts = points.shape[0]
        rows = {op: [] for op in ops}
        cols_all, rows_all = [], []
        vals = {op: [] for op in ops}
        for p_idx in range(n_pts):
            q = points[p_idx]
            covering = self.cover.covering(q)
            if covering.size == 0:
                raise CoverageError(f"evaluation point {tuple(q)} is not covered by any patch")
            bumps = np.empty((covering.size, 6))
            for i, j in enumerate(covering):
                parts = _bump_derivatives(
                    (q - self.cover.centers[j])[None, :], self.cover.semiaxes[j]
                )
                bumps[i] = [b[0] for b in parts]
            s = bumps.sum(axis=0)
            for i, j in enumerate(covering):
                f, f1, f2, f11, f22, _ = bumps[i]
                w = f / s[0]
                w1 = (f1 - w * s[1]) / s[0]
                w2 = (f2 - w * s[2]) / s[0]
                w11 = (f11 - 2.0 * w1 * s[1] - w * s[3]) / s[0]
                w22 = (f22 - 2.0 * w2 * s[2] - w * s[4]) / s[0]
                loc = self.locals[j]
                members = self.cover.patches[j].members
                q_row = q[None, :]
                psi = loc.cardinal_rows(q_row, "id")[0]
                need_x = any(op in ("dxi", "dxixi") for op in ops)
                need_y = any(op in ("dphi", "dphiphi") for op in ops)
                psi_x = loc.cardinal_rows(q_row, "dxi")[0] if need_x else None
                psi_y = loc.cardinal_rows(q_row, "dphi")[0] if need_y else None
                for op in ops:
                    if op == "id":
                        coeff = w * psi
                    elif op == "dxi":
                        coeff = w1 * psi + w * psi_x
                    elif op == "dphi":
                        coeff = w2 * psi + w * psi_y
                    elif op == "dxixi":
                        coeff = w11 * psi + 2.0 * w1 * psi_x + w * loc.cardinal_rows(q_row, "dxixi")[0]
                    elif op == "dphiphi":
                        coeff = w22 * psi + 2.0 * w2 * psi_y + w * loc.cardinal_rows(q_row, "dphiphi")[0]
                    else:
                        raise ValueError(f"unknown operator {op!r}")
                    vals[op].append(coeff)
                rows_all.append(np.full(members.size, p_idx))
                cols_all.append(members)
        rows_all = np.concatenate(rows_all)
        cols_all = np.concatenate(cols_all)
        out = {}
        for op in ops:
            mat = sp.coo_matrix(
                (np.concatenate(vals[op]), (rows_all, cols_all)), shape=(n_pts, self.ps.n)
            )
            out[op] = mat.tocsr()
        return out

    def evaluate(self, nodal: np.ndarray, points: np.ndarray, op: str = "id") -> np.ndarray:
        """PU evaluation of an operator applied to a nodal field."""
        mats = self.evaluation_matrices(points, [op])
        return mats[op] @ np.asarray(nodal, dtype=float)


def assemble_diff_matrices(ps: Pointset, cover: Cover, k: KernelParams) -> DiffOperators:
    """Build the five global sparse collocation matrices."""
    return Discretization(ps, cover, k).diff_operators()


def restrict_rows(mat: sp.spmatrix, q_indices) -> sp.csr_matrix:
    """Rectangular submatrix formed by the given (strictly increasing) rows."""
    q = np.asarray(q_indices, dtype=np.int64)
    if q.size and (np.any(np.diff(q) <= 0)):
        raise ValueError("row indices must be strictly increasing")
    if q.size and (q[0] < 0 or q[-1] >= mat.shape[0]):
        raise ValueError("row index out of range")
    return sp.csr_matrix(mat)[q, :]


def evaluate_field(nodal, q, which: str, disc: Discretization):
    """Operator-applied PU interpolant of a nodal field at a single point."""
    return float(disc.evaluate(np.asarray(nodal, float), np.asarray(q, float)[None, :], which)[0])
