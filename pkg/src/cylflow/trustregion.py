"""Dogleg trust-region root finder and the Reynolds continuation driver.

Root finding for E(y) = 0 is recast as minimisation of the half
sum-of-squares merit mu(y) = 0.5 ||E(y)||^2.  Steps are the classic dogleg
interpolation between the Cauchy point and the Gauss-Newton point, built
from matrix-vector products and linear solves with the Jacobian itself
(never its normal-equations square).  One factorisation per outer iterate
is reused while the radius shrinks.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularJacobianError(RuntimeError):
    """The Jacobian could not be factorised for the Gauss-Newton step."""


@dataclass(frozen=True)
class TrustRegionConfig:
    delta0: float = 1.0
    delta_max: float = 100.0
    eta_accept: float = 1e-3
    shrink: float = 0.25
    grow: float = 2.0
    shrink_threshold: float = 0.25
    grow_threshold: float = 0.75
    tol_residual: float = 1e-8
    tol_step: float = 1e-12
    max_iters: int = 100

    def __post_init__(self):
        if not 0.0 < self.eta_accept < 0.25:
            raise ValueError("step-acceptance threshold must lie in (0, 0.25)")
        if not self.tol_residual > 0.0:
            raise ValueError("residual tolerance must be positive")
        if self.max_iters < 1:
            raise ValueError("need at least one iteration")
        if not (0.0 < self.shrink < 1.0 < self.grow):
            raise ValueError("shrink/grow factors must bracket 1")
        if not 0.0 < self.delta0 <= self.delta_max:
            raise ValueError("initial radius must lie in (0, delta_max]")


@dataclass
class SolveReport:
    y_final: np.ndarray
    iterations: int
    merit_history: list[float]
    converged: bool
    final_residual_inf: float
    n_rejected: int = 0


class _DoglegModel:
    """Gauss-Newton and Cauchy data for one (J, E) pair.

    Only systems with the matrix J are solved; the Gauss-Newton direction
    and gradient are cached so shrinking the radius after a rejected step
    costs no new factorisation.
    """

    def __init__(self, jac, e):
        self.e = e
        self.jac = jac
        self.mu = 0.5 * float(e @ e)
        try:
            if sp.issparse(jac):
                solver = spla.splu(sp.csc_matrix(jac))
                self.p_gn = solver.solve(-e)
            else:
                lu = sla.lu_factor(jac)
                self.p_gn = sla.lu_solve(lu, -e)
        except (RuntimeError, sla.LinAlgError, ValueError) as exc:
            raise SingularJacobianError(f"Jacobian factorisation failed: {exc}") from exc
        if not np.all(np.isfinite(self.p_gn)):
            raise SingularJacobianError("Jacobian is numerically singular")
        self.gn_norm = float(np.linalg.norm(self.p_gn))
        self.grad = jac.T @ e
        self.j_grad = jac @ self.grad
        self.grad_norm2 = float(self.grad @ self.grad)
        self.j_grad_norm2 = float(self.j_grad @ self.j_grad)

    def step(self, delta: float):
        """Dogleg step for the given radius; returns (step, hit_boundary)."""
        if self.gn_norm <= delta:
            return self.p_gn, False
        if self.j_grad_norm2 == 0.0:
            raise SingularJacobianError("zero curvature along the gradient direction")
        t_cauchy = self.grad_norm2 / self.j_grad_norm2
        p_c = -t_cauchy * self.grad
        pc_norm = t_cauchy * np.sqrt(self.grad_norm2)
        if pc_norm >= delta:
            return -(delta / np.sqrt(self.grad_norm2)) * self.grad, True
        d = self.p_gn - p_c
        a = float(d @ d)
        b = 2.0 * float(p_c @ d)
        c = pc_norm**2 - delta**2
        s = (-b + np.sqrt(b * b - 4.0 * a * c)) / (2.0 * a)
        return p_c + s * d, True

    def predicted_reduction(self, p: np.ndarray) -> float:
        jp = self.jac @ p
        return -(float(self.grad @ p) + 0.5 * float(jp @ jp))


def dogleg_step(jac, e: np.ndarray, delta: float) -> np.ndarray:
    """Single dogleg step for the local model with Jacobian jac at residual e."""
    if not delta > 0.0:
        raise ValueError("trust radius must be positive")
    if not np.any(e):
        return np.zeros_like(np.asarray(e, dtype=float))
    step, _ = _DoglegModel(jac, np.asarray(e, dtype=float)).step(delta)
    return step


def solve(residual_fn, jacobian_fn, y0: np.ndarray, cfg: TrustRegionConfig | None = None) -> SolveReport:
    """Dogleg trust-region iteration for the square system residual_fn(y) = 0.

    Accepts a step when the actual-to-predicted merit reduction exceeds the
    acceptance threshold, shrinks the radius on poor agreement and grows it
    (up to the cap) after good boundary steps.  Non-convergence within the
    iteration cap is reported, not raised.
    """
    cfg = cfg if cfg is not None else TrustRegionConfig()
    y = np.array(y0, dtype=float)
    e = residual_fn(y)
    mu = 0.5 * float(e @ e)
    history = [mu]
    res_inf = float(np.max(np.abs(e))) if e.size else 0.0
    if res_inf < cfg.tol_residual:
        return SolveReport(y, 0, history, True, res_inf)
    delta = cfg.delta0
    model = _DoglegModel(jacobian_fn(y), e)
    iterations = 0
    rejected = 0
    converged = False
    while iterations < cfg.max_iters:
        iterations += 1
        p, hit_boundary = model.step(delta)
        step_norm = float(np.linalg.norm(p))
        if step_norm < cfg.tol_step:
            break
        e_new = residual_fn(y + p)
        mu_new = 0.5 * float(e_new @ e_new)
        predicted = model.predicted_reduction(p)
        rho = (mu - mu_new) / predicted if predicted > 0.0 else -np.inf
        if rho < cfg.shrink_threshold:
            delta *= cfg.shrink
        elif rho > cfg.grow_threshold and hit_boundary:
            delta = min(cfg.grow * delta, cfg.delta_max)
        if rho > cfg.eta_accept:
            y = y + p
            e, mu = e_new, mu_new
            history.append(mu)
            res_inf = float(np.max(np.abs(e)))
            if res_inf < cfg.tol_residual:
                converged = True
                break
            model = _DoglegModel(jacobian_fn(y), e)
        else:
            rejected += 1
    return SolveReport(y, iterations, history, converged, res_inf, rejected)


@dataclass
class ContinuationResult:
    schedule: list[float]
    stage_reports: list[SolveReport]
    converged: bool
    failed_stage: int | None
    y_final: np.ndarray

    @property
    def final_report(self) -> SolveReport:
        return self.stage_reports[-1]


def continuation(stage_factory, schedule, cfg: TrustRegionConfig | None = None,
                 y0: np.ndarray | None = None, n_unknowns: int | None = None) -> ContinuationResult:
    """Solve a strictly increasing Reynolds schedule with warm starts.

    ``stage_factory(re)`` returns the (residual_fn, jacobian_fn) pair of one
    stage.  Because the linear elimination depends only on the geometry, the
    reduced unknown transfers directly between stages; the first stage
    starts from zero.  A non-converged stage aborts the sweep and is
    reported through ``failed_stage``.
    """
    schedule = [float(re) for re in schedule]
    if any(re <= 0.0 for re in schedule):
        raise ValueError("all Reynolds numbers must be positive")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("continuation schedule must be strictly increasing")
    if y0 is None:
        if n_unknowns is None:
            raise ValueError("provide y0 or n_unknowns")
        y = np.zeros(n_unknowns)
    else:
        y = np.array(y0, dtype=float)
    reports = []
    for i, re in enumerate(schedule):
        residual_fn, jacobian_fn = stage_factory(re)
        report = solve(residual_fn, jacobian_fn, y, cfg)
        reports.append(report)
        if not report.converged:
            return ContinuationResult(schedule, reports, False, i, report.y_final)
        y = report.y_final
    return ContinuationResult(schedule, reports, True, None, y)
