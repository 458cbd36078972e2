"""Batch driver: configuration, pipeline orchestration and file outputs.

Exit codes: 0 on full convergence, 1 on configuration or assembly errors,
2 when a continuation stage fails to converge (partial outputs are still
written, with a ``"converged": false`` marker).
"""

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .flow import field_table, flow_metrics, residual_report, surface_profiles
from .geometry import (
    Circle,
    ClusterParams,
    ObstacleShape,
    RoundedSquare,
    Square,
    TransformParams,
    generate_pointset,
)
from .pum import CoverageError, build_cover
from .rbf import Discretization, FactorizationError, KernelParams
from .system import (
    DirichletEliminatedSystem,
    FlowProblem,
    RankDeficiencyError,
    ReducedSystem,
    assemble_linear_block,
    reduce_linear,
)
from .trustregion import ContinuationResult, SingularJacobianError, TrustRegionConfig, continuation

OUT_DIR_ENV = "CYLFLOW_OUT_DIR"
EXPORT_KINDS = ("metrics", "surface", "field", "residuals")
JACOBIAN_MODES = ("reduced-dense", "sparse-alternative")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass(frozen=True)
class RunConfig:
    shape: str = "circle"
    h: float = 0.1
    ell: float = 2.0
    epsilon: float = 2.0
    patch_radius: float = 0.25
    cluster_lambda: float = 0.1
    re_schedule: tuple[float, ...] = (1.0,)
    jacobian_mode: str = "reduced-dense"
    out_dir: str = "."
    export: tuple[str, ...] = EXPORT_KINDS
    trust_region: TrustRegionConfig = field(default_factory=TrustRegionConfig)

    def validate(self):
        parse_shape(self.shape)
        if not self.h > 0:
            raise ConfigError(f"h: must be positive, got {self.h}")
        if not self.ell >= 1:
            raise ConfigError(f"ell: must be >= 1, got {self.ell}")
        if not self.h < self.ell:
            raise ConfigError(f"h: must be smaller than ell, got {self.h}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon: must be positive, got {self.epsilon}")
        if not self.patch_radius > 0:
            raise ConfigError(f"patch_radius: must be positive, got {self.patch_radius}")
        if not self.cluster_lambda > 0:
            raise ConfigError(f"cluster_lambda: must be positive, got {self.cluster_lambda}")
        if not self.re_schedule:
            raise ConfigError("re_schedule: must not be empty")
        if any(re <= 0 for re in self.re_schedule):
            raise ConfigError(f"re_schedule: all entries must be positive, got {self.re_schedule}")
        if any(b <= a for a, b in zip(self.re_schedule, self.re_schedule[1:])):
            raise ConfigError(f"re_schedule: must be strictly increasing, got {self.re_schedule}")
        if self.jacobian_mode not in JACOBIAN_MODES:
            raise ConfigError(f"jacobian_mode: must be one of {JACOBIAN_MODES}")
        for kind in self.export:
            if kind not in EXPORT_KINDS:
                raise ConfigError(f"export: unknown selector {kind!r}")
        return self

    def as_dict(self) -> dict:
        d = {
            "shape": self.shape,
            "h": self.h,
            "ell": self.ell,
            "epsilon": self.epsilon,
            "patch_radius": self.patch_radius,
            "cluster_lambda": self.cluster_lambda,
            "re_schedule": list(self.re_schedule),
            "jacobian_mode": self.jacobian_mode,
            "out_dir": self.out_dir,
            "export": list(self.export),
        }
        for f in fields(TrustRegionConfig):
            d[f"tr_{f.name}"] = getattr(self.trust_region, f.name)
        return d


def parse_shape(spec: str) -> ObstacleShape:
    if spec == "circle":
        return Circle()
    if spec == "square":
        return Square()
    if spec.startswith("rounded:"):
        try:
            alpha = int(spec.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"shape: bad rounding degree in {spec!r}") from None
        if alpha < 1:
            raise ConfigError(f"shape: rounding degree must be >= 1, got {alpha}")
        return RoundedSquare(alpha)
    raise ConfigError(f"shape: expected circle, rounded:<alpha> or square, got {spec!r}")


_SCALAR_KEYS = {
    "h": float, "ell": float, "epsilon": float, "patch_radius": float,
    "cluster_lambda": float, "shape": str, "jacobian_mode": str, "out_dir": str,
}
_TR_KEYS = {f.name: (int if f.name == "max_iters" else float) for f in fields(TrustRegionConfig)}


def _parse_schedule(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise ConfigError(f"re_schedule: malformed value {text!r}") from None


def _read_config_file(path: str) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, val = (tok.strip() for tok in line.split("=", 1))
            values[key] = val
    return values


def _apply_key(cfg_kwargs: dict, tr_kwargs: dict, key: str, raw):
    if key in _SCALAR_KEYS:
        conv = _SCALAR_KEYS[key]
        try:
            cfg_kwargs[key] = conv(raw)
        except ValueError:
            raise ConfigError(f"{key}: malformed value {raw!r}") from None
    elif key == "re_schedule":
        cfg_kwargs[key] = _parse_schedule(raw) if isinstance(raw, str) else tuple(raw)
    elif key == "export":
        cfg_kwargs[key] = tuple(tok.strip() for tok in raw.split(",")) if isinstance(raw, str) else tuple(raw)
    elif key.startswith("tr_") and key[3:] in _TR_KEYS:
        name = key[3:]
        try:
            tr_kwargs[name] = _TR_KEYS[name](raw)
        except ValueError:
            raise ConfigError(f"{key}: malformed value {raw!r}") from None
    else:
        raise ConfigError(f"unknown configuration key {key!r}")


def _build_arg_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cylflow",
        description="Steady viscous flow past a cylinder cross-section by RBF-PU collocation",
    )
    p.add_argument("--config", help="flat key=value configuration file")
    p.add_argument("--shape", help="circle | rounded:<alpha> | square")
    p.add_argument("--h", type=float, help="target node spacing in the transformed domain")
    p.add_argument("--ell", type=float, help="stretching factor of the compression map")
    p.add_argument("--epsilon", type=float, help="kernel shape parameter")
    p.add_argument("--patch-radius", type=float, dest="patch_radius")
    p.add_argument("--cluster-lambda", type=float, dest="cluster_lambda")
    p.add_argument("--re-schedule", dest="re_schedule",
                   help="comma-separated strictly increasing Reynolds numbers")
    p.add_argument("--re", dest="re_schedule_single", type=float,
                   help="shorthand for a single-stage schedule")
    p.add_argument("--jacobian-mode", dest="jacobian_mode", choices=JACOBIAN_MODES)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--export", help="comma-separated subset of " + ",".join(EXPORT_KINDS))
    for name, conv in _TR_KEYS.items():
        p.add_argument(f"--tr-{name.replace('_', '-')}", dest=f"tr_{name}", type=conv)
    return p


def parse_config(argv=None) -> RunConfig:
    """Build a validated RunConfig from a config file and/or flags.

    Flags override file values; the output directory can additionally be
    overridden through the environment.
    """
    args = _build_arg_parser().parse_args(argv)
    cfg_kwargs: dict = {}
    tr_kwargs: dict = {}
    if args.config:
        try:
            file_values = _read_config_file(args.config)
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}") from None
        for key, raw in file_values.items():
            _apply_key(cfg_kwargs, tr_kwargs, key, raw)
    for key in list(_SCALAR_KEYS) + ["re_schedule", "export"]:
        val = getattr(args, key, None)
        if val is not None:
            _apply_key(cfg_kwargs, tr_kwargs, key, val)
    if args.re_schedule_single is not None:
        if args.re_schedule is not None:
            raise ConfigError("re_schedule: give either --re or --re-schedule, not both")
        cfg_kwargs["re_schedule"] = (args.re_schedule_single,)
    for name in _TR_KEYS:
        val = getattr(args, f"tr_{name}")
        if val is not None:
            tr_kwargs[name] = val
    env_out = os.environ.get(OUT_DIR_ENV)
    if env_out:
        cfg_kwargs["out_dir"] = env_out
    try:
        tr = TrustRegionConfig(**tr_kwargs)
    except ValueError as exc:
        raise ConfigError(f"trust-region settings: {exc}") from None
    return RunConfig(trust_region=tr, **cfg_kwargs).validate()


# ---------------------------------------------------------------------------
# pipeline

@dataclass
class StageResult:
    re: float
    report: object
    x: np.ndarray


@dataclass
class PipelineResult:
    config: RunConfig
    problem: FlowProblem  # at the last attempted Reynolds number
    stages: list[StageResult]
    converged: bool
    failed_stage: int | None

    @property
    def last_converged(self) -> StageResult | None:
        done = [s for s in self.stages if s.report.converged]
        return done[-1] if done else None


def build_problem(cfg: RunConfig, re: float) -> FlowProblem:
    """Discretise the domain and assemble the differentiation matrices."""
    shape = parse_shape(cfg.shape)
    transform = TransformParams(ell=cfg.ell)
    cluster = ClusterParams(lam=cfg.cluster_lambda)
    ps = generate_pointset(shape, cfg.h, transform, cluster)
    cover = build_cover(ps, shape, cfg.patch_radius, cfg.h, cluster)
    disc = Discretization(ps, cover, KernelParams(epsilon=cfg.epsilon))
    ops = disc.diff_operators()
    return FlowProblem(re=re, ps=ps, ops=ops, transform=transform, disc=disc, shape=shape)


def run_pipeline(cfg: RunConfig) -> PipelineResult:
    """Generate, assemble, reduce and continue through the Reynolds schedule."""
    problem = build_problem(cfg, cfg.re_schedule[0])
    if cfg.jacobian_mode == "sparse-alternative":
        system = DirichletEliminatedSystem(problem)
        to_x = system.x_from_xp
        n_unknowns = system.n_unknowns
        stage_factory = lambda re: (
            lambda v: system.residual(v, re),
            lambda v: system.jacobian(v, re),
        )
    else:
        lb = assemble_linear_block(problem)
        reduction = reduce_linear(lb, keep_basis=False)
        system = ReducedSystem(problem, reduction)
        to_x = system.x_from_y
        n_unknowns = system.n_reduced
        stage_factory = lambda re: (
            lambda v: system.residual(v, re),
            lambda v: system.jacobian(v, re),
        )
    result: ContinuationResult = continuation(
        stage_factory, list(cfg.re_schedule), cfg.trust_region, n_unknowns=n_unknowns
    )
    stages = [
        StageResult(re=re, report=rep, x=to_x(rep.y_final))
        for re, rep in zip(cfg.re_schedule, result.stage_reports)
    ]
    last_re = cfg.re_schedule[len(result.stage_reports) - 1]
    problem = replace(problem, re=last_re)
    return PipelineResult(
        config=cfg,
        problem=problem,
        stages=stages,
        converged=result.converged,
        failed_stage=result.failed_stage,
    )


# ---------------------------------------------------------------------------
# outputs

def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _config_header(cfg: RunConfig) -> str:
    pairs = " ".join(f"{k}={v}" for k, v in sorted(cfg.as_dict().items()))
    return f"# cylflow {pairs}\n"


def _write_metrics(path: str, cfg: RunConfig, result: PipelineResult, metrics, res_report):
    stages = []
    for s in result.stages:
        stages.append({
            "re": s.re,
            "converged": bool(s.report.converged),
            "iterations": int(s.report.iterations),
            "rejected_steps": int(s.report.n_rejected),
            "final_residual_inf": float(s.report.final_residual_inf),
            "merit_initial": float(s.report.merit_history[0]),
            "merit_final": float(s.report.merit_history[-1]),
        })
    doc = {
        "config": cfg.as_dict(),
        "converged": bool(result.converged),
        "failed_stage": result.failed_stage,
        "stages": stages,
        "metrics": None,
        "residuals": None,
    }
    if metrics is not None:
        doc["metrics"] = {
            "re": result.last_converged.re,
            "c_p": metrics.c_p,
            "c_omega": metrics.c_omega,
            "c_d": metrics.c_d,
            "wake_length": metrics.wake_length,
            "eddy_a": None if metrics.eddy_centre is None else metrics.eddy_centre[0],
            "eddy_b": None if metrics.eddy_centre is None else metrics.eddy_centre[1],
        }
    if res_report is not None:
        doc["residuals"] = {
            "rms": list(res_report.rms),
            "max": list(res_report.max),
            "n_points": res_report.n_points,
        }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_surface(path: str, cfg: RunConfig, profiles):
    with open(path, "w") as fh:
        fh.write(_config_header(cfg))
        fh.write("phi_plot,p,omega\n")
        for row in zip(profiles.phi_plot, profiles.pressure, profiles.vorticity):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_field(path: str, cfg: RunConfig, table):
    xs, ys, u, v, p, om, inside = table
    with open(path, "w") as fh:
        fh.write(_config_header(cfg))
        fh.write("x,y,u,v,p,omega,inside\n")
        for i in range(xs.size):
            vals = [_fmt(xs[i]), _fmt(ys[i]), _fmt(u[i]), _fmt(v[i]),
                    _fmt(p[i]), _fmt(om[i]), str(int(inside[i]))]
            fh.write(",".join(vals) + "\n")


def _write_residuals(path: str, cfg: RunConfig, report):
    with open(path, "w") as fh:
        fh.write(_config_header(cfg))
        fh.write("equation,rms,max\n")
        for i, name in enumerate(("momentum_radial", "momentum_angular", "divergence")):
            fh.write(f"{name},{_fmt(report.rms[i])},{_fmt(report.max[i])}\n")


def run(cfg: RunConfig) -> int:
    """Execute the full pipeline and write the requested outputs."""
    try:
        cfg.validate()
        result = run_pipeline(cfg)
    except (ConfigError, CoverageError, RankDeficiencyError, FactorizationError,
            SingularJacobianError, ValueError) as exc:
        print(f"cylflow: error: {exc}", file=sys.stderr)
        return 1
    os.makedirs(cfg.out_dir, exist_ok=True)
    last = result.last_converged
    metrics = None
    res_report = None
    if last is not None:
        problem = replace(result.problem, re=last.re)
        metrics = flow_metrics(last.x, problem)
        if "residuals" in cfg.export or "metrics" in cfg.export:
            res_report = residual_report(last.x, problem)
        if "surface" in cfg.export:
            _write_surface(os.path.join(cfg.out_dir, "surface.csv"), cfg,
                           surface_profiles(last.x, problem))
        if "field" in cfg.export:
            _write_field(os.path.join(cfg.out_dir, "field.csv"), cfg,
                         field_table(last.x, problem))
        if "residuals" in cfg.export:
            _write_residuals(os.path.join(cfg.out_dir, "residuals.csv"), cfg, res_report)
    if "metrics" in cfg.export:
        _write_metrics(os.path.join(cfg.out_dir, "metrics.json"), cfg, result, metrics, res_report)
    if not result.converged:
        failed_re = cfg.re_schedule[result.failed_stage]
        print(f"cylflow: stage {result.failed_stage} (Re={failed_re}) did not converge",
              file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"cylflow: error: {exc}", file=sys.stderr)
        return 1
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
