import warnings

import hypothesis
import numpy as np
import pytest

from cylflow.cli import RunConfig, build_problem, run_pipeline
from cylflow.system import ReducedSystem, assemble_linear_block, reduce_linear

hypothesis.settings.register_profile("numeric", deadline=None, max_examples=50)
hypothesis.settings.load_profile("numeric")


@pytest.fixture(scope="session")
def tiny_system():
    """Small circle problem with the full reduction kept (for QR invariants)."""
    cfg = RunConfig(shape="circle", h=0.25, patch_radius=0.45, re_schedule=(2.0,))
    problem = build_problem(cfg, 2.0)
    lb = assemble_linear_block(problem)
    reduction = reduce_linear(lb, keep_basis=True)
    return problem, lb, reduction, ReducedSystem(problem, reduction)


@pytest.fixture(scope="session")
def circle_re20():
    """Converged circle flow at Re = 20 on the medium grid."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = RunConfig(shape="circle", h=0.1, patch_radius=0.3, re_schedule=(1.0, 20.0))
        result = run_pipeline(cfg)
    assert result.converged
    return result


@pytest.fixture(scope="session")
def circle_re2():
    """Converged circle flow at Re = 2 on the medium grid."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = RunConfig(shape="circle", h=0.1, patch_radius=0.3, re_schedule=(2.0,))
        result = run_pipeline(cfg)
    assert result.converged
    return result


@pytest.fixture()
def rng():
    return np.random.default_rng(20260809)
