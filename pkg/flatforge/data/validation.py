"""Invariant suites over flow and frame results; failures carry the module that produced them."""
import logging
from typing import Dict

import numpy as np

from flatforge.algebra.loop_algebra import InvariantCheck, ValidationReport, validate
from flatforge.errors import InvariantError

logger = logging.getLogger(__name__)

ORTHOGONALITY_TOL = 1e-8
SPHERE_TOL = 1e-8
NORM_DRIFT_BUDGET = 1e-8


def _elapsed(t):
    return max(1.0, float(np.sum(np.abs(t))))


def validate_flow(flow, drift_budget=1e-7) -> ValidationReport:
    """Structure of every sample, finite type, and drift budgets per unit time."""
    X0 = flow.initial
    structure, window, norm_ratio, charpoly_ratio = 0.0, True, 0.0, 0.0
    for index, X in flow.samples.items():
        report = validate(X)
        structure = max([structure] + [c.magnitude for c in report.failures().values()])
        window = window and X.lo == X0.lo and X.hi == X0.hi
        residual = flow.residuals.get(index)
        if residual is not None:
            elapsed = _elapsed(flow.point(index))
            norm_ratio = max(norm_ratio, residual.norm_drift / elapsed)
            charpoly_ratio = max(charpoly_ratio, residual.charpoly_drift / elapsed)
    checks = {
        "structure": InvariantCheck(structure == 0.0, structure),
        "finite_type": InvariantCheck(window, 0.0 if window else 1.0),
        "norm_drift": InvariantCheck(norm_ratio < NORM_DRIFT_BUDGET, norm_ratio),
        "charpoly_drift": InvariantCheck(charpoly_ratio < drift_budget, charpoly_ratio),
    }
    return ValidationReport(checks)


def validate_frames(frames, samples=None) -> ValidationReport:
    """Orthogonality, unit determinant and the sphere constraint."""
    ortho, det, sphere = 0.0, 0.0, 0.0
    for index, frame in frames.items():
        ortho = max(ortho, frame.orthogonality_defect())
        det = max(det, abs(float(np.linalg.det(frame.F)) - 1.0))
        if samples is not None:
            sphere = max(sphere, abs(float(np.linalg.norm(samples[index].f)) - 1.0))
    checks = {
        "orthogonality": InvariantCheck(ortho < ORTHOGONALITY_TOL, ortho),
        "determinant": InvariantCheck(det < ORTHOGONALITY_TOL, det),
        "sphere": InvariantCheck(sphere < SPHERE_TOL, sphere),
    }
    return ValidationReport(checks)


def require(report: ValidationReport, module: str):
    """Raise InvariantError naming the module when any check of the suite fails."""
    failures: Dict[str, InvariantCheck] = report.failures()
    if failures:
        worst = max(c.magnitude for c in failures.values())
        raise InvariantError(f"invariant suite failed: {report}", module, worst)
    logger.info("%s invariants: %s", module, report)
