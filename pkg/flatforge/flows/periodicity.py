"""
Periods of the Killing field X and quasiperiodicity of the frame F.

X(P) = X(0) makes F type I quasiperiodic, F(t + P) = F(P) F(0)^-1 F(t);
X(P) = B^-1 X(0) B with constant B gives type II,
F(t + P) = F(P) B^-1 F(0)^-1 F(t) B.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg as spl

from flatforge.algebra.loop_algebra import DecompositionRule, LoopElement, project
from flatforge.errors import ConjugacyError, GridError
from flatforge.flows.aks_flow import FlowConfig, FlowResult, GridSpec, integrate_flow
from flatforge.flows.frame_builder import Frame, integrate_frame

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
# consequences are checked with this much slack over the detection tolerance
SLACK = 10.0
MAX_TEST_POINTS = 25
SINGULAR_COND = 1e12


class PeriodKind(Enum):
    EXACT_PERIOD = "exact_period"
    TYPE_I = "type_I"
    TYPE_II = "type_II"
    NONE = "none"


@dataclass
class PeriodReport:
    P: np.ndarray
    kind: PeriodKind
    x_residual: float
    B: np.ndarray
    f_residual: float = float("nan")
    condition: float = 1.0
    diagnostics: List[str] = field(default_factory=list)


def _shift_of(grid: GridSpec, P):
    P = np.asarray(P, dtype=float)
    if P.shape != (grid.dim,):
        raise GridError(f"period vector has dimension {P.size}, grid has {grid.dim}")
    steps = P / grid.spacing
    shift = np.round(steps).astype(int)
    if np.max(np.abs(steps - shift)) > 1e-9:
        raise GridError(f"period {tuple(P)} is not a multiple of the grid spacing")
    return tuple(int(k) for k in shift)


def _origin(grid: GridSpec):
    return grid.index_of(np.zeros(grid.dim))


def paired_indices(grid: GridSpec, shift, limit=MAX_TEST_POINTS):
    """Up to `limit` grid indices t, evenly picked, such that t + shift is on the grid."""
    candidates = [
        index for index in grid.indices()
        if all(0 <= k + s < c for k, s, c in zip(index, shift, grid.counts))
    ]
    if not candidates:
        raise GridError(f"grid has no point pairs at shift {shift}")
    if len(candidates) <= limit:
        return candidates
    picks = np.linspace(0, len(candidates) - 1, limit).round().astype(int)
    return [candidates[k] for k in picks]


def _translate(index, shift):
    return tuple(k + s for k, s in zip(index, shift))


def verify_type_II(frames: Dict[tuple, Frame], grid: GridSpec, B, P, test_points=None) -> float:
    """Max over test points of |F(t + P) - F(P) B^-1 F(0)^-1 F(t) B|."""
    B = np.asarray(B)
    if np.linalg.cond(B) > SINGULAR_COND:
        raise ConjugacyError("conjugator is singular", residual=float("inf"))
    B_inv = np.linalg.inv(B)
    shift = _shift_of(grid, P)
    origin = _origin(grid)
    F_P = frames[_translate(origin, shift)].F
    F_0_inv = frames[origin].F.T
    points = paired_indices(grid, shift) if test_points is None else test_points
    worst = 0.0
    for index in points:
        predicted = F_P @ B_inv @ F_0_inv @ frames[index].F @ B
        worst = max(worst, float(np.max(np.abs(frames[_translate(index, shift)].F - predicted))))
    return worst


def solve_conjugator(X_at_0: LoopElement, X_at_P: LoopElement, tol=1e-9) -> Tuple[np.ndarray, float]:
    """
    B with X_i(0) B = B X_i(P) for every degree i, scaled to det B = 1 when possible.

    The equations of all degrees are stacked into one homogeneous system in
    the m^2 entries of B; its null space must be one-dimensional. Returns B
    and |X(P) - B^-1 X(0) B|.
    """
    X_at_0._check_size(X_at_P)
    m = X_at_0.m
    lo, hi = min(X_at_0.lo, X_at_P.lo), max(X_at_0.hi, X_at_P.hi)
    eye = np.eye(m)
    blocks = [
        np.kron(X_at_0.coefficient(i), eye) - np.kron(eye, X_at_P.coefficient(i).T)
        for i in range(lo, hi + 1)
    ]
    system = np.vstack(blocks)
    scale = max(1.0, float(np.max(np.abs(system))))
    basis = spl.null_space(system / scale, rcond=tol)
    nullity = basis.shape[1]
    if nullity != 1:
        _, sing, vh = np.linalg.svd(system / scale)
        candidate = vh[-1].conj().reshape(m, m)
        residual = _conjugation_residual(X_at_0, X_at_P, candidate)
        if nullity == 0:
            raise ConjugacyError(f"not conjugate: smallest singular value {sing[-1]:.2e}", nullity, residual)
        raise ConjugacyError(f"conjugator is not unique: centralizer has dimension {nullity}", nullity, residual)

    B = basis[:, 0].reshape(m, m)
    # fix the complex phase on the largest entry so that real solutions come out real
    pivot = B.flat[np.argmax(np.abs(B))]
    B = B * (abs(pivot) / pivot)
    if np.max(np.abs(B.imag)) <= tol * np.max(np.abs(B)):
        B = B.real
    det = np.linalg.det(B)
    if abs(det) < 1e-300 or np.linalg.cond(B) > SINGULAR_COND:
        raise ConjugacyError("conjugator is singular", nullity, float("inf"))
    if np.isrealobj(B):
        B = B / abs(det) ** (1.0 / m)
        if det < 0 and m % 2:
            B = -B
    else:
        B = B / det ** (1.0 / m)
    residual = _conjugation_residual(X_at_0, X_at_P, B)
    logger.debug("conjugator found: residual %.2e, cond %.2e", residual, np.linalg.cond(B))
    return B, residual


def _conjugation_residual(X_at_0, X_at_P, B):
    if np.linalg.cond(B) > SINGULAR_COND:
        return float("inf")
    return (X_at_P - X_at_0.conjugate_by(B)).norm()


def detect_period(flow: FlowResult, frames: Dict[tuple, Frame], P, tol=DEFAULT_TOL) -> PeriodReport:
    """
    Classify a candidate period P (in grid coordinates).

    X(P) = X(0) within tol gives type I (exact_period when also F(P) = F(0)),
    checked on test points with SLACK * tol; a failed check downgrades to
    none. Otherwise a constant conjugator is looked for (type II).
    """
    grid = flow.grid
    if grid is None:
        raise GridError("flow has no sample grid")
    P = np.asarray(P, dtype=float)
    shift = _shift_of(grid, P)
    origin = _origin(grid)
    target = _translate(origin, shift)
    if target not in flow.samples:
        raise GridError(f"grid does not contain P = {tuple(P)}")
    X0, XP = flow.samples[origin], flow.samples[target]
    m = X0.m
    x_residual = (XP - X0).norm()
    report = PeriodReport(P, PeriodKind.NONE, x_residual, np.eye(m))
    points = paired_indices(grid, shift)

    if x_residual < tol:
        if flow.rule is not DecompositionRule.SIMPLE:
            report.diagnostics.append("type I classification needs the simple rule")
            return report
        x_defect = max((flow.samples[_translate(i, shift)] - flow.samples[i]).norm() for i in points)
        report.f_residual = verify_type_II(frames, grid, np.eye(m), P, points)
        if x_defect >= SLACK * tol or report.f_residual >= SLACK * tol:
            report.diagnostics.append(
                f"X(P) = X(0) but translates differ (X {x_defect:.2e}, F {report.f_residual:.2e}); integration accuracy alarm"
            )
            logger.warning("period check failed for P=%s: %s", tuple(P), report.diagnostics[-1])
            return report
        same_frame = float(np.max(np.abs(frames[target].F - frames[origin].F)))
        report.kind = PeriodKind.EXACT_PERIOD if same_frame < tol else PeriodKind.TYPE_I
        return report

    try:
        B, residual = solve_conjugator(X0, XP)
    except ConjugacyError as err:
        report.diagnostics.append(str(err))
        return report
    report.B = B
    report.x_residual = residual
    report.condition = float(np.linalg.cond(B))
    if residual >= tol:
        report.diagnostics.append(f"best conjugator leaves residual {residual:.2e}")
        return report
    if flow.rule is not DecompositionRule.SIMPLE:
        report.diagnostics.append("type II classification needs the simple rule")
        return report
    report.f_residual = verify_type_II(frames, grid, B, P, points)
    if report.f_residual < SLACK * tol:
        report.kind = PeriodKind.TYPE_II
    else:
        report.diagnostics.append(f"frame quasiperiodicity defect {report.f_residual:.2e}")
    return report


def translation_residual(flow: FlowResult, frames: Dict[tuple, Frame], Q, z0=None, h=None, test_points=None) -> float:
    """
    Max of |F(t + Q) - F(Q) G(t)| where G is the frame (G(0) = I) of the flow started at X(Q).
    """
    grid = flow.grid
    shift = _shift_of(grid, Q)
    origin = _origin(grid)
    base = _translate(origin, shift)
    if base not in flow.samples:
        raise GridError(f"grid does not contain Q = {tuple(Q)}")
    z0 = next(iter(frames.values())).z0 if z0 is None else z0
    h = flow.h if h is None else h
    Q = np.asarray(Q, dtype=float)
    shifted = GridSpec(
        tuple(np.array(grid.lower) - Q), tuple(np.array(grid.upper) - Q), grid.spacing
    )
    cfg = FlowConfig(n=flow.initial.n, rule=flow.rule, h=h, grid=shifted, coords=flow.coords)
    hat_flow = integrate_flow(flow.samples[base], cfg)
    hat_frames = integrate_frame(hat_flow, flow.rule, z0)
    F_Q = frames[base].F
    points = list(frames) if test_points is None else test_points
    # shifted grid shares the index set with the original one
    return max(float(np.max(np.abs(frames[i].F - F_Q @ hat_frames[i].F))) for i in points)


def coincidence_period(frames: Dict[tuple, Frame], grid: GridSpec, a, b, tol=1e-8) -> Optional[Tuple[np.ndarray, float]]:
    """
    When F(a) = F(b) within tol, return P = b - a and max |F(t + P) - F(t)| on
    test points; None when the frames differ.
    """
    ia, ib = grid.index_of(a), grid.index_of(b)
    if float(np.max(np.abs(frames[ia].F - frames[ib].F))) >= tol:
        return None
    shift = tuple(j - i for i, j in zip(ia, ib))
    P = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    defect = max(
        float(np.max(np.abs(frames[_translate(i, shift)].F - frames[i].F))) for i in paired_indices(grid, shift)
    )
    return P, defect


def projection_conjugation_residual(X: LoopElement, B, rule=DecompositionRule.SIMPLE) -> float:
    """|pi_P(B^-1 X B) - B^-1 pi_P(X) B| for a constant B."""
    B = np.asarray(B)
    B_inv = np.linalg.inv(B)
    return (project(X.conjugate_by(B, B_inv), rule) - project(X, rule).conjugate_by(B, B_inv)).norm()


def format_report(report: PeriodReport) -> str:
    """Flat key/value block."""
    lines = [
        f"kind = {report.kind.value}",
        "P = " + " ".join(repr(float(v)) for v in report.P),
        f"x_residual = {report.x_residual!r}",
        f"f_residual = {report.f_residual!r}",
        f"condition = {report.condition!r}",
    ]
    B = np.asarray(report.B)
    for r, row in enumerate(B):
        lines.append(f"B[{r}] = " + " ".join(repr(complex(v)) if np.iscomplexobj(B) else repr(float(v)) for v in row))
    for note in report.diagnostics:
        lines.append(f"note = {note}")
    return "\n".join(lines) + "\n"
