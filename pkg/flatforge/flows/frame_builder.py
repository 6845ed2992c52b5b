"""
Adapted frames F with F^-1 dF = A(X(t)) at a fixed real z0, the sphere map
f (a column among n+1 .. 2n of F), the immersion determinant and the
flatness of the omega / eta blocks of the connection.
"""
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
import scipy.linalg as spl

from flatforge.algebra.loop_algebra import (
    DecompositionRule,
    LoopAlgebraError,
    LoopElement,
    enforce_structure,
    off_diagonal,
    project,
)
from flatforge.errors import GridError, IntegrationError, InvariantError
from flatforge.flows.aks_flow import (
    FlowResult,
    connection_element,
    corner_path,
    grid_lines,
    is_stationary,
    rk4_step,
    substeps,
    v_field,
)
from flatforge.flows.differences import curvature, derivative, interior_indices

logger = logging.getLogger(__name__)

ORTHOGONALITY_ABORT = 1e-6
DEGENERATE_DET = 1e-12


@dataclass(frozen=True, eq=False)
class Frame:
    t: np.ndarray
    z0: float
    F: np.ndarray
    # connection matrices F^-1 d_a F at t, one per grid direction
    connection: Tuple[np.ndarray, ...] = ()

    def column(self, j):
        """1-based column of F."""
        return self.F[:, j - 1]

    def orthogonality_defect(self):
        return float(np.max(np.abs(self.F.T @ self.F - np.eye(self.F.shape[0]))))


@dataclass(frozen=True, eq=False)
class ImmersionSample:
    t: np.ndarray
    f: np.ndarray
    imm_det: float
    omega_residual: float
    eta_residual: float


def connection_at(X: LoopElement, rule: DecompositionRule, z0: float) -> List[np.ndarray]:
    """Components pi_P V_i(X) evaluated at z = z0, i = 1 .. n."""
    if z0 == 0:
        raise LoopAlgebraError("z0 must be nonzero")
    if not X.real:
        raise LoopAlgebraError("connection needs a real-flagged element")
    return [project(v_field(X, i), rule).evaluate_real(z0) for i in range(1, X.n + 1)]


def _direction_matrix(X, rule, weights, z0):
    return connection_element(X, rule, weights).evaluate_real(z0)


def _step_frame(X, F, rule, weights, length, h, z0, stationary=None):
    """
    Carry (X, F) over a signed length along one direction.

    Exponential midpoint rule F <- F expm(dt A(X_mid)), X_mid from a
    Runge-Kutta half step; a stationary X takes a single exponential.
    """
    if length == 0:
        return X, F
    if stationary is None:
        stationary = is_stationary(X, rule, weights)
    if stationary:
        return X, F @ spl.expm(length * _direction_matrix(X, rule, weights, z0))
    count = substeps(length, h)
    dt = length / count
    for _ in range(count):
        X_mid = rk4_step(X, rule, weights, dt / 2)
        F = F @ spl.expm(dt * _direction_matrix(X_mid, rule, weights, z0))
        X, _ = enforce_structure(rk4_step(X, rule, weights, dt))
    return X, F


def _check_frame(F, t):
    if not np.all(np.isfinite(F)):
        raise IntegrationError("non-finite frame entries", t)
    defect = float(np.max(np.abs(F.T @ F - np.eye(F.shape[0]))))
    if defect > ORTHOGONALITY_ABORT:
        raise InvariantError(f"frame left SO(m) at t={tuple(float(v) for v in t)}", "frame_builder", defect)


def integrate_frame(flow: FlowResult, rule=None, z0=1.0, F0=None, h=None, workers=1) -> Dict[tuple, Frame]:
    """
    Frames over the flow grid, keyed like flow.samples, with F(0) = F0 (identity by default).

    The grid is traversed exactly like the flow: t = 0 to the first corner,
    then line by line. Lines along the same axis run on a thread pool when
    workers > 1; results do not depend on the worker count.
    """
    rule = flow.rule if rule is None else rule
    grid = flow.grid
    if grid is None:
        raise GridError("flow has no sample grid")
    if z0 == 0:
        raise LoopAlgebraError("z0 must be nonzero")
    h = flow.h if h is None else h
    m = flow.initial.m
    F = np.eye(m) if F0 is None else np.array(F0, dtype=float)
    if F.shape != (m, m) or np.max(np.abs(F.T @ F - np.eye(m))) > 1e-10 or np.linalg.det(F) < 0:
        raise InvariantError("initial frame is not in SO(m)", "frame_builder")
    weights = [flow.coords[:, a] for a in range(grid.dim)]

    X = flow.initial
    t = np.zeros(grid.dim)
    for axis, length in corner_path(grid):
        X, F = _step_frame(X, F, rule, weights[axis], length, h, z0)
        t[axis] += length
    origin = tuple([0] * grid.dim)
    matrices = {origin: F}

    # stationarity and connections depend on the sample object only
    stationary = {}
    for axis in range(grid.dim):
        for X in {id(X): X for X in flow.samples.values()}.values():
            stationary[(id(X), axis)] = is_stationary(X, rule, weights[axis])

    def run_line(axis, line):
        out = []
        F_line = matrices[line[0][0]]
        for source, target in line:
            X = flow.samples[source]
            _, F_line = _step_frame(X, F_line, rule, weights[axis], grid.spacing, h, z0, stationary[(id(X), axis)])
            _check_frame(F_line, grid.point(target))
            out.append((target, F_line))
        return out

    for axis, lines in enumerate(grid_lines(grid)):
        if workers > 1 and len(lines) > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                results = list(executor.map(lambda line: run_line(axis, line), lines))
        else:
            results = [run_line(axis, line) for line in lines]
        for out in results:
            matrices.update(out)
        logger.debug("frames: axis %d done (%d lines)", axis, len(lines))

    frames = {}
    connections = {}
    for index, F in matrices.items():
        X = flow.samples[index]
        if id(X) not in connections:
            connections[id(X)] = tuple(_direction_matrix(X, rule, w, z0) for w in weights)
        conn = connections[id(X)]
        frames[index] = Frame(grid.point(index), float(z0), F, conn)
    worst = max(frame.orthogonality_defect() for frame in frames.values())
    logger.info("integrated %d frames, max orthogonality defect %.2e", len(frames), worst)
    return frames


def immersion_det(X: LoopElement) -> float:
    """
    det M, row i of M being (-1)^(i-1) times entries 1..n of column n+1 of X_1^(2i-1).

    Equivalently the Krylov matrix of K K^T on the first column of K, K the
    upper-right block of X_1. Taking row i as entries 1..n of row n+1 of
    X_1^(2i-1) instead multiplies the result by (-1)^(n(n+1)/2); the sign used
    here gives (x1 x2 + y1 y2)(x1 y2 - y1 x2) for n = 2, K = [[x1, x2], [y1, y2]].
    Whether det M vanishes does not depend on the convention.
    """
    n = X.n
    X1 = np.real_if_close(X.coefficient(1))
    if not np.any(X1):
        return 0.0
    rows = []
    power = X1.copy()
    square = X1 @ X1
    for i in range(1, n + 1):
        rows.append((-1) ** (i - 1) * power[:n, n])
        power = power @ square
    return float(np.real(np.linalg.det(np.array(rows))))


def _block_stack(frames, grid, block):
    n = next(iter(frames.values())).F.shape[0] // 2
    sl = slice(0, n) if block == "omega" else slice(n, 2 * n)
    stack = np.zeros(grid.counts + (grid.dim, n, n))
    for index, frame in frames.items():
        for a, A in enumerate(frame.connection):
            stack[index + (a,)] = A[sl, sl]
    return stack


def _curvature_norms(stack, grid):
    out = {index: 0.0 for index in interior_indices(grid.counts)}
    for a, b in itertools.combinations(range(grid.dim), 2):
        d_a_Bb = derivative(stack[..., b, :, :], a, grid.spacing)
        d_b_Ba = derivative(stack[..., a, :, :], b, grid.spacing)
        curv = curvature(stack[..., a, :, :], stack[..., b, :, :], d_a_Bb, d_b_Ba)
        for index in out:
            out[index] = max(out[index], float(np.max(np.abs(curv[index]))))
    return out


def flatness_residuals(frames: Dict[tuple, Frame], grid) -> Dict[tuple, Tuple[float, float]]:
    """
    (omega_residual, eta_residual) per interior grid point: max-abs size of
    d_a B_b - d_b B_a + [B_a, B_b] for B the upper-left (omega) and
    lower-right (eta) blocks of the stored connection.
    """
    if any(c < 3 for c in grid.counts):
        raise GridError(f"flatness needs at least 3 points per direction, got {grid.counts}")
    omega = _curvature_norms(_block_stack(frames, grid, "omega"), grid)
    eta = _curvature_norms(_block_stack(frames, grid, "eta"), grid)
    return {index: (omega[index], eta[index]) for index in omega}


def frame_connection_defect(frames: Dict[tuple, Frame], grid) -> float:
    """Max over interior points of |F^-1 d_a F - A_a| with finite-difference d_a F."""
    stack = np.zeros(grid.counts + next(iter(frames.values())).F.shape)
    for index, frame in frames.items():
        stack[index] = frame.F
    worst = 0.0
    for a in range(grid.dim):
        dF = derivative(stack, a, grid.spacing)
        for index in interior_indices(grid.counts):
            frame = frames[index]
            worst = max(worst, float(np.max(np.abs(frame.F.T @ dF[index] - frame.connection[a]))))
    return worst


def killing_residual(flow: FlowResult, frames: Dict[tuple, Frame], rule=None, h=None, indices=None) -> float:
    """
    Max of |X(t)(z0) - F(t)^-1 F(0) X(0)(z0) F(0)^-1 F(t)| over the given grid indices.

    rule and h must be the ones the frames were integrated with (default:
    the flow's).
    """
    indices = list(frames) if indices is None else list(indices)
    F_start = origin_frame(flow, frames, rule, h)
    z0 = next(iter(frames.values())).z0
    G = F_start @ flow.initial.evaluate_real(z0) @ F_start.T
    worst = 0.0
    for index in indices:
        frame = frames[index]
        predicted = frame.F.T @ G @ frame.F
        worst = max(worst, float(np.max(np.abs(flow.samples[index].evaluate_real(z0) - predicted))))
    return worst


def origin_frame(flow: FlowResult, frames: Dict[tuple, Frame], rule=None, h=None) -> np.ndarray:
    """F at t = 0, recovered from the corner frame when the grid does not contain 0."""
    try:
        return frames[flow.grid.index_of(np.zeros(flow.grid.dim))].F
    except GridError:
        corner = frames[tuple([0] * flow.grid.dim)]
        return corner.F @ _corner_transport(flow, corner.z0, rule, h).T


def _corner_transport(flow, z0, rule=None, h=None):
    rule = flow.rule if rule is None else rule
    h = flow.h if h is None else h
    X = flow.initial
    F = np.eye(X.m)
    for axis, length in corner_path(flow.grid):
        X, F = _step_frame(X, F, rule, flow.coords[:, axis], length, h, z0)
    return F


def parallelizing_gauge(curved: Dict[tuple, Frame], parallel: Dict[tuple, Frame]) -> Dict[tuple, np.ndarray]:
    """
    G(t) = F(t)^-1 P(t) for curved-flat frames F and simple-rule frames P
    built from the same X(0) and F(0), so that F G = P.

    G lies in SO(n) x SO(n): right multiplication by it makes the tangent
    and normal frames of F parallel. G does not depend on z0, only on t.
    """
    if set(curved) != set(parallel):
        raise GridError("curved-flat and parallel frames live on different grids")
    gauges = {}
    for index, frame in curved.items():
        other = parallel[index]
        if frame.z0 != other.z0:
            raise LoopAlgebraError(f"frames at {index} use different z0 ({frame.z0} vs {other.z0})")
        gauges[index] = frame.F.T @ other.F
    return gauges


def gauge_block_defect(G: np.ndarray) -> float:
    """Largest entry of the off-diagonal n x n blocks of G."""
    n = G.shape[0] // 2
    return float(max(np.max(np.abs(G[:n, n:])), np.max(np.abs(G[n:, :n]))))


def immersion_samples(flow: FlowResult, frames: Dict[tuple, Frame], column=None) -> Dict[tuple, ImmersionSample]:
    """ImmersionSample per grid point; flatness residuals are NaN on the grid boundary."""
    n = flow.initial.n
    column = n + 1 if column is None else int(column)
    if not n + 1 <= column <= 2 * n:
        raise LoopAlgebraError(f"immersion column must be in [{n + 1}, {2 * n}], got {column}")
    try:
        flatness = flatness_residuals(frames, flow.grid)
    except GridError:
        flatness = {}
    samples = {}
    degenerate = 0
    for index, frame in frames.items():
        det = immersion_det(flow.samples[index])
        if abs(det) < DEGENERATE_DET:
            degenerate += 1
        omega, eta = flatness.get(index, (float("nan"), float("nan")))
        samples[index] = ImmersionSample(frame.t, frame.column(column).copy(), det, omega, eta)
    if degenerate:
        logger.warning("%d of %d points have a vanishing immersion determinant", degenerate, len(samples))
    return samples


def clifford_connection(a, b) -> Tuple[np.ndarray, np.ndarray]:
    """Constant connection matrices of the Clifford torus in its torus parameters."""
    K1 = off_diagonal(np.array([[a, b], [0.0, 0.0]]))
    K2 = off_diagonal(np.array([[0.0, 0.0], [b, -a]]))
    return K1, K2


def clifford_initial_frame(a, b) -> np.ndarray:
    """Adapted frame at s = 0; its third column is f(0, 0) = (a, 0, b, 0)."""
    return np.array([
        [0.0, 0.0, a, b],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, b, -a],
        [0.0, 1.0, 0.0, 0.0],
    ])


def clifford_frame(a, b, s) -> np.ndarray:
    """Closed form F(s) = F0 expm(s1 K1) expm(s2 K2)."""
    K1, K2 = clifford_connection(a, b)
    return clifford_initial_frame(a, b) @ spl.expm(s[0] * K1) @ spl.expm(s[1] * K2)


def clifford_immersion(a, b, s) -> np.ndarray:
    return np.array([a * np.cos(s[0]), a * np.sin(s[0]), b * np.cos(s[1]), b * np.sin(s[1])])


def solve_coordinate_change(X: LoopElement, rule, z0, targets) -> Tuple[np.ndarray, float]:
    """
    Least-squares C with sum_i C[i, j] A_i = targets[j], A_i the field connections at z0.

    Returns C and the max-abs fitting residual.
    """
    fields = connection_at(X, rule, z0)
    design = np.stack([A.ravel() for A in fields], axis=1)
    rhs = np.stack([np.asarray(T, dtype=float).ravel() for T in targets], axis=1)
    C, *_ = np.linalg.lstsq(design, rhs, rcond=None)
    residual = float(np.max(np.abs(design @ C - rhs)))
    return C, residual
