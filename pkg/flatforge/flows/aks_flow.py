"""
Commuting Lax flows dX = [X, sum_i pi_P V_i(X) dt_i] on the twisted loop
algebra, with V_i(X) = z^(2-2i) X^(2i-1), integrated over multi-time R^n.
"""
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from flatforge.algebra.loop_algebra import (
    DecompositionRule,
    LoopAlgebraError,
    LoopElement,
    bracket,
    enforce_structure,
    project,
    residue_pairing,
    validate,
)
from flatforge.algebra.spectral import char_poly, charpoly_drift
from flatforge.errors import GridError, IntegrationError, InvariantError
from flatforge.flows.differences import derivative, interior_indices

logger = logging.getLogger(__name__)

# per-step structure correction and trimmed-degree budgets
CORRECTION_BUDGET = 1e-9
TRIM_BUDGET = 1e-9
# relative size below which a Lax field counts as vanishing
STATIONARY_TOL = 1e-13


@dataclass(frozen=True)
class GridSpec:
    """Rectangular grid lower + k * spacing, k = 0 .. count - 1 along each axis."""

    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    spacing: float

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if len(lower) != len(upper) or not lower:
            raise GridError("grid bounds must have the same positive dimension")
        if not self.spacing > 0:
            raise GridError(f"grid spacing must be positive, got {self.spacing}")
        if any(u < l for l, u in zip(lower, upper)):
            raise GridError("grid upper bound below lower bound")

    @property
    def dim(self):
        return len(self.lower)

    @property
    def counts(self):
        return tuple(int(round((u - l) / self.spacing)) + 1 for l, u in zip(self.lower, self.upper))

    @property
    def axes(self):
        return [l + self.spacing * np.arange(c) for l, c in zip(self.lower, self.counts)]

    def point(self, index):
        return np.array([l + self.spacing * k for l, k in zip(self.lower, index)])

    def indices(self):
        return itertools.product(*(range(c) for c in self.counts))

    def index_of(self, t, tol=1e-9):
        """Grid index of the point t; GridError when t is not on the grid."""
        t = np.asarray(t, dtype=float)
        if t.shape != (self.dim,):
            raise GridError(f"point {tuple(t)} has the wrong dimension")
        index = []
        for value, l, c in zip(t, self.lower, self.counts):
            k = (value - l) / self.spacing
            r = int(round(k))
            if abs(k - r) > tol or not 0 <= r < c:
                raise GridError(f"point {tuple(float(v) for v in t)} is not on the grid")
            index.append(r)
        return tuple(index)


@dataclass(frozen=True, eq=False)
class FlowConfig:
    n: int
    rule: DecompositionRule = DecompositionRule.SIMPLE
    h: float = 1e-3
    path: Tuple[Tuple[int, float], ...] = ()
    grid: Optional[GridSpec] = None
    # t = coords @ s; grid and path are given in s
    coords: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.h > 0:
            raise IntegrationError(f"step size must be positive, got {self.h}")
        path = tuple((int(j), float(length)) for j, length in self.path)
        for j, _ in path:
            if not 1 <= j <= self.n:
                raise LoopAlgebraError(f"path direction {j} outside [1, {self.n}]")
        object.__setattr__(self, "path", path)
        coords = np.eye(self.n) if self.coords is None else np.array(self.coords, dtype=float)
        if coords.shape != (self.n, self.n):
            raise LoopAlgebraError(f"coordinate change must be {self.n}x{self.n}")
        coords.flags.writeable = False
        object.__setattr__(self, "coords", coords)
        if self.grid is not None and self.grid.dim != self.n:
            raise GridError(f"grid dimension {self.grid.dim} does not match n = {self.n}")


@dataclass(frozen=True)
class FlowResidual:
    norm_drift: float
    charpoly_drift: float


@dataclass
class FlowResult:
    """Samples X(t) keyed by grid index; `point(index)` gives the coordinates."""

    initial: LoopElement
    rule: DecompositionRule
    grid: Optional[GridSpec]
    coords: np.ndarray
    samples: Dict[tuple, LoopElement] = field(default_factory=dict)
    residuals: Dict[tuple, FlowResidual] = field(default_factory=dict)
    endpoint: Optional[LoopElement] = None
    max_correction: float = 0.0
    h: float = 1e-3

    @property
    def axes(self):
        return self.grid.axes if self.grid is not None else []

    def point(self, index):
        return self.grid.point(index)

    def at(self, t):
        if self.grid is None:
            raise GridError("flow has no sample grid")
        index = self.grid.index_of(t)
        if index not in self.samples:
            raise GridError(f"no sample at {tuple(t)}")
        return self.samples[index]


def v_field(X: LoopElement, i: int) -> LoopElement:
    """V_i(X) = z^(2-2i) X^(2i-1)."""
    if not 1 <= i <= X.n:
        raise LoopAlgebraError(f"field index {i} outside [1, {X.n}]")
    return X.power(2 * i - 1).shift(2 - 2 * i)


def _lax_field(X, rule, i):
    """[X, pi_P V_i(X)] cut to the window of X, plus the magnitude that was cut."""
    full = bracket(X, project(v_field(X, i), rule))
    return full.with_window(X.lo, X.hi), full.outside_magnitude(X.lo, X.hi)


def lax_rhs(X: LoopElement, rule: DecompositionRule) -> List[LoopElement]:
    if X.hi > 1:
        raise LoopAlgebraError(f"flow needs X.hi <= 1, got {X.hi}")
    scale = max(1.0, X.norm())
    components = []
    for i in range(1, X.n + 1):
        component, trimmed = _lax_field(X, rule, i)
        if trimmed > TRIM_BUDGET * scale ** (2 * i):
            raise InvariantError(f"Lax field {i} leaves the degree window", "aks_flow", trimmed)
        components.append(component)
    return components


def direction_field(X: LoopElement, rule, weights) -> LoopElement:
    """sum_i weights[i] * [X, pi_P V_i(X)]; weights is a column of the coordinate change."""
    total = LoopElement.zero(X.m, X.real).with_window(X.lo, X.hi)
    for i, w in enumerate(weights, start=1):
        if w == 0:
            continue
        component, trimmed = _lax_field(X, rule, i)
        if trimmed > TRIM_BUDGET * max(1.0, X.norm()) ** (2 * i):
            raise InvariantError(f"Lax field {i} leaves the degree window", "aks_flow", trimmed)
        total = total + float(w) * component
    return total


def is_stationary(X: LoopElement, rule, weights):
    return direction_field(X, rule, weights).norm() <= STATIONARY_TOL * max(1.0, X.norm())


def rk4_step(X: LoopElement, rule, weights, dt) -> LoopElement:
    """One classical Runge-Kutta step, without the structure projection."""
    k1 = direction_field(X, rule, weights)
    k2 = direction_field(X + (dt / 2) * k1, rule, weights)
    k3 = direction_field(X + (dt / 2) * k2, rule, weights)
    k4 = direction_field(X + dt * k3, rule, weights)
    return X + (dt / 6) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def substeps(length, h):
    return max(1, math.ceil(abs(length) / h - 1e-9))


def advance(X: LoopElement, rule, weights, length, h, t=None, stationary=None):
    """
    Integrate along one direction over a signed length with steps of at most h.

    Returns the endpoint and the largest structure correction applied. A
    stationary X (given, or detected here) is returned as is.
    """
    if stationary is None:
        stationary = length != 0 and is_stationary(X, rule, weights)
    if length == 0 or stationary:
        return X, 0.0
    count = substeps(length, h)
    dt = length / count
    worst = 0.0
    for _ in range(count):
        X, correction = enforce_structure(rk4_step(X, rule, weights, dt))
        if not np.all(np.isfinite(X.coeffs)):
            raise IntegrationError("non-finite coefficients", t)
        if correction > CORRECTION_BUDGET * max(1.0, X.norm()):
            raise InvariantError("post-step structure correction over budget", "aks_flow", correction)
        worst = max(worst, correction)
    logger.debug("advanced %d steps of %.3g, max correction %.2e", count, dt, worst)
    return X, worst


def _check_initial(X0: LoopElement):
    report = validate(X0)
    if not report.ok:
        raise InvariantError(f"initial condition fails validation: {report}", "aks_flow")
    if X0.hi > 1:
        raise LoopAlgebraError(f"flow needs X.hi <= 1, got {X0.hi}")


def corner_path(grid: GridSpec):
    """Segments (axis, length) taking t = 0 to the first grid corner, axis by axis."""
    return [(axis, value) for axis, value in enumerate(grid.lower) if value != 0]


def grid_lines(grid: GridSpec):
    """
    Lines of segments filling the grid from its corner, grouped by axis.

    Entry `axis` is a list of lines; a line is a list of (source, target)
    index pairs along that axis, starting at a point reached by earlier axes.
    Lines of the same axis are independent of each other.
    """
    counts = grid.counts
    lines = []
    frontier = [tuple([0] * grid.dim)]
    for axis in range(grid.dim):
        axis_lines = []
        reached = []
        for base in frontier:
            reached.append(base)
            line = []
            previous = base
            for k in range(1, counts[axis]):
                target = previous[:axis] + (k,) + previous[axis + 1:]
                line.append((previous, target))
                reached.append(target)
                previous = target
            if line:
                axis_lines.append(line)
        lines.append(axis_lines)
        frontier = reached
    return lines


def grid_walk(grid: GridSpec):
    """Segments (source index, target index, axis) in filling order."""
    return [
        (source, target, axis)
        for axis, axis_lines in enumerate(grid_lines(grid))
        for line in axis_lines
        for source, target in line
    ]


def integrate_path(X0: LoopElement, cfg: FlowConfig) -> LoopElement:
    _check_initial(X0)
    X = X0
    t = np.zeros(cfg.n)
    for j, length in cfg.path:
        X, _ = advance(X, cfg.rule, cfg.coords[:, j - 1], length, cfg.h, t)
        t[j - 1] += length
    return X


def _pairing(X):
    value = residue_pairing(X, X)
    return value.real if X.real else value


def integrate_flow(X0: LoopElement, cfg: FlowConfig) -> FlowResult:
    """
    Integrate the flow along cfg.path and over cfg.grid.

    The grid is reached from t = 0 by moving along each axis in turn to the
    first corner, then filled row by row (grid_walk). Each sample records the
    drift of the invariant pairing (residue_pairing) and of the characteristic
    polynomial against t = 0.
    """
    _check_initial(X0)
    result = FlowResult(initial=X0, rule=cfg.rule, grid=cfg.grid, coords=cfg.coords, h=cfg.h)
    if cfg.path:
        result.endpoint = integrate_path(X0, cfg)
    if cfg.grid is None:
        return result

    grid = cfg.grid
    logger.info("integrating %s flow on %s grid", cfg.rule.value, "x".join(map(str, grid.counts)))
    X = X0
    t = np.zeros(cfg.n)
    for axis, length in corner_path(grid):
        X, correction = advance(X, cfg.rule, cfg.coords[:, axis], length, cfg.h, t)
        result.max_correction = max(result.max_correction, correction)
        t[axis] += length
    samples = {tuple([0] * grid.dim): X}
    # samples that did not move are shared objects; test each one once per axis
    stationary = {}
    for source, target, axis in grid_walk(grid):
        X = samples[source]
        key = (id(X), axis)
        if key not in stationary:
            stationary[key] = is_stationary(X, cfg.rule, cfg.coords[:, axis])
        X, correction = advance(X, cfg.rule, cfg.coords[:, axis], grid.spacing, cfg.h, grid.point(source), stationary[key])
        result.max_correction = max(result.max_correction, correction)
        samples[target] = X
    result.samples = samples

    norm0 = _pairing(X0)
    charpoly0 = char_poly(X0)
    cache = {}
    for index, X in samples.items():
        key = id(X)
        if key not in cache:
            report = validate(X)
            if not report.ok:
                raise InvariantError(f"sample at t={tuple(grid.point(index))} fails validation: {report}", "aks_flow")
            cache[key] = FlowResidual(
                norm_drift=float(abs(_pairing(X) - norm0)),
                charpoly_drift=charpoly_drift(charpoly0, char_poly(X)),
            )
        result.residuals[index] = cache[key]
    logger.info("flow done: max structure correction %.2e", result.max_correction)
    return result


def _directional(field_fn, X, Y, fd_step):
    return (1.0 / (2 * fd_step)) * (field_fn(X + fd_step * Y) - field_fn(X - fd_step * Y))


def ad_equivariance_residual(i: int, X: LoopElement, Y: LoopElement, fd_step: float) -> float:
    """|dV_i|_X([X, Y]) - [V_i(X), Y]| with a central difference for the differential."""
    if not fd_step > 0:
        raise LoopAlgebraError(f"fd_step must be positive, got {fd_step}")
    W = bracket(X, Y)
    if i == 1:
        # V_1 is linear: its differential is the identity
        dV = W
    else:
        dV = _directional(lambda Z: v_field(Z, i), X, W, fd_step)
    return (dV - bracket(v_field(X, i), Y)).norm()


def lax_commutator_residual(X: LoopElement, rule, i: int, j: int, fd_step: float = 1e-5) -> float:
    """Size of the Lie bracket of the Lax vector fields L_i and L_j at X."""
    def lax(k):
        return lambda Z: _lax_field(Z, rule, k)[0]

    Li, Lj = lax(i)(X), lax(j)(X)
    return (_directional(lax(j), X, Li, fd_step) - _directional(lax(i), X, Lj, fd_step)).norm()


def connection_element(X: LoopElement, rule, weights) -> LoopElement:
    """sum_i weights[i] * pi_P V_i(X), the connection coefficient of one grid direction."""
    total = None
    for i, w in enumerate(weights, start=1):
        if w == 0:
            continue
        term = float(w) * project(v_field(X, i), rule)
        total = term if total is None else total + term
    return total if total is not None else LoopElement.zero(X.m, X.real)


def maurer_cartan_residual(flow: FlowResult, rule=None) -> Dict[tuple, float]:
    """
    Per interior grid point and pair of directions a < b: max-abs size of
    d_a A_b - d_b A_a + [A_a, A_b], derivatives by finite differences.
    """
    rule = flow.rule if rule is None else rule
    grid = flow.grid
    if grid is None:
        raise GridError("flow has no sample grid")
    counts = grid.counts
    conns = {
        index: [connection_element(X, rule, flow.coords[:, a]) for a in range(grid.dim)]
        for index, X in flow.samples.items()
    }
    lo = min(A.lo for As in conns.values() for A in As)
    hi = max(A.hi for As in conns.values() for A in As)
    m = flow.initial.m
    stack = np.zeros(counts + (grid.dim, hi - lo + 1, m, m), dtype=complex)
    for index, As in conns.items():
        for a, A in enumerate(As):
            stack[index + (a,)] = A.with_window(lo, hi).coeffs
    residual = {index: 0.0 for index in interior_indices(counts)}
    for a, b in itertools.combinations(range(grid.dim), 2):
        d_a_Ab = derivative(stack[..., b, :, :, :], a, grid.spacing)
        d_b_Aa = derivative(stack[..., a, :, :, :], b, grid.spacing)
        for index in residual:
            Aa, Ab = conns[index][a], conns[index][b]
            curv = LoopElement(lo, d_a_Ab[index] - d_b_Aa[index]) + (Aa @ Ab) - (Ab @ Aa)
            residual[index] = max(residual[index], curv.norm())
    return residual
