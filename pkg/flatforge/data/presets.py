"""Initial conditions: seeded random elements and the Clifford torus."""
import logging
from dataclasses import dataclass

import numpy as np

from flatforge.algebra.loop_algebra import DecompositionRule, LoopAlgebraError, LoopElement, from_blocks, skew_part, twist_part
from flatforge.flows.frame_builder import clifford_connection, clifford_initial_frame, solve_coordinate_change

logger = logging.getLogger(__name__)


def random_initial(n, d, seed, scale=1.0) -> LoopElement:
    """
    Real element with degrees -d .. 1; every coefficient is a skew-symmetrized
    uniform [-1, 1] matrix with the twist-forbidden blocks zeroed, times scale.
    """
    if d < 0:
        raise LoopAlgebraError(f"d must be >= 0, got {d}")
    if n < 2:
        raise LoopAlgebraError(f"n must be >= 2, got {n}")
    rng = np.random.default_rng(seed)
    m = 2 * n
    coefficients = {}
    for i in range(-d, 2):
        M = rng.uniform(-1.0, 1.0, size=(m, m))
        coefficients[i] = scale * twist_part(skew_part(M), i)
    return LoopElement.from_coefficients(coefficients, real=True)


@dataclass(frozen=True, eq=False)
class CliffordPreset:
    a: float
    b: float
    X0: LoopElement
    coords: np.ndarray
    F0: np.ndarray
    rule: DecompositionRule = DecompositionRule.SIMPLE


def clifford_block(a, b):
    """Upper-right block K of X_1 whose fields span the Clifford connection."""
    return np.array([[a, b], [2 * b, -2 * a]], dtype=float)


def clifford(a, b, z0=1.0) -> CliffordPreset:
    """
    Constant Killing field X = X_1 z of the Clifford torus with parameters (a, b).

    The coordinate change t = C s between flow times and torus parameters is
    recovered by least squares from the closed-form connection.
    """
    if abs(a * a + b * b - 1.0) > 1e-12:
        raise LoopAlgebraError(f"clifford preset needs a^2 + b^2 = 1, got {a * a + b * b!r}")
    X0 = from_blocks(clifford_block(a, b))
    coords, residual = solve_coordinate_change(X0, DecompositionRule.SIMPLE, z0, clifford_connection(a, b))
    if residual > 1e-12:
        raise LoopAlgebraError(f"clifford connection not spanned by the fields (residual {residual:.2e})")
    logger.debug("clifford coordinate change %s", coords.tolist())
    return CliffordPreset(a, b, X0, coords, clifford_initial_frame(a, b))
