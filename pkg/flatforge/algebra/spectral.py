"""
Spectral invariants of X(z): characteristic polynomial det(wI - X(z)) with
Laurent-polynomial coefficients, isospectrality monitoring, regularity
diagnostics and the eigenvalue functions mu_i of V_i(X_0(z)).
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg as spl
from numpy.polynomial import polynomial as npoly
from scipy.optimize import linear_sum_assignment

from flatforge.algebra.loop_algebra import LoopElement, LoopAlgebraError, validate
from flatforge.errors import SpectralError

logger = logging.getLogger(__name__)

# fixed sample set for trace drift: 8 points on the unit circle, off the real axis
DRIFT_Z_SAMPLES = tuple(np.exp(1j * np.pi * (2 * j + 1) / 8) for j in range(8))
COLLISION_TOL = 1e-6
REPEATED_ROOT_TOL = 1e-5
NEAR_ROOT_TOL = 1e-3
DIAGONALIZABLE_COND = 1e10
MU_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class LaurentPolynomial:
    """Scalar Laurent polynomial; coeffs[k] multiplies z^(lo + k)."""

    lo: int
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=complex).reshape(-1)
        if coeffs.size == 0:
            coeffs = np.zeros(1, dtype=complex)
        coeffs.flags.writeable = False
        object.__setattr__(self, "lo", int(self.lo))
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def constant(cls, value):
        return cls(0, [value])

    @property
    def hi(self):
        return self.lo + self.coeffs.size - 1

    def coefficient(self, i):
        return self.coeffs[i - self.lo] if self.lo <= i <= self.hi else 0j

    def with_window(self, lo, hi):
        out = np.zeros(hi - lo + 1, dtype=complex)
        for i in range(max(lo, self.lo), min(hi, self.hi) + 1):
            out[i - lo] = self.coeffs[i - self.lo]
        return LaurentPolynomial(lo, out)

    def evaluate(self, z):
        z = complex(z)
        return complex(sum(c * z ** (self.lo + k) for k, c in enumerate(self.coeffs)))

    def is_zero(self):
        return not np.any(self.coeffs)

    def __add__(self, other):
        lo, hi = min(self.lo, other.lo), max(self.hi, other.hi)
        return LaurentPolynomial(lo, self.with_window(lo, hi).coeffs + other.with_window(lo, hi).coeffs)

    def __sub__(self, other):
        lo, hi = min(self.lo, other.lo), max(self.hi, other.hi)
        return LaurentPolynomial(lo, self.with_window(lo, hi).coeffs - other.with_window(lo, hi).coeffs)

    def __mul__(self, other):
        if isinstance(other, LaurentPolynomial):
            return LaurentPolynomial(self.lo + other.lo, np.convolve(self.coeffs, other.coeffs))
        return LaurentPolynomial(self.lo, complex(other) * self.coeffs)

    __rmul__ = __mul__

    def roots(self, rtol=1e-12):
        """Nonzero roots; zero roots (from vanishing low coefficients) are dropped."""
        c = np.array(self.coeffs)
        scale = np.max(np.abs(c)) if c.size else 0.0
        if scale == 0:
            return np.array([], dtype=complex)
        nz = np.nonzero(np.abs(c) > rtol * scale)[0]
        c = c[nz[0]:nz[-1] + 1]
        if c.size < 2:
            return np.array([], dtype=complex)
        return npoly.polyroots(c)


def trace(X: LoopElement) -> LaurentPolynomial:
    return LaurentPolynomial(X.lo, np.trace(X.coeffs, axis1=1, axis2=2))


def _scalar_identity(p: LaurentPolynomial, m):
    return LoopElement(p.lo, p.coeffs[:, None, None] * np.eye(m)[None, :, :])


def char_poly(X: LoopElement) -> Tuple[LaurentPolynomial, ...]:
    """
    Coefficients c_0 .. c_m of det(wI - X(z)), c_k multiplying w^k.

    Faddeev-LeVerrier over Laurent polynomials: M_1 = I,
    c_{m-k} = -tr(X M_k)/k, M_{k+1} = X M_k + c_{m-k} I. The coefficient of
    w^k carries z-degrees in [(m-k) lo, (m-k) hi]. For skew-symmetric X the
    coefficients with m - k odd vanish and are set to exact zeros.
    """
    m = X.m
    coeffs: List[Optional[LaurentPolynomial]] = [None] * (m + 1)
    coeffs[m] = LaurentPolynomial.constant(1.0)
    M = LoopElement(0, np.eye(m)[None, :, :])
    for k in range(1, m + 1):
        XM = X @ M
        c = trace(XM) * (-1.0 / k)
        coeffs[m - k] = c.with_window(k * X.lo, k * X.hi)
        if k < m:
            M = XM + _scalar_identity(coeffs[m - k], m)
    if validate(X).checks["skew"].passed:
        for k in range(m + 1):
            if (m - k) % 2:
                c = coeffs[k]
                coeffs[k] = LaurentPolynomial(c.lo, np.zeros_like(c.coeffs))
    return tuple(coeffs)


def evaluate_char_poly(charpoly, z):
    """Numeric coefficients at z, highest power first (numpy.poly order)."""
    return np.array([c.evaluate(z) for c in reversed(charpoly)])


def charpoly_drift(first, second) -> float:
    """Max coefficient-level difference between two characteristic polynomials."""
    drift = 0.0
    for a, b in zip(first, second):
        diff = a - b
        drift = max(drift, float(np.max(np.abs(diff.coeffs))))
    return drift


def trace_powers(X: LoopElement, powers: Sequence[int], z_samples=DRIFT_Z_SAMPLES):
    """tr X(z)^k for each k in powers and each z sample; shape (len(powers), len(z_samples))."""
    out = np.zeros((len(powers), len(z_samples)), dtype=complex)
    for j, z in enumerate(z_samples):
        A = X.evaluate(z)
        for r, k in enumerate(powers):
            out[r, j] = np.trace(np.linalg.matrix_power(A, k))
    return out


def _even_powers(m):
    return list(range(2, m + 1, 2))


def isospectral_drift(flow) -> Dict[tuple, float]:
    """
    Per grid sample: max over k in {2, 4, .., m} and the fixed 8-point z set
    of |tr X(z,t)^k - tr X(z,0)^k|.
    """
    ks = _even_powers(flow.initial.m)
    reference = trace_powers(flow.initial, ks)
    return {
        index: float(np.max(np.abs(trace_powers(X, ks) - reference)))
        for index, X in flow.samples.items()
    }


def drift_table(flow) -> pd.DataFrame:
    """Long table (t_1..t_n, k, z sample, drift) of trace drifts."""
    ks = _even_powers(flow.initial.m)
    reference = trace_powers(flow.initial, ks)
    rows = []
    for index, X in sorted(flow.samples.items()):
        t = flow.point(index)
        drift = np.abs(trace_powers(X, ks) - reference)
        for r, k in enumerate(ks):
            for j, z in enumerate(DRIFT_Z_SAMPLES):
                row = {f"t{d + 1}": float(v) for d, v in enumerate(t)}
                row.update({"k": k, "z_index": j, "z_re": z.real, "z_im": z.imag, "drift": float(drift[r, j])})
                rows.append(row)
    return pd.DataFrame(rows)


class Regularity(Enum):
    YES = "yes (sampled)"
    NO = "no"
    UNDETERMINED = "undetermined"


@dataclass
class RegularityReport:
    status: Regularity
    reasons: List[str] = field(default_factory=list)
    disc_samples: Dict[complex, complex] = field(default_factory=dict)
    branch_points: List[complex] = field(default_factory=list)
    symmetry_nodes: List[complex] = field(default_factory=list)
    genus_estimate: Optional[int] = None


@dataclass
class SpectralRecord:
    charpoly: Tuple[LaurentPolynomial, ...]
    disc_samples: Dict[complex, complex]
    regular: RegularityReport


def _min_separation(values, scale=1.0):
    values = np.asarray(values)
    if values.size < 2:
        return np.inf
    best = np.inf
    for a, b in combinations(values, 2):
        best = min(best, abs(a - b) / max(scale, abs(a), abs(b)))
    return best


def track_eigenvalues(X: LoopElement, z_path, collision=COLLISION_TOL):
    """
    Continue the eigenvalues of X(z) along z_path by nearest-neighbour matching.

    Returns (tracks, collided_at) where tracks has shape (len(z_path), m) and
    collided_at is the first path index where two eigenvalues came within
    `collision` (relative), or None. After a collision the ordering is left as
    is; callers treat the result as undetermined.
    """
    tracks = np.zeros((len(z_path), X.m), dtype=complex)
    collided_at = None
    previous = None
    for j, z in enumerate(z_path):
        w = np.linalg.eigvals(X.evaluate(z))
        scale = max(1.0, float(np.max(np.abs(w))))
        if collided_at is None and _min_separation(w, scale) < collision:
            collided_at = j
        if previous is not None:
            cost = np.abs(previous[:, None] - w[None, :])
            _, cols = linear_sum_assignment(cost)
            w = w[cols]
        tracks[j] = w
        previous = w
    return tracks, collided_at


def _disc_window(X: LoopElement, reduced):
    if reduced:
        n = X.n
        weight = 2 * n * (n - 1)
    else:
        weight = X.m * (X.m - 1)
    return weight * X.lo, weight * X.hi


def _discriminant_at(charpoly, z, reduced):
    coeffs = evaluate_char_poly(charpoly, z)
    if reduced:
        coeffs = coeffs[::2]
    roots = np.roots(coeffs)
    value = 1.0 + 0j
    for a, b in combinations(roots, 2):
        value *= (a - b) ** 2
    return complex(value)


def discriminant(X: LoopElement, z_samples=64, charpoly=None):
    """
    Discriminant of the characteristic polynomial as a Laurent polynomial in z.

    For skew-symmetric X the polynomial in w is even, p(w) = q(w^2), and the
    discriminant of q is returned (reduced=True). The coefficients are
    recovered exactly from values at roots of unity, using a sample count
    above the a-priori degree span.
    """
    charpoly = char_poly(X) if charpoly is None else charpoly
    reduced = validate(X).checks["skew"].passed
    dlo, dhi = _disc_window(X, reduced)
    count = max(int(z_samples), dhi - dlo + 1)
    zs = np.exp(2j * np.pi * np.arange(count) / count)
    values = np.array([_discriminant_at(charpoly, z, reduced) for z in zs])
    spectrum = np.fft.fft(values) / count
    coeffs = np.array([spectrum[k % count] for k in range(dlo, dhi + 1)])
    samples = {complex(z): complex(v) for z, v in zip(zs, values)}
    return LaurentPolynomial(dlo, coeffs), samples, reduced


def regularity_check(X: LoopElement, z_samples=64) -> RegularityReport:
    """
    Sampled regularity certificate.

    "no" when the leading or trailing coefficient has a repeated eigenvalue or
    the discriminant has a repeated zero (non-simple branch point); "yes
    (sampled)" is a probabilistic statement drawn from the sample set.
    """
    X = X.normalized()
    if not (X.lo < 0 < X.hi):
        reason = "no z^-1 coefficients" if X.lo >= 0 else "no z^+1 coefficients"
        return RegularityReport(Regularity.UNDETERMINED, [reason])

    report = RegularityReport(Regularity.YES)
    for label, degree in (("z -> 0", X.lo), ("z -> infinity", X.hi)):
        w = np.linalg.eigvals(X.coefficient(degree))
        scale = max(1.0, float(np.max(np.abs(w))))
        if _min_separation(w, scale) < COLLISION_TOL:
            report.status = Regularity.NO
            report.reasons.append(f"X_{degree} has a repeated eigenvalue (branching over {label})")
    if report.status is Regularity.NO:
        return report

    charpoly = char_poly(X)
    disc, samples, reduced = discriminant(X, z_samples, charpoly)
    report.disc_samples = samples

    circle = list(samples)
    _, collided_at = track_eigenvalues(X, circle + circle[:1])
    if collided_at is not None:
        report.status = Regularity.UNDETERMINED
        report.reasons.append(f"eigenvalue collision on the sampling circle near z={circle[collided_at % len(circle)]:.6g}")

    zeros = disc.roots()
    report.branch_points = [complex(r) for r in zeros]
    separation = _min_separation(zeros)
    if separation < REPEATED_ROOT_TOL:
        report.status = Regularity.NO
        report.reasons.append(f"discriminant has a repeated zero (separation {separation:.2e}): non-simple branch point")
    elif separation < NEAR_ROOT_TOL:
        if report.status is Regularity.YES:
            report.status = Regularity.UNDETERMINED
        report.reasons.append(f"discriminant zeros nearly coincide (separation {separation:.2e})")

    if reduced:
        # w = 0 crossings at zeros of the Pfaffian: nodes of the orthogonal symmetry
        report.symmetry_nodes = [complex(r) for r in charpoly[0].roots()]
        branch_count = 2 * len(zeros)
    else:
        branch_count = len(zeros)
    report.genus_estimate = branch_count // 2 - X.m + 1
    if report.status is Regularity.YES:
        report.reasons.append(f"{len(zeros)} simple discriminant zeros on {len(samples)} samples")
    logger.debug("regularity %s: %s", report.status.value, "; ".join(report.reasons))
    return report


def spectral_record(X: LoopElement, z_samples=64) -> SpectralRecord:
    charpoly = char_poly(X)
    regular = regularity_check(X, z_samples)
    return SpectralRecord(charpoly, regular.disc_samples, regular)


@dataclass(frozen=True)
class MuPair:
    w: complex
    mu: complex
    residual: float


@dataclass(frozen=True)
class MuSample:
    z: complex
    i: int
    pairs: Tuple[MuPair, ...]


def mu_eigenvalues(X0: LoopElement, i: int, z) -> MuSample:
    """
    Eigenvalues mu_i of V_i(X_0(z)) = z^(2-2i) X_0(z)^(2i-1), matched to the
    eigenvalues w of X_0(z) through their shared eigenvectors.
    """
    z = complex(z)
    if z == 0:
        raise SpectralError("z must be nonzero")
    if not 1 <= i <= X0.n:
        raise LoopAlgebraError(f"field index {i} outside [1, {X0.n}]")
    A = X0.evaluate(z)
    w, S = spl.eig(A)
    if np.linalg.cond(S) > DIAGONALIZABLE_COND:
        raise SpectralError(f"X_0(z) is not diagonalizable at z={z}; pick another sample")
    V = z ** (2 - 2 * i) * np.linalg.matrix_power(A, 2 * i - 1)
    scale = max(1.0, float(np.max(np.abs(V))))
    pairs = []
    for k in range(A.shape[0]):
        s = S[:, k]
        Vs = V @ s
        mu = complex(np.vdot(s, Vs) / np.vdot(s, s))
        residual = float(np.linalg.norm(Vs - mu * s) / np.linalg.norm(s))
        if residual > MU_RESIDUAL_TOL * scale:
            raise SpectralError(f"eigenvector of X_0 is not an eigenvector of V_{i} at z={z} (residual {residual:.2e})")
        pairs.append(MuPair(complex(w[k]), mu, residual))
    pairs.sort(key=lambda p: (p.w.real, p.w.imag))
    return MuSample(z, i, tuple(pairs))
