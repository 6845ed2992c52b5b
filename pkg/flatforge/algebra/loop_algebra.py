"""
Arithmetic of the twisted loop algebra of so(2n, C).

An element is a matrix-valued Laurent polynomial

    X(z) = X_lo z^lo + ... + X_hi z^hi

whose coefficients are skew-symmetric and satisfy the twist condition for
the involution sigma = Ad(Q), Q = diag(I, -I): even-degree coefficients are
block-diagonal (two n x n blocks), odd-degree coefficients are
block-off-diagonal. `LoopElement` itself is a general matrix Laurent
polynomial (products such as X @ X leave the Lie algebra); `validate`
reports which of the invariants hold.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Mapping, Optional

import numpy as np

from flatforge.errors import LoopAlgebraError

logger = logging.getLogger(__name__)

DEGREE_LIMIT = 64
# coefficients at or below this magnitude are dropped when normalizing
DROP_TOL = 1e-14
# skew-symmetry, twist and reality tolerance for computed values (relative to max(1, |X|))
STRUCTURE_TOL = 1e-12


class DecompositionRule(Enum):
    """Splitting of the loop algebra into subalgebras P + N."""

    ADMISSIBLE = "admissible"
    SIMPLE = "simple"
    CURVED_FLAT = "curved-flat"

    @classmethod
    def parse(cls, text):
        key = str(text).strip().lower().replace("_", "-")
        for rule in cls:
            if rule.value == key:
                return rule
        raise LoopAlgebraError(f"unknown decomposition rule '{text}'")


@dataclass(frozen=True, eq=False)
class LoopElement:
    """
    Laurent polynomial with m x m complex coefficients on the window [lo, hi].

    `coeffs[k]` is the coefficient of z^(lo + k). `real` flags elements that
    satisfy the reality condition; they are stored as complex arrays with zero
    imaginary parts so that every invariant check runs on one code path.
    """

    lo: int
    coeffs: np.ndarray
    real: bool = False

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=complex)
        if coeffs.ndim != 3 or coeffs.shape[0] == 0 or coeffs.shape[1] != coeffs.shape[2]:
            raise LoopAlgebraError(f"coefficients must have shape (k, m, m), got {coeffs.shape}")
        m = coeffs.shape[1]
        if m < 4 or m % 2:
            raise LoopAlgebraError(f"matrix size must be even and >= 4, got {m}")
        lo = int(self.lo)
        hi = lo + coeffs.shape[0] - 1
        if lo < -DEGREE_LIMIT or hi > DEGREE_LIMIT:
            raise LoopAlgebraError(f"degree window [{lo}, {hi}] outside [-{DEGREE_LIMIT}, {DEGREE_LIMIT}]")
        coeffs.flags.writeable = False
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "real", bool(self.real))

    @classmethod
    def from_coefficients(cls, coefficients: Mapping[int, np.ndarray], real: Optional[bool] = None, m=None):
        """Build an element from a {degree: matrix} mapping. Missing degrees are zero."""
        if not coefficients:
            if m is None:
                raise LoopAlgebraError("cannot infer matrix size of an empty element")
            return cls.zero(m, real=True if real is None else real)
        degrees = sorted(int(i) for i in coefficients)
        mats = {int(i): np.asarray(v) for i, v in coefficients.items()}
        size = mats[degrees[0]].shape[0]
        stack = np.zeros((degrees[-1] - degrees[0] + 1, size, size), dtype=complex)
        for i, mat in mats.items():
            if mat.shape != (size, size):
                raise LoopAlgebraError(f"coefficient of degree {i} has shape {mat.shape}, expected {(size, size)}")
            stack[i - degrees[0]] = mat
        if real is None:
            real = all(np.isrealobj(mat) for mat in mats.values())
        return cls(degrees[0], stack, real)

    @classmethod
    def zero(cls, m, real=True):
        return cls(0, np.zeros((1, m, m), dtype=complex), real)

    @property
    def m(self):
        return self.coeffs.shape[1]

    @property
    def n(self):
        return self.m // 2

    @property
    def hi(self):
        return self.lo + self.coeffs.shape[0] - 1

    def degrees(self):
        return range(self.lo, self.hi + 1)

    def coefficient(self, i):
        if self.lo <= i <= self.hi:
            return self.coeffs[i - self.lo]
        return np.zeros((self.m, self.m), dtype=complex)

    def as_dict(self) -> Dict[int, np.ndarray]:
        return {i: self.coeffs[i - self.lo] for i in self.degrees()}

    def is_zero(self, tol=0.0):
        return self.norm() <= tol

    def norm(self):
        """Max-abs entry over all coefficients."""
        return float(np.max(np.abs(self.coeffs)))

    def outside_magnitude(self, lo, hi):
        """Largest entry carried by degrees outside [lo, hi]."""
        mags = [np.max(np.abs(self.coeffs[i - self.lo])) for i in self.degrees() if i < lo or i > hi]
        return float(max(mags)) if mags else 0.0

    def with_window(self, lo, hi):
        """Pad with zeros or cut to [lo, hi]. Cut coefficients are discarded."""
        if hi < lo:
            raise LoopAlgebraError(f"empty window [{lo}, {hi}]")
        stack = np.zeros((hi - lo + 1, self.m, self.m), dtype=complex)
        for i in range(max(lo, self.lo), min(hi, self.hi) + 1):
            stack[i - lo] = self.coeffs[i - self.lo]
        return LoopElement(lo, stack, self.real)

    def normalized(self):
        """Drop leading and trailing coefficients of magnitude <= DROP_TOL."""
        mags = np.max(np.abs(self.coeffs), axis=(1, 2))
        keep = np.nonzero(mags > DROP_TOL)[0]
        if keep.size == 0:
            return LoopElement.zero(self.m, self.real)
        return LoopElement(self.lo + int(keep[0]), self.coeffs[keep[0]:keep[-1] + 1], self.real)

    def shift(self, k):
        """Multiply by z^k."""
        return LoopElement(self.lo + k, self.coeffs, self.real)

    def evaluate(self, z):
        z = complex(z)
        if z == 0 and self.lo < 0:
            raise LoopAlgebraError("cannot evaluate a Laurent polynomial with negative degrees at z = 0")
        powers = np.array([z ** i for i in self.degrees()])
        return np.tensordot(powers, self.coeffs, axes=1)

    def evaluate_real(self, z, tol=STRUCTURE_TOL):
        value = self.evaluate(z)
        scale = max(1.0, float(np.max(np.abs(value))))
        if np.max(np.abs(value.imag)) > tol * scale:
            raise LoopAlgebraError(f"value at z={z} is not real")
        return value.real.copy()

    def transpose(self):
        return LoopElement(self.lo, np.transpose(self.coeffs, (0, 2, 1)), self.real)

    def conjugate_by(self, B, B_inv=None):
        """B^-1 X B for a z-independent invertible B."""
        B = np.asarray(B)
        if B_inv is None:
            B_inv = np.linalg.inv(B)
        stack = np.einsum("ij,kjl,lm->kim", B_inv, self.coeffs, B)
        return LoopElement(self.lo, stack, self.real and np.isrealobj(B))

    def allclose(self, other, atol=1e-12):
        self._check_size(other)
        lo, hi = min(self.lo, other.lo), max(self.hi, other.hi)
        return bool(np.allclose(self.with_window(lo, hi).coeffs, other.with_window(lo, hi).coeffs, rtol=0, atol=atol))

    def _check_size(self, other):
        if not isinstance(other, LoopElement):
            raise TypeError(f"expected LoopElement, got {type(other).__name__}")
        if other.m != self.m:
            raise LoopAlgebraError(f"size mismatch: {self.m} vs {other.m}")

    def _combine(self, other, sign):
        self._check_size(other)
        lo, hi = min(self.lo, other.lo), max(self.hi, other.hi)
        stack = self.with_window(lo, hi).coeffs + sign * other.with_window(lo, hi).coeffs
        return LoopElement(lo, stack, self.real and other.real)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __neg__(self):
        return LoopElement(self.lo, -self.coeffs, self.real)

    def __mul__(self, scalar):
        if isinstance(scalar, LoopElement):
            return NotImplemented
        scalar = complex(scalar)
        return LoopElement(self.lo, scalar * self.coeffs, self.real and scalar.imag == 0)

    __rmul__ = __mul__

    def __matmul__(self, other):
        """Matrix product of Laurent polynomials."""
        self._check_size(other)
        stack = np.zeros((self.coeffs.shape[0] + other.coeffs.shape[0] - 1, self.m, self.m), dtype=complex)
        for a, left in enumerate(self.coeffs):
            for b, right in enumerate(other.coeffs):
                stack[a + b] += left @ right
        return LoopElement(self.lo + other.lo, stack, self.real and other.real)

    def power(self, k):
        if k < 1:
            raise LoopAlgebraError(f"power must be >= 1, got {k}")
        result = self
        for _ in range(k - 1):
            result = result @ self
        return result


def twist_mask(m, degree):
    """Entries allowed for a coefficient of the given degree."""
    n = m // 2
    upper = np.zeros((m, m), dtype=bool)
    upper[:n, :n] = True
    upper[n:, n:] = True
    return upper if degree % 2 == 0 else ~upper


def off_diagonal(K):
    """The V_1 matrix with upper-right block K and lower-left block -K^T."""
    K = np.asarray(K)
    n = K.shape[0]
    out = np.zeros((2 * n, 2 * n), dtype=K.dtype)
    out[:n, n:] = K
    out[n:, :n] = -K.T
    return out


def block_diagonal(W, H):
    """The V_0 matrix diag(W, H)."""
    W, H = np.asarray(W), np.asarray(H)
    n = W.shape[0]
    out = np.zeros((2 * n, 2 * n), dtype=np.result_type(W, H))
    out[:n, :n] = W
    out[n:, n:] = H
    return out


def skew_part(M):
    """(M - M^T) / 2."""
    M = np.asarray(M)
    return 0.5 * (M - M.T)


def twist_part(M, degree):
    """M with the entries forbidden at the given degree set to zero."""
    M = np.asarray(M)
    return np.where(twist_mask(M.shape[0], degree), M, 0)


def from_blocks(K, degree=1):
    """Single-coefficient element K-completed skew-symmetrically at an odd degree."""
    if degree % 2 == 0:
        raise LoopAlgebraError("off-diagonal coefficients live in odd degrees")
    return LoopElement.from_coefficients({degree: off_diagonal(K)})


def bracket(X: LoopElement, Y: LoopElement) -> LoopElement:
    """[X, Y] = sum_ij [X_i, Y_j] z^(i+j), with zero end coefficients dropped."""
    X._check_size(Y)
    return ((X @ Y) - (Y @ X)).normalized()


def _project_stack(X, rule):
    keep = np.zeros(X.coeffs.shape, dtype=bool)
    n = X.n
    for k, i in enumerate(X.degrees()):
        if i >= 1:
            keep[k] = True
        elif i == 0:
            if rule is DecompositionRule.CURVED_FLAT:
                keep[k] = True
            elif rule is DecompositionRule.ADMISSIBLE:
                keep[k, :n, :n] = True
    return keep


def project(X: LoopElement, rule: DecompositionRule) -> LoopElement:
    """
    Projection onto P along N.

    Admissible keeps degrees >= 1 and the upper-left block of X_0, Simple keeps
    degrees >= 1, CurvedFlat keeps degrees >= 0. The window of X is kept, so
    project(X) + complement(X) reproduces X exactly.
    """
    keep = _project_stack(X, rule)
    return LoopElement(X.lo, np.where(keep, X.coeffs, 0), X.real)


def complement(X: LoopElement, rule: DecompositionRule) -> LoopElement:
    keep = _project_stack(X, rule)
    return LoopElement(X.lo, np.where(keep, 0, X.coeffs), X.real)


def is_member(X: LoopElement, rule: DecompositionRule, part="P", tol=0.0):
    """Membership of X in P (part='P') or N (part='N') for the given rule."""
    n = X.n
    for i in X.degrees():
        c = np.abs(X.coefficient(i))
        if part == "P":
            if i < 0 or (i == 0 and rule is DecompositionRule.SIMPLE):
                allowed = np.zeros_like(c, dtype=bool)
            elif i == 0 and rule is DecompositionRule.ADMISSIBLE:
                allowed = np.zeros_like(c, dtype=bool)
                allowed[:n, :n] = True
            else:
                allowed = np.ones_like(c, dtype=bool)
        elif part == "N":
            if i > 0 or (i == 0 and rule is DecompositionRule.CURVED_FLAT):
                allowed = np.zeros_like(c, dtype=bool)
            elif i == 0 and rule is DecompositionRule.ADMISSIBLE:
                allowed = np.zeros_like(c, dtype=bool)
                allowed[n:, n:] = True
            else:
                allowed = np.ones_like(c, dtype=bool)
        else:
            raise LoopAlgebraError(f"part must be 'P' or 'N', got {part!r}")
        if np.any(c[~allowed] > tol):
            return False
    return True


def inner_product(X: LoopElement, Y: LoopElement) -> float:
    """<X, Y> = sum_i trace(X_i Y_i^T) for real-flagged elements."""
    X._check_size(Y)
    if not (X.real and Y.real):
        raise LoopAlgebraError("inner product is defined for real-flagged elements")
    lo, hi = max(X.lo, Y.lo), min(X.hi, Y.hi)
    if hi < lo:
        return 0.0
    a = X.with_window(lo, hi).coeffs.real
    b = Y.with_window(lo, hi).coeffs.real
    return float(np.sum(a * b))


def residue_pairing(X: LoopElement, Y: LoopElement) -> complex:
    """
    sum_i trace(X_i Y_-i^T), the z^0 coefficient of -trace(X(z) Y(z)) for skew X, Y.

    Unlike `inner_product` this pairing is ad-invariant on the whole loop
    algebra, so isospectral flows conserve residue_pairing(X, X).
    """
    X._check_size(Y)
    total = 0j
    for i in X.degrees():
        if Y.lo <= -i <= Y.hi:
            total += complex(np.sum(X.coefficient(i) * Y.coefficient(-i)))
    return total


def enforce_structure(X: LoopElement):
    """
    Skew-symmetrize every coefficient and zero the twist-forbidden blocks.

    Returns the corrected element and the max-abs size of the correction.
    """
    skew = 0.5 * (X.coeffs - np.transpose(X.coeffs, (0, 2, 1)))
    masks = np.stack([twist_mask(X.m, i) for i in X.degrees()])
    fixed = np.where(masks, skew, 0)
    if X.real:
        fixed = fixed.real.astype(complex)
    correction = float(np.max(np.abs(fixed - X.coeffs)))
    return LoopElement(X.lo, fixed, X.real), correction


@dataclass(frozen=True)
class InvariantCheck:
    passed: bool
    magnitude: float


@dataclass(frozen=True)
class ValidationReport:
    checks: Dict[str, InvariantCheck] = field(default_factory=dict)

    @property
    def ok(self):
        return all(check.passed for check in self.checks.values())

    def failures(self):
        return {name: check for name, check in self.checks.items() if not check.passed}

    def __str__(self):
        return ", ".join(
            f"{name}={'pass' if c.passed else 'FAIL'}({c.magnitude:.2e})" for name, c in self.checks.items()
        )


def validate(X: LoopElement, tol=STRUCTURE_TOL) -> ValidationReport:
    """Per-invariant pass/fail with the max violation magnitude."""
    scale = max(1.0, X.norm()) if np.all(np.isfinite(X.coeffs)) else 1.0
    finite = bool(np.all(np.isfinite(X.coeffs)))
    checks = {"finite": InvariantCheck(finite, 0.0 if finite else float("inf"))}

    skew = float(np.max(np.abs(X.coeffs + np.transpose(X.coeffs, (0, 2, 1)))))
    checks["skew"] = InvariantCheck(skew <= tol * scale, skew)

    twist = 0.0
    for i in X.degrees():
        forbidden = ~twist_mask(X.m, i)
        if forbidden.any():
            twist = max(twist, float(np.max(np.abs(X.coefficient(i)[forbidden]))))
    checks["twist"] = InvariantCheck(twist <= tol * scale, twist)

    if X.real:
        imag = float(np.max(np.abs(X.coeffs.imag)))
        checks["reality"] = InvariantCheck(imag <= tol * scale, imag)
    return ValidationReport(checks)
