# matfun.py
"""
Real d×d matrix functions used by the RL-OFBM kernels.

Covers the exponential, the fractional power r^A = exp((log r) A), the spectral
norm, the real-part spectral bounds λ_A / Λ_A, and the fitted constants of the
power bound ‖r^D‖ ≤ K1·r^(λ_D−δ) (r ≤ 1), ‖r^D‖ ≤ K2·r^(Λ_D+δ) (r ≥ 1).
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Optional, Tuple

import numpy as np
import scipy.linalg

from errors import DomainError, InvalidInputError, NumericError

logger = logging.getLogger(__name__)

# A SquareMatrix is a float64 ndarray of shape (d, d)
SquareMatrix = np.ndarray

MAX_SPECTRAL_DIM = 16
BOUNDS_MATCH_TOLERANCE = 1e-10


def as_square_matrix(A: Any, name: str = "matrix") -> SquareMatrix:
    """
    Validate and copy A into a finite float64 (d, d) array.

    Scalars are promoted to 1×1 matrices so d = 1 callers can pass plain floats.

    Raises:
        InvalidInputError: wrong shape, empty, or non-finite entries
    """
    try:
        arr = np.array(A, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise InvalidInputError(f"{name} is not a numeric matrix: {e}") from e

    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise InvalidInputError(f"{name} must be a non-empty square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return np.ascontiguousarray(arr)


# ══════════════════════════════════════════════════════════════════════════════
# Spectral quantities
# ══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class SpectralBounds:
    """Extreme real parts of the spectrum: λ_A = min Re λ, Λ_A = max Re λ."""
    lambda_min: float
    lambda_max: float

    def __post_init__(self):
        if self.lambda_min > self.lambda_max:
            raise InvalidInputError(
                f"lambda_min={self.lambda_min} exceeds lambda_max={self.lambda_max}"
            )

    def to_dict(self) -> Dict[str, float]:
        return {"lambda_min": self.lambda_min, "lambda_max": self.lambda_max}


def spectral_real_bounds(A: Any) -> SpectralBounds:
    """
    Extreme real parts of the (complex) spectrum of A.

    LAPACK's general eigenvalue driver does the Hessenberg reduction and the
    shifted QR sweeps; a failure to converge surfaces as NumericError.
    """
    A = as_square_matrix(A)
    d = A.shape[0]
    if d > MAX_SPECTRAL_DIM:
        raise InvalidInputError(f"spectral bounds limited to d ≤ {MAX_SPECTRAL_DIM}, got d={d}")

    try:
        eigenvalues = scipy.linalg.eigvals(A, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NumericError(
            f"eigenvalue iteration did not converge (d={d}, ‖A‖_F={np.linalg.norm(A):.6g}): {e}"
        ) from e

    if not np.all(np.isfinite(eigenvalues)):
        raise NumericError(f"eigenvalue iteration returned non-finite values: {eigenvalues}")

    real_parts = eigenvalues.real
    return SpectralBounds(float(real_parts.min()), float(real_parts.max()))


def operator_norm(A: Any) -> float:
    """Spectral norm ‖A‖ = max_{‖x‖=1} ‖Ax‖ (largest singular value)."""
    A = as_square_matrix(A)
    return float(np.linalg.norm(A, 2))


# ══════════════════════════════════════════════════════════════════════════════
# Exponential and fractional powers
# ══════════════════════════════════════════════════════════════════════════════

def mat_exp(A: Any) -> SquareMatrix:
    """exp(A) by scaling and squaring with a degree-13 Padé kernel."""
    A = as_square_matrix(A)
    result = scipy.linalg.expm(A)
    if not np.all(np.isfinite(result)):
        raise NumericError(f"matrix exponential overflowed (‖A‖={operator_norm(A):.6g})")
    return result


def mat_power(r: float, A: Any) -> SquareMatrix:
    """
    r^A = exp((log r)·A).

    r = 0 returns the zero matrix, the limit of r^A as r → 0⁺ when every
    eigenvalue of A has positive real part; this realizes the (t−u)_+
    truncation of the kernel at u = t.

    Raises:
        DomainError: r < 0, or r = 0 while min Re λ(A) ≤ 0
    """
    try:
        r = float(r)
    except (TypeError, ValueError) as e:
        raise InvalidInputError(f"r must be a real number: {e}") from e
    if not math.isfinite(r):
        raise InvalidInputError(f"r must be finite, got {r}")
    if r < 0:
        raise DomainError(f"r^A requires r ≥ 0, got r={r}")

    A = as_square_matrix(A)
    if r == 0.0:
        bounds = spectral_real_bounds(A)
        if bounds.lambda_min <= 0:
            raise DomainError(
                f"0^A is only defined when all Re λ(A) > 0; got min Re λ = {bounds.lambda_min:.6g}"
            )
        return np.zeros_like(A)
    return scipy.linalg.expm(math.log(r) * A)


class MatrixPowerFamily:
    """
    Vectorized r ↦ r^A over arrays of r, for quadrature nodes.

    Uses A = V·diag(λ)·V⁻¹ when V is well conditioned and falls back to one
    exponential per node otherwise (Jordan blocks, near-defective A).
    """

    CONDITION_LIMIT = 1e6

    def __init__(self, A: Any):
        self.matrix = as_square_matrix(A)
        self.d = self.matrix.shape[0]

        eigenvalues, vectors = scipy.linalg.eig(self.matrix)
        self.lambda_min = float(eigenvalues.real.min())

        condition = np.linalg.cond(vectors)
        self.diagonalizable = bool(np.isfinite(condition) and condition < self.CONDITION_LIMIT)
        if self.diagonalizable:
            self._eigenvalues = eigenvalues
            self._vectors = vectors
            self._inverse = np.linalg.inv(vectors)
        else:
            logger.debug(f"eigenvector condition {condition:.3g}; using per-node exponentials")

    def __call__(self, r: Iterable[float]) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64).ravel()
        if not np.all(np.isfinite(r)):
            raise InvalidInputError("r values must be finite")
        if np.any(r < 0):
            raise DomainError(f"r^A requires r ≥ 0, got min r = {r.min()}")

        out = np.zeros((r.size, self.d, self.d))
        positive = r > 0
        if not np.all(positive) and self.lambda_min <= 0:
            raise DomainError(
                f"0^A is only defined when all Re λ(A) > 0; got min Re λ = {self.lambda_min:.6g}"
            )
        if not np.any(positive):
            return out

        logs = np.log(r[positive])
        if self.diagonalizable:
            scaled = np.exp(np.outer(logs, self._eigenvalues))
            stack = np.einsum('ij,mj,jk->mik', self._vectors, scaled, self._inverse)
            out[positive] = stack.real
        else:
            out[positive] = np.stack([scipy.linalg.expm(log_r * self.matrix) for log_r in logs])
        return out


# ══════════════════════════════════════════════════════════════════════════════
# Hurst operator
# ══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True, eq=False)
class HurstOperator:
    """
    The matrix exponent D of an RL-OFBM, valid when ½ < λ_D ≤ Λ_D < 1.

    The spectral bounds are cached at construction; passing bounds that do not
    match the recomputed ones is rejected.
    """
    matrix: SquareMatrix
    bounds: Optional[SpectralBounds] = None

    def __post_init__(self):
        matrix = as_square_matrix(self.matrix, "D")
        computed = spectral_real_bounds(matrix)

        if self.bounds is not None:
            if (abs(self.bounds.lambda_min - computed.lambda_min) > BOUNDS_MATCH_TOLERANCE
                    or abs(self.bounds.lambda_max - computed.lambda_max) > BOUNDS_MATCH_TOLERANCE):
                raise InvalidInputError(
                    f"cached bounds {self.bounds.to_dict()} disagree with spectrum {computed.to_dict()}"
                )

        if not (computed.lambda_min > 0.5 and computed.lambda_max < 1.0):
            raise DomainError(
                "Hurst operator must satisfy 1/2 < λ_D ≤ Λ_D < 1; "
                f"got λ_D={computed.lambda_min:.17g}, Λ_D={computed.lambda_max:.17g}"
            )

        matrix.setflags(write=False)
        object.__setattr__(self, 'matrix', matrix)
        object.__setattr__(self, 'bounds', computed)

    @classmethod
    def from_matrix(cls, matrix: Any) -> "HurstOperator":
        return cls(matrix)

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def lambda_D(self) -> float:
        return self.bounds.lambda_min

    @property
    def Lambda_D(self) -> float:
        return self.bounds.lambda_max

    @property
    def shifted(self) -> SquareMatrix:
        """A = D − I/2, the kernel exponent."""
        return self.matrix - 0.5 * np.eye(self.d)

    @property
    def key(self) -> Tuple:
        """Hashable identity used by caches."""
        return (self.d, tuple(self.matrix.ravel().tolist()))

    def to_list(self):
        return self.matrix.tolist()

    def __repr__(self):
        return f"HurstOperator(d={self.d}, λ_D={self.lambda_D:.6g}, Λ_D={self.Lambda_D:.6g})"


# ══════════════════════════════════════════════════════════════════════════════
# Power bound ‖r^D‖ ≤ K r^(λ_D ∓ δ)
# ══════════════════════════════════════════════════════════════════════════════

DEFAULT_SMALL_GRID = np.logspace(-6, 0, 121)
DEFAULT_LARGE_GRID = np.logspace(0, 3, 61)


def default_delta(D: HurstOperator) -> float:
    """δ = (λ_D − ½)/2, so H = λ_D − δ = (λ_D + ½)/2 > ½."""
    return (D.lambda_D - 0.5) / 2.0


def _validated_grid(grid: Iterable[float]) -> np.ndarray:
    values = np.unique(np.asarray(list(grid), dtype=np.float64))
    if values.size == 0:
        raise InvalidInputError("power-bound grid is empty")
    if not np.all(np.isfinite(values)) or np.any(values <= 0):
        raise InvalidInputError("power-bound grid must contain positive finite values")
    return values


def _geometric_midpoints(values: np.ndarray) -> np.ndarray:
    if values.size < 2:
        return np.empty(0)
    return np.sqrt(values[:-1] * values[1:])


def _norms(D: HurstOperator, r_values: np.ndarray) -> np.ndarray:
    return np.array([operator_norm(mat_power(r, D.matrix)) for r in r_values])


def _fit_regime(r_values: np.ndarray, norms: np.ndarray, exponent: float,
                mid_values: np.ndarray, mid_norms: np.ndarray,
                tolerance: float) -> Optional[Dict[str, Any]]:
    if r_values.size == 0:
        return None

    constant = float(np.max(norms / r_values ** exponent))
    refined = constant
    if mid_values.size:
        refined = max(constant, float(np.max(mid_norms / mid_values ** exponent)))

    stable = bool(math.isfinite(refined) and refined > 0
                  and (refined - constant) <= tolerance * refined)
    return {
        "exponent": exponent,
        "constant": constant,
        "refined_constant": refined,
        "points": int(r_values.size),
        "stable": stable,
    }


def verify_power_bound(D: HurstOperator, w: "BoundWitness", grid: Iterable[float],
                       tolerance: float = 0.05) -> Dict[str, Any]:
    """
    Fit the minimal power-bound constants on a grid and test them for stability.

    For each regime (r ≤ 1 with exponent λ_D − δ, r ≥ 1 with exponent Λ_D + δ)
    the constant is sup over the grid of ‖r^D‖ / r^exponent. Stability means the
    sup moves by at most `tolerance` (relative) when geometric midpoints are
    inserted between grid points.

    Returns:
        {
            "delta": δ, "H": λ_D − δ,
            "small_r": {...} or None, "large_r": {...} or None,
            "witness_holds": fitted constants ≤ w.K1 / w.K2,
            "success": every populated regime is stable
        }
    """
    values = _validated_grid(grid)
    mids = _geometric_midpoints(values)

    norms = _norms(D, values)
    mid_norms = _norms(D, mids)

    small, mid_small = values <= 1.0, mids <= 1.0
    large, mid_large = values >= 1.0, mids >= 1.0

    small_fit = _fit_regime(values[small], norms[small], D.lambda_D - w.delta,
                            mids[mid_small], mid_norms[mid_small], tolerance)
    large_fit = _fit_regime(values[large], norms[large], D.Lambda_D + w.delta,
                            mids[mid_large], mid_norms[mid_large], tolerance)

    fits = [fit for fit in (small_fit, large_fit) if fit is not None]
    witness_holds = True
    if small_fit is not None:
        witness_holds &= small_fit["refined_constant"] <= w.K1 * (1 + 1e-12)
    if large_fit is not None:
        witness_holds &= large_fit["refined_constant"] <= w.K2 * (1 + 1e-12)

    success = all(fit["stable"] for fit in fits)
    if not success:
        logger.warning(f"⚠️ power-bound fit unstable under grid refinement for {D!r}")

    return {
        "delta": w.delta,
        "H": w.H,
        "small_r": small_fit,
        "large_r": large_fit,
        "witness_holds": bool(witness_holds),
        "success": success,
    }


@dataclass(frozen=True)
class BoundWitness:
    """δ with fitted constants K1, K2 for the power bound, and H = λ_D − δ."""
    delta: float
    K1: float
    K2: float
    H: float

    def __post_init__(self):
        if not (self.delta > 0):
            raise DomainError(f"δ must be positive, got {self.delta}")
        for name in ("K1", "K2"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidInputError(f"{name} must be positive and finite, got {value}")
        if not self.H > 0.5:
            raise DomainError(f"H = λ_D − δ must exceed 1/2, got {self.H}")

    @classmethod
    def fit(cls, D: HurstOperator, delta: Optional[float] = None,
            grid: Optional[Iterable[float]] = None) -> "BoundWitness":
        """Witness with default δ = (λ_D − ½)/2 and constants fitted on the grid."""
        if delta is None:
            delta = default_delta(D)
        if not (0 < delta < D.lambda_D - 0.5):
            raise DomainError(
                f"δ must lie in (0, λ_D − 1/2) = (0, {D.lambda_D - 0.5:.6g}), got {delta}"
            )
        if grid is None:
            grid = np.concatenate([DEFAULT_SMALL_GRID, DEFAULT_LARGE_GRID])

        # Placeholder constants; the fit below replaces them.
        provisional = cls(delta=delta, K1=1.0, K2=1.0, H=D.lambda_D - delta)
        report = verify_power_bound(D, provisional, grid)
        K1 = report["small_r"]["refined_constant"] if report["small_r"] else 1.0
        K2 = report["large_r"]["refined_constant"] if report["large_r"] else 1.0
        return cls(delta=delta, K1=K1, K2=K2, H=D.lambda_D - delta)

    def to_dict(self) -> Dict[str, float]:
        return {"delta": self.delta, "K1": self.K1, "K2": self.K2, "H": self.H}


# ═══════════════════════════════════════════════════════════════════
# Quick self-check
# ═══════════════════════════════════════════════════════════════════

if __name__ == "__main__":
    print("=" * 60)
    print("MATRIX FUNCTION CHECKS")
    print("=" * 60)

    D = HurstOperator.from_matrix([[0.75, 0.2], [0.0, 0.6]])
    print(f"\n{D!r}")
    lhs = mat_power(2.0, D.matrix) @ mat_power(3.0, D.matrix)
    rhs = mat_power(6.0, D.matrix)
    err = float(np.max(np.abs(lhs - rhs)))
    print(f"  {'✓' if err < 1e-10 else '✗'} group law error {err:.3e}")

    witness = BoundWitness.fit(D)
    print(f"  witness: {witness.to_dict()}")
    print("\n" + "=" * 60)
