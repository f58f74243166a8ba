# kernel.py
"""
RL kernel K(t,s) = (t−s)_+^(D−I/2), its grid-snapped variant K^n, the
Toeplitz cell weights of the approximation sum, and the covariance oracle
C(t,s) = ∫_0^(t∧s) (t−u)^A ((s−u)^A)ᵀ du computed by adaptive quadrature.

Notation: A = D − I/2 and B = A + I = D + I/2. Every eigenvalue of A has real
part in (0, ½), so B is invertible and 0^A, 0^B are the zero matrix.
"""

import heapq
import logging
import math
from dataclasses import dataclass, field
from threading import Lock
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import QUADRATURE_CONFIG
from errors import AccuracyError, InvalidInputError, InvariantViolation
from matfun import HurstOperator, MatrixPowerFamily, mat_power

logger = logging.getLogger(__name__)

SNAP_TOLERANCE = 1e-9


# ══════════════════════════════════════════════════════════════════════════════
# Grid snapping
# ══════════════════════════════════════════════════════════════════════════════

def check_grid_size(n: Any) -> int:
    try:
        valid = not isinstance(n, bool) and int(n) == n and int(n) >= 1
    except (TypeError, ValueError, OverflowError):
        valid = False
    if not valid:
        raise InvalidInputError(f"grid size n must be a positive integer, got {n!r}")
    return int(n)


def check_time(t: Any, name: str = "t") -> float:
    try:
        t = float(t)
    except (TypeError, ValueError) as e:
        raise InvalidInputError(f"{name} must be a real number: {e}") from e
    if not (0.0 <= t <= 1.0):
        raise InvalidInputError(f"{name} must lie in [0, 1], got {t}")
    return t


def grid_index(t: float, n: int) -> int:
    """
    ⌊nt⌋, reading n·t within 1e−9 (relative) of an integer as that integer.

    Decimal grid points are rarely exact in binary (0.29·100 = 28.999…96);
    they snap to the cell they name.
    """
    x = n * t
    nearest = round(x)
    if abs(x - nearest) <= SNAP_TOLERANCE * max(1.0, abs(x)):
        return int(nearest)
    return int(math.floor(x))


def snap(t: float, n: int) -> float:
    """Grid-snapped time t̃ = ⌊nt⌋/n."""
    return grid_index(t, n) / n


# ══════════════════════════════════════════════════════════════════════════════
# Pointwise kernels
# ══════════════════════════════════════════════════════════════════════════════

def kernel_at(t: float, s: float, D: HurstOperator) -> np.ndarray:
    """K(t,s) = (t−s)_+^(D−I/2); the zero matrix when t ≤ s."""
    t = check_time(t, "t")
    s = check_time(s, "s")
    if t <= s:
        return np.zeros((D.d, D.d))
    return mat_power(t - s, D.shifted)


def kernel_n_at(t: float, s: float, n: int, D: HurstOperator) -> np.ndarray:
    """K^n(t,s) = (⌊nt⌋/n − s)_+^(D−I/2); exactly zero for s ≥ ⌊nt⌋/n."""
    n = check_grid_size(n)
    t = check_time(t, "t")
    return kernel_at(snap(t, n), s, D)


# ══════════════════════════════════════════════════════════════════════════════
# Toeplitz weights
# ══════════════════════════════════════════════════════════════════════════════

def _solve_B(D: HurstOperator, rhs: np.ndarray) -> np.ndarray:
    B = D.shifted + np.eye(D.d)
    try:
        if rhs.ndim == 2:
            return np.linalg.solve(B, rhs)
        return np.linalg.solve(np.broadcast_to(B, rhs.shape), rhs)
    except np.linalg.LinAlgError as e:
        raise InvariantViolation(f"D + I/2 is singular for {D!r}: {e}") from e


def weight(k: int, n: int, D: HurstOperator) -> np.ndarray:
    """
    w_k = n·∫_{k/n}^{(k+1)/n} v^A dv = n·B⁻¹·[((k+1)/n)^B − (k/n)^B].

    This is also n·∫ over cell i of (m/n − u)^A du whenever m − i = k.
    """
    n = check_grid_size(n)
    if isinstance(k, bool) or int(k) != k or not (0 <= int(k) < n):
        raise InvalidInputError(f"weight index must satisfy 0 ≤ k < n={n}, got {k!r}")
    k = int(k)

    B = D.shifted + np.eye(D.d)
    upper = mat_power((k + 1) / n, B)
    lower = mat_power(k / n, B)
    return n * _solve_B(D, upper - lower)


@dataclass(frozen=True, eq=False)
class KernelWeights:
    """The Toeplitz sequence w_0..w_{n−1} for grid size n and Hurst operator D."""
    n: int
    D: HurstOperator
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.weights.shape != (self.n, self.D.d, self.D.d):
            raise InvariantViolation(
                f"weights shape {self.weights.shape} does not match n={self.n}, d={self.D.d}"
            )
        if not np.all(np.isfinite(self.weights)):
            raise InvariantViolation("non-finite kernel weights")

    @property
    def d(self) -> int:
        return self.D.d

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, k: int) -> np.ndarray:
        return self.weights[k]

    def row(self, m: int) -> np.ndarray:
        """Weights applied to η_1..η_m at grid point m: w_{m−1}, …, w_0."""
        if m <= 0:
            return np.zeros((0, self.d, self.d))
        return self.weights[m - 1::-1]

    def to_rows(self) -> List[Tuple[int, int, int, float]]:
        """CSV rows (k, row, col, value)."""
        rows = []
        for k in range(self.n):
            for a in range(self.d):
                for b in range(self.d):
                    rows.append((k, a, b, float(self.weights[k, a, b])))
        return rows


_weight_cache: Dict[Tuple, KernelWeights] = {}
_weight_cache_lock = Lock()
WEIGHT_CACHE_SIZE = 64


def weight_table(n: int, D: HurstOperator) -> KernelWeights:
    """All n weights from the closed form, cached per (n, D)."""
    n = check_grid_size(n)
    key = (n, D.key)

    with _weight_cache_lock:
        cached = _weight_cache.get(key)
    if cached is not None:
        return cached

    B = D.shifted + np.eye(D.d)
    powers = np.stack([mat_power(j / n, B) for j in range(n + 1)])
    weights = n * _solve_B(D, np.diff(powers, axis=0))
    weights.setflags(write=False)
    table = KernelWeights(n=n, D=D, weights=weights)

    with _weight_cache_lock:
        if len(_weight_cache) >= WEIGHT_CACHE_SIZE:
            _weight_cache.pop(next(iter(_weight_cache)))
        _weight_cache[key] = table
    logger.debug(f"weight table built (n={n}, {D!r})")
    return table


def unsnapped_cell_integrals(t: float, n: int, D: HurstOperator) -> np.ndarray:
    """
    n·∫ over cell i of K(t,s) ds for i = 1..n, with the unsnapped kernel.

    The cell containing t is integrated up to t; cells above t contribute zero.
    """
    n = check_grid_size(n)
    t = check_time(t)
    lo = np.arange(n) / n
    hi = np.minimum(lo + 1.0 / n, t)
    active = lo < t

    out = np.zeros((n, D.d, D.d))
    if not np.any(active):
        return out
    family = MatrixPowerFamily(D.shifted + np.eye(D.d))
    upper = family(t - lo[active])
    lower = family(np.maximum(t - hi[active], 0.0))
    out[active] = n * _solve_B(D, upper - lower)
    return out


# ══════════════════════════════════════════════════════════════════════════════
# Adaptive quadrature with geometric grading toward v = 0
# ══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class QuadratureConfig:
    order: int = QUADRATURE_CONFIG['order']
    tolerance: float = QUADRATURE_CONFIG['tolerance']
    max_subdivisions: int = QUADRATURE_CONFIG['max_subdivisions']
    grading_levels: int = QUADRATURE_CONFIG['grading_levels']

    def __post_init__(self):
        if self.order < 2 or self.grading_levels < 0 or self.max_subdivisions < 0:
            raise InvalidInputError(f"invalid quadrature settings {self}")
        if not self.tolerance > 0:
            raise InvalidInputError(f"quadrature tolerance must be positive, got {self.tolerance}")

    @classmethod
    def from_dict(cls, overrides: Optional[Dict[str, Any]] = None) -> "QuadratureConfig":
        return cls(**{**QUADRATURE_CONFIG, **(overrides or {})})


_leggauss_cache: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}


def _leggauss(order: int) -> Tuple[np.ndarray, np.ndarray]:
    if order not in _leggauss_cache:
        _leggauss_cache[order] = np.polynomial.legendre.leggauss(order)
    return _leggauss_cache[order]


def _panel_estimates(f: Callable[[np.ndarray], np.ndarray], los: np.ndarray, his: np.ndarray,
                     order: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    For each panel return (value of left half, value of right half, error).

    The error is the gap between the one-panel rule and the two-half rule;
    all nodes are evaluated in a single call to f.
    """
    x, w = _leggauss(order)
    mids = 0.5 * (los + his)
    bounds = np.stack([
        np.stack([los, his], axis=1),
        np.stack([los, mids], axis=1),
        np.stack([mids, his], axis=1),
    ], axis=1)                                              # (P, 3, 2)
    centers = 0.5 * (bounds[..., 0] + bounds[..., 1])        # (P, 3)
    halves = 0.5 * (bounds[..., 1] - bounds[..., 0])         # (P, 3)
    nodes = centers[..., None] + halves[..., None] * x       # (P, 3, order)

    values = f(nodes.ravel())
    tail = values.shape[1:]
    values = values.reshape(los.size, 3, order, *tail)
    weighted = np.einsum('pqo...,o->pq...', values, w)
    estimates = weighted * halves.reshape(los.size, 3, *([1] * len(tail)))

    whole, left, right = estimates[:, 0], estimates[:, 1], estimates[:, 2]
    err = np.abs(whole - (left + right))
    err = err.reshape(los.size, -1).max(axis=1)
    return left, right, err


def graded_quadrature(f: Callable[[np.ndarray], np.ndarray], length: float,
                      config: Optional[QuadratureConfig] = None) -> Tuple[np.ndarray, float]:
    """
    ∫_0^length f(v) dv for integrands whose derivative blows up at v = 0.

    Initial panels are [L·2^−(j+1), L·2^−j] for j < grading_levels plus the
    innermost [0, L·2^−levels]; panels with the largest error estimate are
    bisected until the summed estimate meets the tolerance.

    Args:
        f: maps an array of nodes (m,) to values (m, ...)

    Returns:
        (value, error estimate)

    Raises:
        AccuracyError: tolerance not met after max_subdivisions bisections
    """
    config = config or QuadratureConfig()
    if length <= 0:
        sample = f(np.array([0.0]))
        return np.zeros(sample.shape[1:]), 0.0

    levels = config.grading_levels
    edges = length * np.concatenate([[0.0], 2.0 ** -np.arange(levels, -1, -1)])
    los, his = edges[:-1], edges[1:]

    left, right, err = _panel_estimates(f, los, his, config.order)
    # heap of (-error, tiebreak, lo, hi, value)
    heap = []
    for p in range(los.size):
        heapq.heappush(heap, (-float(err[p]), p, float(los[p]), float(his[p]), left[p] + right[p]))
    total_err = float(err.sum())
    counter = los.size
    subdivisions = 0

    while total_err > config.tolerance and subdivisions < config.max_subdivisions:
        neg_err, _, lo, hi, _ = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        l2, r2, e2 = _panel_estimates(f, np.array([lo, mid]), np.array([mid, hi]), config.order)
        total_err += float(e2.sum()) + neg_err
        for q, (a, b) in enumerate(((lo, mid), (mid, hi))):
            counter += 1
            heapq.heappush(heap, (-float(e2[q]), counter, a, b, l2[q] + r2[q]))
        subdivisions += 1

    if total_err > config.tolerance:
        raise AccuracyError(
            f"quadrature error estimate {total_err:.3e} above tolerance {config.tolerance:.1e} "
            f"after {subdivisions} subdivisions"
        )

    value = sum(item[4] for item in heap)
    return np.asarray(value), total_err


def kernel_pair_integral(t: float, s: float, D: HurstOperator,
                         combine: Callable[[np.ndarray, np.ndarray], np.ndarray],
                         config: Optional[QuadratureConfig] = None,
                         family: Optional[MatrixPowerFamily] = None) -> Tuple[np.ndarray, float]:
    """
    ∫_0^(t∧s) combine(K(t,u), K(s,u)) du, graded toward u = t∧s.

    combine receives two (m, d, d) stacks of kernel values and returns (m, ...).
    """
    t = check_time(t, "t")
    s = check_time(s, "s")
    family = family or MatrixPowerFamily(D.shifted)
    upper = min(t, s)

    # v = (t∧s) − u, so t − u = (t − t∧s) + v
    gap_t, gap_s = t - upper, s - upper

    def integrand(v: np.ndarray) -> np.ndarray:
        return combine(family(gap_t + v), family(gap_s + v))

    return graded_quadrature(integrand, upper, config)


def _outer_product(Kt: np.ndarray, Ks: np.ndarray) -> np.ndarray:
    return np.einsum('mij,mkj->mik', Kt, Ks)


# ══════════════════════════════════════════════════════════════════════════════
# Covariance oracle
# ══════════════════════════════════════════════════════════════════════════════

MEMO_SIZE = 4096  # (t, s) entries per oracle


class CovarianceOracle:
    """
    C(t,s) = E[X(t)X(s)ᵀ] for the RL-OFBM with exponent D.

    The eigen-decomposition of A is computed once per oracle and evaluations
    are memoized by (t, s).
    """

    def __init__(self, D: HurstOperator, config: Optional[QuadratureConfig] = None):
        self.D = D
        self.config = config or QuadratureConfig()
        self.family = MatrixPowerFamily(D.shifted)
        self._memo: Dict[Tuple[float, float], np.ndarray] = {}
        self._lock = Lock()

    def __call__(self, t: float, s: float) -> np.ndarray:
        t = check_time(t, "t")
        s = check_time(s, "s")
        key = (t, s)
        with self._lock:
            cached = self._memo.get(key)
            mirrored = self._memo.get((s, t))
        if cached is not None:
            return cached.copy()

        if mirrored is not None:
            value = mirrored.T.copy()
        else:
            value, err = kernel_pair_integral(t, s, self.D, _outer_product, self.config, self.family)
            if t == s:
                value = 0.5 * (value + value.T)
            logger.debug(f"C({t:.6g},{s:.6g}) error estimate {err:.2e}")

        with self._lock:
            if len(self._memo) >= MEMO_SIZE:
                self._memo.pop(next(iter(self._memo)))
            self._memo[key] = value
        return value.copy()

    def block(self, times: Sequence[float]) -> np.ndarray:
        """The (qd × qd) block matrix [C(t_l, t_l')]."""
        q, d = len(times), self.D.d
        out = np.zeros((q * d, q * d))
        for a in range(q):
            for b in range(a, q):
                block = self(times[a], times[b])
                out[a * d:(a + 1) * d, b * d:(b + 1) * d] = block
                out[b * d:(b + 1) * d, a * d:(a + 1) * d] = block.T
        return out


_oracles: Dict[Tuple, CovarianceOracle] = {}
_oracle_lock = Lock()
ORACLE_CACHE_SIZE = 64


def get_covariance_oracle(D: HurstOperator, config: Optional[QuadratureConfig] = None) -> CovarianceOracle:
    """Get or create the shared oracle for (D, quadrature settings)."""
    config = config or QuadratureConfig()
    key = (D.key, config)
    with _oracle_lock:
        oracle = _oracles.get(key)
        if oracle is None:
            oracle = CovarianceOracle(D, config)
            if len(_oracles) >= ORACLE_CACHE_SIZE:
                _oracles.pop(next(iter(_oracles)))
            _oracles[key] = oracle
    return oracle


def covariance(t: float, s: float, D: HurstOperator,
               config: Optional[QuadratureConfig] = None) -> np.ndarray:
    """C(t,s) = ∫_0^(t∧s) (t−u)^A ((s−u)^A)ᵀ du."""
    return get_covariance_oracle(D, config)(t, s)


def covariance_rows(D: HurstOperator, grid: Sequence[float],
                    config: Optional[QuadratureConfig] = None) -> List[Tuple[float, float, int, int, float]]:
    """CSV rows (t, s, row, col, value) over the grid × grid table."""
    oracle = get_covariance_oracle(D, config)
    rows = []
    for t in grid:
        for s in grid:
            C = oracle(t, s)
            for a in range(D.d):
                for b in range(D.d):
                    rows.append((float(t), float(s), a, b, float(C[a, b])))
    return rows


def properness_check(D: HurstOperator, times: Sequence[float],
                     config: Optional[QuadratureConfig] = None,
                     tolerance: float = 1e-12) -> Dict[str, Any]:
    """
    Positive definiteness of C(t,t) on a grid of times in (0, 1].

    The law of X(t) is proper (not supported on a hyperplane) iff C(t,t) ≻ 0.
    """
    oracle = get_covariance_oracle(D, config)
    minima = []
    for t in times:
        if not 0 < t <= 1:
            raise InvalidInputError(f"properness times must lie in (0, 1], got {t}")
        minima.append(float(np.linalg.eigvalsh(oracle(t, t)).min()))
    return {
        "times": [float(t) for t in times],
        "min_eigenvalues": minima,
        "proper": bool(all(m > tolerance for m in minima)),
    }


def kernel_l2_increment(t: float, s: float, n: int, D: HurstOperator,
                        config: Optional[QuadratureConfig] = None) -> float:
    """
    ∫_0^1 ‖(t̃−u)_+^A − (s̃−u)_+^A‖² du with t̃ = ⌊nt⌋/n, s̃ = ⌊ns⌋/n.

    The norm is the spectral norm. The integral splits at s̃: below it both
    kernels are active, between s̃ and t̃ only the first one is.
    """
    n = check_grid_size(n)
    t = check_time(t, "t")
    s = check_time(s, "s")
    if s > t:
        raise InvalidInputError(f"kernel_l2_increment requires s ≤ t, got s={s}, t={t}")

    t_snap, s_snap = snap(t, n), snap(s, n)
    gap = t_snap - s_snap
    if gap <= 0:
        return 0.0

    family = MatrixPowerFamily(D.shifted)

    def shared(v: np.ndarray) -> np.ndarray:
        diff = family(gap + v) - family(v)
        return np.linalg.norm(diff, 2, axis=(1, 2)) ** 2

    def exposed(v: np.ndarray) -> np.ndarray:
        return np.linalg.norm(family(v), 2, axis=(1, 2)) ** 2

    below, _ = graded_quadrature(shared, s_snap, config)
    between, _ = graded_quadrature(exposed, gap, config)
    return float(below + between)
