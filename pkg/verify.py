# verify.py
"""
Deterministic and Monte Carlo checks of the convergence ingredients.

Every check returns a VerificationReport; a failed property is reported with
passed=False, never raised. Exceptions are reserved for invalid arguments.

Checks that depend on squared increments use exact-square generators
(ξ² ≡ 1/n), which turns the quadratic sums into deterministic quantities.
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.stats

import mds
from config import VERIFY_CONFIG
from errors import DomainError, InvalidInputError
from export_utils import to_jsonable
from kernel import (CovarianceOracle, QuadratureConfig, check_grid_size, check_time,
                    get_covariance_oracle, grid_index, kernel_pair_integral, properness_check,
                    snap, unsnapped_cell_integrals, weight_table)
from matfun import (DEFAULT_LARGE_GRID, DEFAULT_SMALL_GRID, BoundWitness, HurstOperator,
                    mat_power, verify_power_bound)
from mds import IncrementMatrix, MDSConfig
from simulate import (MomentAccumulator, SimulationPlan, chunk_ranges, deterministic_block_moment,
                      deterministic_cross_moment, functional_coefficients, merge_accumulators,
                      simulate_batch, simulate_path)

logger = logging.getLogger(__name__)

KS_CRITICAL_95 = 1.36
MAX_PATTERN_DIM = 12

DEFAULT_LEMMA_PAIRS = ((1.0, 1.0), (0.5, 1.0), (0.25, 0.75))
DEFAULT_SIMILARITY_PAIRS = ((1.0, 0.7), (0.5, 0.5), (0.8, 0.3))
DEFAULT_DONSKER_PAIRS = ((0.25, 0.5), (0.5, 0.5), (0.75, 1.0), (1.0, 1.0))


# ══════════════════════════════════════════════════════════════════════════════
# Records
# ══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True, eq=False)
class LinearFunctional:
    """S = Σ_l a_l·⟨b, X(t_l)⟩ for the Cramér–Wold reduction."""
    times: Tuple[float, ...]
    a: Tuple[float, ...]
    b: np.ndarray

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        a = tuple(float(x) for x in self.a)
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if not times:
            raise InvalidInputError("a linear functional needs at least one time")
        if len(a) != len(times):
            raise InvalidInputError(f"{len(times)} times but {len(a)} coefficients")
        if any(not 0 < t <= 1 for t in times):
            raise InvalidInputError(f"functional times must lie in (0, 1], got {times}")
        if not (all(math.isfinite(x) for x in a) and np.all(np.isfinite(b)) and b.size):
            raise InvalidInputError("functional coefficients must be finite")
        if not any(a) or not np.any(b):
            raise DomainError("functional is identically zero: σ² would be degenerate")
        object.__setattr__(self, 'times', times)
        object.__setattr__(self, 'a', a)
        object.__setattr__(self, 'b', b)

    @property
    def d(self) -> int:
        return int(self.b.size)

    def variance(self, oracle: CovarianceOracle) -> float:
        """σ² = Σ_{l,l'} a_l a_l'·bᵀ C(t_l, t_l') b."""
        total = 0.0
        for (t1, a1), (t2, a2) in itertools.product(zip(self.times, self.a), repeat=2):
            total += a1 * a2 * float(self.b @ oracle(t1, t2) @ self.b)
        return total

    def to_dict(self) -> Dict[str, Any]:
        return {"times": list(self.times), "a": list(self.a), "b": self.b.tolist()}


@dataclass
class VerificationReport:
    name: str
    params: Dict[str, Any]
    stats: Dict[str, Any]
    passed: bool

    def to_dict(self) -> Dict[str, Any]:
        return to_jsonable({
            "name": self.name,
            "params": self.params,
            "stats": self.stats,
            "pass": bool(self.passed),
        })

    def curve_rows(self) -> List[Tuple[str, int, float]]:
        """(series, n, error) rows for reports that carry per-n error curves."""
        ladder = self.stats.get("n_ladder")
        curves = self.stats.get("errors")
        if not ladder or not isinstance(curves, dict):
            return []
        return [(label, n, err) for label, values in curves.items() for n, err in zip(ladder, values)]


@dataclass(frozen=True)
class TestConfig:
    """n-ladder, Monte Carlo size, Lindeberg ε, tolerances and t-grid for the checks."""
    __test__ = False

    n_ladder: Tuple[int, ...] = tuple(VERIFY_CONFIG['n_ladder'])
    replications: int = VERIFY_CONFIG['replications']
    epsilon: float = VERIFY_CONFIG['epsilon']
    ks_factor: float = VERIFY_CONFIG['ks_factor']
    t_grid: Tuple[float, ...] = tuple(VERIFY_CONFIG['t_grid'])
    tolerances: Dict[str, float] = field(default_factory=lambda: dict(VERIFY_CONFIG['tolerances']))
    seed: int = 0
    threads: int = 1
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)

    def __post_init__(self):
        ladder = tuple(check_grid_size(n) for n in self.n_ladder)
        if not ladder or any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise InvalidInputError(f"n-ladder must be non-empty and strictly increasing, got {ladder}")
        object.__setattr__(self, 'n_ladder', ladder)
        if int(self.replications) < 1:
            raise InvalidInputError(f"replications must be ≥ 1, got {self.replications}")
        if not self.epsilon > 0 or not self.ks_factor > 0:
            raise InvalidInputError("ε and the KS factor must be positive")
        bad = {k: v for k, v in self.tolerances.items() if not v > 0}
        if bad:
            raise InvalidInputError(f"tolerances must be positive: {bad}")
        object.__setattr__(self, 't_grid', tuple(check_time(t) for t in self.t_grid))

    @classmethod
    def from_dict(cls, overrides: Optional[Dict[str, Any]] = None) -> "TestConfig":
        overrides = dict(overrides or {})
        tolerances = {**VERIFY_CONFIG['tolerances'], **overrides.pop('tolerances', {})}
        quadrature = overrides.pop('quadrature', None)
        if isinstance(quadrature, dict):
            quadrature = QuadratureConfig.from_dict(quadrature)
        known = {k: v for k, v in overrides.items() if k in cls.__dataclass_fields__}
        unknown = set(overrides) - set(known)
        if unknown:
            raise InvalidInputError(f"unknown test settings: {sorted(unknown)}")
        return cls(tolerances=tolerances, quadrature=quadrature or QuadratureConfig(), **known)

    def tolerance(self, name: str) -> float:
        return float(self.tolerances[name])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_ladder": list(self.n_ladder),
            "replications": self.replications,
            "epsilon": self.epsilon,
            "ks_factor": self.ks_factor,
            "t_grid": list(self.t_grid),
            "tolerances": dict(self.tolerances),
            "seed": self.seed,
        }


def _exact_square_increments(n: int, d: int, seed: int) -> IncrementMatrix:
    return mds.generate(n, d, MDSConfig(seed=seed))


def _relative_max(value: np.ndarray, limit: np.ndarray) -> float:
    diff = float(np.max(np.abs(value - limit)))
    scale = float(np.max(np.abs(limit)))
    if scale == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return diff / scale


def _relative_frobenius(value: np.ndarray, limit: np.ndarray) -> float:
    diff = float(np.linalg.norm(value - limit))
    scale = float(np.linalg.norm(limit))
    if scale == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return diff / scale


def _decreasing(errors: Sequence[float]) -> bool:
    return all(e2 < e1 or e1 == 0.0 for e1, e2 in zip(errors, errors[1:]))


def _log_slope(ns: Sequence[int], errors: Sequence[float]) -> Optional[float]:
    pts = [(n, e) for n, e in zip(ns, errors) if e > 0 and math.isfinite(e)]
    if len(pts) < 2:
        return None
    x, y = np.log([p[0] for p in pts]), np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def _check_increments(n: int, D: HurstOperator, inc: IncrementMatrix) -> None:
    if inc.n != n or inc.d != D.d:
        raise InvalidInputError(f"increments are {inc.n}×{inc.d}, expected {n}×{D.d}")


def _entry(matrix: np.ndarray, *index: int) -> float:
    for i, bound in zip(index, matrix.shape):
        if isinstance(i, bool) or int(i) != i or not 0 <= int(i) < bound:
            raise InvalidInputError(f"index {index} out of range for shape {matrix.shape}")
    return float(matrix[tuple(int(i) for i in index)])


# ══════════════════════════════════════════════════════════════════════════════
# Quadratic sums and their limits
# ══════════════════════════════════════════════════════════════════════════════

def _paired_rows(n: int, D: HurstOperator, t_l: float, t_q: float):
    W = weight_table(n, D).weights
    m_l = grid_index(check_time(t_l, "t_l"), n)
    m_q = grid_index(check_time(t_q, "t_q"), n)
    i = np.arange(1, min(m_l, m_q) + 1)
    return W[m_l - i], W[m_q - i], i


def lemma6_matrix(n: int, D: HurstOperator, inc: IncrementMatrix, t_l: float, t_q: float) -> np.ndarray:
    """All (k, j) entries of Σ_i w_{m_l−i}[k,j]·w_{m_q−i}[k,j]·ξ_{i,j}²."""
    n = check_grid_size(n)
    _check_increments(n, D, inc)
    Wl, Wq, i = _paired_rows(n, D, t_l, t_q)
    if i.size == 0:
        return np.zeros((D.d, D.d))
    squares = inc.values[i - 1] ** 2
    return np.einsum('iab,iab,ib->ab', Wl, Wq, squares)


def lemma6_sum(n: int, D: HurstOperator, inc: IncrementMatrix,
               t_l: float, t_q: float, k: int, j: int) -> float:
    """
    Σ_i n²·(∫_cell K^n_{k,j}(t_l,·))·(∫_cell K^n_{k,j}(t_q,·))·ξ_{i,j}².

    n·∫ over cell i of K^n(t,·) is the weight w_{⌊nt⌋−i}, so no quadrature is needed.
    """
    return _entry(lemma6_matrix(n, D, inc, t_l, t_q), k, j)


def unsnapped_lemma_sum(n: int, D: HurstOperator, inc: IncrementMatrix,
                        t_l: float, t_q: float, k: int, j: int) -> float:
    """The same sum with the unsnapped kernel K(t,·) integrated over each cell."""
    n = check_grid_size(n)
    _check_increments(n, D, inc)
    Ul = unsnapped_cell_integrals(t_l, n, D)
    Uq = unsnapped_cell_integrals(t_q, n, D)
    matrix = np.einsum('iab,iab,ib->ab', Ul, Uq, inc.values ** 2)
    return _entry(matrix, k, j)


def lemma6_limit(D: HurstOperator, t_l: float, t_q: float,
                 config: Optional[QuadratureConfig] = None) -> np.ndarray:
    """∫_0^(t_l∧t_q) K(t_l,s) ⊙ K(t_q,s) ds, entrywise."""
    value, _ = kernel_pair_integral(t_l, t_q, D, lambda Kt, Ks: Kt * Ks, config)
    return value


def _functional_vector(b: Any, d: int, name: str = "b") -> np.ndarray:
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if b.size != d or not np.all(np.isfinite(b)):
        raise InvalidInputError(f"{name} must be a finite vector of length {d}")
    return b


def corollary_vector(n: int, D: HurstOperator, inc: IncrementMatrix, b: Any,
                     t_l: float, t_q: float, b_right: Any = None) -> np.ndarray:
    """Σ_i H^n_j(t_l)·H'^n_j(t_q)·ξ_{i,j}² for every j, with H = Σ_k b_k K^n_{k,·}."""
    n = check_grid_size(n)
    _check_increments(n, D, inc)
    b = _functional_vector(b, D.d)
    b_right = b if b_right is None else _functional_vector(b_right, D.d, "b_right")
    Wl, Wq, i = _paired_rows(n, D, t_l, t_q)
    if i.size == 0:
        return np.zeros(D.d)
    Hl = np.einsum('a,iaj->ij', b, Wl)
    Hq = np.einsum('a,iaj->ij', b_right, Wq)
    return np.sum(Hl * Hq * inc.values[i - 1] ** 2, axis=0)


def corollary_sum(n: int, D: HurstOperator, inc: IncrementMatrix, b: Any,
                  t_l: float, t_q: float, j: int, b_right: Any = None) -> float:
    """lemma6_sum with the kernel rows contracted against b (and b_right on the second factor)."""
    return _entry(corollary_vector(n, D, inc, b, t_l, t_q, b_right), j)


def corollary_limit(D: HurstOperator, b: Any, t_l: float, t_q: float,
                    config: Optional[QuadratureConfig] = None, b_right: Any = None) -> np.ndarray:
    b = _functional_vector(b, D.d)
    b_right = b if b_right is None else _functional_vector(b_right, D.d, "b_right")

    def combine(Kt: np.ndarray, Ks: np.ndarray) -> np.ndarray:
        return np.einsum('a,maj->mj', b, Kt) * np.einsum('a,maj->mj', b_right, Ks)

    value, _ = kernel_pair_integral(t_l, t_q, D, combine, config)
    return value


def _ladder_report(name: str, D: HurstOperator, pairs: Sequence[Tuple[float, float]],
                   config: TestConfig, tolerance: float,
                   value_fn: Callable[[int, IncrementMatrix, float, float], np.ndarray],
                   limit_fn: Callable[[float, float], np.ndarray],
                   extra_params: Optional[Dict[str, Any]] = None) -> VerificationReport:
    limits = [limit_fn(t_l, t_q) for t_l, t_q in pairs]
    labels = [f"t_l={t_l:g},t_q={t_q:g}" for t_l, t_q in pairs]
    errors: Dict[str, List[float]] = {label: [] for label in labels}

    for n in config.n_ladder:
        inc = _exact_square_increments(n, D.d, config.seed)
        for label, (t_l, t_q), limit in zip(labels, pairs, limits):
            errors[label].append(_relative_max(value_fn(n, inc, t_l, t_q), limit))
        logger.info(f"{name}: n={n} max error {max(e[-1] for e in errors.values()):.3e}")

    final = {label: values[-1] for label, values in errors.items()}
    monotone = {label: _decreasing(errors[label])
                for label, (t_l, t_q) in zip(labels, pairs) if t_l == t_q}
    rates = {label: _log_slope(config.n_ladder, values) for label, values in errors.items()}
    for label, rate in rates.items():
        if rate is not None:
            logger.info(f"{name}: {label} snap-error rate n^{rate:.3f}")

    passed = all(e <= tolerance for e in final.values()) and all(monotone.values())
    logger.info(f"{'✅' if passed else '❌'} {name} check")
    return VerificationReport(
        name=name,
        params={"D": D.to_list(), "pairs": [list(p) for p in pairs], "tolerance": tolerance,
                **(extra_params or {})},
        stats={"n_ladder": list(config.n_ladder), "errors": errors, "final_errors": final,
               "monotone": monotone, "error_rates": rates,
               "limits": {label: limit for label, limit in zip(labels, limits)}},
        passed=passed,
    )


def lemma6_check(D: HurstOperator, pairs: Optional[Sequence[Tuple[float, float]]] = None,
                 config: Optional[TestConfig] = None) -> VerificationReport:
    """
    Entrywise weight-product sums along the n-ladder against their quadrature limits.

    Pairs with t_l = t_q must also show strictly decreasing error.
    """
    config = config or TestConfig()
    pairs = [tuple(map(float, p)) for p in (pairs or DEFAULT_LEMMA_PAIRS)]
    return _ladder_report(
        "lemma6", D, pairs, config, config.tolerance('lemma6_relative'),
        lambda n, inc, t_l, t_q: lemma6_matrix(n, D, inc, t_l, t_q),
        lambda t_l, t_q: lemma6_limit(D, t_l, t_q, config.quadrature),
    )


def corollary_check(D: HurstOperator, b: Any = None,
                    pairs: Optional[Sequence[Tuple[float, float]]] = None,
                    config: Optional[TestConfig] = None) -> VerificationReport:
    config = config or TestConfig()
    b = _functional_vector(np.ones(D.d) if b is None else b, D.d)
    pairs = [tuple(map(float, p)) for p in (pairs or DEFAULT_LEMMA_PAIRS)]
    return _ladder_report(
        "corollary", D, pairs, config, config.tolerance('corollary_relative'),
        lambda n, inc, t_l, t_q: corollary_vector(n, D, inc, b, t_l, t_q),
        lambda t_l, t_q: corollary_limit(D, b, t_l, t_q, config.quadrature),
        extra_params={"b": b.tolist()},
    )


# ══════════════════════════════════════════════════════════════════════════════
# Finite-dimensional distributions
# ══════════════════════════════════════════════════════════════════════════════

def _functional_samples(plan: SimulationPlan, coefficients: np.ndarray, threads: int) -> np.ndarray:
    """S_n = Σ_i ⟨c_i, η_i⟩ for every replication of the plan, in replication order."""
    flat = coefficients.reshape(-1)

    def run_chunk(block: range) -> np.ndarray:
        inc = mds.generate_batch(plan.n, plan.d, plan.generator, block)
        return inc.reshape(len(block), -1) @ flat

    blocks = chunk_ranges(plan.replications, 256)
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run_chunk, blocks))
    else:
        parts = [run_chunk(block) for block in blocks]
    return np.concatenate(parts)


def fdd_test(plan: SimulationPlan, functional: LinearFunctional,
             config: Optional[TestConfig] = None) -> VerificationReport:
    """
    Law of S_n = Σ_l a_l⟨b, X_n(t_l)⟩ over plan.replications draws against N(0, σ²).

    σ² comes from the covariance oracle. The KS bar is ks_factor × 1.36/√M.
    For exact-square generators the exact variance (1/n)Σ‖c_i‖² is compared
    with the Monte Carlo variance as well.

    Raises:
        DomainError: σ² ≤ 0 (the functional annihilates the process)
    """
    config = config or TestConfig()
    if functional.d != plan.d:
        raise InvalidInputError(f"functional has dimension {functional.d}, plan has d={plan.d}")

    oracle = get_covariance_oracle(plan.D, config.quadrature)
    sigma2 = functional.variance(oracle)
    if not sigma2 > 1e-14:
        raise DomainError(f"degenerate limit variance σ² = {sigma2:.3e}")

    c = functional_coefficients(plan.weights, functional.times, functional.a, functional.b)
    samples = _functional_samples(plan, c, config.threads)
    M = samples.size

    variance = float(np.var(samples, ddof=1)) if M > 1 else 0.0
    variance_error = abs(variance / sigma2 - 1.0)
    ks = scipy.stats.kstest(samples / math.sqrt(sigma2), "norm")
    ks_bar = config.ks_factor * KS_CRITICAL_95 / math.sqrt(M)

    stats: Dict[str, Any] = {
        "replications": M,
        "sigma2": sigma2,
        "mean": float(np.mean(samples)),
        "variance": variance,
        "variance_relative_error": variance_error,
        "ks_distance": float(ks.statistic),
        "ks_pvalue": float(ks.pvalue),
        "ks_bar": ks_bar,
    }
    passed = variance_error <= config.tolerance('fdd_variance') and ks.statistic <= ks_bar

    if plan.generator.exact_squares:
        exact = float(np.sum(c ** 2) / plan.n)
        band = config.tolerance('band_sigmas') * exact * math.sqrt(2.0 / max(M - 1, 1))
        stats["exact_variance"] = exact
        stats["exact_variance_relative_error"] = abs(exact / sigma2 - 1.0)
        stats["variance_identity_band"] = band
        stats["variance_identity_ok"] = abs(variance - exact) <= band
        passed = passed and stats["variance_identity_ok"]

    logger.info(f"{'✅' if passed else '❌'} fdd: var {variance:.5g} vs σ² {sigma2:.5g}, "
                f"KS {ks.statistic:.4f} (bar {ks_bar:.4f})")
    return VerificationReport(
        name="fdd",
        params={"plan": plan.to_dict(), "functional": functional.to_dict(),
                "tolerance": config.tolerance('fdd_variance'), "ks_factor": config.ks_factor},
        stats=stats,
        passed=bool(passed),
    )


def lindeberg_check(plan: SimulationPlan, functional: LinearFunctional,
                    config: Optional[TestConfig] = None) -> VerificationReport:
    """
    Lindeberg sums Σ_i E[Z_i²·1{|Z_i| > ε}] of the array Z_i = ⟨c_i, η_i⟩ along the n-ladder.

    For two-point generators the conditional law of η_i given the past is
    uniform over the 2^d sign patterns scaled by 1/√n, so each sum is exact.
    It vanishes once max_i ‖c_i‖₁/√n ≤ ε.
    """
    config = config or TestConfig()
    if not plan.generator.exact_squares:
        raise InvalidInputError(f"Lindeberg sums are exact only for two-point generators, "
                                f"not {plan.generator.kind}")
    if plan.d > MAX_PATTERN_DIM:
        raise InvalidInputError(f"d={plan.d} exceeds {MAX_PATTERN_DIM} for sign-pattern enumeration")

    eps = config.epsilon
    patterns = np.array(list(itertools.product((-1.0, 1.0), repeat=plan.d)))
    sums, bounds = [], []
    for n in config.n_ladder:
        c = functional_coefficients(weight_table(n, plan.D), functional.times, functional.a, functional.b)
        Z = c @ patterns.T / math.sqrt(n)
        sums.append(float(np.sum(np.mean(Z ** 2 * (np.abs(Z) > eps), axis=1))))
        bounds.append(float(np.max(np.sum(np.abs(c), axis=1)) / math.sqrt(n)))

    consistent = all(s == 0.0 for s, bound in zip(sums, bounds) if bound <= eps)
    vanishing = [n for n, s in zip(config.n_ladder, sums) if s == 0.0]
    passed = consistent and sums[-1] == 0.0
    logger.info(f"{'✅' if passed else '❌'} lindeberg: sums {['%.3g' % s for s in sums]}")
    return VerificationReport(
        name="lindeberg",
        params={"D": plan.D.to_list(), "functional": functional.to_dict(), "epsilon": eps,
                "generator": plan.generator.kind},
        stats={"n_ladder": list(config.n_ladder), "lindeberg_sums": sums, "increment_bounds": bounds,
               "first_vanishing_n": vanishing[0] if vanishing else None, "consistent": consistent},
        passed=passed,
    )


# ══════════════════════════════════════════════════════════════════════════════
# Second moments
# ══════════════════════════════════════════════════════════════════════════════

def _ladder_up_to(ladder: Sequence[int], n: int) -> List[int]:
    steps = [m for m in ladder if m < n]
    return steps + [n]


def _band_scores(empirical: np.ndarray, target: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    diff = np.abs(empirical - target)
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(sigma > 0, diff / np.where(sigma > 0, sigma, 1.0), np.where(diff > 0, np.inf, 0.0))
    return scores


def covariance_convergence(plan: SimulationPlan, t_grid: Optional[Sequence[float]] = None,
                           config: Optional[TestConfig] = None,
                           monte_carlo: Optional[bool] = None) -> VerificationReport:
    """
    Second moments of X_n against C(t,s) on a t-grid.

    Exact-square generators: the deterministic block moment is compared along
    the n-ladder up to plan.n (relative Frobenius error, non-increasing on
    nested grids). Monte Carlo (default when plan.replications > 1): every
    entry of Ê[X_n(t)X_n(s)ᵀ] must lie within band_sigmas standard errors of
    C(t,s), using Var(XY) = E[X²]E[Y²] + E[XY]² for jointly Gaussian X, Y.
    """
    config = config or TestConfig()
    times = [check_time(t) for t in (t_grid if t_grid is not None else config.t_grid)]
    oracle = get_covariance_oracle(plan.D, config.quadrature)
    target = oracle.block(times)
    tolerance = config.tolerance('covariance_relative')
    if monte_carlo is None:
        monte_carlo = plan.replications > 1

    stats: Dict[str, Any] = {}
    passed = True

    if plan.generator.exact_squares:
        ladder = _ladder_up_to(config.n_ladder, plan.n)
        errors = [_relative_frobenius(deterministic_block_moment(weight_table(n, plan.D), times), target)
                  for n in ladder]
        monotone = all(e2 <= e1 * (1 + 1e-12)
                       for (n1, e1), (n2, e2) in zip(zip(ladder, errors), zip(ladder[1:], errors[1:]))
                       if n2 % n1 == 0)
        stats.update({"n_ladder": ladder, "errors": {"deterministic": errors},
                      "deterministic_error": errors[-1], "monotone": monotone})
        passed = errors[-1] <= tolerance and monotone
        logger.info(f"covariance: deterministic relative error {errors[-1]:.3e} at n={plan.n}")

    if monte_carlo:
        acc = simulate_batch(plan, times, mode="moments", threads=config.threads)
        q, d = len(times), plan.d
        empirical = acc.second_moment()
        limit = np.array([[oracle(t, s) for s in times] for t in times])
        diag = np.array([np.diag(oracle(t, t)) for t in times])
        var = np.einsum('la,mb->lmab', diag, diag) + limit ** 2
        sigma = np.sqrt(var / acc.count)
        scores = _band_scores(empirical, limit, sigma)
        max_score = float(np.max(scores))
        empirical_block = empirical.transpose(0, 2, 1, 3).reshape(q * d, q * d)
        stats.update({
            "replications": acc.count,
            "empirical": empirical_block,
            "monte_carlo_relative_error": _relative_frobenius(empirical_block, target),
            "max_band_score": max_score,
        })
        passed = passed and max_score <= config.tolerance('band_sigmas')

    logger.info(f"{'✅' if passed else '❌'} covariance convergence")
    stats["target"] = target
    return VerificationReport(
        name="covariance",
        params={"plan": plan.to_dict(), "t_grid": times, "tolerance": tolerance,
                "monte_carlo": bool(monte_carlo)},
        stats=stats,
        passed=bool(passed),
    )


def self_similarity_check(D: HurstOperator, pairs: Optional[Sequence[Tuple[float, float]]] = None,
                          c: float = 0.5, config: Optional[TestConfig] = None) -> VerificationReport:
    """
    C(ct, cs) = c^D·C(t,s)·(c^D)ᵀ entrywise.

    The right-hand side uses a Gauss rule of higher order than the left, so the
    check compares two distinct quadratures rather than one rule against itself.
    """
    config = config or TestConfig()
    if not 0 < c <= 1:
        raise InvalidInputError(f"scale c must lie in (0, 1], got {c}")
    pairs = [tuple(map(float, p)) for p in (pairs or DEFAULT_SIMILARITY_PAIRS)]
    for t, s in pairs:
        if not (0 < t <= 1 and 0 < s <= 1):
            raise InvalidInputError(f"self-similarity times must lie in (0, 1], got ({t}, {s})")

    oracle = get_covariance_oracle(D, config.quadrature)
    reference = get_covariance_oracle(D, replace(config.quadrature, order=config.quadrature.order + 4))
    P = mat_power(c, D.matrix)
    errors = []
    for t, s in pairs:
        lhs = oracle(c * t, c * s)
        rhs = P @ reference(t, s) @ P.T
        errors.append(float(np.max(np.abs(lhs - rhs))))

    tolerance = config.tolerance('self_similarity')
    passed = max(errors) <= tolerance
    logger.info(f"{'✅' if passed else '❌'} self-similarity c={c:g}: max error {max(errors):.3e}")
    return VerificationReport(
        name="self-similarity",
        params={"D": D.to_list(), "c": c, "pairs": [list(p) for p in pairs], "tolerance": tolerance},
        stats={"errors": errors, "max_error": max(errors)},
        passed=passed,
    )


# ══════════════════════════════════════════════════════════════════════════════
# Tightness
# ══════════════════════════════════════════════════════════════════════════════

def default_tightness_pairs(n: int) -> List[Tuple[float, float]]:
    """s = 0.5 and gaps 2^-8..2^-2, dropping gaps below one cell."""
    return [(0.5, 0.5 + 2.0 ** -j) for j in range(8, 1, -1) if 2.0 ** -j * n >= 1]


def default_tightness_triples(n: int) -> List[Tuple[float, float, float]]:
    k = max(n // 3, 1)
    return [
        ((k + 0.25) / n, (k + 0.5) / n, (k + 0.75) / n),
        ((k - 0.3) / n, (k + 0.1) / n, (k + 0.5) / n),
        (k / n, (k + 1) / n, min((k + 2) / n, 1.0)),
    ]


def _increment_second_moment(plan: SimulationPlan, s: float, t: float,
                             paths: Optional[np.ndarray]) -> float:
    if paths is None:
        weights = plan.weights
        M = (deterministic_cross_moment(weights, t, t) - deterministic_cross_moment(weights, t, s)
             - deterministic_cross_moment(weights, s, t) + deterministic_cross_moment(weights, s, s))
        return float(np.trace(M))
    diff = paths[:, grid_index(t, plan.n)] - paths[:, grid_index(s, plan.n)]
    return float(np.mean(np.sum(diff ** 2, axis=1)))


def tightness_check(plan: SimulationPlan, pairs: Optional[Sequence[Tuple[float, float]]] = None,
                    triples: Optional[Sequence[Tuple[float, float, float]]] = None,
                    config: Optional[TestConfig] = None,
                    witness: Optional[BoundWitness] = None) -> VerificationReport:
    """
    Hölder modulus of the increments: E‖X_n(t)−X_n(s)‖² against (t̃−s̃)^(2H).

    The log-log slope must fall in [2H − slope_below, 2H + slope_above], pairs
    with t̃ = s̃ must give exactly zero, and for triples s ≤ t ≤ u with
    u − s < 1/n the product ‖X_n(t)−X_n(s)‖²·‖X_n(u)−X_n(t)‖² must be exactly
    zero on every sampled path.
    """
    config = config or TestConfig()
    n = plan.n
    witness = witness or BoundWitness.fit(plan.D)
    H = witness.H
    pairs = [tuple(sorted(map(check_time, p))) for p in (pairs or default_tightness_pairs(n))]
    triples = [tuple(map(check_time, tr)) for tr in (triples or default_tightness_triples(n))]
    for s, t, u in triples:
        if not s <= t <= u:
            raise InvalidInputError(f"triple must satisfy s ≤ t ≤ u, got {(s, t, u)}")

    paths = None
    if not plan.generator.exact_squares:
        batch = simulate_batch(plan, mode="paths", threads=config.threads)
        paths = np.stack([p.values for p in batch])

    gaps, moments = [], []
    zero_gap_ok = True
    for s, t in pairs:
        gap = snap(t, n) - snap(s, n)
        value = _increment_second_moment(plan, s, t, paths)
        if gap == 0:
            zero_gap_ok &= value == 0.0
            continue
        gaps.append(gap)
        moments.append(value)

    slope, constant = None, None
    if len(gaps) >= 2:
        slope = float(np.polyfit(np.log(gaps), np.log(moments), 1)[0])
        constant = float(np.max(np.array(moments) / np.array(gaps) ** (2 * H)))
    window = (2 * H - config.tolerance('slope_below'), 2 * H + config.tolerance('slope_above'))
    slope_ok = slope is not None and window[0] <= slope <= window[1]

    samples = min(plan.replications, 8)
    products = []
    degenerate_ok = True
    for s, t, u in triples:
        values = []
        for r in range(samples):
            path = simulate_path(plan, r)
            left = float(np.sum((path.at(t) - path.at(s)) ** 2))
            right = float(np.sum((path.at(u) - path.at(t)) ** 2))
            values.append(left * right)
        degenerate = u - s < 1.0 / n
        if degenerate:
            degenerate_ok &= all(v == 0.0 for v in values)
        products.append({"triple": [s, t, u], "degenerate": degenerate, "products": values})

    passed = bool(slope_ok and zero_gap_ok and degenerate_ok)
    logger.info(f"{'✅' if passed else '❌'} tightness: slope {slope} in "
                f"[{window[0]:.3f}, {window[1]:.3f}] (2H = {2 * H:.3f})")
    return VerificationReport(
        name="tightness",
        params={"plan": plan.to_dict(), "pairs": [list(p) for p in pairs], "witness": witness.to_dict()},
        stats={"gaps": gaps, "second_moments": moments, "slope": slope, "window": list(window),
               "fitted_constant": constant, "zero_gap_ok": zero_gap_ok,
               "triples": products, "degenerate_ok": degenerate_ok},
        passed=passed,
    )


# ══════════════════════════════════════════════════════════════════════════════
# Partial sums, properness and power bounds
# ══════════════════════════════════════════════════════════════════════════════

def donsker_check(d: int, n: int, pairs: Optional[Sequence[Tuple[float, float]]] = None,
                  config: Optional[TestConfig] = None,
                  generator: Optional[MDSConfig] = None) -> VerificationReport:
    """
    Empirical E[η_n(t)η_n(s)ᵀ] of the partial-sum process against min(t̃, s̃)·I.

    Entry (a, b) has standard error √(t̃s̃ + min(t̃,s̃)²·δ_ab)/√M.
    """
    config = config or TestConfig()
    d, n = check_grid_size(d), check_grid_size(n)
    generator = generator or MDSConfig(seed=config.seed)
    pairs = [tuple(map(check_time, p)) for p in (pairs or DEFAULT_DONSKER_PAIRS)]
    times = tuple(sorted({t for pair in pairs for t in pair}))

    def run_chunk(block: range) -> MomentAccumulator:
        inc = mds.generate_batch(n, d, generator, block)
        partial = np.concatenate([np.zeros((len(block), 1, d)), np.cumsum(inc, axis=1)], axis=1)
        acc = MomentAccumulator(times, d)
        acc.add_paths(partial, n)
        return acc

    blocks = chunk_ranges(config.replications, 256)
    if config.threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            acc = merge_accumulators(list(pool.map(run_chunk, blocks)))
    else:
        acc = merge_accumulators([run_chunk(block) for block in blocks])

    second = acc.second_moment()
    eye = np.eye(d)
    scores, rows = [], []
    for t, s in pairs:
        l, m = times.index(t), times.index(s)
        ts, ss = snap(t, n), snap(s, n)
        low = min(ts, ss)
        sigma = np.sqrt(ts * ss + low ** 2 * eye) / math.sqrt(acc.count)
        score = _band_scores(second[l, m], low * eye, sigma)
        scores.append(float(np.max(score)))
        rows.append({"t": t, "s": s, "empirical": second[l, m], "max_score": scores[-1]})

    passed = max(scores) <= config.tolerance('band_sigmas')
    logger.info(f"{'✅' if passed else '❌'} donsker: max band score {max(scores):.2f}")
    return VerificationReport(
        name="donsker",
        params={"d": d, "n": n, "replications": acc.count, "generator": generator.to_dict(),
                "band_sigmas": config.tolerance('band_sigmas')},
        stats={"pairs": rows, "max_band_score": max(scores)},
        passed=bool(passed),
    )


def properness_report(D: HurstOperator, times: Optional[Sequence[float]] = None,
                      config: Optional[TestConfig] = None) -> VerificationReport:
    config = config or TestConfig()
    times = list(times if times is not None else config.t_grid)
    result = properness_check(D, times, config.quadrature, config.tolerance('properness'))
    logger.info(f"{'✅' if result['proper'] else '❌'} properness: min eigenvalue "
                f"{min(result['min_eigenvalues']):.3e}")
    return VerificationReport(
        name="properness",
        params={"D": D.to_list(), "times": times},
        stats={"min_eigenvalues": result["min_eigenvalues"]},
        passed=result["proper"],
    )


def power_bound_check(D: HurstOperator, grid: Optional[Sequence[float]] = None,
                      config: Optional[TestConfig] = None,
                      delta: Optional[float] = None) -> VerificationReport:
    """Fitted power-bound witness and its stability under grid refinement."""
    config = config or TestConfig()
    if grid is None:
        grid = np.concatenate([DEFAULT_SMALL_GRID, DEFAULT_LARGE_GRID])
    witness = BoundWitness.fit(D, delta=delta, grid=grid)
    result = verify_power_bound(D, witness, grid, tolerance=config.tolerance('power_bound_stability'))
    passed = bool(result["success"] and result["witness_holds"])
    logger.info(f"{'✅' if passed else '❌'} power bound: K1={witness.K1:.4g}, K2={witness.K2:.4g}")
    return VerificationReport(
        name="power-bound",
        params={"D": D.to_list(), "delta": witness.delta,
                "tolerance": config.tolerance('power_bound_stability')},
        stats={"witness": witness.to_dict(), "small_r": result["small_r"], "large_r": result["large_r"]},
        passed=passed,
    )
