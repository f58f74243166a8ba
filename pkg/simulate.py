# simulate.py
"""
Approximation paths X_n(m/n) = Σ_{i≤m} w_{m−i}·η_i, Monte Carlo batches over
independent replications, and an exact Gaussian sampler for the limit process.

The weights depend only on m − i, so the whole path is a Toeplitz product:
the naive method sums it directly (O(d²n²)), the fft method runs d² scalar
FFT convolutions (O(d²·n log n)).
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.signal

import mds
from config import SIMULATION_CONFIG, VERIFY_CONFIG
from errors import CapacityError, InvalidInputError, NumericError
from kernel import (KernelWeights, QuadratureConfig, check_grid_size,
                    check_time, get_covariance_oracle, grid_index, weight_table)
from matfun import HurstOperator
from mds import IncrementMatrix, MDSConfig

logger = logging.getLogger(__name__)

METHODS = ("naive", "fft")
MAX_GAUSSIAN_DIM = 64


# ══════════════════════════════════════════════════════════════════════════════
# Plans and paths
# ══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True, eq=False)
class SimulationPlan:
    """Everything needed to reproduce a batch of approximation paths."""
    n: int
    d: int
    D: HurstOperator
    generator: MDSConfig = field(default_factory=MDSConfig)
    replications: int = 1
    seed: Optional[int] = None
    method: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, 'n', check_grid_size(self.n))
        object.__setattr__(self, 'd', check_grid_size(self.d))
        if self.D.d != self.d:
            raise InvalidInputError(f"D is {self.D.d}×{self.D.d} but the plan has d={self.d}")
        if isinstance(self.replications, bool) or int(self.replications) != self.replications \
                or self.replications < 1:
            raise InvalidInputError(f"replications must be a positive integer, got {self.replications!r}")
        object.__setattr__(self, 'replications', int(self.replications))

        method = self.method
        if method is None:
            method = "fft" if self.n >= SIMULATION_CONFIG['fft_threshold'] else "naive"
        if method not in METHODS:
            raise InvalidInputError(f"method must be one of {METHODS}, got {method!r}")
        object.__setattr__(self, 'method', method)

        # no plan seed keeps the generator's; replace() validates it as a 64-bit unsigned integer
        seed = self.generator.seed if self.seed is None else self.seed
        object.__setattr__(self, 'generator', replace(self.generator, seed=seed))
        object.__setattr__(self, 'seed', self.generator.seed)

    @property
    def weights(self) -> KernelWeights:
        return weight_table(self.n, self.D)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "d": self.d,
            "D": self.D.to_list(),
            "generator": self.generator.to_dict(),
            "replications": self.replications,
            "seed": self.seed,
            "method": self.method,
        }


@dataclass(frozen=True, eq=False)
class PathGrid:
    """Values X_n(m/n), m = 0..n; X_n is constant on each cell [m/n, (m+1)/n)."""
    n: int
    d: int
    values: np.ndarray = field(repr=False)
    seed: int = 0
    replication: int = 0
    method: str = "naive"
    generator: str = "iid-rademacher"

    def at(self, t: float) -> np.ndarray:
        return self.values[grid_index(check_time(t), self.n)]

    def to_rows(self) -> List[Tuple]:
        """CSV rows (m, t, x_1..x_d)."""
        return [(m, m / self.n, *[float(x) for x in self.values[m]]) for m in range(self.n + 1)]


def convolve_naive(weights: KernelWeights, increments: np.ndarray) -> np.ndarray:
    """Direct Toeplitz sum; increments (n, d) → path (n+1, d)."""
    n, d = weights.n, weights.d
    out = np.zeros((n + 1, d))
    for m in range(1, n + 1):
        out[m] = np.einsum('kab,kb->a', weights.row(m), increments[:m])
    return out


def convolve_fft(weights: KernelWeights, increments: np.ndarray) -> np.ndarray:
    """
    FFT Toeplitz sum, one scalar convolution per (row, col) of the weights.

    increments may carry leading batch axes: (..., n, d) → (..., n+1, d).
    """
    n, d = weights.n, weights.d
    W = weights.weights
    batch_shape = increments.shape[:-2]
    out = np.zeros(batch_shape + (n + 1, d))
    kernel_shape = (1,) * len(batch_shape) + (n,)
    for a in range(d):
        for b in range(d):
            series = W[:, a, b]
            if not np.any(series):
                continue
            conv = scipy.signal.fftconvolve(increments[..., :, b], series.reshape(kernel_shape), axes=-1)
            out[..., 1:, a] += conv[..., :n]
    return out


def _convolve(weights: KernelWeights, increments: np.ndarray, method: str) -> np.ndarray:
    if method == "fft":
        return convolve_fft(weights, increments)
    if increments.ndim == 2:
        return convolve_naive(weights, increments)
    return np.stack([convolve_naive(weights, inc) for inc in increments])


def simulate_path(plan: SimulationPlan, replication: int = 0,
                  increments: Optional[IncrementMatrix] = None) -> PathGrid:
    """
    One approximation path from replication `replication` of the plan's generator.

    `increments` replaces the generated array (used to feed zero or hand-built
    increments through the pipeline).
    """
    if increments is None:
        increments = mds.generate(plan.n, plan.d, plan.generator, replication)
    elif increments.values.shape != (plan.n, plan.d):
        raise InvalidInputError(
            f"increments shape {increments.values.shape} does not match plan ({plan.n}, {plan.d})"
        )

    values = _convolve(plan.weights, increments.values, plan.method)
    return PathGrid(n=plan.n, d=plan.d, values=values, seed=plan.seed, replication=replication,
                    method=plan.method, generator=plan.generator.kind)


# ══════════════════════════════════════════════════════════════════════════════
# Batches
# ══════════════════════════════════════════════════════════════════════════════

@dataclass
class MomentAccumulator:
    """Running sums of X_n(t_l) and X_n(t_l)X_n(t_l')ᵀ over replications."""
    t_grid: Tuple[float, ...]
    d: int
    count: int = 0
    total: Optional[np.ndarray] = None
    cross: Optional[np.ndarray] = None

    def __post_init__(self):
        q = len(self.t_grid)
        if self.total is None:
            self.total = np.zeros((q, self.d))
        if self.cross is None:
            self.cross = np.zeros((q, q, self.d, self.d))

    def add_paths(self, paths: np.ndarray, n: int) -> None:
        """paths: (R, n+1, d) path values."""
        idx = [grid_index(t, n) for t in self.t_grid]
        X = paths[:, idx, :]
        self.total += X.sum(axis=0)
        self.cross += np.einsum('rla,rmb->lmab', X, X)
        self.count += X.shape[0]

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        if tuple(other.t_grid) != tuple(self.t_grid) or other.d != self.d:
            raise InvalidInputError("cannot merge accumulators over different grids")
        return MomentAccumulator(self.t_grid, self.d, self.count + other.count,
                                 self.total + other.total, self.cross + other.cross)

    def mean(self) -> np.ndarray:
        return self.total / max(self.count, 1)

    def second_moment(self) -> np.ndarray:
        """Ê[X(t_l) X(t_l')ᵀ], shape (q, q, d, d)."""
        return self.cross / max(self.count, 1)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t_grid": list(self.t_grid),
            "count": self.count,
            "mean": self.mean().tolist(),
            "second_moment": self.second_moment().tolist(),
        }


def chunk_ranges(total: int, chunk_size: int) -> List[range]:
    return [range(start, min(start + chunk_size, total)) for start in range(0, total, chunk_size)]


def merge_accumulators(items: List[MomentAccumulator]) -> MomentAccumulator:
    """Pairwise merge in fixed order, so the result does not depend on scheduling."""
    while len(items) > 1:
        merged = [items[i].merge(items[i + 1]) for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            merged.append(items[-1])
        items = merged
    return items[0]


def simulate_batch(plan: SimulationPlan, t_grid: Optional[Sequence[float]] = None,
                   mode: str = "auto", threads: Optional[int] = None,
                   chunk_size: Optional[int] = None) -> Union[List[PathGrid], MomentAccumulator]:
    """
    All plan.replications paths, or streamed moment accumulators.

    Args:
        t_grid: evaluation times for the accumulator variant
        mode: "paths", "moments", or "auto" (moments once M·n·d exceeds the
              streaming threshold)
        threads: worker count; results are identical for any value

    Raises:
        CapacityError: stored paths would exceed SIMULATION_CONFIG['max_values']
    """
    if mode not in ("auto", "paths", "moments"):
        raise InvalidInputError(f"mode must be auto, paths or moments, got {mode!r}")
    size = plan.replications * plan.n * plan.d
    if mode == "auto":
        mode = "moments" if size > SIMULATION_CONFIG['stream_threshold'] else "paths"
        if mode == "moments":
            logger.info(f"⚠️ {size} values exceed the streaming threshold; returning moment accumulators")

    if mode == "paths":
        stored = plan.replications * (plan.n + 1) * plan.d
        if stored > SIMULATION_CONFIG['max_values']:
            raise CapacityError(
                f"{stored} path values requested, limit is {SIMULATION_CONFIG['max_values']}"
            )

    grid = tuple(check_time(t) for t in (t_grid if t_grid is not None else VERIFY_CONFIG['t_grid']))
    threads = max(1, int(threads or SIMULATION_CONFIG['threads']))
    chunk_size = max(1, int(chunk_size or SIMULATION_CONFIG['chunk_size']))
    weights = plan.weights

    def run_chunk(block: range):
        increments = mds.generate_batch(plan.n, plan.d, plan.generator, block)
        values = _convolve(weights, increments, plan.method)
        if mode == "paths":
            return [PathGrid(n=plan.n, d=plan.d, values=values[r], seed=plan.seed, replication=m,
                             method=plan.method, generator=plan.generator.kind)
                    for r, m in enumerate(block)]
        acc = MomentAccumulator(grid, plan.d)
        acc.add_paths(values, plan.n)
        return acc

    blocks = chunk_ranges(plan.replications, chunk_size)
    if threads == 1 or len(blocks) == 1:
        results = [run_chunk(block) for block in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_chunk, blocks))

    logger.debug(f"batch of {plan.replications} replications done in {len(blocks)} chunks")
    if mode == "paths":
        return [path for chunk in results for path in chunk]
    return merge_accumulators(results)


# ══════════════════════════════════════════════════════════════════════════════
# Deterministic moments for exact-square generators (ξ² ≡ 1/n)
# ══════════════════════════════════════════════════════════════════════════════

def deterministic_cross_moment(weights: KernelWeights, t: float, s: float) -> np.ndarray:
    """E[X_n(t)X_n(s)ᵀ] = (1/n)·Σ_{i ≤ ⌊nt⌋∧⌊ns⌋} w_{⌊nt⌋−i}·w_{⌊ns⌋−i}ᵀ."""
    n, W = weights.n, weights.weights
    m_t = grid_index(check_time(t), n)
    m_s = grid_index(check_time(s), n)
    j = min(m_t, m_s)
    if j == 0:
        return np.zeros((weights.d, weights.d))
    i = np.arange(1, j + 1)
    return np.einsum('iab,icb->ac', W[m_t - i], W[m_s - i]) / n


def deterministic_block_moment(weights: KernelWeights, times: Sequence[float]) -> np.ndarray:
    """The (qd × qd) block matrix of deterministic cross moments."""
    q, d = len(times), weights.d
    out = np.zeros((q * d, q * d))
    for a in range(q):
        for b in range(a, q):
            block = deterministic_cross_moment(weights, times[a], times[b])
            out[a * d:(a + 1) * d, b * d:(b + 1) * d] = block
            out[b * d:(b + 1) * d, a * d:(a + 1) * d] = block.T
    return out


def functional_coefficients(weights: KernelWeights, times: Sequence[float],
                            a: Sequence[float], b: Sequence[float]) -> np.ndarray:
    """
    c_i = Σ_l a_l·1{i ≤ ⌊nt_l⌋}·w_{⌊nt_l⌋−i}ᵀ b, so Σ_l a_l⟨b, X_n(t_l)⟩ = Σ_i ⟨c_i, η_i⟩.

    Returns an (n, d) array with row i−1 holding c_i.
    """
    n, W = weights.n, weights.weights
    b = np.asarray(b, dtype=np.float64)
    out = np.zeros((n, weights.d))
    for t_l, a_l in zip(times, a):
        m = grid_index(check_time(t_l), n)
        if m == 0 or a_l == 0:
            continue
        i = np.arange(1, m + 1)
        out[:m] += a_l * np.einsum('iab,a->ib', W[m - i], b)
    return out


# ══════════════════════════════════════════════════════════════════════════════
# Exact Gaussian reference sampler
# ══════════════════════════════════════════════════════════════════════════════

def _jitter_cholesky(cov: np.ndarray, psd_tolerance: float = 1e-8, max_tries: int = 10) -> np.ndarray:
    """
    Lower Cholesky factor, adding diagonal jitter when roundoff breaks PSD-ness.

    Raises:
        NumericError: the matrix is indefinite beyond psd_tolerance (relative)
    """
    scale = float(np.max(np.abs(np.diag(cov)))) or 1.0
    try:
        return scipy.linalg.cholesky(cov, lower=True)
    except np.linalg.LinAlgError:
        pass

    min_eig = float(np.linalg.eigvalsh(cov).min())
    if min_eig < -psd_tolerance * scale:
        raise NumericError(
            f"block covariance is not PSD: min eigenvalue {min_eig:.3e} (scale {scale:.3e})"
        )

    jitter = scale * 1e-12
    for attempt in range(max_tries):
        logger.warning(f"⚠️ adding jitter {jitter:.1e} to block covariance (attempt {attempt + 1})")
        try:
            return scipy.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            jitter *= 10
    raise NumericError(f"Cholesky failed after {max_tries} jitter attempts (last jitter {jitter:.1e})")


def exact_gaussian_sample(D: HurstOperator, t_grid: Sequence[float], seed: int,
                          size: Optional[int] = None,
                          config: Optional[QuadratureConfig] = None) -> np.ndarray:
    """
    Draws of (X(t_1), …, X(t_q)) from the limit law N(0, [C(t_l, t_l')]).

    Returns an array (q, d), or (size, q, d) when size is given.
    """
    times = [float(t) for t in t_grid]
    if not times or any(not 0 < t <= 1 for t in times):
        raise InvalidInputError(f"t-grid must be a non-empty subset of (0, 1], got {times}")
    if len(set(times)) != len(times):
        raise InvalidInputError(f"t-grid points must be distinct, got {times}")
    q, d = len(times), D.d
    if q * d > MAX_GAUSSIAN_DIM:
        raise InvalidInputError(f"q·d = {q * d} exceeds {MAX_GAUSSIAN_DIM}")

    oracle = get_covariance_oracle(D, config)
    cov = oracle.block(times)
    cov = 0.5 * (cov + cov.T)
    L = _jitter_cholesky(cov)

    rng = np.random.Generator(np.random.Philox(seed))
    draws = 1 if size is None else int(size)
    z = rng.standard_normal((draws, q * d))
    samples = (z @ L.T).reshape(draws, q, d)
    return samples[0] if size is None else samples


# ══════════════════════════════════════════════════════════════════════════════
# Naive vs FFT timing
# ══════════════════════════════════════════════════════════════════════════════

def benchmark(D: HurstOperator, n_values: Sequence[int], repeats: int = 3,
              seed: int = 0) -> List[Dict[str, Any]]:
    """Best-of-`repeats` wall time of both methods on the same increments."""
    rows = []
    for n in n_values:
        weights = weight_table(n, D)
        increments = mds.generate(n, D.d, MDSConfig(seed=seed)).values

        timings = {}
        outputs = {}
        for method in METHODS:
            best = math.inf
            for _ in range(max(1, repeats)):
                start = time.perf_counter()
                outputs[method] = _convolve(weights, increments, method)
                best = min(best, time.perf_counter() - start)
            timings[method] = best

        row = {
            "n": int(n),
            "d": D.d,
            "naive_seconds": timings["naive"],
            "fft_seconds": timings["fft"],
            "speedup": timings["naive"] / max(timings["fft"], 1e-12),
            "max_abs_difference": float(np.max(np.abs(outputs["naive"] - outputs["fft"]))),
        }
        logger.info(f"bench n={n}: naive {row['naive_seconds']:.4f}s, fft {row['fft_seconds']:.4f}s "
                    f"({row['speedup']:.1f}×)")
        rows.append(row)
    return rows
