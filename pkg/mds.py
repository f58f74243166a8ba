# mds.py
"""
Martingale-difference generators for the approximation sum.

Each column k of an n×d increment array is an independent copy of a scalar
martingale-difference sequence ξ_1..ξ_n with |ξ_i| ≤ C/√n. Column k of
replication m is drawn from its own counter-based substream (seed, k, m), so
any subset of replications can be regenerated, in any order or in parallel,
bit-for-bit.

Kinds:
    iid-rademacher     ξ_i = ε_i/√n with independent fair signs
    predictable-sign   ξ_i = s_i·ε_i/√n, s_i = +1 if the running sum before
                       step i is ≤ 0 else −1 (F_{i−1}-measurable, mean-reverting)
    violating-spike    iid-rademacher with one increment of size 2C/√n, used
                       only to exercise the failing branch of the checks
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from errors import DomainError, InvalidInputError, InvariantViolation
from kernel import check_grid_size, check_time, grid_index

logger = logging.getLogger(__name__)

KINDS = ("iid-rademacher", "predictable-sign", "violating-spike")
EXACT_SQUARE_KINDS = ("iid-rademacher", "predictable-sign")
KIND_ALIASES = {
    "rademacher": "iid-rademacher",
    "iid": "iid-rademacher",
    "predictable": "predictable-sign",
    "spike": "violating-spike",
}

MAX_SEED = 2 ** 64


@dataclass(frozen=True)
class MDSConfig:
    """Generator kind, bound constant C ≥ 1 and 64-bit master seed."""
    kind: str = "iid-rademacher"
    C: float = 1.0
    seed: int = 0

    def __post_init__(self):
        kind = KIND_ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise InvalidInputError(f"unknown generator kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, 'kind', kind)

        if not (math.isfinite(self.C) and self.C >= 1.0):
            raise DomainError(f"bound constant C must be ≥ 1, got {self.C}")
        if isinstance(self.seed, bool) or int(self.seed) != self.seed or not 0 <= int(self.seed) < MAX_SEED:
            raise InvalidInputError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        object.__setattr__(self, 'seed', int(self.seed))

    @property
    def exact_squares(self) -> bool:
        """ξ² ≡ 1/n for every draw."""
        return self.kind in EXACT_SQUARE_KINDS

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "C": self.C, "seed": self.seed}


def substream(seed: int, column: int, replication: int) -> np.random.Generator:
    """Philox generator keyed by (seed, column, replication)."""
    sequence = np.random.SeedSequence(seed, spawn_key=(column, replication))
    return np.random.Generator(np.random.Philox(sequence))


# ══════════════════════════════════════════════════════════════════════════════
# Increment arrays
# ══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True, eq=False)
class IncrementMatrix:
    """One realization of η_1..η_n ∈ ℝ^d; values[i−1, k] = ξ_{i,k}."""
    n: int
    d: int
    values: np.ndarray = field(repr=False)
    config: MDSConfig = field(default_factory=MDSConfig)
    replication: int = 0

    def __post_init__(self):
        if self.values.shape != (self.n, self.d):
            raise InvariantViolation(f"increments shape {self.values.shape} is not ({self.n}, {self.d})")
        if self.config.kind != "violating-spike" and self.values.size:
            bound = self.config.C / math.sqrt(self.n)
            if np.max(np.abs(self.values)) > bound * (1 + 1e-12):
                raise InvariantViolation(f"increment exceeds C/√n = {bound:.6g}")

    @classmethod
    def zeros(cls, n: int, d: int) -> "IncrementMatrix":
        """All-zero increments, a test hook for the simulation pipeline."""
        return cls(n=n, d=d, values=np.zeros((n, d)))

    def to_rows(self) -> List[Tuple[int, int, float]]:
        """CSV rows (i, k, value) with 1-based step index i."""
        return [(i + 1, k, float(self.values[i, k])) for i in range(self.n) for k in range(self.d)]


def _apply_predictable_signs(units: np.ndarray) -> np.ndarray:
    """
    Turn fair ±1 signs into the predictable-sign sequence along axis 1.

    Works on integer units so the "running sum ≤ 0" rule is exact.
    """
    out = np.empty_like(units)
    running = np.zeros(units.shape[:1] + units.shape[2:], dtype=np.int64)
    for i in range(units.shape[1]):
        sign = np.where(running <= 0, 1, -1).astype(units.dtype)
        out[:, i] = sign * units[:, i]
        running += out[:, i]
    return out


def spike_index(n: int) -> int:
    """0-based step carrying the oversized increment of the violating-spike kind."""
    return n // 2


def generate_batch(n: int, d: int, config: MDSConfig, replications: Iterable[int]) -> np.ndarray:
    """
    Increments for several replications at once, shape (R, n, d).

    Row r equals generate(n, d, config, replications[r]).values exactly.
    """
    n = check_grid_size(n)
    d = check_grid_size(d)
    replications = [int(m) for m in replications]

    units = np.empty((len(replications), n, d), dtype=np.int64)
    for r, m in enumerate(replications):
        for k in range(d):
            rng = substream(config.seed, k, m)
            units[r, :, k] = rng.integers(0, 2, size=n, dtype=np.int64) * 2 - 1

    if config.kind == "predictable-sign":
        units = _apply_predictable_signs(units)

    values = units / math.sqrt(n)
    if config.kind == "violating-spike":
        i = spike_index(n)
        values[:, i, 0] = np.sign(values[:, i, 0]) * 2.0 * config.C / math.sqrt(n)
    return values


def generate(n: int, d: int, config: MDSConfig, replication: int = 0) -> IncrementMatrix:
    """One n×d realization of the martingale-difference array."""
    values = generate_batch(n, d, config, [replication])[0]
    return IncrementMatrix(n=int(n), d=int(d), values=values, config=config, replication=int(replication))


def partial_sum(inc: IncrementMatrix, t: float) -> np.ndarray:
    """η_n(t) = Σ_{i ≤ ⌊nt⌋} η_i, componentwise."""
    t = check_time(t)
    m = grid_index(t, inc.n)
    return inc.values[:m].sum(axis=0)


# ══════════════════════════════════════════════════════════════════════════════
# Condition checks
# ══════════════════════════════════════════════════════════════════════════════

DEFAULT_QV_GRID = tuple(round(0.1 * k, 10) for k in range(1, 11))


@dataclass
class ConditionReport:
    """Statistics behind the boundedness, unit-square, quadratic-variation and Lindeberg flags."""
    n: int
    d: int
    C: float
    epsilon: float
    max_abs_scaled: float
    square_deviation: float
    qv_curve: List[Tuple[float, List[float]]]
    qv_deviation: float
    lindeberg_sums: List[float]
    bounded: bool
    unit_squares: bool
    quadratic_variation: bool
    lindeberg: bool

    @property
    def lindeberg_sum(self) -> float:
        return max(self.lindeberg_sums) if self.lindeberg_sums else 0.0

    @property
    def passed(self) -> bool:
        return self.bounded and self.unit_squares and self.quadratic_variation and self.lindeberg

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "d": self.d,
            "C": self.C,
            "epsilon": self.epsilon,
            "max_abs_scaled": self.max_abs_scaled,
            "square_deviation": self.square_deviation,
            "qv_curve": [{"t": t, "qv": qv} for t, qv in self.qv_curve],
            "qv_deviation": self.qv_deviation,
            "lindeberg_sum": self.lindeberg_sum,
            "lindeberg_sums": self.lindeberg_sums,
            "flags": {
                "bounded": self.bounded,
                "unit_squares": self.unit_squares,
                "quadratic_variation": self.quadratic_variation,
                "lindeberg": self.lindeberg,
            },
            "pass": self.passed,
        }


def check_conditions(inc: IncrementMatrix, epsilon: float,
                     t_grid: Optional[Sequence[float]] = None,
                     square_tolerance: float = 1e-9,
                     lindeberg_tolerance: float = 0.0) -> ConditionReport:
    """
    Empirical martingale-difference conditions on one realization.

      bounded              √n·max|ξ| ≤ C
      unit_squares         max |n·ξ² − 1| ≤ square_tolerance
      quadratic_variation  sup_t |Σ_{i≤⌊nt⌋} ξ_i² − t| ≤ 1/n
      lindeberg            Σ_i ξ_i²·1{|ξ_i| > ε} ≤ lindeberg_tolerance per column

    For the two-point kinds the conditional law of ξ_i given the past is
    explicit, so the conditional expectations in the Lindeberg sum are the
    realized values.
    """
    if not epsilon > 0:
        raise InvalidInputError(f"Lindeberg ε must be positive, got {epsilon}")
    n, d = inc.n, inc.d
    C = inc.config.C
    grid = [check_time(t) for t in (t_grid if t_grid is not None else DEFAULT_QV_GRID)]

    values = inc.values
    squares = values ** 2
    max_abs_scaled = float(math.sqrt(n) * np.max(np.abs(values))) if values.size else 0.0
    square_deviation = float(np.max(np.abs(n * squares - 1.0))) if values.size else 0.0

    cumulative = np.vstack([np.zeros((1, d)), np.cumsum(squares, axis=0)])
    qv_curve = []
    qv_deviation = 0.0
    for t in grid:
        qv = cumulative[grid_index(t, n)]
        qv_curve.append((t, [float(x) for x in qv]))
        qv_deviation = max(qv_deviation, float(np.max(np.abs(qv - t))))

    large = np.abs(values) > epsilon
    lindeberg_sums = [float(x) for x in np.sum(squares * large, axis=0)]

    report = ConditionReport(
        n=n, d=d, C=C, epsilon=float(epsilon),
        max_abs_scaled=max_abs_scaled,
        square_deviation=square_deviation,
        qv_curve=qv_curve,
        qv_deviation=qv_deviation,
        lindeberg_sums=lindeberg_sums,
        bounded=max_abs_scaled <= C * (1 + 1e-12),
        unit_squares=square_deviation <= square_tolerance,
        quadratic_variation=qv_deviation <= 1.0 / n + 1e-12,
        lindeberg=max(lindeberg_sums) <= lindeberg_tolerance,
    )
    if not report.passed:
        logger.info(f"⚠️ martingale-difference conditions failed for {inc.config.kind} (n={n})")
    return report
