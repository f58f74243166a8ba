import math

import numpy as np
import pytest

import mds
from errors import DomainError, InvalidInputError, InvariantViolation
from mds import IncrementMatrix, MDSConfig, check_conditions, generate, generate_batch, partial_sum

MAIN_KINDS = ("iid-rademacher", "predictable-sign")


@pytest.mark.parametrize("kind", MAIN_KINDS)
def test_increments_have_exact_squares(kind):
    n = 1024
    inc = generate(n, 3, MDSConfig(kind=kind, seed=11))
    assert math.sqrt(n) * np.max(np.abs(inc.values)) == 1.0
    np.testing.assert_array_equal(inc.values ** 2, np.full((n, 3), 1.0 / n))


@pytest.mark.parametrize("kind", MAIN_KINDS)
def test_conditions_hold_for_main_kinds(kind):
    n, epsilon = 1024, 0.1
    report = check_conditions(generate(n, 2, MDSConfig(kind=kind, seed=3)), epsilon)
    assert report.bounded and report.unit_squares and report.quadratic_variation
    assert report.lindeberg_sum == 0.0
    assert report.qv_deviation <= 1.0 / n
    assert report.passed
    assert report.to_dict()["pass"] is True


def test_lindeberg_sum_nonzero_when_epsilon_below_step():
    n = 64
    report = check_conditions(generate(n, 1, MDSConfig(seed=1)), epsilon=0.1)
    # |ξ| = 1/8 > ε, so every square counts
    assert report.lindeberg_sum == pytest.approx(1.0)
    assert not report.lindeberg


def test_violating_spike_fails_bound():
    n = 256
    inc = generate(n, 2, MDSConfig(kind="violating-spike", C=1.0, seed=5))
    report = check_conditions(inc, epsilon=0.5)
    assert report.max_abs_scaled == pytest.approx(2.0)
    assert not report.bounded
    assert not report.passed
    assert abs(inc.values[mds.spike_index(n), 0]) == pytest.approx(2.0 / math.sqrt(n))


def test_generation_is_deterministic():
    config = MDSConfig(kind="predictable-sign", seed=2 ** 63 + 17)
    a = generate(128, 2, config, replication=4)
    b = generate(128, 2, config, replication=4)
    np.testing.assert_array_equal(a.values, b.values)
    c = generate(128, 2, config, replication=5)
    assert not np.array_equal(a.values, c.values)


def test_batch_rows_match_single_replications():
    config = MDSConfig(seed=9)
    batch = generate_batch(64, 2, config, [7, 2, 30])
    for row, m in zip(batch, (7, 2, 30)):
        np.testing.assert_array_equal(row, generate(64, 2, config, m).values)


def test_predictable_signs_follow_running_sum():
    n = 512
    fair = np.rint(generate(n, 2, MDSConfig(kind="iid-rademacher", seed=21)).values * math.sqrt(n))
    pred = np.rint(generate(n, 2, MDSConfig(kind="predictable-sign", seed=21)).values * math.sqrt(n))
    running = np.zeros(2)
    for i in range(n):
        sign = np.where(running <= 0, 1.0, -1.0)
        np.testing.assert_array_equal(pred[i], sign * fair[i])
        running += pred[i]


def test_predictable_sign_is_conditionally_centered():
    n, M = 32, 4000
    batch = generate_batch(n, 1, MDSConfig(kind="predictable-sign", seed=4), range(M))
    units = np.rint(batch[..., 0] * math.sqrt(n))
    before = np.cumsum(units, axis=1) - units
    for mask in (before <= 0, before > 0):
        count = int(mask.sum())
        assert abs(units[mask].mean()) <= 4.0 / math.sqrt(count)


def test_columns_are_uncorrelated():
    n = 4096
    values = generate(n, 2, MDSConfig(seed=8)).values * math.sqrt(n)
    for lag in range(4):
        rho = np.mean(values[lag:, 0] * values[:n - lag, 1])
        assert abs(rho) <= 4.0 / math.sqrt(n)


def test_partial_sums():
    inc = generate(100, 2, MDSConfig(seed=12))
    np.testing.assert_array_equal(partial_sum(inc, 0.0), np.zeros(2))
    np.testing.assert_allclose(partial_sum(inc, 1.0), inc.values.sum(axis=0))
    np.testing.assert_allclose(partial_sum(inc, 0.29), inc.values[:29].sum(axis=0))


@pytest.mark.slow
def test_partial_sum_law_at_one():
    n, M = 64, 20000
    sums = generate_batch(n, 2, MDSConfig(seed=13), range(M)).sum(axis=1)
    cov = sums.T @ sums / M
    assert abs(cov[0, 0] - 1.0) <= 4.0 * math.sqrt(2.0 / M)
    assert abs(cov[1, 1] - 1.0) <= 4.0 * math.sqrt(2.0 / M)
    assert abs(cov[0, 1]) <= 4.0 / math.sqrt(M)


def test_config_validation():
    with pytest.raises(DomainError):
        MDSConfig(C=0.5)
    with pytest.raises(InvalidInputError):
        MDSConfig(kind="gaussian")
    with pytest.raises(InvalidInputError):
        MDSConfig(seed=-1)
    assert MDSConfig(kind="rademacher").kind == "iid-rademacher"
    assert MDSConfig(kind="predictable").exact_squares


def test_increment_matrix_guards_and_rows():
    with pytest.raises(InvariantViolation):
        IncrementMatrix(n=4, d=1, values=np.full((4, 1), 0.9))
    inc = IncrementMatrix.zeros(3, 2)
    rows = inc.to_rows()
    assert len(rows) == 6
    assert rows[0] == (1, 0, 0.0)


def test_epsilon_must_be_positive():
    with pytest.raises(InvalidInputError):
        check_conditions(generate(16, 1, MDSConfig()), epsilon=0.0)
