import math

import numpy as np
import pytest

from errors import AccuracyError, InvalidInputError
import kernel
from kernel import (CovarianceOracle, QuadratureConfig, covariance, covariance_rows, get_covariance_oracle,
                    graded_quadrature,
                    grid_index, kernel_at, kernel_l2_increment, kernel_n_at, properness_check,
                    unsnapped_cell_integrals, weight, weight_table)
from matfun import HurstOperator, MatrixPowerFamily, mat_exp


def _cell_quadrature(D, n, k, points=64):
    """n·∫_{k/n}^{(k+1)/n} v^A dv by plain Gauss–Legendre."""
    nodes, weights = np.polynomial.legendre.leggauss(points)
    lo, hi = k / n, (k + 1) / n
    v = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
    values = MatrixPowerFamily(D.shifted)(v)
    return n * 0.5 * (hi - lo) * np.einsum('m,mij->ij', weights, values)


def _midpoint(f, a, b, panels):
    h = (b - a) / panels
    u = a + h * (np.arange(panels) + 0.5)
    return float(np.sum(f(u)) * h)


THREE_D = HurstOperator.from_matrix([[0.7, 0.1, 0.0], [0.0, 0.8, 0.05], [0.0, 0.0, 0.6]])


# ═══ grid snapping and pointwise kernels ═══

def test_grid_index_snaps_decimal_points():
    assert grid_index(0.29, 100) == 29
    assert grid_index(0.999, 2) == 1
    assert grid_index(1.0, 7) == 7


def test_kernel_vanishes_at_and_above_diagonal(coupled_D):
    np.testing.assert_array_equal(kernel_at(0.3, 0.3, coupled_D), np.zeros((2, 2)))
    np.testing.assert_array_equal(kernel_at(0.3, 0.7, coupled_D), np.zeros((2, 2)))


def test_scalar_kernel_value(scalar_D):
    assert kernel_at(0.5, 0.25, scalar_D)[0, 0] == pytest.approx(0.707106781, abs=1e-9)


def test_kernel_matches_exponential(coupled_D):
    expected = mat_exp(math.log(0.4) * coupled_D.shifted)
    np.testing.assert_allclose(kernel_at(0.9, 0.5, coupled_D), expected, rtol=1e-12)


def test_snapped_kernel(coupled_D):
    np.testing.assert_allclose(kernel_n_at(0.99, 0.3, 2, coupled_D), kernel_at(0.5, 0.3, coupled_D))
    np.testing.assert_array_equal(kernel_n_at(0.99, 0.5, 2, coupled_D), np.zeros((2, 2)))


def test_snapped_kernel_converges_under_refinement(coupled_D):
    errors = [np.linalg.norm(kernel_n_at(0.7, 0.2, n, coupled_D) - kernel_at(0.7, 0.2, coupled_D), 2)
              for n in (4, 8, 16, 32, 64, 128)]
    assert all(b <= a for a, b in zip(errors, errors[1:]))


def test_time_outside_unit_interval_rejected(coupled_D):
    with pytest.raises(InvalidInputError):
        kernel_at(1.5, 0.2, coupled_D)


# ═══ weights ═══

def test_scalar_weight_closed_form(scalar_D):
    assert weight(0, 4, scalar_D)[0, 0] == pytest.approx(0.565685425, abs=1e-9)


@pytest.mark.parametrize("n", [16, 256, 4096])
def test_weights_match_cell_quadrature(n, scalar_D, coupled_D):
    for D in (scalar_D, coupled_D, THREE_D):
        table = weight_table(n, D)
        ks = range(1, n) if n <= 256 else (1, 2, 17, n // 2, n - 1)
        for k in ks:
            np.testing.assert_allclose(table[k], _cell_quadrature(D, n, k), atol=1e-10)


def test_first_weight_matches_graded_quadrature(coupled_D):
    n = 64
    family = MatrixPowerFamily(coupled_D.shifted)
    value, _ = graded_quadrature(family, 1.0 / n)
    np.testing.assert_allclose(n * value, weight(0, n, coupled_D), atol=1e-8)


def test_weights_telescope(coupled_D):
    table = weight_table(128, coupled_D)
    B = coupled_D.shifted + np.eye(2)
    np.testing.assert_allclose(table.weights.sum(axis=0) / 128, np.linalg.inv(B), atol=1e-12)


def test_weight_table_agrees_with_single_weights_and_is_cached(coupled_D):
    table = weight_table(32, coupled_D)
    for k in (0, 5, 31):
        np.testing.assert_allclose(table[k], weight(k, 32, coupled_D), rtol=1e-12, atol=1e-14)
    assert weight_table(32, coupled_D) is table
    assert len(table.to_rows()) == 32 * 4


def test_weight_index_out_of_range(coupled_D):
    with pytest.raises(InvalidInputError):
        weight(8, 8, coupled_D)


def test_unsnapped_cells_reduce_to_weights_on_grid(coupled_D):
    n = 8
    cells = unsnapped_cell_integrals(1.0, n, coupled_D)
    table = weight_table(n, coupled_D)
    for i in range(n):
        np.testing.assert_allclose(cells[i], table[n - 1 - i], rtol=1e-10, atol=1e-12)


def test_unsnapped_cells_above_t_are_zero(coupled_D):
    cells = unsnapped_cell_integrals(0.3, 10, coupled_D)
    np.testing.assert_array_equal(cells[3:], np.zeros((7, 2, 2)))
    assert np.any(cells[2] != 0)


# ═══ quadrature and covariance ═══

def test_quadrature_raises_when_budget_exhausted():
    strict = QuadratureConfig(order=2, tolerance=1e-14, max_subdivisions=0, grading_levels=0)
    with pytest.raises(AccuracyError):
        graded_quadrature(lambda v: np.sin(1000 * v)[:, None], 1.0, strict)


def test_scalar_variance(scalar_D):
    assert covariance(1.0, 1.0, scalar_D)[0, 0] == pytest.approx(2 / 3, abs=1e-9)


def test_scalar_cross_covariance_vs_riemann_sum(scalar_D):
    expected = _midpoint(lambda u: (1 - u) ** 0.25 * (0.5 - u) ** 0.25, 0.0, 0.5, 10 ** 6)
    assert covariance(1.0, 0.5, scalar_D)[0, 0] == pytest.approx(expected, abs=1e-7)


def test_diagonal_operator_decouples(diagonal_D):
    C = covariance(0.8, 0.6, diagonal_D)
    assert abs(C[0, 1]) < 1e-12 and abs(C[1, 0]) < 1e-12
    assert C[1, 1] == pytest.approx(
        _midpoint(lambda u: (0.8 - u) ** 0.4 * (0.6 - u) ** 0.4, 0.0, 0.6, 10 ** 6), abs=1e-7)


def test_covariance_symmetry_and_transpose(coupled_D):
    oracle = CovarianceOracle(coupled_D)
    C = oracle(0.7, 0.7)
    np.testing.assert_array_equal(C, C.T)
    assert np.linalg.eigvalsh(C).min() > 0
    np.testing.assert_allclose(oracle(0.4, 0.9), oracle(0.9, 0.4).T, atol=1e-14)


def test_covariance_at_time_zero_is_zero(coupled_D):
    np.testing.assert_array_equal(covariance(0.0, 0.6, coupled_D), np.zeros((2, 2)))


def test_covariance_block_layout(coupled_D):
    oracle = CovarianceOracle(coupled_D)
    block = oracle.block([0.5, 1.0])
    np.testing.assert_allclose(block[:2, 2:], oracle(0.5, 1.0))
    np.testing.assert_allclose(block, block.T)


def test_covariance_rows_cover_grid(coupled_D):
    rows = covariance_rows(coupled_D, [0.5, 1.0])
    assert len(rows) == 2 * 2 * 4
    assert rows[0][:4] == (0.5, 0.5, 0, 0)


def test_covariance_memo_is_capped(coupled_D, monkeypatch):
    monkeypatch.setattr(kernel, "MEMO_SIZE", 2)
    oracle = CovarianceOracle(coupled_D)
    first = oracle(0.3, 0.3)
    oracle(0.5, 0.5)
    oracle(0.7, 0.7)
    assert len(oracle._memo) == 2
    assert (0.3, 0.3) not in oracle._memo
    np.testing.assert_array_equal(oracle(0.3, 0.3), first)


def test_oracle_registry_is_capped(monkeypatch):
    monkeypatch.setattr(kernel, "_oracles", {})
    monkeypatch.setattr(kernel, "ORACLE_CACHE_SIZE", 2)
    operators = [HurstOperator.from_matrix(h) for h in (0.6, 0.7, 0.8)]
    first = get_covariance_oracle(operators[0])
    assert get_covariance_oracle(operators[0]) is first
    for D in operators[1:]:
        get_covariance_oracle(D)
    assert len(kernel._oracles) == 2
    assert get_covariance_oracle(operators[0]) is not first


def test_self_similar_covariance_scalar(scalar_D):
    c, t = 0.5, 0.8
    assert covariance(c * t, c * t, scalar_D)[0, 0] == pytest.approx(
        c ** 1.5 * t ** 1.5 / 1.5, abs=1e-10)


def test_properness(coupled_D, jordan_D):
    for D in (coupled_D, jordan_D):
        result = properness_check(D, [0.25, 0.5, 1.0])
        assert result["proper"]
        assert min(result["min_eigenvalues"]) > 0


# ═══ L² increments ═══

def test_l2_increment_zero_on_same_cell(coupled_D):
    assert kernel_l2_increment(0.51, 0.5, 10, coupled_D) == 0.0


def test_scalar_l2_increment_vs_riemann_sum(scalar_D):
    shared = _midpoint(lambda v: ((0.25 + v) ** 0.25 - v ** 0.25) ** 2, 0.0, 0.5, 2 * 10 ** 5)
    exposed = 0.25 ** 1.5 / 1.5
    assert kernel_l2_increment(0.75, 0.5, 4, scalar_D) == pytest.approx(shared + exposed, abs=1e-6)


def test_l2_increment_holder_bound(coupled_D):
    n = 1024
    H = (coupled_D.lambda_D + 0.5) / 2
    gaps = [2.0 ** -j for j in range(2, 9)]
    ratios = [kernel_l2_increment(0.25 + g, 0.25, n, coupled_D) / g ** (2 * H) for g in gaps]
    assert all(math.isfinite(r) and r > 0 for r in ratios)
    assert max(ratios) / min(ratios) < 10.0


def test_l2_increment_requires_ordered_times(coupled_D):
    with pytest.raises(InvalidInputError):
        kernel_l2_increment(0.2, 0.5, 10, coupled_D)
