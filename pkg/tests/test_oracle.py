import numpy as np
import pytest

from anomattr.oracle import (
    OracleDomainError,
    oracle_gpa,
    oracle_ig,
    oracle_lime0,
    oracle_sv,
    surface,
)


class TestLime0Oracle:
    def test_printed_points(self):
        np.testing.assert_allclose(oracle_lime0([0.5, 0.0]), [-2 * np.pi, 0.0], atol=1e-15)
        np.testing.assert_allclose(oracle_lime0([0.0, 0.0]), [0.0, 0.0], atol=1e-15)

    def test_quarter_point(self):
        # plug (1/4, 1/4) into the gradient formula: both components -pi
        np.testing.assert_allclose(oracle_lime0([0.25, 0.25]), [-np.pi, -np.pi],
                                   atol=1e-12)


class TestGpaOracle:
    @pytest.mark.parametrize(
        "y_t,expected",
        [(1.0, [-1 / 6, 0.0]), (0.0, [0.0, 0.0]), (-1.0, [1 / 6, 0.0])],
    )
    def test_three_points(self, y_t, expected):
        np.testing.assert_allclose(oracle_gpa([0.5, 0.0], y_t), expected, atol=1e-15)

    def test_domain_errors(self):
        with pytest.raises(OracleDomainError):
            oracle_gpa([0.5, 0.0], 2.0)
        with pytest.raises(OracleDomainError):
            oracle_gpa([0.5, 0.1], 1.0)
        with pytest.raises(OracleDomainError):
            oracle_gpa([-0.5, 0.0], 1.0)


class TestIgOracle:
    def test_printed_points(self):
        np.testing.assert_allclose(oracle_ig([0.5, 0.0], [0.0, 0.0]), [-2.0, 0.0],
                                   atol=1e-12)
        np.testing.assert_allclose(oracle_ig([0.5, 0.0], [0.0, 1.0]),
                                   [-2 / 3, 8 / 3], atol=1e-12)

    def test_sum_rule_random_pairs(self):
        rng = np.random.default_rng(123)
        checked = 0
        while checked < 1000:
            x_t = rng.uniform(-2, 2, 2)
            x_0 = rng.uniform(-2, 2, 2)
            d = x_t - x_0
            if abs(d[0] + d[1]) < 1e-3 or abs(d[0] - d[1]) < 1e-3:
                continue
            ig = oracle_ig(x_t, x_0)
            assert ig.sum() == pytest.approx(surface(x_t) - surface(x_0), abs=1e-12)
            checked += 1

    def test_singular_path_rejected(self):
        with pytest.raises(OracleDomainError, match="quadrature"):
            oracle_ig([0.5, 0.0], [0.2, -0.3])
        with pytest.raises(OracleDomainError):
            oracle_ig([0.5, 0.3], [0.2, 0.0])


class TestSvOracle:
    def test_values(self):
        np.testing.assert_allclose(oracle_sv([0.5, 0.0]), [0.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(oracle_sv([0.0, 0.0]), [1.0, 1.0], atol=1e-15)
        np.testing.assert_allclose(oracle_sv([1.0, 0.0]), [-1.0, -1.0], atol=1e-12)
