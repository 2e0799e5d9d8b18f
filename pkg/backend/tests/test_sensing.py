"""
Sensing operators, the affine projection and descriptor files
"""
import math

import numpy as np
import pytest
from scipy.linalg import hadamard

from ride.core.exceptions import ModelFormatError, ModelVersionError, OperatorError, ShapeError
from ride.services import sensing
from ride.services.sensing import DenseOperator, FwhtOperator, Measurements
from ride.utils.numeric import make_rng


class TestFwht:
    def test_two_point(self):
        np.testing.assert_allclose(sensing.fwht(np.array([1.0, 1.0])), [math.sqrt(2), 0.0], atol=1e-15)
        assert np.array_equal(sensing.fwht(np.array([1.0, 1.0]), normalize=False), [2.0, 0.0])

    def test_impulse(self):
        np.testing.assert_allclose(sensing.fwht(np.array([1.0, 0.0, 0.0, 0.0])), [0.5] * 4, atol=1e-15)

    @pytest.mark.parametrize("n", [1, 2, 4, 8, 16, 32, 64])
    def test_matches_sylvester_hadamard(self, n):
        x = make_rng(n).generator.normal(size=n)
        np.testing.assert_allclose(sensing.fwht(x), hadamard(n) @ x / math.sqrt(n), atol=1e-12)

    def test_is_an_involution(self):
        x = make_rng(0).generator.normal(size=256)
        np.testing.assert_allclose(sensing.fwht(sensing.fwht(x)), x, atol=1e-12)

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ShapeError):
            sensing.fwht(np.zeros(6))

    def test_is_power_of_2(self):
        assert [k for k in range(20) if sensing.is_power_of_2(k)] == [1, 2, 4, 8, 16]


class TestGaussianOperator:
    def test_square_is_orthogonal(self):
        phi = sensing.make_gaussian_operator(16, 16, seed=0).matrix()
        np.testing.assert_allclose(phi.T @ phi, np.eye(16), atol=1e-12)

    def test_rows_orthonormal(self):
        op = sensing.make_gaussian_operator(64, 24, seed=1)
        assert op.row_orthonormal
        np.testing.assert_allclose(op.matrix() @ op.matrix().T, np.eye(24), atol=1e-12)
        assert op.measurement_rate == pytest.approx(24 / 64)

    def test_seed_determinism(self):
        a = sensing.make_gaussian_operator(32, 8, seed=5).matrix()
        b = sensing.make_gaussian_operator(32, 8, seed=5).matrix()
        c = sensing.make_gaussian_operator(32, 8, seed=6).matrix()
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_too_many_rows(self):
        with pytest.raises(OperatorError):
            sensing.make_gaussian_operator(4, 5, seed=0)

    def test_non_orthonormal_matrix_is_detected(self):
        op = DenseOperator(np.array([[1.0, 1.0, 0.0]]))
        assert not op.row_orthonormal
        with pytest.raises(OperatorError):
            sensing.project_affine(op, np.zeros(3), Measurements(np.zeros(1)))


class TestFwhtOperator:
    def test_rows_orthonormal(self):
        op = sensing.make_fwht_operator(64, 20, seed=3)
        assert op.row_orthonormal
        np.testing.assert_allclose(op.matrix() @ op.matrix().T, np.eye(20), atol=1e-12)
        assert list(op.rows) == sorted(set(op.rows))

    def test_matrix_agrees_with_fast_path(self):
        op = sensing.make_fwht_operator(32, 10, seed=4)
        gen = make_rng(0).generator
        x, y = gen.normal(size=32), gen.normal(size=10)
        np.testing.assert_allclose(op.forward(x), op.matrix() @ x, atol=1e-12)
        np.testing.assert_allclose(op.adjoint(y), op.matrix().T @ y, atol=1e-12)

    @pytest.mark.parametrize("n", [4, 256, 65536])
    def test_adjoint_identity(self, n):
        op = sensing.make_fwht_operator(n, n // 4, seed=n)
        gen = make_rng(1).generator
        x, y = gen.normal(size=n), gen.normal(size=n // 4)
        lhs = float(op.forward(x) @ y)
        rhs = float(x @ op.adjoint(y))
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)

    def test_invalid(self):
        with pytest.raises(OperatorError):
            sensing.make_fwht_operator(48, 4, seed=0)
        with pytest.raises(OperatorError):
            FwhtOperator(8, [1, 1])
        with pytest.raises(OperatorError):
            FwhtOperator(8, [8])

    def test_unknown_kind(self):
        with pytest.raises(OperatorError):
            sensing.make_operator("fourier", 16, 4, seed=0)
        assert isinstance(sensing.make_operator("gaussian", 16, 4, seed=0), DenseOperator)
        assert isinstance(sensing.make_operator("fwht", 16, 4, seed=0), FwhtOperator)


class TestMeasure:
    def test_zero_image(self):
        op = sensing.make_gaussian_operator(16, 6, seed=0)
        y = sensing.measure(op, np.zeros((4, 4)))
        assert np.array_equal(y.values, np.zeros(6))
        assert y.image_shape == (4, 4)

    def test_dense_is_matvec(self):
        op = sensing.make_gaussian_operator(16, 6, seed=0)
        image = make_rng(2).generator.uniform(size=(4, 4))
        np.testing.assert_allclose(sensing.measure(op, image).values, op.matrix() @ image.reshape(-1), atol=1e-14)

    def test_noise_is_seeded(self):
        op = sensing.make_fwht_operator(16, 8, seed=0)
        image = np.full((4, 4), 0.5)
        a = sensing.measure(op, image, sigma=0.1, rng=make_rng(3))
        b = sensing.measure(op, image, sigma=0.1, rng=make_rng(3))
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, sensing.measure(op, image).values)
        assert a.sigma == 0.1

    def test_noise_needs_rng_and_shape_must_fit(self):
        op = sensing.make_fwht_operator(16, 8, seed=0)
        with pytest.raises(ValueError):
            sensing.measure(op, np.zeros((4, 4)), sigma=0.1)
        with pytest.raises(ShapeError):
            sensing.measure(op, np.zeros((3, 3)))


@pytest.mark.parametrize("kind", ["gaussian", "fwht"])
class TestProjection:
    def build(self, kind, n=64, m=24):
        op = sensing.make_operator(kind, n, m, seed=7)
        gen = make_rng(8).generator
        y = Measurements(gen.normal(size=m))
        return op, y, gen

    def test_lands_on_constraint_and_is_idempotent(self, kind):
        op, y, gen = self.build(kind)
        p = sensing.project_affine(op, gen.normal(size=(8, 8)), y)
        assert np.linalg.norm(sensing.residual(op, p, y)) < 1e-8
        np.testing.assert_allclose(sensing.project_affine(op, p, y), p, atol=1e-12)

    def test_feasible_point_unchanged(self, kind):
        op, _, gen = self.build(kind)
        x = gen.normal(size=(8, 8))
        y = sensing.measure(op, x)
        np.testing.assert_allclose(sensing.project_affine(op, x, y), x, atol=1e-12)

    def test_correction_is_orthogonal_to_null_space(self, kind):
        op, y, gen = self.build(kind, n=1024, m=410)
        x = gen.normal(size=1024)
        p = sensing.project_affine(op, x, y)
        # z - Φᵀ(Φz) lies in the null space
        z = gen.normal(size=1024)
        null = z - op.adjoint(op.forward(z))
        assert abs(float((x - p) @ null)) < 1e-8


def test_measurement_count():
    assert sensing.measurement_count(64, 0.25) == 16
    assert sensing.measurement_count(10, 0.01) == 1
    assert sensing.measurement_count(10, 1.0) == 10
    assert sensing.measurement_count(10, 0.47) == 5
    with pytest.raises(OperatorError):
        sensing.measurement_count(10, 0.0)


class TestFiles:
    def test_fwht_round_trip(self, tmp_path):
        op = sensing.make_fwht_operator(64, 16, seed=9)
        loaded = sensing.read_operator(sensing.write_operator(op, tmp_path / "op.txt"))
        assert isinstance(loaded, FwhtOperator)
        assert np.array_equal(loaded.rows, op.rows)
        assert (loaded.n, loaded.m, loaded.seed) == (64, 16, 9)

    def test_dense_round_trip(self, tmp_path):
        op = sensing.make_gaussian_operator(36, 12, seed=10)
        loaded = sensing.read_operator(sensing.write_operator(op, tmp_path / "op.txt"))
        assert np.array_equal(loaded.matrix(), op.matrix())

    def test_dense_hash_mismatch(self, tmp_path):
        path = sensing.write_operator(sensing.make_gaussian_operator(36, 12, seed=10), tmp_path / "op.txt")
        text = path.read_bytes().replace(b"seed 10", b"seed 11")
        path.write_bytes(text)
        with pytest.raises(ModelFormatError, match="SHA-256"):
            sensing.read_operator(path)

    def test_unseeded_operator_cannot_be_written(self, tmp_path):
        with pytest.raises(OperatorError):
            sensing.write_operator(DenseOperator(np.eye(4)), tmp_path / "op.txt")

    def test_measurements_round_trip(self, tmp_path):
        y = Measurements(make_rng(0).generator.normal(size=10), sigma=0.05, image_shape=(2, 5))
        loaded = sensing.read_measurements(sensing.write_measurements(y, tmp_path / "y.txt"))
        assert np.array_equal(loaded.values, y.values)
        assert loaded.sigma == 0.05
        assert loaded.image_shape == (2, 5)

    def test_wrong_magic_and_truncation(self, tmp_path):
        op_path = sensing.write_operator(sensing.make_fwht_operator(16, 4, seed=0), tmp_path / "op.txt")
        with pytest.raises(ModelFormatError):
            sensing.read_measurements(op_path)
        y_path = sensing.write_measurements(Measurements(np.ones(4)), tmp_path / "y.txt")
        y_path.write_bytes(y_path.read_bytes()[:-3])
        with pytest.raises(ModelFormatError):
            sensing.read_measurements(y_path)

    @pytest.mark.parametrize("kind", ["operator", "measurements"])
    def test_unknown_version_is_a_version_error(self, tmp_path, kind):
        if kind == "operator":
            path = sensing.write_operator(sensing.make_fwht_operator(16, 4, seed=0), tmp_path / "op.txt")
            reader = sensing.read_operator
        else:
            path = sensing.write_measurements(Measurements(np.ones(4)), tmp_path / "y.txt")
            reader = sensing.read_measurements
        header, _, rest = path.read_bytes().partition(b"\n")
        path.write_bytes(header.rsplit(b" ", 1)[0] + b" 2\n" + rest)
        with pytest.raises(ModelVersionError, match="version 2"):
            reader(path)
