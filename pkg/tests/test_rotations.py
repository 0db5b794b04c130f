import numpy as np
import pytest

from motionsrc.exceptions import DegeneracyError, NormalizationError
from motionsrc.numerics import numerical_gradient, relative_error
from motionsrc.rotations import (
    IDENTITY_6D,
    axisangle_to_matrix,
    frame_delta,
    geodesic_deg,
    matrix_to_rot6d,
    random_rotations,
    replace_degenerate_6d,
    rot6d_to_matrix,
    rot6d_to_matrix_backward,
    rot_z,
    sequence_deltas,
)

RZ90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


class TestDecode:
    def test_identity(self):
        np.testing.assert_allclose(rot6d_to_matrix(IDENTITY_6D), np.eye(3))

    def test_scale_is_removed(self):
        np.testing.assert_allclose(rot6d_to_matrix([2.0, 0, 0, 0, 3.0, 0]), np.eye(3))

    def test_quarter_turn_about_z(self):
        np.testing.assert_allclose(rot6d_to_matrix([0.0, 1, 0, -1, 0, 0]), RZ90, atol=1e-12)

    def test_output_is_orthonormal(self, rng):
        R = rot6d_to_matrix(rng.normal(size=(50, 6)))
        eye = np.broadcast_to(np.eye(3), R.shape)
        np.testing.assert_allclose(np.swapaxes(R, -1, -2) @ R, eye, atol=1e-12)
        np.testing.assert_allclose(np.linalg.det(R), 1.0, atol=1e-12)

    @pytest.mark.parametrize(
        "bad",
        [[0.0, 0, 0, 0, 1, 0], [1.0, 0, 0, 2, 0, 0], [1.0, 0, 0, 0, 0, 0]],
    )
    def test_degenerate_columns(self, bad):
        with pytest.raises(DegeneracyError):
            rot6d_to_matrix(bad)

    def test_replace_degenerate_rows(self, rng):
        r = rng.normal(size=(2, 3, 6))
        r[0, 1] = 0.0
        r[1, 2] = [1.0, 0, 0, 2, 0, 0]
        safe, bad = replace_degenerate_6d(r)
        assert bad.tolist() == [[False, True, False], [False, False, True]]
        np.testing.assert_array_equal(safe[0, 1], IDENTITY_6D)
        np.testing.assert_array_equal(safe[~bad], r[~bad])
        assert np.isfinite(rot6d_to_matrix(safe)).all()
        assert r[0, 1].tolist() == [0.0] * 6


class TestEncode:
    def test_identity(self):
        np.testing.assert_array_equal(matrix_to_rot6d(np.eye(3)), IDENTITY_6D)

    def test_quarter_turn_about_z(self):
        np.testing.assert_array_equal(matrix_to_rot6d(RZ90), [0.0, 1, 0, -1, 0, 0])

    def test_round_trip_random_rotations(self, rng):
        R = random_rotations(rng, 1000)
        back = rot6d_to_matrix(matrix_to_rot6d(R))
        assert np.linalg.norm(back - R, axis=(-2, -1)).max() < 1e-6


class TestAxisAngle:
    def test_zero_angle(self):
        np.testing.assert_allclose(axisangle_to_matrix([0.0, 0, 1], 0.0), np.eye(3))

    def test_quarter_turn_about_z(self):
        np.testing.assert_allclose(rot_z(np.pi / 2), RZ90, atol=1e-12)

    def test_inverse_pair(self, rng):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        R = axisangle_to_matrix(axis, 0.7) @ axisangle_to_matrix(axis, -0.7)
        np.testing.assert_allclose(R, np.eye(3), atol=1e-6)

    def test_non_unit_axis(self):
        with pytest.raises(NormalizationError):
            axisangle_to_matrix([0.0, 0, 2], 0.3)


class TestGeodesic:
    def test_identical(self, rng):
        R = random_rotations(rng, 5)
        np.testing.assert_allclose(geodesic_deg(R, R), 0.0, atol=1e-5)

    def test_quarter_turn(self):
        assert geodesic_deg(np.eye(3), RZ90) == pytest.approx(90.0)

    def test_symmetric(self, rng):
        a, b = random_rotations(rng, 20), random_rotations(rng, 20)
        np.testing.assert_allclose(geodesic_deg(a, b), geodesic_deg(b, a), atol=1e-9)

    def test_matches_rotation_angle(self, rng):
        R = axisangle_to_matrix([1.0, 0, 0], np.radians(37.0))
        assert geodesic_deg(np.eye(3), R) == pytest.approx(37.0, abs=1e-6)


class TestDeltas:
    def test_same_rotation_gives_identity(self, rng):
        R = random_rotations(rng, 1)[0]
        np.testing.assert_allclose(frame_delta(R, R), np.eye(3), atol=1e-12)

    def test_from_identity(self):
        np.testing.assert_allclose(frame_delta(np.eye(3), RZ90), RZ90)

    def test_same_axis_composition(self):
        R0, R1, R2 = rot_z(0.1), rot_z(0.5), rot_z(1.2)
        np.testing.assert_allclose(frame_delta(R0, R1) @ frame_delta(R1, R2), frame_delta(R0, R2), atol=1e-12)

    def test_sequence_first_frame_is_identity(self, rng):
        R = random_rotations(rng, 4)
        d = sequence_deltas(R)
        np.testing.assert_array_equal(d[0], np.eye(3))
        np.testing.assert_allclose(R[2] @ d[3], R[3], atol=1e-12)

    def test_sequence_with_no_frames(self):
        assert sequence_deltas(np.zeros((0, 3, 3))).shape == (0, 3, 3)


class TestDecodeBackward:
    def test_matches_finite_differences(self, rng):
        r = rng.normal(size=(3, 6))
        G = rng.normal(size=(3, 3, 3))
        analytic = rot6d_to_matrix_backward(r, G)
        numeric = numerical_gradient(lambda: float(np.sum(rot6d_to_matrix(r) * G)), r, h=1e-6)
        assert relative_error(analytic, numeric) < 1e-5

    def test_scaling_direction_has_no_gradient(self, rng):
        # the decode ignores the length of the first column
        r = rng.normal(size=6)
        g = rot6d_to_matrix_backward(r, rng.normal(size=(3, 3)))
        assert abs(np.dot(g[:3], r[:3])) < 1e-10
