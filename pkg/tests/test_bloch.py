import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.distance import pdist

from qmri.bloch import (ContinuousBlochSetup, MagnetizationFrames, PulseSequence, TissueParams,
                        closed_form_solution, invert_from_trajectory, relaxation_factors,
                        rotation_matrix, simulate_sequence, transverse, transverse_derivs)
from qmri.errors import DegenerateTrajectoryError, DomainError

angles = st.floats(-2 * np.pi, 2 * np.pi, allow_nan=False)


def rx(a):
    return np.array([[1, 0, 0], [0, math.cos(a), math.sin(a)], [0, -math.sin(a), math.cos(a)]])


class TestRotation:
    def test_zero_phase_is_rx(self):
        assert np.allclose(rotation_matrix(0.7, 0.0), rx(0.7), atol=1e-15)

    @pytest.mark.parametrize("phi", [0.0, 0.3, -2.0, np.pi])
    def test_zero_angle_is_identity(self, phi):
        assert np.allclose(rotation_matrix(0.0, phi), np.eye(3), atol=1e-15)

    def test_quarter_turn_on_inverted_state(self):
        out = rotation_matrix(np.pi / 2, 0.0) @ np.array([0.0, 0.0, -1.0])
        assert np.allclose(out, [0.0, -1.0, 0.0], atol=1e-15)

    @given(angles, angles)
    @settings(max_examples=200, deadline=None)
    def test_orthogonal_with_unit_determinant(self, a, p):
        R = rotation_matrix(a, p)
        assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
        assert math.isclose(np.linalg.det(R), 1.0, abs_tol=1e-12)

    def test_random_batch_orthogonal(self, rng):
        for a, p in rng.uniform(-np.pi, np.pi, (1000, 2)):
            R = rotation_matrix(a, p)
            assert np.abs(R.T @ R - np.eye(3)).max() < 1e-12


class TestRelaxationFactors:
    def test_reference_values(self):
        e2, e1 = relaxation_factors(40.0, (1000.0, 100.0))
        assert np.allclose(e1, [math.exp(-0.4), math.exp(-0.4), math.exp(-0.04)], rtol=1e-15)
        assert math.isclose(e2, 1 - math.exp(-0.04), rel_tol=1e-14)
        assert np.allclose(e1, [0.67032, 0.67032, 0.96079], atol=5e-6)
        assert abs(e2 - 0.03921) < 5e-6

    def test_short_and_long_limits(self):
        e2, e1 = relaxation_factors(1e-12, (1000.0, 100.0))
        assert np.allclose(e1, 1.0) and e2 < 1e-14
        e2, e1 = relaxation_factors(1e9, (1000.0, 100.0))
        assert np.allclose(e1, 0.0) and e2 == 1.0

    @pytest.mark.parametrize("TR,T1,T2", [(0, 1000, 100), (-1, 1000, 100), (10, 0, 100), (10, 1000, -5)])
    def test_non_positive_inputs_rejected(self, TR, T1, T2):
        with pytest.raises(DomainError):
            relaxation_factors(TR, (T1, T2))

    @given(st.floats(0.1, 200), st.floats(20, 6000), st.floats(10, 600))
    @settings(max_examples=100, deadline=None)
    def test_components_in_unit_interval(self, TR, T1, T2):
        e2, e1 = relaxation_factors(TR, (T1, T2))
        assert np.all((e1 > 0) & (e1 < 1)) and 0 < e2 < 1


class TestSimulate:
    def test_single_quarter_pulse(self):
        seq = PulseSequence.constant(1, np.pi / 2, 40.0)
        m1 = simulate_sequence(TissueParams(1000.0, 100.0), seq).frames[0]
        expected = np.array([0.0, -math.exp(-0.4), 1 - math.exp(-0.04)])
        assert np.allclose(m1, expected, atol=1e-15)
        assert np.allclose(m1, [0, -0.67032, 0.03921], atol=5e-6)

    def test_vanishing_flip_collapses_to_inversion_recovery(self):
        seq = PulseSequence.constant(1, 0.0, 40.0)
        m1 = simulate_sequence((1000.0, 100.0), seq).frames[0]
        assert np.allclose(m1, [0, 0, 1 - 2 * math.exp(-0.04)], atol=1e-15)

    def test_matches_explicit_loop(self, rng):
        L = 7
        seq = PulseSequence(rng.uniform(0.1, 3.0, L), rng.uniform(5, 50, L), rng.uniform(-1, 1, L))
        T1, T2 = 850.0, 70.0
        m = np.array([0.0, 0.0, -1.0])
        ref = []
        for a, tr, p in zip(seq.flip_angles, seq.repetition_times, seq.phase_shifts):
            E1 = np.diag([math.exp(-tr / T2), math.exp(-tr / T2), math.exp(-tr / T1)])
            m = E1 @ rotation_matrix(a, p) @ m + (1 - math.exp(-tr / T1)) * np.array([0, 0, 1.0])
            ref.append(m)
        assert np.allclose(simulate_sequence((T1, T2), seq).frames, ref, atol=1e-14)

    def test_vectorised_over_shapes(self, seq10):
        T1 = np.array([[800.0, 1200.0], [3000.0, 600.0]])
        T2 = np.array([[80.0, 100.0], [300.0, 50.0]])
        fr = simulate_sequence((T1, T2), seq10, with_derivs=True)
        assert fr.frames.shape == (10, 2, 2, 3) and fr.derivs.shape == (10, 2, 2, 3, 2)
        single = simulate_sequence((3000.0, 300.0), seq10, with_derivs=True)
        assert np.allclose(fr.frames[:, 1, 0], single.frames, atol=0)
        assert np.allclose(fr.derivs[:, 1, 0], single.derivs, atol=0)

    def test_derivatives_against_central_differences(self, seq10):
        T1, T2, h = 1000.0, 100.0, 1e-3
        d = simulate_sequence((T1, T2), seq10, with_derivs=True).derivs
        f = lambda a, b: simulate_sequence((a, b), seq10).frames
        fd1 = (f(T1 + h, T2) - f(T1 - h, T2)) / (2 * h)
        fd2 = (f(T1, T2 + h) - f(T1, T2 - h)) / (2 * h)
        assert np.linalg.norm(d[..., 0] - fd1) / np.linalg.norm(fd1) < 1e-6
        assert np.linalg.norm(d[..., 1] - fd2) / np.linalg.norm(fd2) < 1e-6

    @given(st.floats(530, 5012), st.floats(41, 512), st.integers(2, 20), st.floats(0.05, 3.0))
    @settings(max_examples=100, deadline=None)
    def test_derivatives_random_points(self, T1, T2, L, alpha):
        seq = PulseSequence.constant(L, alpha, 15.0, 0.2)
        d = simulate_sequence((T1, T2), seq, with_derivs=True).derivs
        f = lambda a, b: simulate_sequence((a, b), seq).frames
        for k, (dt1, dt2) in enumerate(((T1 * 1e-6, 0), (0, T2 * 1e-6))):
            fd = (f(T1 + dt1, T2 + dt2) - f(T1 - dt1, T2 - dt2)) / (2 * (dt1 + dt2))
            assert np.linalg.norm(d[..., k] - fd) <= 1e-6 * np.linalg.norm(fd) + 1e-12

    @given(st.floats(1, 6000), st.floats(1e-3, 1.0), st.floats(0, np.pi), st.floats(1, 100))
    @settings(max_examples=200, deadline=None)
    def test_magnitude_bound(self, T1, ratio, alpha, TR):
        # with T2 <= T1 each relaxation step maps the unit ball into itself
        fr = simulate_sequence((T1, ratio * T1), PulseSequence.constant(15, alpha, TR)).frames
        assert np.all(np.linalg.norm(fr, axis=-1) <= 1.0 + 1e-12)

    def test_fast_relaxation_returns_to_equilibrium(self, seq10):
        fr = simulate_sequence((1e-3, 1e-3), seq10).frames
        assert np.allclose(fr, [0, 0, 1], atol=1e-12)

    def test_injective_on_grid(self):
        t1 = np.linspace(530, 5012, 50)
        t2 = np.linspace(41, 512, 50)
        T1, T2 = np.meshgrid(t1, t2, indexing="ij")
        seq = PulseSequence.constant(3, np.deg2rad(40.0), 40.0)
        fr = simulate_sequence((T1.ravel(), T2.ravel()), seq).frames   # (3, 2500, 3)
        fingerprints = fr.transpose(1, 0, 2).reshape(2500, 9)
        assert pdist(fingerprints).min() > 0

    def test_non_positive_tissue_rejected(self, seq10):
        with pytest.raises(DomainError):
            simulate_sequence((0.0, 10.0), seq10)


class TestPulseSequence:
    def test_validation(self):
        with pytest.raises(ValueError):
            PulseSequence([0.1, 0.2], [10.0], [0.0, 0.0])
        with pytest.raises(DomainError):
            PulseSequence([0.1], [0.0], [0.0])
        with pytest.raises(ValueError):
            PulseSequence([], [], [])

    def test_open_flip_range(self):
        assert PulseSequence.constant(3, 0.5, 10).in_open_flip_range()
        assert not PulseSequence.constant(3, 0.0, 10).in_open_flip_range()
        assert not PulseSequence.constant(3, np.pi, 10).in_open_flip_range()

    def test_round_trip(self, seq10):
        again = PulseSequence.from_dict(seq10.to_dict())
        assert again.fingerprint() == seq10.fingerprint()

    def test_frames_immutable(self, seq10):
        with pytest.raises(ValueError):
            seq10.flip_angles[0] = 1.0


class TestTransverse:
    @pytest.mark.parametrize("m,expected", [((0, 0, 0.7), 0), ((1, 0, 0), 1), ((0.3, -0.4, 0.5), 0.3 - 0.4j)])
    def test_definition(self, m, expected):
        assert transverse(np.array([m], dtype=float))[0] == expected

    def test_requires_frames(self):
        with pytest.raises(ValueError):
            transverse(np.zeros((0, 3)))
        fr = MagnetizationFrames(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            transverse_derivs(fr)


class TestClosedForm:
    def test_equilibrium_is_fixed(self):
        setup = ContinuousBlochSetup(0.3, TissueParams(1000, 100), m0=np.array([0, 0, 1.0]))
        out = closed_form_solution(setup, "relaxation", np.linspace(0, 500, 7))
        assert np.allclose(out, [0, 0, 1], atol=1e-15)

    def test_full_revolution(self):
        w = 0.25
        setup = ContinuousBlochSetup(w, TissueParams(1000, 100), m0=np.array([0.6, 0.0, 0.8]))
        out = closed_form_solution(setup, "free_precession", 2 * np.pi / w)
        assert np.allclose(out, setup.m0, atol=1e-14)

    def test_free_precession_preserves_norm(self, rng):
        setup = ContinuousBlochSetup(1.3, TissueParams(1000, 100), m0=rng.standard_normal(3))
        out = closed_form_solution(setup, "free_precession", rng.uniform(0, 100, 50))
        assert np.allclose(np.linalg.norm(out, axis=-1), np.linalg.norm(setup.m0), rtol=1e-14)

    def test_relaxation_at_t2(self):
        setup = ContinuousBlochSetup(0.0, TissueParams(1000, 100), m0=np.array([1.0, 0, 0]))
        out = closed_form_solution(setup, "relaxation", 100.0)
        assert np.allclose(out, [math.exp(-1), 0, 1 - math.exp(-0.1)], atol=1e-15)

    def test_relaxation_z_at_t1(self):
        setup = ContinuousBlochSetup(0.0, TissueParams(100, 100), m0=np.array([1.0, 0, 0]))
        out = closed_form_solution(setup, "relaxation", 100.0)
        assert np.allclose(out, [math.exp(-1), 0, 1 - math.exp(-1)], atol=1e-15)

    def test_unknown_case(self):
        setup = ContinuousBlochSetup(0.0, TissueParams(100, 100))
        with pytest.raises(ValueError):
            closed_form_solution(setup, "spin_echo", 1.0)

    def test_recursion_matches_pulse_then_relaxation(self):
        alpha, TR = np.deg2rad(40.0), 40.0
        theta = TissueParams(1000.0, 100.0)
        setup = ContinuousBlochSetup(0.0, theta, alpha=alpha)
        cont = closed_form_solution(setup, "excitation_relaxation", TR)
        disc = simulate_sequence(theta, PulseSequence.constant(1, alpha, TR)).frames[0]
        assert np.allclose(cont, disc, atol=1e-12)


def _relaxation_samples(n=10_000, tau=50.0):
    setup = ContinuousBlochSetup(0.1, TissueParams(1000.0, 100.0), m0=np.array([0.5, 0.5, -0.5]))
    t = np.linspace(0.0, tau, n)
    return closed_form_solution(setup, "relaxation", t), t, np.array([0.0, 0.0, 0.1])


class TestInversion:
    def test_recovers_parameters(self):
        m, t, b = _relaxation_samples()
        _, theta = invert_from_trajectory(m, t, b)
        assert abs(theta.T1 - 1000) / 1000 < 1e-4
        assert abs(theta.T2 - 100) / 100 < 1e-4

    def test_linear_stability(self):
        m, t, b = _relaxation_samples()
        _, ref = invert_from_trajectory(m, t, b)
        pert = np.stack([np.sin(t / 7.0), np.cos(t / 11.0), np.sin(t / 5.0 + 1)], axis=1)
        pert /= np.linalg.norm(pert, axis=1, keepdims=True)
        consts = []
        for delta in (1e-3, 1e-4, 1e-5):
            _, th = invert_from_trajectory(m + delta * pert, t, b)
            consts.append((abs(th.T1 - ref.T1) + abs(th.T2 - ref.T2)) / delta)
        assert max(consts) / min(consts) < 2.0

    def test_constant_equilibrium_is_degenerate(self):
        t = np.linspace(0, 10, 100)
        m = np.tile([0.0, 0.0, 1.0], (100, 1))
        with pytest.raises(DegenerateTrajectoryError):
            invert_from_trajectory(m, t, [0, 0, 1.0])

    def test_shape_checked(self):
        with pytest.raises(ValueError):
            invert_from_trajectory(np.zeros((5, 2)), np.arange(5.0), [0, 0, 1])
