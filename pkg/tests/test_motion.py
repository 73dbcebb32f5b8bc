import numpy as np
import pytest

from mmwslam.motion import (IDX_BIAS, IDX_HEAD, IDX_TURN, IDX_X, IDX_Y,
                            IDX_Z, ProcessNoiseSpec, make_state,
                            sample_transition, transition)


def test_reference_vehicle_step():
    s0 = make_state(70.7285, 0.0, 0.0, np.pi / 2, 22.22, np.pi / 10, 300.0)
    s1 = transition(s0, 0.5)
    r = 22.22 / (np.pi / 10)
    np.testing.assert_allclose(
        s1[:2], [70.7285 + r * (np.cos(np.pi / 20) - 1),
                 r * np.sin(np.pi / 20)], atol=1e-9)
    assert abs(np.hypot(s1[0], s1[1]) - 70.7285) < 2e-4  # circle radius
    assert abs(s1[IDX_HEAD] - (np.pi / 2 + np.pi / 20)) < 1e-12


def test_straight_line_limit():
    s1 = transition(make_state(speed=10.0), 0.5)
    np.testing.assert_allclose(s1[:2], [5.0, 0.0], atol=1e-12)


def test_zero_speed_only_turns():
    s0 = make_state(3.0, 4.0, 0.0, 0.2, 0.0, 0.5, 10.0)
    s1 = transition(s0, 0.5)
    np.testing.assert_allclose(s1[:3], s0[:3], atol=1e-15)
    assert abs(s1[IDX_HEAD] - 0.45) < 1e-12


def test_singularity_continuity():
    s0 = make_state(0.0, 0.0, 0.0, 0.8, 22.0, 0.0, 0.0)
    tiny = s0.copy()
    tiny[IDX_TURN] = 1e-7
    d = transition(tiny, 0.5) - transition(s0, 0.5)
    assert np.all(np.abs(d[:3]) < 1e-6)


def test_preserved_components_and_wrapping():
    rng = np.random.default_rng(0)
    states = rng.uniform(-1, 1, (64, 7))
    states[:, IDX_HEAD] *= 3.0
    out = sample_transition(states, 0.5, ProcessNoiseSpec(),
                            np.random.default_rng(1))
    np.testing.assert_array_equal(out[:, IDX_Z], states[:, IDX_Z])
    np.testing.assert_array_equal(out[:, 4], states[:, 4])
    np.testing.assert_array_equal(out[:, 5], states[:, 5])
    assert np.all(out[:, IDX_HEAD] > -np.pi)
    assert np.all(out[:, IDX_HEAD] <= np.pi)


def test_zero_noise_equals_transition():
    s0 = make_state(1.0, 2.0, 0.0, 0.3, 15.0, 0.2, 100.0)
    out = sample_transition(s0, 0.5, ProcessNoiseSpec.zero(),
                            np.random.default_rng(0))
    np.testing.assert_array_equal(out, transition(s0, 0.5))


def test_noise_moments_match_spec():
    spec = ProcessNoiseSpec(0.2, 0.2, 0.001, 0.2)
    s0 = make_state(70.7285, 0.0, 0.0, np.pi / 2, 22.22, np.pi / 10, 300.0)
    n = 100_000
    rng = np.random.default_rng(7)
    out = sample_transition(np.tile(s0, (n, 1)), 0.5, spec, rng)
    base = transition(s0, 0.5)
    resid = out[:, [IDX_X, IDX_Y, IDX_HEAD, IDX_BIAS]] \
        - base[[IDX_X, IDX_Y, IDX_HEAD, IDX_BIAS]]
    sigmas = np.array([0.2, 0.2, 0.001, 0.2])
    # empirical mean within 4 sigma / sqrt(N) per dimension
    np.testing.assert_array_less(np.abs(resid.mean(axis=0)),
                                 4 * sigmas / np.sqrt(n))
    # empirical covariance within 5% relative on the diagonal
    np.testing.assert_allclose(resid.var(axis=0), sigmas ** 2, rtol=0.05)
    off = np.cov(resid.T)
    for i in range(4):
        for j in range(4):
            if i != j:
                assert abs(off[i, j]) < 0.05 * sigmas[i] * sigmas[j] * 3


def test_dt_must_be_positive():
    with pytest.raises(ValueError):
        transition(make_state(), 0.0)


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        ProcessNoiseSpec(sigma_x=-0.1)
