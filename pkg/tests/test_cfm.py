import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from flowsr.cfm import (
    ConditionPair,
    PathKind,
    PathParams,
    cfm_loss,
    draw_training_point,
    mean_mu,
    sample_flow,
    std_sigma,
    target_vf,
    target_vf_flh,
    target_vf_general,
)
from flowsr.errors import DomainError

P = PathParams(1e-4)
# The hand examples below are stated for sigma = 0, which the parameter
# type excludes; a vanishing sigma reproduces them to rounding.
TINY = PathParams(1e-12)
ALL = list(PathKind)
finite = st.floats(-10, 10, allow_nan=False)


def _pair(rng, shape=(5, 3)):
    return ConditionPair(rng.standard_normal(shape), rng.standard_normal(shape))


class TestMean:
    def test_boundaries(self):
        z = _pair(np.random.default_rng(0))
        for kind in ALL:
            np.testing.assert_array_equal(mean_mu(kind, 1.0, z), z.x1)
        for kind in (PathKind.CONSTANT_SIGMA, PathKind.DATA_PRIOR):
            np.testing.assert_array_equal(mean_mu(kind, 0.0, z), z.x0)

    def test_midpoint_scalar(self):
        assert mean_mu(PathKind.DATA_PRIOR, 0.5, ConditionPair(0.0, 2.0)) == 1.0

    def test_standard_ignores_x0(self):
        z = ConditionPair(np.full(3, 7.0), np.ones(3))
        np.testing.assert_array_equal(mean_mu(PathKind.STANDARD, 0.25, z), np.full(3, 0.25))

    def test_batched_t(self):
        rng = np.random.default_rng(1)
        z = _pair(rng, (4, 6, 2))
        t = rng.uniform(size=4)
        out = mean_mu(PathKind.DATA_PRIOR, t, z)
        for i in range(4):
            sub = ConditionPair(z.x0[i], z.x1[i])
            np.testing.assert_allclose(out[i], mean_mu(PathKind.DATA_PRIOR, t[i], sub), rtol=0, atol=1e-15)


class TestStd:
    def test_values(self):
        k = PathKind.DATA_PRIOR
        assert std_sigma(k, 0.0, P) == 1.0
        assert std_sigma(k, 1.0, P) == pytest.approx(1e-4, rel=1e-12)
        assert std_sigma(k, 0.5, P) == pytest.approx(0.50005, rel=1e-12)

    def test_constant(self):
        for t in (0.0, 0.3, 1.0):
            assert std_sigma(PathKind.CONSTANT_SIGMA, t, P) == 1e-4

    def test_terminal_all_kinds(self):
        for kind in ALL:
            assert std_sigma(kind, 1.0, P) == pytest.approx(1e-4, rel=1e-12)


class TestSampleFlow:
    def test_terminal_noise_free(self):
        z = _pair(np.random.default_rng(2))
        for kind in ALL:
            np.testing.assert_allclose(sample_flow(kind, 1.0, z, np.zeros_like(z.x1), P).x_t, z.x1)

    def test_prior_at_zero(self):
        rng = np.random.default_rng(3)
        z = _pair(rng)
        e = rng.standard_normal(z.x1.shape)
        np.testing.assert_allclose(sample_flow(PathKind.DATA_PRIOR, 0.0, z, e, P).x_t, z.x0 + e)

    def test_hand_value(self):
        x = sample_flow(PathKind.DATA_PRIOR, 0.5, ConditionPair(0.0, 2.0), 1.0, P).x_t
        assert x == pytest.approx(1.50005, abs=1e-12)

    def test_noise_shape(self):
        with pytest.raises(DomainError):
            sample_flow(PathKind.DATA_PRIOR, 0.5, ConditionPair(np.zeros(3), np.zeros(3)), np.zeros(4), P)


class TestTargetField:
    def test_constant_sigma_is_difference(self):
        rng = np.random.default_rng(4)
        z = _pair(rng)
        x = rng.standard_normal(z.x1.shape)
        for t in (0.0, 0.4, 1.0):
            np.testing.assert_array_equal(target_vf(PathKind.CONSTANT_SIGMA, t, x, z, P), z.x1 - z.x0)

    def test_on_mean(self):
        z = _pair(np.random.default_rng(5))
        mu = mean_mu(PathKind.DATA_PRIOR, 0.3, z)
        np.testing.assert_allclose(target_vf_general(PathKind.DATA_PRIOR, 0.3, mu, z, P), z.x1 - z.x0)

    def test_general_hand_value(self):
        u = target_vf_general(PathKind.DATA_PRIOR, 0.5, 1.0, ConditionPair(0.0, 2.0), TINY)
        assert u == pytest.approx(2.0, abs=1e-9)

    def test_closed_form_hand_values(self):
        assert target_vf_flh(0.5, 1.0, ConditionPair(0.0, 2.0), TINY) == pytest.approx(2.0, abs=1e-9)
        z = _pair(np.random.default_rng(6))
        np.testing.assert_allclose(target_vf_flh(0.0, z.x0, z, P), z.x1 - z.x0)

    def test_closed_form_matches_general(self):
        rng = np.random.default_rng(7)
        n = 1000
        t = rng.uniform(size=n)
        z = ConditionPair(rng.standard_normal(n), rng.standard_normal(n))
        x = rng.standard_normal(n) * 3
        diff = target_vf_flh(t, x, z, P) - target_vf_general(PathKind.DATA_PRIOR, t, x, z, P)
        assert np.max(np.abs(diff)) < 1e-12

    @pytest.mark.parametrize("kind", ALL)
    def test_pathwise_derivative(self, kind):
        rng = np.random.default_rng(8)
        z = _pair(rng, (20, 8))
        e = rng.standard_normal(z.x1.shape)
        d = 1e-5
        for t in rng.uniform(d, 1 - d, size=25):
            fd = (sample_flow(kind, t + d, z, e, P).x_t - sample_flow(kind, t - d, z, e, P).x_t) / (2 * d)
            u = target_vf(kind, t, sample_flow(kind, t, z, e, P).x_t, z, P)
            assert np.max(np.abs(u - fd)) < 1e-6

    @settings(max_examples=50, deadline=None)
    @given(kind=st.sampled_from(ALL), t=st.floats(0, 1), x0=finite, x1=finite, e=finite)
    def test_zero_loss_realizable(self, kind, t, x0, x1, e):
        z = ConditionPair(np.array([x0]), np.array([x1]))
        x = sample_flow(kind, t, z, np.array([e]), P).x_t
        u = target_vf(kind, t, x, z, P)
        assert cfm_loss(u, u) == 0.0

    @settings(max_examples=50, deadline=None)
    @given(t=st.floats(0, 1), x=arrays(np.float64, 6, elements=finite),
           x0=arrays(np.float64, 6, elements=finite), x1=arrays(np.float64, 6, elements=finite))
    def test_identity_property(self, t, x, x0, x1):
        z = ConditionPair(x0, x1)
        np.testing.assert_allclose(target_vf_flh(t, x, z, P),
                                   target_vf_general(PathKind.DATA_PRIOR, t, x, z, P), atol=1e-9)


class TestLoss:
    def test_values(self):
        u = np.random.default_rng(9).standard_normal((4, 7))
        assert cfm_loss(u, u) == 0.0
        assert cfm_loss(u + 2.0, u) == pytest.approx(4.0)

    @settings(max_examples=30)
    @given(a=arrays(np.float64, (3, 4), elements=finite), b=arrays(np.float64, (3, 4), elements=finite))
    def test_symmetric(self, a, b):
        assert cfm_loss(a, b) == cfm_loss(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            cfm_loss(np.zeros(3), np.zeros(4))


class TestDraw:
    def test_reproducible(self):
        z = _pair(np.random.default_rng(10))
        a = draw_training_point(PathKind.DATA_PRIOR, z, np.random.default_rng(11))
        b = draw_training_point(PathKind.DATA_PRIOR, z, np.random.default_rng(11))
        assert a[0] == b[0]
        np.testing.assert_array_equal(a[1].x_t, b[1].x_t)
        np.testing.assert_array_equal(a[2], b[2])

    def test_uniform_time(self):
        rng = np.random.default_rng(12)
        z = ConditionPair(np.zeros(1), np.zeros(1))
        ts = [draw_training_point(PathKind.DATA_PRIOR, z, rng)[0] for _ in range(100_000)]
        assert 0.497 <= np.mean(ts) <= 0.503
        assert 0.0 <= min(ts) and max(ts) < 1.0

    def test_zero_mean_noise_near_start(self):
        rng = np.random.default_rng(13)
        z = ConditionPair(np.full(20, 3.0), np.full(20, -1.0))
        dev = []
        for _ in range(100_000):
            t, pt, _ = draw_training_point(PathKind.DATA_PRIOR, z, rng)
            if t < 0.05:
                dev.append(pt.x_t - z.x0 - t * (z.x1 - z.x0))
        dev = np.asarray(dev)
        # about 5000 draws per cell, 100k cell values pooled
        assert abs(dev.mean()) < 0.02
        assert np.max(np.abs(dev.mean(axis=0))) < 0.06


class TestParams:
    @pytest.mark.parametrize("bad", [0.0, 1.0, -1e-3])
    def test_sigma_bounds(self, bad):
        with pytest.raises(DomainError):
            PathParams(bad)

    def test_parse(self):
        assert PathKind.parse("data-prior") is PathKind.DATA_PRIOR
        with pytest.raises(DomainError):
            PathKind.parse("bridge")
