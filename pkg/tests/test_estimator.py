"""Estimator heads: branch composition, scale/residual bounds, locality."""

import math

import numpy as np

import hide.estimator as E
from hide.constants import SIGMA_MAX, SIGMA_MIN
from hide.core import Tensor, gelu, no_grad

from conftest import check_gradients


def zero_module(m):
    for p in m.parameters():
        p.data[:] = 0.0


class TestContextExtractor:
    def test_zero_branches_give_fuse_bias(self, rng):
        ex = E.ContextExtractor(4, np.random.default_rng(0))
        for conv in (ex.branch3, ex.branch5, ex.branch7):
            conv.weight.data[:] = 0.0
            conv.bias.data[:] = 0.0
        ex.fuse.bias.data[:] = rng.standard_normal(ex.c_mid)
        ex.fuse.weight.data[:] = rng.standard_normal(ex.fuse.weight.shape)
        s = Tensor(rng.standard_normal((1, 4, 5, 5)))
        with no_grad():
            out = ex(s).numpy()
        for c in range(ex.c_mid):
            np.testing.assert_allclose(out[0, c], ex.fuse.bias.numpy()[c], atol=1e-12)

    def test_identity_branches_sum_composition(self, rng):
        # branches scale by 1, 2, 3; fuse sums channels:
        # output = gelu(x) + gelu(2x) + gelu(3x) on a single channel
        ex = E.ContextExtractor(2, np.random.default_rng(0))
        assert ex.c_mid == 1
        zero_module(ex)
        ex.proj.weight.data[0, 0, 0, 0] = 1.0            # project channel 0 through
        for scale, conv in ((1.0, ex.branch3), (2.0, ex.branch5), (3.0, ex.branch7)):
            k = conv.weight.shape[-1]
            conv.weight.data[0, 0, k // 2, k // 2] = scale
        ex.fuse.weight.data[0, :, 0, 0] = 1.0            # channel sum
        s = rng.standard_normal((1, 2, 4, 4))
        with no_grad():
            out = ex(Tensor(s)).numpy()
            x = Tensor(s[:, :1])
            expect = (gelu(x).numpy() + gelu(Tensor(2 * s[:, :1])).numpy()
                      + gelu(Tensor(3 * s[:, :1])).numpy())
        assert np.max(np.abs(out - expect)) <= 1e-12

    def test_gradient_through_extractor(self, rng):
        ex = E.ContextExtractor(2, np.random.default_rng(1))
        s = rng.standard_normal((1, 2, 4, 4))

        def build(ts):
            return (ex(ts[0]) ** 2).sum()

        check_gradients(build, [s])

    def test_spatial_locality(self, rng):
        # an input impulse may only influence a 3-radius neighborhood of
        # the fused context and a 5-radius neighborhood after a head
        ex = E.ContextExtractor(2, np.random.default_rng(2))
        head = E.ConvHead(ex.c_mid, 2, np.random.default_rng(3))
        base = np.zeros((1, 2, 11, 11))
        bumped = base.copy()
        bumped[0, 0, 5, 5] = 1.0
        with no_grad():
            d_ctx = np.abs(ex(Tensor(bumped)).numpy() - ex(Tensor(base)).numpy())
            d_head = np.abs(head(ex(Tensor(bumped))).numpy()
                            - head(ex(Tensor(base))).numpy())
        ys, xs = np.nonzero(d_ctx.sum(axis=(0, 1)) > 1e-14)
        assert np.max(np.abs(ys - 5), initial=0) <= 3
        assert np.max(np.abs(xs - 5), initial=0) <= 3
        ys, xs = np.nonzero(d_head.sum(axis=(0, 1)) > 1e-14)
        assert np.max(np.abs(ys - 5), initial=0) <= 5
        assert np.max(np.abs(xs - 5), initial=0) <= 5


class TestParamPrediction:
    def test_softplus_zero_raw(self, rng):
        est = E.ContextAwareEstimator(4, 2, np.random.default_rng(0))
        zero_module(est.head_scale)
        s = Tensor(rng.standard_normal((1, 4, 3, 3)))
        with no_grad():
            _, sigma = est(s)
        np.testing.assert_allclose(sigma.numpy(), SIGMA_MIN + math.log(2.0), atol=1e-12)

    def test_zero_mean_head_gives_bias(self, rng):
        est = E.ContextAwareEstimator(4, 2, np.random.default_rng(0))
        zero_module(est.head_mean)
        est.head_mean.second.bias.data[:] = np.array([1.5, -2.5])
        s = Tensor(rng.standard_normal((1, 4, 3, 3)))
        with no_grad():
            mean, _ = est(s)
        np.testing.assert_allclose(mean.numpy()[0, 0], 1.5, atol=1e-12)
        np.testing.assert_allclose(mean.numpy()[0, 1], -2.5, atol=1e-12)

    def test_sigma_bounds_under_extreme_inputs(self, rng):
        est = E.ContextAwareEstimator(4, 2, np.random.default_rng(0))
        for scale in (1e3, -1e3):
            s = Tensor(np.full((1, 4, 3, 3), scale))
            with no_grad():
                _, sigma = est(s)
            assert (sigma.numpy() >= SIGMA_MIN).all()
            assert (sigma.numpy() <= SIGMA_MAX).all()

    def test_shallow_estimator_bounds(self, rng):
        est = E.ShallowEstimator(4, 2, np.random.default_rng(0))
        s = Tensor(rng.standard_normal((1, 4, 3, 3)) * 100)
        with no_grad():
            mean, sigma = est(s)
        assert mean.shape == (1, 2, 3, 3)
        assert (sigma.numpy() >= SIGMA_MIN).all() and (sigma.numpy() <= SIGMA_MAX).all()


class TestResidualPrediction:
    def test_zero_raw_gives_zero_residual(self, rng):
        res = E.ContextAwareResidual(4, 2, np.random.default_rng(0))
        zero_module(res.head)
        s = Tensor(rng.standard_normal((1, 4, 3, 3)))
        with no_grad():
            r = res(s)
        np.testing.assert_array_equal(r.numpy(), 0.0)

    def test_saturation_bound(self):
        assert abs(E.residual_map(Tensor(np.array(1e9))).item() - 0.5) < 1e-12
        assert abs(E.residual_map(Tensor(np.array(-1e9))).item() + 0.5) < 1e-12

    def test_bounded_for_random_inputs(self, rng):
        res = E.ShallowResidual(4, 2, np.random.default_rng(0))
        s = Tensor(rng.standard_normal((2, 4, 3, 3)) * 1e3)
        with no_grad():
            r = res(s).numpy()
        assert (np.abs(r) <= 0.5).all()

    def test_gradient(self, rng):
        res = E.ContextAwareResidual(2, 1, np.random.default_rng(1))
        s = rng.standard_normal((1, 2, 3, 3))
        check_gradients(lambda ts: (res(ts[0]) ** 2).sum(), [s])


class TestFullCapeGradient:
    def test_gradient_through_estimator(self, rng):
        est = E.ContextAwareEstimator(2, 1, np.random.default_rng(5))
        s = rng.standard_normal((1, 2, 3, 3))

        def build(ts):
            mean, sigma = est(ts[0])
            return (mean * mean + sigma).sum()

        check_gradients(build, [s])

    def test_parameter_counts_differ_only_by_heads(self):
        rng1 = np.random.default_rng(0)
        rng2 = np.random.default_rng(0)
        cape = E.ContextAwareEstimator(8, 2, rng1)
        shallow = E.ShallowEstimator(8, 2, rng2)
        assert cape.parameter_count() > shallow.parameter_count()
        assert cape.parameter_count() == (
            cape.extractor.parameter_count()
            + cape.head_mean.parameter_count()
            + cape.head_scale.parameter_count())
