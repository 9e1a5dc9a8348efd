import json
import math

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from conftest import distributions
from urnlab.increments import (
    DistributionSpecError,
    MGFOverflowError,
    from_spec,
    mgf,
    mgf_gradient,
    mgf_hessian,
    moments,
    preset,
    resolve,
)


class TestFromSpec:
    def test_deterministic_walk(self):
        d = from_spec(1, [((1,), 1.0)])
        assert d.size == 1

    def test_ssrw(self):
        d = from_spec(1, [((1,), 0.5), ((-1,), 0.5)])
        assert d.dim == 1

    def test_excess_mass(self):
        with pytest.raises(DistributionSpecError, match="sum"):
            from_spec(1, [((1,), 0.6), ((-1,), 0.5)])

    @pytest.mark.parametrize("atoms", [
        [((1,), 0.0), ((0,), 1.0)],
        [((1,), -0.5), ((0,), 1.5)],
        [((1,), 0.5), ((1,), 0.5)],
        [((1, 0), 1.0)],
        [((0.5,), 1.0)],
    ])
    def test_rejects(self, atoms):
        with pytest.raises(DistributionSpecError):
            from_spec(1, atoms)

    def test_empty(self):
        with pytest.raises(DistributionSpecError):
            from_spec(1, [])

    def test_immutable(self):
        d = preset("ssrw1d")
        with pytest.raises(ValueError):
            d.probs[0] = 0.3


class TestResolve:
    def test_presets(self):
        for name in ("det1d", "ssrw1d", "ne2d"):
            assert resolve(name).name == name

    def test_inline_json(self):
        d = resolve('{"dim": 1, "atoms": [{"point": [2], "prob": 0.25}, {"point": [-1], "prob": 0.75}]}')
        assert d.mean[0] == pytest.approx(-0.25)

    def test_file(self, tmp_path):
        p = tmp_path / "d.json"
        p.write_text(json.dumps(preset("ne2d").to_dict()))
        assert resolve(str(p)).dim == 2

    def test_garbage(self):
        with pytest.raises(DistributionSpecError):
            resolve("not-a-thing")


class TestMoments:
    def test_deterministic_walk(self):
        mu, sigma, m = moments(preset("det1d"))
        assert mu.tolist() == [1.0] and sigma.tolist() == [[1.0]] and m.tolist() == [[1.0]]

    def test_ssrw(self):
        mu, sigma, m = moments(preset("ssrw1d"))
        assert mu.tolist() == [0.0] and sigma.tolist() == [[1.0]] and m.tolist() == [[0.0]]

    def test_two_dimensional(self):
        mu, sigma, m = moments(preset("ne2d"))
        np.testing.assert_allclose(mu, [0.5, 0.5])
        np.testing.assert_allclose(sigma, [[0.5, 0.0], [0.0, 0.5]])
        np.testing.assert_allclose(m, [[0.25, 0.25], [0.25, 0.25]])

    @settings(max_examples=50, deadline=None)
    @given(distributions())
    @example(from_spec(2, [((0, 0), 1 / 3), ((1, 3), 1 / 3), ((-1, 3), 1 / 3)]))
    def test_covariance_is_psd(self, d):
        mu, sigma, m = moments(d)
        np.testing.assert_array_equal(sigma, sigma.T)
        np.testing.assert_array_equal(m, np.outer(mu, mu))
        assert np.linalg.eigvalsh(sigma - m).min() >= -1e-10


class TestMgf:
    @pytest.mark.parametrize("lam", [-3.0, -0.5, 0.0, 0.7, 2.0])
    def test_closed_forms(self, lam):
        assert mgf(preset("det1d"), [lam]) == pytest.approx(math.exp(lam), rel=1e-14)
        assert mgf(preset("ssrw1d"), [lam]) == pytest.approx(math.cosh(lam), rel=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(distributions())
    def test_normalisation_and_gradient_at_zero(self, d):
        z = np.zeros(d.dim)
        assert mgf(d, z) == 1.0
        np.testing.assert_allclose(mgf_gradient(d, z), d.mean, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(distributions(), st.integers(0, 1000))
    def test_gradient_and_hessian_finite_differences(self, d, seed):
        lam = np.random.default_rng(seed).uniform(-1, 1, d.dim)
        h = 1e-6
        eye = np.eye(d.dim)
        fd_grad = np.array([(mgf(d, lam + h * e) - mgf(d, lam - h * e)) / (2 * h) for e in eye])
        np.testing.assert_allclose(mgf_gradient(d, lam), fd_grad, atol=1e-6, rtol=1e-6)
        fd_hess = np.array([(mgf_gradient(d, lam + h * e) - mgf_gradient(d, lam - h * e)) / (2 * h) for e in eye])
        np.testing.assert_allclose(mgf_hessian(d, lam), fd_hess, atol=1e-5, rtol=1e-5)

    def test_overflow_guard(self):
        with pytest.raises(MGFOverflowError):
            mgf(preset("det1d"), [701.0])
        assert math.isfinite(mgf(preset("det1d"), [699.0]))
