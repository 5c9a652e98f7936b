import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from hjlab.prior import DiscretePrior, PriorError, make_prior, prior_moments, quantize_prior


class TestMakePrior:
    def test_rademacher(self):
        P = make_prior("rademacher")
        assert P.atoms == [(-1.0, 0.5), (1.0, 0.5)]
        assert P.bound == 1.0

    def test_normalized_list_unchanged(self):
        P = make_prior([[0, 0.25], [2, 0.75]])
        assert P.atoms == [(0.0, 0.25), (2.0, 0.75)]
        assert P.bound == 2.0

    def test_weights_normalized(self):
        P = make_prior([[0, 1], [2, 3]])
        np.testing.assert_allclose(P.weights, [0.25, 0.75], rtol=0, atol=1e-15)

    def test_uniform_and_biased(self):
        U = make_prior("uniform:-1,0,1")
        np.testing.assert_allclose(U.weights, [1 / 3] * 3, atol=1e-15)
        B = make_prior("biased-binary:0.8")
        assert dict(B.atoms) == pytest.approx({-1.0: 0.2, 1.0: 0.8})

    @pytest.mark.parametrize("bad", [[], [[0, -1], [1, 2]], [[float("nan"), 1]], [[float("inf"), 1]],
                                     "nonsense", "biased-binary:1.5", "uniform:", [[1, 0]]])
    def test_rejections(self, bad):
        with pytest.raises(PriorError):
            make_prior(bad)

    def test_dataclass_validates(self):
        with pytest.raises(PriorError):
            DiscretePrior((1.0, 2.0), (0.5, 0.5), 1.0)
        with pytest.raises(PriorError):
            DiscretePrior((1.0,), (0.9,), 1.0)

    def test_round_trip_atoms(self):
        P = make_prior([[0.5, 1], [-2, 1], [1, 2]])
        assert make_prior(P.to_spec()) == DiscretePrior(P.values, P.weights, P.bound, "custom")


class TestMoments:
    def test_examples(self):
        assert prior_moments(make_prior("rademacher")) == (0.0, 1.0)
        assert prior_moments(make_prior([[0, 0.25], [2, 0.75]])) == pytest.approx((1.5, 3.0), abs=1e-15)
        assert prior_moments(make_prior([[1.7, 1]])) == pytest.approx((1.7, 1.7 ** 2), abs=1e-15)

    @given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0.01, 10)), min_size=1, max_size=6))
    @settings(max_examples=60, deadline=None)
    def test_invariants(self, atoms):
        P = make_prior(atoms)
        assert abs(sum(P.weights) - 1.0) <= 1e-12
        assert all(abs(v) <= P.bound for v in P.values)
        m1, m2 = prior_moments(P)
        assert m2 >= m1 ** 2 - 1e-12
        assert m2 <= P.bound ** 2 + 1e-12


class TestSampling:
    @pytest.mark.parametrize("spec", ["rademacher", "biased-binary:0.3", "uniform:-1,0,0.5,2"])
    def test_frequencies_chi_square(self, spec):
        P = make_prior(spec)
        rng = np.random.default_rng(12345)
        draws = P.sample(rng, 100_000)
        counts = np.array([(draws == v).sum() for v in P.values])
        assert counts.sum() == draws.size
        _, pval = stats.chisquare(counts, 1e5 * P.weights_array)
        assert pval > 1e-3


class TestQuantize:
    def test_uniform_quantiles(self):
        P = quantize_prior(stats.uniform(-1, 2).ppf, 4)
        np.testing.assert_allclose(P.values, [-0.75, -0.25, 0.25, 0.75])
        np.testing.assert_allclose(P.weights, [0.25] * 4)

    def test_moments_converge(self):
        # uniform on [-1, 1]: second moment 1/3
        errs = [abs(prior_moments(quantize_prior(stats.uniform(-1, 2).ppf, k))[1] - 1 / 3) for k in (4, 8, 16)]
        assert errs[0] > errs[1] > errs[2]
