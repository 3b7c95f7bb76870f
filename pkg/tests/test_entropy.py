import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from bgop.entropy import (
    B_MIN,
    P_FLOOR,
    LaplaceParams,
    QuantizerMode,
    build_pmf_table,
    build_pmf_tables,
    hyper_rate_bits,
    laplace_bin_prob,
    quantize,
    rate_bits,
)
from bgop.errors import ConfigurationError
from util import fd_grad, rel_err

# Closed-form unit-Laplace bin masses, computed by hand from the CDF
# F(x) = 0.5*exp(x) for x<0, 1-0.5*exp(-x) for x>=0:
#   P(round to 0) = F(0.5) - F(-0.5) = 1 - e^{-1/2}
#   P(round to 1) = F(1.5) - F(0.5) = (e^{-1/2} - e^{-3/2}) / 2
#   right tail     = 1 - F(1.5)     = e^{-3/2} / 2
P0 = 0.3934693402873666
P1 = 0.19170024978210182
TAIL = 0.11156508007421491
BITS0 = 1.3456768717052028  # -log2(P0)
BITS1 = 2.383075878073449  # -log2(P1)


def unit_params(shape=(), dtype=torch.float64):
    return LaplaceParams.unit(shape if shape else (1,), dtype=dtype)


class TestLaplaceBinProb:
    def test_closed_forms(self):
        p = unit_params()
        assert abs(float(laplace_bin_prob(0.0, p)) - P0) < 1e-12
        assert abs(float(laplace_bin_prob(1.0, p)) - P1) < 1e-12
        assert abs(float(laplace_bin_prob(0.0, p)) - (1 - math.exp(-0.5))) < 1e-15

    def test_matches_naive_cdf_difference(self):
        # brute-force F(k+0.5)-F(k-0.5) with the textbook CDF
        def cdf(x, mu, b):
            d = (x - mu) / b
            return 0.5 * math.exp(d) if d < 0 else 1 - 0.5 * math.exp(-d)

        for mu in (-1.3, 0.0, 0.7):
            for b in (0.01, 0.3, 1.0, 4.0):
                params = LaplaceParams(
                    mu=torch.tensor([mu], dtype=torch.float64),
                    b=torch.tensor([b], dtype=torch.float64),
                )
                for k in range(-4, 5):
                    want = cdf(k + 0.5, mu, b) - cdf(k - 0.5, mu, b)
                    got = float(laplace_bin_prob(float(k), params))
                    assert abs(got - want) < 1e-12, (mu, b, k)

    @given(k=st.integers(-30, 30), b=st.floats(0.01, 20.0))
    def test_symmetry_about_zero_mean(self, k, b):
        params = LaplaceParams(
            mu=torch.zeros(1, dtype=torch.float64),
            b=torch.full((1,), b, dtype=torch.float64),
        )
        assert float(laplace_bin_prob(k, params)) == pytest.approx(
            float(laplace_bin_prob(-k, params)), abs=1e-15
        )

    def test_result_in_unit_interval(self):
        g = torch.Generator().manual_seed(0)
        mu = torch.randn(64, generator=g, dtype=torch.float64) * 5
        b = 0.01 + torch.rand(64, generator=g, dtype=torch.float64) * 10
        k = torch.randint(-50, 50, (64,), generator=g).double()
        p = laplace_bin_prob(k, LaplaceParams(mu=mu, b=b))
        assert bool((p > 0).all()) and bool((p < 1).all())

    def test_normalization_tail_bound(self):
        for mu in (0.0, 2.5, -7.0):
            for b in (0.05, 1.0, 3.0):
                big_k = int(math.ceil(20 * b + abs(mu)))
                ks = torch.arange(-big_k, big_k + 1, dtype=torch.float64)
                params = LaplaceParams(
                    mu=torch.full_like(ks, mu), b=torch.full_like(ks, b)
                )
                total = float(laplace_bin_prob(ks, params).sum())
                assert abs(1 - total) < 1e-8


class TestRateBits:
    def test_single_element_closed_form(self):
        r = rate_bits(torch.zeros(1, dtype=torch.float64), unit_params())
        assert abs(float(r) - BITS0) < 1e-12

    def test_additivity(self):
        r = rate_bits(torch.zeros(2, dtype=torch.float64), unit_params((2,)))
        assert abs(float(r) - 2 * BITS0) < 1e-12

    def test_nonnegative(self):
        g = torch.Generator().manual_seed(1)
        y = torch.randn(4, 4, generator=g, dtype=torch.float64) * 8
        mu = torch.randn(4, 4, generator=g, dtype=torch.float64)
        b = 0.01 + torch.rand(4, 4, generator=g, dtype=torch.float64) * 3
        assert float(rate_bits(y, LaplaceParams(mu=mu, b=b))) >= 0

    def test_monotone_in_scale_at_mode(self):
        y = torch.zeros(1, dtype=torch.float64)
        rates = []
        for b in (0.01, 0.1, 0.5, 1.0, 2.0, 8.0):
            params = LaplaceParams(
                mu=torch.zeros(1, dtype=torch.float64),
                b=torch.full((1,), b, dtype=torch.float64),
            )
            rates.append(float(rate_bits(y, params)))
        assert rates == sorted(rates)

    def test_probability_floor_bounds_rate(self):
        # symbol far out in the tail of a narrow distribution
        params = LaplaceParams(
            mu=torch.zeros(1, dtype=torch.float64),
            b=torch.full((1,), 0.01, dtype=torch.float64),
        )
        r = float(rate_bits(torch.tensor([500.0], dtype=torch.float64), params))
        assert r == pytest.approx(-math.log2(P_FLOOR))

    def test_gradients_match_finite_differences(self):
        g = torch.Generator().manual_seed(2)
        y0 = (torch.rand(3, 3, generator=g, dtype=torch.float64) - 0.5) * 4
        mu0 = torch.randn(3, 3, generator=g, dtype=torch.float64)
        b0 = 0.2 + torch.rand(3, 3, generator=g, dtype=torch.float64)

        y = y0.clone().requires_grad_()
        mu = mu0.clone().requires_grad_()
        b = b0.clone().requires_grad_()
        rate_bits(y, LaplaceParams(mu=mu, b=b)).backward()

        assert rel_err(y.grad, fd_grad(lambda t: rate_bits(t, LaplaceParams(mu=mu0, b=b0)), y0)) < 1e-3
        assert rel_err(mu.grad, fd_grad(lambda t: rate_bits(y0, LaplaceParams(mu=t, b=b0)), mu0)) < 1e-3
        assert rel_err(b.grad, fd_grad(lambda t: rate_bits(y0, LaplaceParams(mu=mu0, b=t)), b0)) < 1e-3


class TestHyperRate:
    def test_zeros(self):
        z = torch.zeros(7, dtype=torch.float64)
        assert abs(float(hyper_rate_bits(z)) - 7 * BITS0) < 1e-11

    def test_element_at_one_contribution(self):
        z = torch.zeros(4, dtype=torch.float64)
        base = float(hyper_rate_bits(z))
        z[2] = 1.0
        assert float(hyper_rate_bits(z)) - base == pytest.approx(BITS1 - BITS0, abs=1e-11)

    @given(st.permutations(list(range(6))))
    def test_permutation_invariance(self, perm):
        z = torch.tensor([0.0, 1.0, -2.0, 3.0, 0.0, -1.0], dtype=torch.float64)
        assert float(hyper_rate_bits(z)) == pytest.approx(
            float(hyper_rate_bits(z[list(perm)])), abs=1e-12
        )


class TestQuantize:
    def test_round_examples(self):
        y = torch.tensor([2.4, -0.5, 0.5, -2.5, 1.5, 0.49, -0.49, 0.0])
        got = quantize(y, QuantizerMode.ROUND)
        assert torch.equal(got, torch.tensor([2.0, -1.0, 1.0, -3.0, 2.0, 0.0, 0.0, 0.0]))

    def test_round_is_integer_valued(self):
        g = torch.Generator().manual_seed(3)
        y = torch.randn(100, generator=g) * 20
        q = quantize(y, QuantizerMode.ROUND)
        assert torch.equal(q, q.round())
        assert bool((q - y).abs().max() <= 0.5)

    def test_noise_support(self):
        g = torch.Generator().manual_seed(4)
        y = torch.randn(1000, generator=g)
        q = quantize(y, QuantizerMode.NOISE, generator=g)
        assert bool(((q - y).abs() <= 0.5).all())

    def test_noise_unbiased(self):
        n = 100_000
        g = torch.Generator().manual_seed(5)
        y = torch.zeros(n)
        mean = float((quantize(y, QuantizerMode.NOISE, generator=g) - y).mean())
        sigma = 1.0 / math.sqrt(12 * n)
        assert abs(mean) < 3 * sigma

    def test_noise_seed_reproducible(self):
        y = torch.linspace(-2, 2, 50)
        a = quantize(y, QuantizerMode.NOISE, generator=torch.Generator().manual_seed(9))
        b = quantize(y, QuantizerMode.NOISE, generator=torch.Generator().manual_seed(9))
        assert torch.equal(a, b)

    def test_noise_gradient_passthrough(self):
        y = torch.randn(8, requires_grad=True, dtype=torch.float64)
        quantize(y, QuantizerMode.NOISE, generator=torch.Generator().manual_seed(0)).sum().backward()
        assert torch.equal(y.grad, torch.ones_like(y))


class TestPmfTables:
    def test_unit_span_folds_tails(self):
        table = build_pmf_table(unit_params(), -1, 1)
        probs = table.probs.tolist()
        assert probs[0] == pytest.approx(P1 + TAIL, abs=1e-12)
        assert probs[1] == pytest.approx(P0, abs=1e-12)
        assert probs[2] == pytest.approx(P1 + TAIL, abs=1e-12)
        assert abs(sum(probs) - 1.0) < 1e-12

    def test_degenerate_span(self):
        table = build_pmf_table(unit_params(), 0, 0)
        assert float(table.probs[0]) == pytest.approx(1.0, abs=1e-15)

    def test_empty_span_rejected(self):
        with pytest.raises(ConfigurationError):
            build_pmf_table(unit_params(), 1, 0)

    def test_single_element_wrapper_rejects_batches(self):
        with pytest.raises(ConfigurationError):
            build_pmf_table(unit_params((3,)), -1, 1)

    @given(
        mu=st.floats(-5, 5),
        b=st.floats(0.02, 6.0),
        lo=st.integers(-12, 0),
        hi=st.integers(0, 12),
    )
    @settings(max_examples=60)
    def test_rows_always_sum_to_one(self, mu, b, lo, hi):
        params = LaplaceParams(
            mu=torch.tensor([mu], dtype=torch.float64),
            b=torch.tensor([b], dtype=torch.float64),
        )
        table = build_pmf_table(params, lo, hi)
        assert abs(float(table.probs.sum()) - 1.0) < 1e-12
        assert bool((table.probs >= P_FLOOR / 2).all())

    def test_batched_tables_match_scalar_tables(self):
        g = torch.Generator().manual_seed(6)
        mu = torch.randn(2, 3, generator=g, dtype=torch.float64)
        b = 0.1 + torch.rand(2, 3, generator=g, dtype=torch.float64)
        batch = build_pmf_tables(LaplaceParams(mu=mu, b=b), -4, 4)
        for i in range(2):
            for j in range(3):
                single = build_pmf_table(
                    LaplaceParams(mu=mu[i, j].reshape(1), b=b[i, j].reshape(1)), -4, 4
                )
                assert torch.allclose(batch.probs[i, j], single.probs, atol=1e-15)


def test_scale_floor_constant():
    assert B_MIN == 0.01
