import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binom

from samplecompress import bounds
from samplecompress.bounds import (
    BoundDomainError,
    BoundInputs,
    BoundKind,
    ComparatorSpec,
    binomial_approx_bound,
    binomial_tail_inv,
    generic_compression_bound,
    kl_compression_bound,
    kl_div,
    kl_inv,
    linear_compression_bound,
    linear_compression_bound_grid,
    log_choose,
    maurer_sum,
    p2l_bound,
    rescaled_kl_bound,
    zeta_prior,
)


class TestLogChoose:
    def test_small(self):
        assert log_choose(5, 2) == pytest.approx(math.log(10), rel=1e-12)

    def test_zero(self):
        assert log_choose(17, 0) == 0.0
        assert log_choose(17, 17) == 0.0

    def test_large_against_direct_sum(self):
        direct = math.fsum(math.log((10597 - j + 1) / j) for j in range(1, 93))
        assert log_choose(10597, 92) == pytest.approx(direct, rel=1e-9)

    @pytest.mark.parametrize("n", [1, 7, 30, 60])
    def test_exact_integers(self, n):
        for k in range(n + 1):
            assert log_choose(n, k) == pytest.approx(math.log(math.comb(n, k)), rel=1e-12, abs=1e-13)

    @pytest.mark.parametrize("n,k", [(3, 4), (-1, 0), (5, -2)])
    def test_domain(self, n, k):
        with pytest.raises(BoundDomainError):
            log_choose(n, k)


class TestZeta:
    def test_values(self):
        assert zeta_prior(0) == pytest.approx(0.607927, abs=1e-6)
        assert zeta_prior(1) == pytest.approx(0.151982, abs=1e-6)

    def test_partial_sum(self):
        m = np.arange(10**6 + 1, dtype=float)
        total = math.fsum(6.0 / (math.pi**2 * (m + 1) ** 2))
        assert 1 - 1e-5 < total <= 1.0


class TestKl:
    def test_equal(self):
        assert kl_div(0.5, 0.5) == 0.0

    def test_q_zero(self):
        assert kl_div(0.0, 0.3) == pytest.approx(math.log(1 / 0.7), rel=1e-14)

    def test_direct(self):
        # 0.1 ln(1/3) + 0.9 ln(0.9/0.7)
        assert kl_div(0.1, 0.3) == pytest.approx(0.1163217566, abs=1e-9)

    def test_boundary_is_inf(self):
        assert kl_div(0.2, 1.0) == math.inf
        assert kl_div(0.2, 0.0) == math.inf
        assert kl_div(0.0, 0.0) == 0.0


class TestKlInv:
    def test_eps_zero(self):
        for q in (0.0, 0.3, 0.9):
            assert kl_inv(q, 0.0) == q

    def test_q_zero_closed_form(self):
        assert kl_inv(0.0, 0.05187) == pytest.approx(0.050548, abs=1e-6)

    def test_grid_scan(self):
        # largest p on a 1e-6 grid with kl(0.1, p) <= 0.2 is 0.378391
        v = kl_inv(0.1, 0.2)
        assert 0.378391 <= v < 0.378392

    def test_q_one(self):
        assert kl_inv(1.0, 0.3) == 1.0

    @pytest.mark.parametrize("q", [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
    @pytest.mark.parametrize("eps", [1e-4, 1e-3, 1e-2, 1e-1, 1.0])
    def test_round_trip(self, q, eps):
        p = kl_inv(q, eps)
        assert p >= q
        if p < 1:
            assert eps - 1e-9 <= kl_div(q, p) <= eps
            assert kl_div(q, p + 1e-9) > eps


class TestBinomialTailInv:
    def test_k_zero_closed_form(self):
        for m in (1, 10, 1000):
            assert binomial_tail_inv(0, m, 0.05) == pytest.approx(1 - 0.05 ** (1 / m), abs=1e-9)

    def test_k_equals_m(self):
        assert binomial_tail_inv(7, 7, 0.01) == 1.0

    def test_grid_scan(self):
        # largest r on a 1e-7 grid with Bin(10, r) cdf at 1 >= 0.05 is 0.3941633
        v = binomial_tail_inv(1, 10, 0.05)
        assert v == pytest.approx(0.3941633, abs=2e-7)

    @pytest.mark.parametrize("k,m,delta", [(3, 50, 0.01), (20, 200, 0.1), (0, 5, 0.5)])
    def test_cdf_at_result(self, k, m, delta):
        r = binomial_tail_inv(k, m, delta)
        assert binom.cdf(k, m, r) >= delta * (1 - 1e-9)
        assert binom.cdf(k, m, r + 1e-8) < delta

    def test_domain(self):
        with pytest.raises(BoundDomainError):
            binomial_tail_inv(5, 3, 0.1)
        with pytest.raises(BoundDomainError):
            binomial_tail_inv(1, 3, 0.0)


class TestBinomialApprox:
    def test_reference_values(self):
        assert binomial_approx_bound(BoundInputs(10597, 92, 0.0, 0.01)).value == pytest.approx(0.0500, abs=5e-4)
        assert binomial_approx_bound(BoundInputs(10612, 237, 0.0, 0.01)).value == pytest.approx(0.1047, abs=5e-4)

    def test_empty_compression_set(self):
        n = 500
        v = binomial_approx_bound(BoundInputs(n, 0, 0.0, 0.01)).value
        assert v == pytest.approx(1 - math.exp(-math.log(1 / (zeta_prior(0) * 0.01)) / n), rel=1e-12)

    def test_degenerate(self):
        with pytest.raises(BoundDomainError):
            binomial_approx_bound(BoundInputs(10, 2, 1.0, 0.01))

    def test_nonzero_kappa_formula(self):
        inp = BoundInputs(200, 5, 3 / 195, 0.05)
        expected = 1 - math.exp(
            -(math.log(math.comb(195, 3)) + math.log(math.comb(200, 5) / (zeta_prior(5) * 0.05))) / (195 - 3)
        )
        assert binomial_approx_bound(inp).value == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("n,m", [(20, 0), (40, 3), (60, 10)])
    def test_equals_tail_inversion_at_zero_errors(self, n, m):
        inp = BoundInputs(n, m, 0.0, 0.05)
        conf = zeta_prior(m) * 0.05 / math.comb(n, m)
        assert abs(binomial_approx_bound(inp).value - binomial_tail_inv(0, n - m, conf)) <= 1e-6
        assert abs(bounds.binomial_tail_bound(inp).value - binomial_tail_inv(0, n - m, conf)) <= 1e-12


class TestKlBound:
    def test_reference_values(self):
        assert kl_compression_bound(BoundInputs(10597, 92, 0.0, 0.01)).value == pytest.approx(0.0505, abs=5e-4)
        assert kl_compression_bound(BoundInputs(10612, 237, 0.0, 0.01)).value == pytest.approx(0.1052, abs=5e-4)

    def test_loss_one(self):
        assert kl_compression_bound(BoundInputs(100, 3, 1.0, 0.01)).value == 1.0

    def test_full_compression_set_is_vacuous(self):
        c = kl_compression_bound(BoundInputs(10, 10, 0.0, 0.01))
        assert c.value == 1.0 and c.vacuous

    def test_out_of_range(self):
        with pytest.raises(BoundDomainError):
            kl_compression_bound(BoundInputs(100, 3, 1.5, 0.01))

    def test_eps_matches_formula(self):
        n, m, d = 1000, 12, 0.05
        eps = (math.log(math.comb(n, m)) + math.log(2 * math.sqrt(n - m) / (zeta_prior(m) * d))) / (n - m)
        c = kl_compression_bound(BoundInputs(n, m, 0.05, d))
        assert c.params["eps"] == pytest.approx(eps, rel=1e-12)
        assert c.value == kl_inv(0.05, c.params["eps"])


class TestLinearBound:
    def _bracket(self, n, m, d):
        return math.log(math.comb(n, m)) + math.log(1 / (zeta_prior(m) * d))

    def test_direct_formula_at_optimal_lambda(self):
        n, m, loss, d, sigma = 1000, 10, 0.1, 0.01, 0.5
        B = self._bracket(n, m, d)
        lam_star = math.sqrt(2 * B / (sigma**2 * (n - m)))
        direct = loss + lam_star * sigma**2 / 2 + B / (lam_star * (n - m))
        got = linear_compression_bound(BoundInputs(n, m, loss, d), lam_star, sigma).value
        assert got == pytest.approx(direct, rel=1e-12)
        # lam_star is the minimizer
        for f in (0.5, 0.9, 1.1, 2.0):
            assert linear_compression_bound(BoundInputs(n, m, loss, d), f * lam_star, sigma).value > got

    def test_large_lambda_dominated_by_variance_term(self):
        inp = BoundInputs(1000, 10, 0.0, 0.01)
        vals = [linear_compression_bound(inp, lam, 0.5).value for lam in (10.0, 100.0, 1000.0)]
        assert vals == sorted(vals)
        assert vals[-1] == pytest.approx(1000 * 0.25 / 2, rel=1e-3)

    def test_grid_is_no_better_than_invalid_pointwise_optimum(self):
        n, m, loss, d, sigma = 1000, 10, 0.1, 0.01, 0.5
        inp = BoundInputs(n, m, loss, d)
        grid = linear_compression_bound_grid(inp, sigma, grid_size=20)
        lam_star = math.sqrt(2 * self._bracket(n, m, d) / (sigma**2 * (n - m)))
        pointwise = linear_compression_bound(inp, lam_star, sigma).value
        assert grid.value >= pointwise
        # exhaustive oracle over the same grid at delta / 20
        lams = np.geomspace(1e-4, 10, 20)
        Bg = self._bracket(n, m, d / 20)
        oracle = min(loss + l * sigma**2 / 2 + Bg / (l * (n - m)) for l in lams)
        assert grid.value == pytest.approx(oracle, rel=1e-12)

    def test_domain(self):
        with pytest.raises(BoundDomainError):
            linear_compression_bound(BoundInputs(100, 1, 0.1), 0.0, 1.0)
        with pytest.raises(BoundDomainError):
            linear_compression_bound(BoundInputs(100, 1, 0.1), 1.0, -1.0)

    def test_cap(self):
        c = linear_compression_bound(BoundInputs(20, 5, 0.5), 1e-3, 0.5, loss_max=1.0)
        assert c.value == 1.0 and c.vacuous


class TestGeneric:
    def test_kl_wrapper_bit_identical(self):
        inp = BoundInputs(5000, 40, 0.02, 0.01, 0.5)
        eps = generic_compression_bound(inp, ComparatorSpec.kl())
        assert kl_compression_bound(inp).params["eps"] == eps
        assert kl_compression_bound(inp).value == kl_inv(0.02, eps)

    def test_linear_wrapper_bit_identical(self):
        inp = BoundInputs(5000, 40, 0.02, 0.01)
        lam, sigma = 0.3, 0.5
        eps = generic_compression_bound(inp, ComparatorSpec.linear(lam, sigma))
        # Delta_lam(q, p) = lam (p - q) <= eps  <=>  p <= q + eps / lam
        assert linear_compression_bound(inp, lam, sigma).value == 0.02 + eps / lam

    @pytest.mark.parametrize("nc", [1, 2, 5, 10, 30])
    def test_maurer_moment_is_tighter(self, nc):
        inp = BoundInputs(nc + 3, 3, 0.0, 0.05)
        exact = ComparatorSpec.custom(lambda k: math.log(maurer_sum(k)), "kl-maurer")
        assert generic_compression_bound(inp, exact) <= generic_compression_bound(inp, ComparatorSpec.kl())

    def test_empty_complement(self):
        with pytest.raises(BoundDomainError):
            generic_compression_bound(BoundInputs(5, 5, 0.0), ComparatorSpec.kl())

    def test_infinite_moment(self):
        with pytest.raises(BoundDomainError):
            generic_compression_bound(BoundInputs(50, 5, 0.0), ComparatorSpec.custom(lambda m: math.inf))


class TestMaurer:
    def test_small(self):
        assert maurer_sum(1) == pytest.approx(2.0, rel=1e-14)
        assert maurer_sum(2) == pytest.approx(2.5, rel=1e-14)

    @pytest.mark.parametrize("m", [3, 7, 20])
    def test_exact_rational(self, m):
        from fractions import Fraction
        exact = sum(
            math.comb(m, k) * Fraction(k, m) ** k * Fraction(m - k, m) ** (m - k) for k in range(m + 1)
        )
        assert maurer_sum(m) == pytest.approx(float(exact), rel=1e-12)


class TestP2L:
    def test_reference_values(self):
        assert p2l_bound(92, 10597, 0.01).value == pytest.approx(0.0104, abs=5e-4)
        assert p2l_bound(237, 10612, 0.01).value == pytest.approx(0.0253, abs=1.2e-3)

    def test_full(self):
        assert p2l_bound(40, 40, 0.01).value == 1.0

    def test_root_solves_psi(self):
        for m, n, N in [(5, 300, None), (5, 300, 300), (0, 100, 100), (30, 2000, 2000)]:
            c = p2l_bound(m, n, 0.05, horizon=N)
            h = c.params["horizon"]
            assert m / n <= c.value <= 1
            assert bounds.p2l_log_psi(c.value - 2e-10, m, n, 0.05, h) <= 0
            assert bounds.p2l_log_psi(c.value, m, n, 0.05, h) >= -1e-6

    def test_vacuous_when_no_root(self):
        # horizon 1 at m = 0: psi(0) = delta * n / 2 > 1 already
        c = p2l_bound(0, 100, 0.05)
        assert c.value == 1.0 and c.vacuous
        assert bounds.p2l_log_psi(0.0, 0, 100, 0.05, 1) == pytest.approx(math.log(0.05 * 100 / 2))

    def test_sample_size_horizon_is_more_conservative(self):
        for m, n in [(10, 1000), (92, 10597)]:
            assert p2l_bound(m, n, 0.01, horizon=n).value > p2l_bound(m, n, 0.01).value

    def test_tighter_than_kl_in_consistent_case(self):
        for m, n in [(10, 1000), (92, 10597)]:
            assert p2l_bound(m, n, 0.01).value < kl_compression_bound(BoundInputs(n, m, 0.0, 0.01)).value

    def test_bad_delta(self):
        with pytest.raises(BoundDomainError):
            p2l_bound(3, 100, 1.0)


class TestRescaled:
    def test_identity_scale(self):
        inp = BoundInputs(800, 9, 0.07, 0.01)
        assert rescaled_kl_bound(inp, 1.0).value == kl_compression_bound(inp).value

    def test_zero_loss(self):
        inp = BoundInputs(7751, 29, 0.0, 0.01)
        eps = (math.log(math.comb(7751, 29)) + math.log(2 * math.sqrt(7722) / (zeta_prior(29) * 0.01))) / 7722
        assert rescaled_kl_bound(inp, 90.6).value == pytest.approx(90.6 * (1 - math.exp(-eps)), rel=1e-9)

    @pytest.mark.parametrize("c", [0.5, 3.0, 17.0])
    def test_homogeneity(self, c):
        inp = BoundInputs(800, 9, 2.0, 0.01)
        scaled = replace(inp, loss_complement=c * 2.0)
        assert rescaled_kl_bound(scaled, c * 10.0).value == pytest.approx(c * rescaled_kl_bound(inp, 10.0).value, rel=1e-9)

    def test_out_of_range(self):
        with pytest.raises(BoundDomainError):
            rescaled_kl_bound(BoundInputs(100, 1, 5.0), 4.0)


class TestInputs:
    @pytest.mark.parametrize("kw", [
        dict(n=0, m=0, loss_complement=0.0),
        dict(n=10, m=11, loss_complement=0.0),
        dict(n=10, m=1, loss_complement=-0.1),
        dict(n=10, m=1, loss_complement=0.1, delta=0.0),
        dict(n=10, m=1, loss_complement=0.1, msg_prob=1.5),
    ])
    def test_invalid(self, kw):
        with pytest.raises(BoundDomainError):
            BoundInputs(**kw)

    def test_json(self):
        c = kl_compression_bound(BoundInputs(100, 3, 0.0, 0.01))
        d = json.loads(json.dumps(c.to_dict()))
        assert {"kind", "value", "n", "m", "loss_complement", "delta", "msg_prob", "scale"} <= d.keys()
        assert d["kind"] == BoundKind.KL.value


# ---------------------------------------------------------------------------
# properties

cases = st.tuples(
    st.integers(20, 3000),
    st.floats(0.0, 0.45),
    st.floats(0.0, 0.9),
    st.floats(1e-4, 0.5),
)


def _all_bounds(n, m, loss, delta, msg=1.0):
    inp = BoundInputs(n, m, loss, delta, msg)
    out = {
        "kl": kl_compression_bound(inp).value,
        "linear": linear_compression_bound(inp, 0.5, 0.5).value,
    }
    if bounds.error_count(inp) < n - m:
        out["binom"] = binomial_approx_bound(inp).value
    if loss == 0:
        out["p2l"] = p2l_bound(m, n, min(delta, 0.99), horizon=n).value
    return out


@settings(max_examples=60, deadline=None)
@given(cases)
def test_monotone_in_loss_and_delta(case):
    n, mfrac, loss, delta = case
    m = int(mfrac * n)
    base = _all_bounds(n, m, loss, delta)
    more_loss = _all_bounds(n, m, min(loss + 0.05, 1.0), delta)
    more_delta = _all_bounds(n, m, loss, min(delta * 2, 1.0))
    less_msg = _all_bounds(n, m, loss, delta, 0.5)
    for k, v in base.items():
        if k in more_loss and k != "p2l":
            assert more_loss[k] >= v - 1e-12
        assert more_delta[k] <= v + 1e-12
        assert less_msg.get(k, math.inf) >= v - 1e-12 if k != "p2l" else True


@settings(max_examples=60, deadline=None)
@given(cases)
def test_monotone_in_m(case):
    n, mfrac, loss, delta = case
    m = int(mfrac * n)
    a = _all_bounds(n, m, loss, delta)
    b = _all_bounds(n, m + 1, loss, delta)
    for k in a:
        if k in b and k != "binom":
            assert b[k] >= a[k] - 1e-12, k
    # the binomial bound sees an error count, which rounding can shift as m
    # moves; hold the count fixed instead
    kappa = round(loss * (n - m - 1))
    if kappa < n - m - 1:
        lo = binomial_approx_bound(BoundInputs(n, m, kappa / (n - m), delta)).value
        hi = binomial_approx_bound(BoundInputs(n, m + 1, kappa / (n - m - 1), delta)).value
        assert hi >= lo - 1e-12


@settings(max_examples=40, deadline=None)
@given(cases)
def test_certificate_invariants(case):
    n, mfrac, loss, delta = case
    inp = BoundInputs(n, int(mfrac * n), loss, delta)
    for c in (kl_compression_bound(inp), linear_compression_bound(inp, 1.0, 0.5)):
        assert c.value >= loss
    assert kl_compression_bound(inp).value <= 1.0
    if bounds.error_count(inp) < inp.n_complement:
        assert binomial_approx_bound(inp).value >= bounds.error_count(inp) / inp.n_complement - 1e-12


def test_pure_across_threads():
    args = [(92, 10597), (237, 10612), (10, 500)] * 4

    def work(a):
        m, n = a
        inp = BoundInputs(n, m, 0.01, 0.01)
        return (kl_compression_bound(inp).value, binomial_approx_bound(inp).value, p2l_bound(m, n, 0.01).value)

    serial = [work(a) for a in args]
    with ThreadPoolExecutor(4) as ex:
        threaded = list(ex.map(work, args))
    assert serial == threaded
