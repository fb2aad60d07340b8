import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from di_forge.channels import ChannelModel, NoiselessChannel
from di_forge.codebook import (CodebookParams, ExpurgationReport, InputBox, build_primitive,
                               expurgated_code)
from di_forge.decoder import DecoderParams
from di_forge.errors import (EmptyCodebook, InputOutOfBox, PreconditionError, RegimeViolation,
                             SameIdPair, TooFewWords)
from di_forge import experiments as ex


@pytest.fixture(scope="module")
def small():
    p = CodebookParams(40, 2, 0.2, (1.2, 0.6), 0.6, (3, 3), seed=4)
    cb, ids, _ = expurgated_code(build_primitive(p), InputBox(0, 1, 40), 0)
    return cb, ids


def test_concentration_vacuous_and_bound():
    ch = ChannelModel.bernoulli()
    x = np.full(50, 0.5)
    est = ex.concentration_experiment(ch, x, np.ones(50), 0.0, 100, 1)
    assert est.bound == 2.0 and est.consistent
    assert ex.bernoulli_tail_bound(2.0) == pytest.approx(6.71e-4, rel=1e-3)
    assert ex.poisson_tail_bound(10.0, 1.0) == pytest.approx(5.8e-6, rel=1e-2)


def test_concentration_input_checked():
    with pytest.raises(InputOutOfBox):
        ex.concentration_experiment(ChannelModel.bernoulli(), np.full(5, 2.0), np.ones(5), 1, 10, 0)


def test_concentration_small_run():
    rng = np.random.default_rng(0)
    x, e = rng.random(200), rng.standard_normal(200)
    est = ex.concentration_experiment(ChannelModel.bernoulli(), x, e, 1.0, 50_000, 3)
    assert est.p_hat <= est.bound + 4 * est.sigma


def test_missed_id_noiseless_zero(small):
    cb, ids = small
    est = ex.estimate_missed_id(cb, NoiselessChannel(), DecoderParams(0.1), ids, 1000, 0)
    assert est.p_hat == 0
    with pytest.raises(PreconditionError):
        ex.estimate_missed_id(cb, NoiselessChannel(), DecoderParams(0.1), ids, 0, 0)
    with pytest.raises(EmptyCodebook):
        ex.estimate_missed_id(cb, NoiselessChannel(), DecoderParams(0.1), [], 10, 0)


def test_missed_id_out_of_box():
    cb = build_primitive(CodebookParams(30, 1, 0.2, (3.0,), 1.0, (4,), seed=0))
    with pytest.raises(InputOutOfBox):
        ex.estimate_missed_id(cb, ChannelModel.bernoulli(), DecoderParams(1.0), None, 10, 0)


def test_false_id_errors_and_noiseless(small):
    cb, ids = small
    dp = DecoderParams(0.25)
    with pytest.raises(SameIdPair):
        ex.estimate_false_id(cb, NoiselessChannel(), dp, "random", 10, 0, pair=(ids[0], ids[0]))
    with pytest.raises(TooFewWords):
        ex.estimate_false_id(cb, NoiselessChannel(), dp, "random", 10, 0, ids=ids[:1])
    for how in ("random", "adversarial_min_sep"):
        est = ex.estimate_false_id(cb, NoiselessChannel(), dp, how, 500, 0, ids=ids)
        assert est.p_hat == 0


def test_estimates_reproducible(small):
    cb, ids = small
    ch = ChannelModel.bernoulli()
    dp = DecoderParams(1.0)
    a = ex.estimate_false_id(cb, ch, dp, "random", 3000, 9, ids=ids)
    b = ex.estimate_false_id(cb, ch, dp, "random", 3000, 9, ids=ids)
    assert a == b
    assert ex.estimate_missed_id(cb, ch, dp, ids, 3000, 9) == ex.estimate_missed_id(cb, ch, dp, ids, 3000, 9)


@settings(deadline=None, max_examples=60)
@given(st.integers(1, 10**6), st.data(), st.floats(0, 1))
def test_ci_contains_phat(m, data, bound):
    k = data.draw(st.integers(0, m))
    est = ex.ErrorEstimate(k, m, bound)
    assert est.ci_lo <= est.p_hat <= est.ci_hi


@pytest.mark.parametrize("k,m", [(0, 10), (3, 100), (57, 1000), (10, 10)])
def test_clopper_pearson_reference(k, m):
    from scipy.stats import binomtest
    ref = binomtest(k, m).proportion_ci(0.99, "exact")
    assert ex.clopper_pearson(k, m) == pytest.approx((ref.low, ref.high), rel=1e-9, abs=1e-15)


@pytest.mark.parametrize("L", [1, 2, 3, 5])
@pytest.mark.parametrize("delta", [0.1, 0.2, 0.5])
def test_catalog_identities(L, delta):
    d = 3 * math.log(256)
    p = CodebookParams.desk(256, L, delta, (2,) * L, d=d)
    cat = ex.bound_catalog(p, math.log(256))
    assert cat.lambda1 == L * cat.lambda_
    assert cat.lambda2 == cat.lambda_
    assert cat.eta_L == 2.0**-L
    assert cat.linearithmic_rate_bound == pytest.approx((1 - delta) / 2 * (1 - 2.0**-L), rel=1e-15)
    assert 0 < cat.eta_L < 1
    assert cat.Delta_bound == pytest.approx(math.sqrt(2 * L * d))


def test_linearithmic_example():
    assert ex.linearithmic_rate_bound(0.2, 2) == pytest.approx(0.3)


def test_poisson_lambda():
    p = CodebookParams.desk(100, 2, 0.2, (2, 2))
    cat = ex.bound_catalog(p, math.log(100), "poisson", A=1.0)
    assert cat.lambda_ == pytest.approx(math.exp(1.5 * (1.5 - math.log(100))))


def test_converse_value():
    assert ex.rr_upper_bound(0.001) == pytest.approx(6.48, abs=0.01)
    assert ex.rr_upper_bound(0.001) == pytest.approx(0.5 * math.log2(8 / 0.001), abs=1e-3)


@pytest.mark.parametrize("n,L,E", [(256, 4, 0.01), (1024, 3, 0.05), (4096, 2, 0.001)])
def test_rr_radius_closed_vs_recursion(n, L, E):
    rec = ex.rr_radii(n, L, 0.2, E)
    for l in range(1, L + 1):
        assert ex.rr_radius_closed(n, l, 0.2, E, L) == pytest.approx(rec[l - 1], rel=1e-9)


def test_rr_regime():
    n, delta = 256, 0.2
    limit = 1 / (delta * math.log(n))
    for E in (limit, 2 * limit):
        with pytest.raises(RegimeViolation):
            ex.rr_build(n, 2, delta, E, (2, 2))


def test_rr_build_angles():
    cb, cat = ex.rr_build(1024, 2, 0.2, 3e-4, (3, 2), seed=1)
    for r, th in zip(cat.radii, cat.theta):
        assert r * (1 - math.cos(th)) >= cat.d * (1 - 1e-9)
    assert cat.d == pytest.approx(3 * math.sqrt(1024 * 3e-4))
    assert cat.lambda_ == 2.0 ** (-1024 * 3e-4)
    assert cat.E1 == pytest.approx(3e-4 - 1 / 1024)
    assert len(cb) == 6


@pytest.mark.parametrize("nE", [0.54, 1.0, 5.0, 60.0])
def test_hoeffding_level_below_rr_lambda(nE):
    # 2 exp(-2x) <= 2^-x holds once x >= ln 2 / (2 - ln 2) ~ 0.53
    assert 2 * math.exp(-2 * nE) <= 2.0 ** -nE


def test_rate_report():
    cb = build_primitive(CodebookParams.desk(64, 2, 0.2, (4, 4), seed=0))
    one = ex.rate_report(cb, ExpurgationReport(16, 1, 15 / 16, 0))
    assert one.linear_rate == 0 and one.linearithmic_rate == 0
    rep = ex.rate_report(cb, ExpurgationReport(16, 16, 0.0, 0), E=0.001)
    assert rep.linear_rate == pytest.approx(4 / 64)
    assert rep.linearithmic_rate == pytest.approx(rep.linear_rate / 6)
    assert rep.rr_upper_bound == pytest.approx(6.483, abs=1e-3)
    with pytest.raises(EmptyCodebook):
        ex.rate_report(cb, ExpurgationReport(16, 0, 1.0, 0))


def test_sweep_rows():
    rows = ex.sweep_rr(256, 1, 0.2, [0.5 / math.log(256), 0.02 / math.log(256)], (4,), seed=0)
    assert len(rows) == 2
    assert all(r.status in ("built", "infeasible") for r in rows)
    assert all(r.rr_upper_bound > 0 for r in rows)


def test_reduction_small():
    res = ex.reduction_experiment(1.0, [0.3], 50_000, 1)
    assert res[0].p == pytest.approx(math.exp(-0.3)) and res[0].passes()


def test_serialisation():
    text = ex.to_jsonl([{"b": np.float64(1.5), "a": (1, 2)}])
    assert text == '{"a": [1, 2], "b": 1.5}\n'
    assert ex.to_csv([{"x": 1, "y": None}]) == "x,y\n1,\n"
