"""Acceptance criteria, one test group per criterion.

Every check records a line through the ``acceptance`` fixture; the terminal
summary prints one PASS/FAIL line per criterion followed by its parts.
"""

import math

import numpy as np
import pytest

from di_forge.channels import ChannelModel
from di_forge.codebook import (CodebookParams, InputBox, affine_map, best_rotation,
                               build_primitive, capacity_radii, expurgated_code,
                               pairwise_projective_separation, separation_bound, vertex_distance_sq)
from di_forge.decoder import DecoderParams, identify_batch
from di_forge.errors import Infeasible, PlacementExhausted, RegimeViolation
from di_forge import experiments as ex

# tolerances as stated by the acceptance criteria
SIGMAS = 4.0
TOL_ORTH = 1e-10
TOL_RADIUS = 1e-9
TOL_REL = 1e-9
ALPHA = 1e-3

GRID_N = (32, 64, 128, 256)
GRID_L = (1, 2, 3)
BRANCH = 8


# ---------------------------------------------------------------- 1: Bernoulli concentration

def test_c1_bernoulli_concentration(acceptance):
    n, pairs, trials, ts = 1000, 20, 10**6, (1.0, 1.5, 2.0)
    rng = np.random.default_rng(20240101)
    ch = ChannelModel.bernoulli()
    worst = -math.inf
    ok = True
    for k in range(pairs):
        x = rng.random(n)
        e = rng.standard_normal(n)
        for t, est in zip(ts, ex.concentration_sweep(ch, x, e, ts, trials, seed=1000 + k)):
            slack = est.p_hat - (est.bound + SIGMAS * est.sigma)
            worst = max(worst, slack)
            ok &= slack <= 0
    acceptance.part("1 Bernoulli concentration", "p_hat <= 2exp(-2t^2) + 4 sigma, 20 pairs x 3 t",
                    ok, f"max excess over allowance {worst:.3g}")
    assert ok


# ---------------------------------------------------------------- 2: Poisson concentration

@pytest.mark.parametrize("A", [0.5, 1.0, 2.0])
def test_c2_poisson_concentration(acceptance, A):
    n, trials, target = 1000, 10**7, 1e-3
    t = (2.25 * A + math.log(2 / target)) / 1.5
    rng = np.random.default_rng(int(A * 1000))
    x = A * rng.random(n)
    e = rng.standard_normal(n)
    est = ex.concentration_experiment(ChannelModel.poisson(A), x, e, t, trials, seed=7)
    ok = 1e-5 <= est.bound <= 1e-2 and est.p_hat <= est.bound + SIGMAS * est.sigma
    acceptance.part("2 Poisson concentration", f"A={A}", ok,
                    f"t={t:.3f} p_hat={est.p_hat:.3g} bound={est.bound:.3g} sigma={est.sigma:.2g}")
    assert ok


# ---------------------------------------------------------------- 3/4: geometry grid

@pytest.fixture(scope="module")
def grid():
    out = {}
    for n in GRID_N:
        for L in GRID_L:
            params = CodebookParams.desk(n, L, 0.2, (BRANCH,) * L, seed=n * 10 + L)
            out[(n, L)] = build_primitive(params)
    return out


def _path_orthogonality(cb):
    worst = 0.0
    for cid in cb.leaf_ids:
        U = cb.ancestor_units(cid)
        G = np.abs(U @ U.T - np.eye(cb.L))
        worst = max(worst, float(G.max()))
    return worst


def test_c3_codebook_geometry(acceptance, grid):
    ok_all = True
    for (n, L), cb in grid.items():
        orth = _path_orthogonality(cb)
        R2 = sum(r * r for r in cb.params.radii)
        rad = float(np.max(np.abs(np.sum((cb.codewords - cb.center) ** 2, axis=1) - R2))) / R2
        rep = pairwise_projective_separation(cb)
        bound = separation_bound(cb.params.d, L)
        ok = orth <= TOL_ORTH and rad <= TOL_RADIUS and rep.min_sep >= bound
        ok_all &= ok
        acceptance.part("3 codebook geometry", f"n={n} L={L} N={len(cb)}", ok,
                        f"orth {orth:.1e}, radius {rad:.1e}, min sep {rep.min_sep:.3f} >= "
                        f"{bound:.3f} over {rep.pairs_checked} pairs")
    assert ok_all


def test_c4_decoder_correctness(acceptance, grid):
    ok_all = True
    for (n, L), cb in grid.items():
        dp = DecoderParams.capacity(n)
        accepted = sum(bool(identify_batch(cb.codewords[[i]], cb, cb.leaf_id(i), dp)[0][0])
                       for i in range(len(cb)))
        ti, si = ex.adversarial_pair(cb)
        rejected = not identify_batch(cb.codewords[[cb.leaf_index(si)]], cb, ti, dp)[0][0]
        ok = accepted == len(cb) and rejected
        ok_all &= ok
        acceptance.part("4 decoder correctness", f"n={n} L={L}", ok,
                        f"self {accepted}/{len(cb)} accepted, adversarial {ti} vs {si} "
                        f"{'rejected' if rejected else 'ACCEPTED'}")
    assert ok_all


# ---------------------------------------------------------------- 5: end-to-end error rates

def _box_code(kind):
    """n=100, L=2 code that fits the channel's input box after rotation."""
    n = 100
    cb = build_primitive(CodebookParams(n, 2, 0.2, (1.5, 0.75), 0.75, (4, 4), seed=1))
    if kind == "restricted":
        cb = affine_map(cb, 0.6, np.full(n, 0.5))
        box = InputBox(0.2, 0.8, n)
    else:
        box = InputBox(0.0, 1.0, n)
    return best_rotation(cb, box, range(20))


@pytest.mark.parametrize("kind", ["bernoulli", "poisson", "restricted"])
def test_c5_end_to_end(acceptance, kind):
    n, trials = 100, 10**5
    ch = {"bernoulli": ChannelModel.bernoulli(), "poisson": ChannelModel.poisson(1.0),
          "restricted": ChannelModel.restricted(0.2, 0.8)}[kind]
    dp = DecoderParams.poisson(n, 1.0) if kind == "poisson" else DecoderParams.capacity(n)
    cb, ids, rep = _box_code(kind)
    missed = ex.estimate_missed_id(cb, ch, dp, ids, trials, seed=11)
    false = ex.estimate_false_id(cb, ch, dp, "adversarial_min_sep", trials, seed=12, ids=ids)
    sep = pairwise_projective_separation(cb, ids=ids).min_sep
    acceptance.part("5 end-to-end errors", f"{kind} missed", missed.failures == 0,
                    f"{missed.failures}/{trials} rejected, {rep.retained} words, t={dp.t:.3f}")
    acceptance.part("5 end-to-end errors", f"{kind} false", false.failures == 0,
                    f"{false.failures}/{trials} accepted on adversarial pair, "
                    f"separation {sep:.3f} vs t={dp.t:.3f}")
    assert missed.failures == 0 and false.failures == 0


# ---------------------------------------------------------------- 6: expurgation trend

def test_c6_expurgation_trend(acceptance):
    delta, L = 0.3, 2
    fractions = []
    for n in (64, 128, 256, 512):
        radii = capacity_radii(n, L, delta)
        params = CodebookParams(n, L, delta, radii, radii[-1], (8, 8), seed=3, mode="capacity")
        _, _, rep = expurgated_code(build_primitive(params), InputBox(0.0, 1.0, n), rotation_seed=5)
        fractions.append(rep.fraction_out)
    mono = all(b <= a for a, b in zip(fractions, fractions[1:]))
    small = fractions[-1] < 0.05
    vert = all(vertex_distance_sq(np.random.default_rng(n).integers(0, 2, n)) == n / 4
               for n in (64, 128, 256, 512))
    acceptance.part("6 expurgation trend", "fraction out non-increasing in n", mono,
                    f"fractions {[round(f, 4) for f in fractions]}")
    acceptance.part("6 expurgation trend", "fraction out at n=512 below 0.05", small,
                    f"{fractions[-1]:.4f}")
    acceptance.part("6 expurgation trend", "vertex distance D^2 = n/4", vert, "exact")
    assert mono and small and vert


# ---------------------------------------------------------------- 7: bookkeeping

def test_c7_rate_bookkeeping(acceptance):
    exact = True
    for n, L, delta in [(64, 1, 0.2), (256, 2, 0.2), (512, 3, 0.3), (1024, 5, 0.1)]:
        params = CodebookParams.desk(n, L, delta, (2,) * L)
        cat = ex.bound_catalog(params, math.log(n))
        exact &= cat.lambda1 == L * cat.lambda_
        exact &= abs(cat.linearithmic_rate_bound
                      - 0.5 * (1 - delta) * (1 - 0.5**L)) <= 4 * np.finfo(float).eps
        exact &= cat.eta_L == 0.5**L
    acceptance.part("7 rate bookkeeping", "catalog identities", exact, "machine precision")

    worst4 = 0.0
    for n, radii, d in [(64, (9.0, 4.0), 3.0), (300, (20.0, 7.5, 2.5), 2.0), (1000, (40.0,), 12.0)]:
        got = ex.layer_size_log2(n, radii, d)
        for l, (r, g) in enumerate(zip(radii, got), start=1):
            direct = (n - l + 1) / 2 * (math.log(2 * r) - math.log(d)) / math.log(2)
            worst4 = max(worst4, abs(g - direct) / abs(direct))
    acceptance.part("7 rate bookkeeping", "per-layer size formula vs direct evaluation",
                    worst4 <= TOL_REL, f"max relative deviation {worst4:.1e}")

    worst_rr = 0.0
    for n, E in [(256, 0.01), (1024, 0.05), (4096, 0.001)]:
        L = 4
        c = math.sqrt(n * E) / (6 * L)
        r = n ** ((1 - 0.2) / 2)
        for l in range(1, L + 1):
            closed = ex.rr_radius_closed(n, l, 0.2, E, L)
            worst_rr = max(worst_rr, abs(closed - r) / r)
            r = math.sqrt(c * r)
    acceptance.part("7 rate bookkeeping", "layer radius closed form vs recursion",
                    worst_rr <= TOL_REL, f"max relative deviation {worst_rr:.1e}")
    assert exact and worst4 <= TOL_REL and worst_rr <= TOL_REL


# ---------------------------------------------------------------- 8: rate-reliability

def test_c8_regime_rejection(acceptance):
    n, delta = 256, 0.2
    limit = ex.rr_regime_limit(n, delta)
    rejected = 0
    for E in (limit, 1.5 * limit, 10 * limit):
        try:
            ex.rr_build(n, 2, delta, E, (2, 2))
        except RegimeViolation:
            rejected += 1
    ok = rejected == 3
    acceptance.part("8 rate-reliability", "E >= 1/(delta ln n) rejected", ok, f"{rejected}/3 rejected")
    assert ok


def test_c8_rr_code(acceptance):
    n, L, delta, trials = 256, 2, 0.2, 10**5
    E = 0.5 * ex.rr_regime_limit(n, delta)
    dp = DecoderParams.rate_reliability(n, E)
    try:
        cb, cat = ex.rr_build(n, L, delta, E, (4, 4), seed=2)
    except (Infeasible, PlacementExhausted) as exc:
        acceptance.part("8 rate-reliability", "E = 0.5/(delta ln n) code built", False,
                        f"{type(exc).__name__}: {exc}")
        raise
    ch = ChannelModel.bernoulli()
    cb, ids, rep = best_rotation(cb, InputBox(0.0, 1.0, n), range(20))
    missed = ex.estimate_missed_id(cb, ch, dp, ids, trials, seed=21)
    false = ex.estimate_false_id(cb, ch, dp, "adversarial_min_sep", trials, seed=22, ids=ids)
    rate = ex.rate_report(cb, rep, E=E)
    zero = missed.failures == 0 and false.failures == 0
    between = (rate.rr_lower_bound is not None
               and rate.rr_lower_bound <= rate.linear_rate <= rate.rr_upper_bound)
    acceptance.part("8 rate-reliability", "zero errors", zero,
                    f"missed {missed.failures}, false {false.failures} of {trials}")
    acceptance.part("8 rate-reliability", "rate between bounds", between,
                    f"{rate.rr_lower_bound} <= {rate.linear_rate} <= {rate.rr_upper_bound}")
    assert zero and between


# ---------------------------------------------------------------- 9: reduction

def test_c9_reduction(acceptance):
    results = ex.reduction_experiment(1.0, (0.1, 0.5, 0.9), 10**6, seed=9)
    ok = True
    for r in results:
        part = r.passes(ALPHA)
        ok &= part
        acceptance.part("9 Poisson to Bernoulli reduction", f"x={r.x}", part,
                        f"binomial p={r.pvalue_reduced:.3g}, two-sample p={r.pvalue_two_sample:.3g}")
    assert ok
