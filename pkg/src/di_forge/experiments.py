"""Monte Carlo error estimation, concentration checks and rate bookkeeping.

Natural logs are used for every construction parameter (``t``, ``d``, radii,
regime limits); rates are reported in bits.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .channels import ChannelModel, apply_reduction, poisson_to_bernoulli_reduction
from .codebook import (
    CodebookParams,
    CodewordId,
    ExpurgationReport,
    InputBox,
    PrimitiveCodebook,
    build_primitive,
    expurgated_code,
    pairwise_projective_separation,
)
from .decoder import DecoderParams, identify_batch
from .errors import (
    EmptyCodebook,
    Infeasible,
    PlacementExhausted,
    PreconditionError,
    RegimeViolation,
    SameIdPair,
    TooFewWords,
)
from .geometry import min_separation_angle

CONFIDENCE = 0.99
# below this a bound cannot be resolved by any feasible trial count
RESOLVABLE = 1e-8
_CHUNK = 1 << 14


# ---------------------------------------------------------------- bounds

def eta(L: int) -> float:
    return 1.0 - sum(2.0**-l for l in range(1, L + 1))


def linearithmic_rate_bound(delta: float, L: int) -> float:
    return 0.5 * sum((1 - delta) / 2**l for l in range(1, L + 1))


def bernoulli_tail_bound(t: float) -> float:
    """Two-sided tail of a projection of Bernoulli noise onto a unit vector."""
    return 2.0 * math.exp(-2.0 * t * t)


def poisson_tail_bound(t: float, A: float) -> float:
    return 2.0 * math.exp(-1.5 * t + 2.25 * A)


def tail_bound(ch, t: float) -> float:
    if ch.kind == "poisson":
        return poisson_tail_bound(t, ch.A)
    if ch.kind == "noiseless":
        return 0.0
    return bernoulli_tail_bound(t)


def poisson_lambda(n: int, A: float) -> float:
    """Per-layer error level quoted for the Poisson decoder at ``t = A ln n``."""
    return math.exp(1.5 * A * (1.5 - math.log(n)))


def layer_size_log2(n: int, radii: Sequence[float], d: float) -> list[float]:
    """Per-layer lower bound on ``log2`` of the arrangement size."""
    return [(n - l + 1) / 2 * math.log2(2 * r / d) for l, r in enumerate(radii, start=1)]


def rr_lower_bound(E: float, delta: float, n: int, L: int) -> float | None:
    """Main term of the rate-reliability achievability bound (bits); None if undefined."""
    arg = 1.0 / E - delta * math.log(n)
    if arg <= 0:
        return None
    return (1 - eta(L)) / 2 * math.log2(arg)


def rr_upper_bound(E: float, eta_c: float = 0.0) -> float:
    """Converse bound ``(1 + eta) log2(2 / sqrt(1 - exp(-E/2)))`` in bits."""
    return (1 + eta_c) * math.log2(2.0 / math.sqrt(-math.expm1(-E / 2)))


@dataclass(frozen=True)
class BoundCatalog:
    n: int
    L: int
    delta: float
    t: float
    d: float
    radii: tuple[float, ...]
    lambda_: float
    lambda1: float
    lambda2: float
    theta: list[float | None]
    Delta_bound: float
    layer_size_log2: list[float]
    linearithmic_rate_bound: float
    eta_L: float
    E: float | None = None
    E1: float | None = None
    E2: float | None = None
    rr_radii_closed: list[float] | None = None

    def as_dict(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lambda_")
        return out


def bound_catalog(params: CodebookParams, t: float, channel: str = "bernoulli",
                  A: float = 1.0, E: float | None = None) -> BoundCatalog:
    """Evaluate the closed-form expressions for a codebook and decoder radius.

    ``channel`` selects the per-layer level: ``bernoulli`` (also restricted),
    ``poisson`` or ``rate_reliability`` (which needs ``E``).
    """
    n, L = params.n, params.L
    if channel == "poisson":
        lam = poisson_lambda(n, A)
    elif channel == "rate_reliability":
        if E is None:
            raise ValueError("rate_reliability catalog needs E")
        lam = 2.0 ** (-n * E)
    else:
        lam = bernoulli_tail_bound(t)
    theta = []
    for r in params.radii:
        try:
            theta.append(min_separation_angle(r, params.d))
        except Infeasible:
            theta.append(None)
    closed = None
    if E is not None:
        closed = [rr_radius_closed(n, l, params.delta, E, L) for l in range(1, L + 1)]
    return BoundCatalog(
        n=n, L=L, delta=params.delta, t=t, d=params.d, radii=params.radii,
        lambda_=lam, lambda1=L * lam, lambda2=lam, theta=theta,
        Delta_bound=math.sqrt(2 * L * params.d),
        layer_size_log2=layer_size_log2(n, params.radii, params.d),
        linearithmic_rate_bound=linearithmic_rate_bound(params.delta, L),
        eta_L=eta(L), E=E,
        E1=None if E is None else E - math.log2(L) / n,
        E2=E, rr_radii_closed=closed)


# ---------------------------------------------------------------- estimates

def clopper_pearson(k: int, m: int, confidence: float = CONFIDENCE) -> tuple[float, float]:
    alpha = 1 - confidence
    lo = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2, k, m - k + 1))
    hi = 1.0 if k == m else float(stats.beta.ppf(1 - alpha / 2, k + 1, m - k))
    return lo, hi


@dataclass(frozen=True)
class ErrorEstimate:
    failures: int
    trials: int
    bound: float
    p_hat: float = field(init=False)
    ci_lo: float = field(init=False)
    ci_hi: float = field(init=False)

    def __post_init__(self):
        if self.trials < 1:
            raise PreconditionError("trials must be >= 1")
        if not 0 <= self.failures <= self.trials:
            raise ValueError("failures must lie in [0, trials]")
        object.__setattr__(self, "p_hat", self.failures / self.trials)
        lo, hi = clopper_pearson(self.failures, self.trials)
        object.__setattr__(self, "ci_lo", lo)
        object.__setattr__(self, "ci_hi", hi)

    @property
    def sigma(self) -> float:
        """Binomial standard deviation of ``p_hat`` if the true rate equalled the bound."""
        p = min(max(self.bound, 0.0), 1.0)
        return math.sqrt(p * (1 - p) / self.trials)

    @property
    def consistent(self) -> bool:
        return self.p_hat <= self.bound or self.bound >= self.ci_lo

    @property
    def regime(self) -> str:
        return "zero-failures" if self.bound < RESOLVABLE else "resolved"

    @property
    def verdict(self) -> str:
        return "pass" if self.consistent else "fail"

    def record(self, experiment: str, inputs: dict) -> dict:
        return {"experiment": experiment, "inputs": inputs, "p_hat": self.p_hat,
                "ci": [self.ci_lo, self.ci_hi], "bound": self.bound, "verdict": self.verdict,
                "failures": self.failures, "trials": self.trials, "regime": self.regime}


def _check_trials(trials: int) -> None:
    if trials < 1:
        raise PreconditionError(f"trials must be >= 1, got {trials}")


def concentration_sweep(ch, x, direction, ts: Iterable[float], trials: int,
                        seed: int) -> list[ErrorEstimate]:
    """One batch of projected noise, thresholded at every ``t`` in ``ts``."""
    _check_trials(trials)
    proj = np.abs(ch.noise_projection(x, direction, seed, trials))
    return [ErrorEstimate(int(np.count_nonzero(proj > t)), trials, tail_bound(ch, t)) for t in ts]


def concentration_experiment(ch, x, direction, t: float, trials: int, seed: int) -> ErrorEstimate:
    if t < 0:
        raise ValueError("t must be nonnegative")
    return concentration_sweep(ch, x, direction, [t], trials, seed)[0]


def _split_trials(trials: int, groups: int, rng) -> np.ndarray:
    return rng.multinomial(trials, np.full(groups, 1.0 / groups))


def _count_rejections(cb, ch, params, tested, sent_word, trial0, count, key_seed) -> int:
    """Rejections of id ``tested`` over ``count`` transmissions of ``sent_word``."""
    rejected = 0
    for s in range(0, count, _CHUNK):
        m = min(_CHUNK, count - s)
        Y = ch.sample(sent_word, key_seed, trial0 + s, m)
        accepted, _ = identify_batch(Y, cb, tested, params)
        rejected += m - int(np.count_nonzero(accepted))
    return rejected


def estimate_missed_id(cb: PrimitiveCodebook, ch, params: DecoderParams,
                       ids: Sequence[CodewordId] | None, trials: int, seed: int,
                       bound: float | None = None) -> ErrorEstimate:
    """Fraction of transmissions of a sampled id that the decoder rejects.

    Trials are spread over ``ids`` (all leaves when None) by a seeded
    multinomial; each id consumes a contiguous range of the trial counter.
    """
    _check_trials(trials)
    ids = cb.leaf_ids if ids is None else [tuple(i) for i in ids]
    if not ids:
        raise EmptyCodebook("no codewords to transmit")
    for cid in ids:
        ch.check_input(cb.codewords[cb.leaf_index(cid)])
    counts = _split_trials(trials, len(ids), np.random.default_rng([seed, 1]))
    misses, offset = 0, 0
    for cid, c in zip(ids, counts):
        if c:
            word = cb.codewords[cb.leaf_index(cid)]
            misses += _count_rejections(cb, ch, params, cid, word, offset, int(c), seed)
        offset += int(c)
    if bound is None:
        bound = min(1.0, cb.L * tail_bound(ch, params.t))
    return ErrorEstimate(misses, trials, bound)


def adversarial_pair(cb: PrimitiveCodebook, ids: Sequence[CodewordId] | None = None):
    """(tested id, sent id) realising the minimum projective separation."""
    rep = pairwise_projective_separation(cb, ids=ids)
    return rep.tested_id, rep.sent_id


def estimate_false_id(cb: PrimitiveCodebook, ch, params: DecoderParams,
                      pair_sampling: str, trials: int, seed: int,
                      ids: Sequence[CodewordId] | None = None,
                      pair: tuple[Sequence[int], Sequence[int]] | None = None,
                      bound: float | None = None) -> ErrorEstimate:
    """Fraction of transmissions of ``j`` that are accepted as ``i != j``.

    ``pair_sampling`` is ``random`` (uniform ordered pairs of distinct ids) or
    ``adversarial_min_sep``; an explicit ``pair=(i, j)`` overrides both.
    """
    _check_trials(trials)
    ids = cb.leaf_ids if ids is None else [tuple(i) for i in ids]
    if pair is not None:
        i, j = tuple(pair[0]), tuple(pair[1])
        if i == j:
            raise SameIdPair(f"tested and sent id are both {i}")
        cb.leaf_index(i), cb.leaf_index(j)
        pairs, counts = [(i, j)], np.array([trials])
    else:
        if len(ids) < 2:
            raise TooFewWords(f"need at least two retained words, have {len(ids)}")
        rng = np.random.default_rng([seed, 2])
        if pair_sampling == "adversarial_min_sep":
            pairs, counts = [adversarial_pair(cb, ids)], np.array([trials])
        elif pair_sampling == "random":
            a = rng.integers(0, len(ids), trials)
            b = (a + rng.integers(1, len(ids), trials)) % len(ids)
            uniq, counts = np.unique(np.stack([a, b], axis=1), axis=0, return_counts=True)
            pairs = [(ids[p], ids[q]) for p, q in uniq]
        else:
            raise ValueError(f"unknown pair_sampling {pair_sampling!r}")
    accepts, offset = 0, 0
    for (i, j), c in zip(pairs, counts):
        word = cb.codewords[cb.leaf_index(j)]
        ch.check_input(word)
        c = int(c)
        accepts += c - _count_rejections(cb, ch, params, i, word, offset, c, seed)
        offset += c
    if bound is None:
        bound = min(1.0, tail_bound(ch, params.t))
    return ErrorEstimate(accepts, trials, bound)


# ---------------------------------------------------------------- rates

@dataclass(frozen=True)
class RateReport:
    n: int
    L: int
    N_primitive: int
    N_retained: int
    linear_rate: float
    linearithmic_rate: float
    theoretical_primitive_logN: float
    linearithmic_rate_bound: float
    E: float | None = None
    rr_lower_bound: float | None = None
    rr_upper_bound: float | None = None


def rate_report(cb: PrimitiveCodebook, expurgation: ExpurgationReport,
                E: float | None = None) -> RateReport:
    N = expurgation.retained
    if N < 1:
        raise EmptyCodebook("no codewords retained after expurgation")
    p = cb.params
    linear = math.log2(N) / p.n
    lower = upper = None
    if E is not None:
        lower = rr_lower_bound(E, p.delta, p.n, p.L)
        upper = rr_upper_bound(E)
    return RateReport(
        n=p.n, L=p.L, N_primitive=len(cb), N_retained=N, linear_rate=linear,
        linearithmic_rate=linear / math.log2(p.n),
        theoretical_primitive_logN=float(sum(layer_size_log2(p.n, p.radii, p.d))),
        linearithmic_rate_bound=linearithmic_rate_bound(p.delta, p.L),
        E=E, rr_lower_bound=lower, rr_upper_bound=upper)


# ---------------------------------------------------------------- rate-reliability

def rr_regime_limit(n: int, delta: float) -> float:
    return 1.0 / (delta * math.log(n))


def check_rr_regime(n: int, delta: float, E: float) -> None:
    if not E > 0:
        raise RegimeViolation("error exponent E must be positive")
    limit = rr_regime_limit(n, delta)
    if E >= limit:
        raise RegimeViolation(f"E={E:g} is not below 1/(delta ln n)={limit:g}")


def rr_radii(n: int, L: int, delta: float, E: float) -> tuple[float, ...]:
    """Radii by iterating ``r_{l+1} = sqrt(t r_l / (6L))`` from ``r_1 = n^((1-delta)/2)``."""
    t = math.sqrt(n * E)
    radii = [n ** ((1 - delta) / 2)]
    for _ in range(L - 1):
        radii.append(math.sqrt(t * radii[-1] / (6 * L)))
    return tuple(radii)


def rr_radius_closed(n: int, l: int, delta: float, E: float, L: int) -> float:
    """Closed form ``c (n^(1-delta) / c^2)^(1/2^l)`` with ``c = t/(6L)``."""
    c = math.sqrt(n * E) / (6 * L)
    return c * (n ** (1 - delta) / c**2) ** (1.0 / 2**l)


def rr_build(n: int, L: int, delta: float, E: float, branching: Sequence[int],
             seed: int = 0) -> tuple[PrimitiveCodebook, BoundCatalog]:
    check_rr_regime(n, delta, E)
    t = math.sqrt(n * E)
    radii = rr_radii(n, L, delta, E)
    if any(a <= b for a, b in zip(radii, radii[1:])):
        raise Infeasible(f"rate-reliability radii {radii} are not decreasing (t/6L too large)")
    params = CodebookParams(n, L, delta, radii, 3 * t, tuple(branching), seed,
                            mode="rate_reliability")
    cb = build_primitive(params)
    return cb, bound_catalog(params, t, "rate_reliability", E=E)


@dataclass
class SweepRow:
    E: float
    status: str
    t: float
    d: float
    N_primitive: int = 0
    N_retained: int = 0
    primitive_rate: float = 0.0
    linear_rate: float = 0.0
    rr_lower_bound: float | None = None
    rr_upper_bound: float | None = None
    detail: str = ""


def sweep_rr(n: int, L: int, delta: float, E_grid: Iterable[float], branching: Sequence[int],
             seed: int = 0, rotation_seed: int = 0, box: InputBox | None = None) -> list[SweepRow]:
    """Build, expurgate and rate one rate-reliability code per exponent.

    Rows whose parameters cannot be realised are kept with an explanatory
    status instead of aborting the sweep.
    """
    box = box or InputBox(0.0, 1.0, n)
    rows = []
    for E in E_grid:
        t = math.sqrt(n * E)
        row = SweepRow(E=E, status="built", t=t, d=3 * t,
                       rr_lower_bound=rr_lower_bound(E, delta, n, L), rr_upper_bound=rr_upper_bound(E))
        try:
            cb, _ = rr_build(n, L, delta, E, branching, seed)
        except RegimeViolation as exc:
            row.status, row.detail = "regime_violation", str(exc)
        except (Infeasible, PlacementExhausted) as exc:
            row.status, row.detail = "infeasible", str(exc)
        else:
            _, retained, rep = expurgated_code(cb, box, rotation_seed)
            row.N_primitive = len(cb)
            row.N_retained = rep.retained
            row.primitive_rate = math.log2(len(cb)) / n
            row.linear_rate = math.log2(rep.retained) / n if rep.retained else 0.0
        rows.append(row)
    return rows


# ---------------------------------------------------------------- Poisson-to-Bernoulli

@dataclass(frozen=True)
class ReductionResult:
    x: float
    p: float
    trials: int
    ones_reduced: int
    ones_direct: int
    pvalue_reduced: float
    pvalue_two_sample: float

    def passes(self, alpha: float = 1e-3) -> bool:
        return self.pvalue_reduced > alpha and self.pvalue_two_sample > alpha


def reduction_experiment(A: float, xs: Iterable[float], trials: int, seed: int) -> list[ReductionResult]:
    """Compare ``1{Poisson(x) = 0}`` with direct ``Bernoulli(exp(-x))`` draws."""
    _check_trials(trials)
    spec = poisson_to_bernoulli_reduction(A)
    pois = ChannelModel.poisson(A)
    bern = ChannelModel.bernoulli()
    out = []
    for k, x in enumerate(xs):
        p = float(spec.induced_param(x))
        raw = pois.sample(np.array([x]), seed_key_seed(seed, 2 * k), 0, trials)
        ones_r = int(apply_reduction(spec, raw).sum())
        ones_d = int(bern.sample(np.array([p]), seed_key_seed(seed, 2 * k + 1), 0, trials).sum())
        pv = stats.binomtest(ones_r, trials, p).pvalue
        table = np.array([[ones_r, trials - ones_r], [ones_d, trials - ones_d]])
        pv2 = stats.chi2_contingency(table, correction=False).pvalue if ones_r + ones_d else 1.0
        out.append(ReductionResult(float(x), p, trials, ones_r, ones_d, float(pv), float(pv2)))
    return out


def seed_key_seed(seed: int, stream: int) -> int:
    """Derived integer seed for an independent sub-stream."""
    return int(np.random.SeedSequence([seed, stream]).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------- serialisation

def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, list):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


def to_jsonl(records: Iterable[dict]) -> str:
    return "".join(json.dumps(_plain(r), sort_keys=True) + "\n" for r in records)


def to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if v is None else v) for k, v in _plain(r).items()})
    return buf.getvalue()
