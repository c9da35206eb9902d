"""Constrained-token samplers with unbiased normalizing-mass estimates.

Every sampler here draws from a prior Categorical restricted by a token
constraint, touching the constraint as few times as it can get away with.
The weighted variants additionally return an estimate ``zhat`` whose
expectation is exactly z, the prior mass of valid tokens; that is the
property that lets them stand in for exact renormalization inside
sequential Monte Carlo.

All samplers are Las Vegas algorithms: output distributions are exact
(for the unclipped variants), runtimes are random. Implementations are
vectorized across independent runs; the scalar entry points are
batch-of-one calls, so there is a single code path per algorithm.

Rejected-mass accumulators use compensated (Kahan) summation so that long
without-replacement runs do not drift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import TokenConstraint
from .dist import Categorical, KeyedOrdering, swor_keys
from .errors import NoValidToken

__all__ = [
    "WeightedToken",
    "SamplerConfig",
    "BatchTokens",
    "BatchWeighted",
    "rs",
    "ars",
    "wrs",
    "awrs",
    "awrs_sorted",
    "cawrs",
    "cwrs",
    "gawrs",
    "rawrs",
    "rs_batch",
    "ars_batch",
    "wrs_batch",
    "awrs_batch",
    "awrs_sorted_batch",
    "cawrs_batch",
    "cwrs_batch",
    "gawrs_batch",
    "rawrs_batch",
    "top_p_compose",
]


@dataclass
class WeightedToken:
    """An accepted token with an unbiased estimate of the valid prior mass.

    ``zhat`` is zero only for the clipped or budgeted variants, where it
    marks a dead sample; exact variants always return positive weight.
    ``trials`` counts constraint evaluations. ``rejected_mass_first_loop``
    is the prior mass removed during the first without-replacement loop
    (zero for the with-replacement samplers, which remove nothing).
    """

    token: int
    zhat: float
    trials: int
    rejected_mass_first_loop: float


@dataclass
class SamplerConfig:
    """Knobs shared by the sampler family.

    extra_loops: additional with-replacement loops for the negative-
        binomial estimator (must be >= 1).
    theta0/theta1: rejected-mass thresholds for the clipped adaptive
        sampler, 0 < theta0 < theta1 < 1.
    budget: cap on failed constraint calls for the bounded variants.
    top_p: optional nucleus truncation applied to the prior.
    """

    extra_loops: int = 1
    theta0: float = 0.25
    theta1: float = 0.75
    budget: int = 8
    top_p: float | None = None

    def __post_init__(self):
        if self.extra_loops < 1:
            raise ValueError("extra_loops must be >= 1")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if not (0.0 < self.theta0 < self.theta1 < 1.0):
            raise ValueError("need 0 < theta0 < theta1 < 1")
        if self.top_p is not None and not (0.0 < self.top_p <= 1.0):
            raise ValueError("top_p must lie in (0, 1]")


@dataclass
class BatchTokens:
    """Unweighted batch draw: one exact posterior sample per run."""

    tokens: np.ndarray
    trials: np.ndarray


@dataclass
class BatchWeighted:
    """Weighted batch draw, one (token, zhat) pair per run."""

    tokens: np.ndarray
    zhats: np.ndarray
    trials: np.ndarray
    rejected_mass_first_loop: np.ndarray

    def __getitem__(self, i: int) -> WeightedToken:
        return WeightedToken(
            token=int(self.tokens[i]),
            zhat=float(self.zhats[i]),
            trials=int(self.trials[i]),
            rejected_mass_first_loop=float(self.rejected_mass_first_loop[i]),
        )


# ---------------------------------------------------------------------------
# Draw machinery


def _draw_prior(cum: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(n) * cum[-1]
    return np.minimum(np.searchsorted(cum, u, side="right"), cum.shape[0] - 1)


class _Removed:
    """Per-run removed-token sets with compensated mass accumulation."""

    def __init__(self, n_runs: int, probs: np.ndarray, cum: np.ndarray):
        self.probs = probs
        self.cum = cum
        self.mask = np.zeros((n_runs, probs.shape[0]), dtype=bool)
        self.mass = np.zeros(n_runs)
        self._comp = np.zeros(n_runs)

    def add(self, rows: np.ndarray, tokens: np.ndarray):
        if rows.size == 0:
            return
        self.mask[rows, tokens] = True
        y = self.probs[tokens] - self._comp[rows]
        t = self.mass[rows] + y
        self._comp[rows] = (t - self.mass[rows]) - y
        self.mass[rows] = t

    def draw(self, rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One draw per row from the prior renormalized over its pool.

        Draws from the unrestricted prior and skips hits on removed
        tokens, which is distributionally identical to renormalizing and
        costs no constraint evaluations. Rows whose removed mass is large
        (or that stay unlucky) fall back to an exact per-row inverse CDF.
        """
        out = np.empty(rows.shape[0], dtype=np.int64)
        pending = np.arange(rows.shape[0])
        for attempt in range(20):
            if pending.size == 0:
                return out
            if attempt >= 4:
                heavy = self.mass[rows[pending]] > 0.5
                if attempt >= 19:
                    heavy[:] = True
                if np.any(heavy):
                    sel = pending[heavy]
                    out[sel] = self._draw_exact(rows[sel], rng)
                    pending = pending[~heavy]
                    if pending.size == 0:
                        return out
            cand = _draw_prior(self.cum, pending.shape[0], rng)
            fresh = ~self.mask[rows[pending], cand]
            out[pending[fresh]] = cand[fresh]
            pending = pending[~fresh]
        out[pending] = self._draw_exact(rows[pending], rng)
        return out

    def _draw_exact(self, rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        w = np.where(self.mask[rows], 0.0, self.probs[None, :])
        c = np.cumsum(w, axis=1)
        tot = c[:, -1]
        if np.any(tot <= 0.0):
            raise NoValidToken("every positive-mass token was rejected (z = 0?)")
        u = rng.random(rows.shape[0]) * tot
        idx = np.sum(c <= u[:, None], axis=1)
        return np.minimum(idx, self.probs.shape[0] - 1)


def _chunks(n: int, vocab: int, cap_cells: int = 1 << 25) -> list[int]:
    per = max(1, min(n, cap_cells // max(vocab, 1)))
    sizes = [per] * (n // per)
    if n % per:
        sizes.append(n % per)
    return sizes


def _cat_tokens(parts: list[BatchTokens]) -> BatchTokens:
    return BatchTokens(
        tokens=np.concatenate([p.tokens for p in parts]),
        trials=np.concatenate([p.trials for p in parts]),
    )


def _cat_weighted(parts: list[BatchWeighted]) -> BatchWeighted:
    return BatchWeighted(
        tokens=np.concatenate([p.tokens for p in parts]),
        zhats=np.concatenate([p.zhats for p in parts]),
        trials=np.concatenate([p.trials for p in parts]),
        rejected_mass_first_loop=np.concatenate([p.rejected_mass_first_loop for p in parts]),
    )


# ---------------------------------------------------------------------------
# Simple rejection sampling (with replacement)


def rs_batch(prior: Categorical, c: TokenConstraint, n: int, rng: np.random.Generator) -> BatchTokens:
    """Draw from the prior until the constraint accepts, per run.

    Requires z > 0; there is deliberately no iteration cap (bounding cost
    is the job of the budgeted variants).
    """
    cum = prior.cumulative()
    tokens = np.full(n, -1, dtype=np.int64)
    trials = np.zeros(n, dtype=np.int64)
    alive = np.arange(n)
    while alive.size:
        cand = _draw_prior(cum, alive.size, rng)
        ok = c.evaluate_many(cand)
        trials[alive] += 1
        tokens[alive[ok]] = cand[ok]
        alive = alive[~ok]
    return BatchTokens(tokens=tokens, trials=trials)


def rs(prior: Categorical, c: TokenConstraint, rng: np.random.Generator) -> int:
    """Simple rejection sampling; returns an exact posterior sample."""
    return int(rs_batch(prior, c, 1, rng).tokens[0])


# ---------------------------------------------------------------------------
# Adaptive rejection sampling (without replacement, unweighted)


def _ars_chunk(prior, c, n, rng) -> BatchTokens:
    rem = _Removed(n, prior.probs, prior.cumulative())
    tokens = np.full(n, -1, dtype=np.int64)
    trials = np.zeros(n, dtype=np.int64)
    alive = np.arange(n)
    while alive.size:
        cand = rem.draw(alive, rng)
        ok = c.evaluate_many(cand)
        trials[alive] += 1
        tokens[alive[ok]] = cand[ok]
        rem.add(alive[~ok], cand[~ok])
        alive = alive[~ok]
    return BatchTokens(tokens=tokens, trials=trials)


def ars_batch(prior: Categorical, c: TokenConstraint, n: int, rng: np.random.Generator) -> BatchTokens:
    """Adaptive rejection sampling: rejected tokens are never redrawn.

    Exact posterior samples in at most (#invalid tokens) + 1 constraint
    evaluations per run.
    """
    return _cat_tokens([_ars_chunk(prior, c, m, rng) for m in _chunks(n, prior.vocab_size)])


def ars(prior: Categorical, c: TokenConstraint, rng: np.random.Generator) -> int:
    """Adaptive rejection sampling for a single draw."""
    return int(ars_batch(prior, c, 1, rng).tokens[0])


# ---------------------------------------------------------------------------
# Weighted rejection sampling (with replacement, L + 1 loops)


def wrs_batch(
    prior: Categorical,
    c: TokenConstraint,
    n: int,
    rng: np.random.Generator,
    extra_loops: int = 1,
) -> BatchWeighted:
    """Run L + 1 rejection loops and estimate z from the rejection count.

    The accepted token of the first loop is returned. With ``nrej`` total
    rejections across the loops, ``zhat = L / (nrej + L)``, the minimum-
    variance unbiased estimator of z for the induced negative-binomial
    trial count.
    """
    L = int(extra_loops)
    if L < 1:
        raise ValueError("extra_loops must be >= 1")
    cum = prior.cumulative()
    tokens = np.full(n, -1, dtype=np.int64)
    trials = np.zeros(n, dtype=np.int64)
    nrej = np.zeros(n, dtype=np.int64)
    loops_done = np.zeros(n, dtype=np.int64)
    alive = np.arange(n)
    while alive.size:
        cand = _draw_prior(cum, alive.size, rng)
        ok = c.evaluate_many(cand)
        trials[alive] += 1
        acc = alive[ok]
        acc_cand = cand[ok]
        newly = loops_done[acc] == 0
        tokens[acc[newly]] = acc_cand[newly]
        loops_done[acc] += 1
        nrej[alive[~ok]] += 1
        alive = alive[~(ok & (loops_done[alive] == L + 1))]
    zhats = L / (nrej + L)
    return BatchWeighted(
        tokens=tokens,
        zhats=zhats,
        trials=trials,
        rejected_mass_first_loop=np.zeros(n),
    )


def wrs(
    prior: Categorical,
    c: TokenConstraint,
    rng: np.random.Generator,
    extra_loops: int = 1,
) -> WeightedToken:
    """Weighted rejection sampling for a single draw."""
    return wrs_batch(prior, c, 1, rng, extra_loops)[0]


# ---------------------------------------------------------------------------
# Adaptive weighted rejection sampling


def _awrs_chunk(prior, c, n, rng) -> BatchWeighted:
    rem = _Removed(n, prior.probs, prior.cumulative())
    tokens = np.full(n, -1, dtype=np.int64)
    trials = np.zeros(n, dtype=np.int64)
    nrej = np.zeros(n, dtype=np.int64)
    psi0 = np.zeros(n)
    in_second = np.zeros(n, dtype=bool)
    alive = np.arange(n)
    while alive.size:
        cand = rem.draw(alive, rng)
        ok = c.evaluate_many(cand)
        trials[alive] += 1
        second = in_second[alive]
        # First-loop acceptance: keep the token, snapshot the removed mass,
        # and continue into the confirmation loop (acceptances are replaced,
        # so the token stays in the pool).
        first_acc = alive[ok & ~second]
        tokens[first_acc] = cand[ok & ~second]
        psi0[first_acc] = rem.mass[first_acc]
        in_second[first_acc] = True
        # Rejections are unique: remove them for both loops.
        rej_rows = alive[~ok]
        rem.add(rej_rows, cand[~ok])
        nrej[rej_rows] += 1
        alive = alive[~(ok & second)]
    zhats = (1.0 - psi0) / (nrej + 1.0)
    return BatchWeighted(tokens=tokens, zhats=zhats, trials=trials, rejected_mass_first_loop=psi0)


def awrs_batch(prior: Categorical, c: TokenConstraint, n: int, rng: np.random.Generator) -> BatchWeighted:
    """Adaptive weighted rejection sampling.

    Loop one samples without replacement of rejected tokens until a token
    is accepted; loop two continues from the same depleted pool (with the
    accepted token put back) until it finds another acceptance. With
    ``psi0`` the prior mass rejected in loop one and ``nrej`` the unique
    rejections across both loops, ``zhat = (1 - psi0) / (nrej + 1)`` is an
    unbiased estimate of z, and the returned token is exactly posterior
    distributed. Per loop the trial count never exceeds one plus the
    number of invalid tokens.
    """
    return _cat_weighted([_awrs_chunk(prior, c, m, rng) for m in _chunks(n, prior.vocab_size)])


def awrs(prior: Categorical, c: TokenConstraint, rng: np.random.Generator) -> WeightedToken:
    """Adaptive weighted rejection sampling for a single draw."""
    return awrs_batch(prior, c, 1, rng)[0]


# ---------------------------------------------------------------------------
# Key-sorted adaptive weighted rejection sampling


def _exp_keys(probs: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    keys = np.full((n, probs.shape[0]), np.inf)
    pos = probs > 0
    keys[:, pos] = rng.standard_exponential((n, int(pos.sum()))) / probs[pos]
    return keys


def _awrs_sorted_chunk(prior, c, n, rng, order0=None) -> BatchWeighted:
    probs = prior.probs
    if order0 is None:
        order0 = np.argsort(_exp_keys(probs, n, rng), axis=1, kind="stable")
    tokens = np.full(n, -1, dtype=np.int64)
    trials = np.zeros(n, dtype=np.int64)
    nrej = np.zeros(n, dtype=np.int64)
    psi0 = np.zeros(n)
    psi0_comp = np.zeros(n)
    rejected = np.zeros((n, probs.shape[0]), dtype=bool)
    pos = np.zeros(n, dtype=np.int64)

    # Loop one walks each run's key order until the first acceptance. A
    # caller may evaluate a lookahead window of this order concurrently;
    # only evaluations at or before the accepted index are counted, which
    # is what the sequential walk below does by construction.
    alive = np.arange(n)
    while alive.size:
        if np.any(pos[alive] >= probs.shape[0]):
            raise NoValidToken("key scan exhausted the vocabulary (z = 0?)")
        cand = order0[alive, pos[alive]]
        ok = c.evaluate_many(cand)
        trials[alive] += 1
        rej = alive[~ok]
        rejected[rej, cand[~ok]] = True
        y = probs[cand[~ok]] - psi0_comp[rej]
        t = psi0[rej] + y
        psi0_comp[rej] = (t - psi0[rej]) - y
        psi0[rej] = t
        nrej[rej] += 1
        pos[rej] += 1
        tokens[alive[ok]] = cand[ok]
        alive = rej

    # Loop two reruns the race with fresh keys over the remaining pool
    # (the accepted token is replaced, rejected tokens are out for good).
    keys1 = _exp_keys(probs, n, rng)
    keys1[rejected] = np.inf
    order1 = np.argsort(keys1, axis=1, kind="stable")
    pos = np.zeros(n, dtype=np.int64)
    alive = np.arange(n)
    while alive.size:
        if np.any(pos[alive] >= probs.shape[0]):
            raise NoValidToken("key scan exhausted the vocabulary (z = 0?)")
        cand = order1[alive, pos[alive]]
        ok = c.evaluate_many(cand)
        trials[alive] += 1
        rej = alive[~ok]
        nrej[rej] += 1
        pos[rej] += 1
        alive = rej

    zhats = (1.0 - psi0) / (nrej + 1.0)
    return BatchWeighted(tokens=tokens, zhats=zhats, trials=trials, rejected_mass_first_loop=psi0)


def awrs_sorted_batch(
    prior: Categorical,
    c: TokenConstraint,
    n: int,
    rng: np.random.Generator,
) -> BatchWeighted:
    """Adaptive weighted rejection sampling driven by exponential-race keys.

    Distributionally identical to ``awrs_batch``: walking tokens in
    ascending Exp(prior) key order is sampling without replacement, so the
    first accepted token and the rejection counts have the same law.
    """
    parts = [
        _awrs_sorted_chunk(prior, c, m, rng)
        for m in _chunks(n, prior.vocab_size, cap_cells=1 << 22)
    ]
    return _cat_weighted(parts)


def awrs_sorted(
    prior: Categorical,
    c: TokenConstraint,
    rng: np.random.Generator,
    ordering: KeyedOrdering | None = None,
) -> WeightedToken:
    """Key-sorted adaptive weighted rejection sampling for a single draw.

    ``ordering`` must come from ``swor_keys(prior)``; when omitted a fresh
    ordering is drawn. The full trace is deterministic given the rng.
    """
    if ordering is None:
        ordering = swor_keys(prior, rng)
    return _awrs_sorted_chunk(prior, c, 1, rng, order0=ordering.order[None, :])[0]


# ---------------------------------------------------------------------------
# Clipped adaptive weighted rejection sampling (mass-threshold early stop)

_PHASE_LOOP0 = 0
_PHASE_PROBE = 1
_PHASE_SECOND = 2
_PHASE_SECOND_POST = 3
_PHASE_DONE = 4


def _cawrs_chunk(prior, c, n, rng, theta0, theta1) -> BatchWeighted:
    rem = _Removed(n, prior.probs, prior.cumulative())
    tokens = np.full(n, -1, dtype=np.int64)
    trials = np.zeros(n, dtype=np.int64)
    nrej = np.zeros(n, dtype=np.int64)
    n1 = np.zeros(n, dtype=np.int64)
    psi0 = np.zeros(n)
    zhats = np.zeros(n)
    phase = np.full(n, _PHASE_LOOP0, dtype=np.int8)

    def finish(rows, boosted):
        base = (1.0 - psi0[rows]) / (nrej[rows] + 1.0)
        zhats[rows] = np.where(boosted, (n1[rows] + 1.0) * base, base)
        phase[rows] = _PHASE_DONE

    while True:
        alive = np.flatnonzero(phase != _PHASE_DONE)
        if alive.size == 0:
            break
        cand = rem.draw(alive, rng)
        ok = c.evaluate_many(cand)
        trials[alive] += 1
        ph = phase[alive]

        # First loop: reject uniquely until acceptance or theta0 overflow.
        l0 = ph == _PHASE_LOOP0
        acc0 = alive[l0 & ok]
        tokens[acc0] = cand[l0 & ok]
        psi0[acc0] = rem.mass[acc0]
        phase[acc0] = _PHASE_SECOND
        rej0 = alive[l0 & ~ok]
        rem.add(rej0, cand[l0 & ~ok])
        nrej[rej0] += 1
        over0 = rej0[rem.mass[rej0] > theta0]
        psi0[over0] = rem.mass[over0]
        phase[over0] = _PHASE_PROBE

        # Overflow probe: one draw from the remaining pool decides between
        # a dead sample and a boosted-weight continuation.
        pr = ph == _PHASE_PROBE
        dead = alive[pr & ~ok]
        tokens[dead] = cand[pr & ~ok]
        zhats[dead] = 0.0
        phase[dead] = _PHASE_DONE
        live = alive[pr & ok]
        tokens[live] = cand[pr & ok]
        phase[live] = _PHASE_SECOND_POST

        # Second loop (either flavor): continue until acceptance or the
        # total rejected mass crosses theta1.
        l1 = (ph == _PHASE_SECOND) | (ph == _PHASE_SECOND_POST)
        boosted = ph == _PHASE_SECOND_POST
        acc1 = l1 & ok
        finish(alive[acc1], boosted[acc1])
        rej1 = l1 & ~ok
        rows1 = alive[rej1]
        rem.add(rows1, cand[rej1])
        nrej[rows1] += 1
        n1[rows1] += 1
        over1 = rem.mass[rows1] > theta1
        finish(rows1[over1], boosted[rej1][over1])

    return BatchWeighted(tokens=tokens, zhats=zhats, trials=trials, rejected_mass_first_loop=psi0)


def cawrs_batch(
    prior: Categorical,
    c: TokenConstraint,
    n: int,
    rng: np.random.Generator,
    theta0: float,
    theta1: float,
) -> BatchWeighted:
    """Adaptive weighted rejection sampling with rejected-mass clipping.

    Identical to ``awrs_batch`` while the first loop's rejected mass stays
    at or below ``theta0`` and the total rejected mass at or below
    ``theta1``. Crossing ``theta0`` before any acceptance triggers a single
    probe draw: an invalid probe is returned as a dead sample with
    ``zhat = 0``; a valid probe is returned with the boosted estimate
    ``(n1 + 1) * (1 - psi0) / (nrej + 1)`` after the second loop runs. The
    pair (token, zhat) remains properly weighted for the local target, at
    the price of occasional dead samples.
    """
    if not (0.0 < theta0 < theta1 < 1.0):
        raise ValueError("need 0 < theta0 < theta1 < 1")
    parts = [_cawrs_chunk(prior, c, m, rng, theta0, theta1) for m in _chunks(n, prior.vocab_size)]
    return _cat_weighted(parts)


def cawrs(
    prior: Categorical,
    c: TokenConstraint,
    rng: np.random.Generator,
    theta0: float,
    theta1: float,
) -> WeightedToken:
    """Clipped adaptive weighted rejection sampling for a single draw."""
    return cawrs_batch(prior, c, 1, rng, theta0, theta1)[0]


# ---------------------------------------------------------------------------
# Clipped weighted rejection sampling (call-budget early stop)


def _cwrs_estimate(s, r, L, R):
    # Stopped on the (L+1)-th acceptance: zhat = L / (r + L).
    # Stopped on the R-th rejection: zhat = s / (R + s - 1), which is 0
    # when nothing was accepted (the R=1, s=0 corner is 0/0 -> 0).
    # Both are the Rao-Blackwellization of 1[first draw valid] given the
    # stopped counts (s, r); see the tests for the exact enumeration.
    acc_stop = s == L + 1
    rej_denom = np.maximum(R + s - 1.0, 1.0)
    return np.where(acc_stop, L / (r + L), np.where(s > 0, s / rej_denom, 0.0))


def cwrs_batch(
    prior: Categorical,
    c: TokenConstraint,
    n: int,
    rng: np.random.Generator,
    extra_loops: int = 1,
    budget: int = 8,
) -> BatchWeighted:
    """Weighted rejection sampling stopped at a rejection budget.

    Draw with replacement until either L + 1 acceptances or R = budget
    rejections have been seen, so no run ever exceeds R failed plus L + 1
    passed constraint calls. Returns the first accepted token, or the
    first draw with ``zhat = 0`` when nothing was accepted. ``zhat`` stays
    unbiased for z under the stopped counts.
    """
    L, R = int(extra_loops), int(budget)
    if L < 1 or R < 1:
        raise ValueError("extra_loops and budget must be >= 1")
    cum = prior.cumulative()
    s = np.zeros(n, dtype=np.int64)
    r = np.zeros(n, dtype=np.int64)
    first_tok = np.full(n, -1, dtype=np.int64)
    x1 = np.full(n, -1, dtype=np.int64)
    trials = np.zeros(n, dtype=np.int64)
    alive = np.arange(n)
    first_wave = True
    while alive.size:
        cand = _draw_prior(cum, alive.size, rng)
        ok = c.evaluate_many(cand)
        trials[alive] += 1
        if first_wave:
            x1[alive] = cand
            first_wave = False
        acc = alive[ok]
        acc_cand = cand[ok]
        newly = first_tok[acc] < 0
        s[acc] += 1
        first_tok[acc[newly]] = acc_cand[newly]
        r[alive[~ok]] += 1
        alive = alive[~((ok & (s[alive] == L + 1)) | (~ok & (r[alive] == R)))]
    assert np.all(r <= R) and np.all(s <= L + 1)
    zhats = _cwrs_estimate(s, r, L, R)
    tokens = np.where(s > 0, first_tok, x1)
    return BatchWeighted(tokens=tokens, zhats=zhats, trials=trials, rejected_mass_first_loop=np.zeros(n))


def cwrs(
    prior: Categorical,
    c: TokenConstraint,
    rng: np.random.Generator,
    extra_loops: int = 1,
    budget: int = 8,
) -> WeightedToken:
    """Budgeted weighted rejection sampling for a single draw."""
    return cwrs_batch(prior, c, 1, rng, extra_loops, budget)[0]


# ---------------------------------------------------------------------------
# Geometric adaptive weighted rejection sampling


def _gawrs_chunk(prior, c, n, rng, L, R) -> BatchWeighted:
    rem = _Removed(n, prior.probs, prior.cumulative())
    s = np.zeros(n, dtype=np.int64)
    r = np.zeros(n, dtype=np.int64)
    failed = np.zeros(n, dtype=np.int64)
    first_tok = np.full(n, -1, dtype=np.int64)
    x1 = np.full(n, -1, dtype=np.int64)
    trials = np.zeros(n, dtype=np.int64)
    alive = np.arange(n)
    first_wave = True
    while alive.size:
        # Phantom redraws of already-removed mass are accounted for with a
        # geometric count instead of actual draws; if they exhaust the
        # budget the pending novel draw never happens (and is not
        # evaluated), exactly as in the with-replacement process.
        q = rem.mass[alive]
        phantoms = rng.geometric(np.maximum(1.0 - q, 1e-300)) - 1
        over = r[alive] + phantoms >= R
        r[alive[over]] = R
        alive = alive[~over]
        if alive.size == 0:
            break
        r[alive] += phantoms[~over]
        cand = rem.draw(alive, rng)
        ok = c.evaluate_many(cand)
        trials[alive] += 1
        if first_wave:
            x1[alive] = cand
            first_wave = False
        acc = alive[ok]
        acc_cand = cand[ok]
        newly = first_tok[acc] < 0
        s[acc] += 1
        first_tok[acc[newly]] = acc_cand[newly]
        rej = alive[~ok]
        rem.add(rej, cand[~ok])
        r[rej] += 1
        failed[rej] += 1
        alive = alive[~((ok & (s[alive] == L + 1)) | (~ok & (r[alive] >= R)))]
    assert np.all(failed <= R) and np.all(s <= L + 1)
    zhats = _cwrs_estimate(s, np.minimum(r, R), L, R)
    tokens = np.where(s > 0, first_tok, x1)
    return BatchWeighted(tokens=tokens, zhats=zhats, trials=trials, rejected_mass_first_loop=np.zeros(n))


def gawrs_batch(
    prior: Categorical,
    c: TokenConstraint,
    n: int,
    rng: np.random.Generator,
    extra_loops: int = 1,
    budget: int = 8,
) -> BatchWeighted:
    """Budgeted rejection sampling, adaptive via phantom-rejection counts.

    Runs the budgeted with-replacement process of ``cwrs_batch`` but never
    actually redraws a removed token: hits on removed mass are counted by
    a geometric draw and charged against the budget without constraint
    calls. Same estimator and the same R-failed / L+1-passed call cap,
    with far fewer calls when much mass is already removed.
    """
    L, R = int(extra_loops), int(budget)
    if L < 1 or R < 1:
        raise ValueError("extra_loops and budget must be >= 1")
    parts = [_gawrs_chunk(prior, c, m, rng, L, R) for m in _chunks(n, prior.vocab_size)]
    return _cat_weighted(parts)


def gawrs(
    prior: Categorical,
    c: TokenConstraint,
    rng: np.random.Generator,
    extra_loops: int = 1,
    budget: int = 8,
) -> WeightedToken:
    """Geometric adaptive weighted rejection sampling for a single draw."""
    return gawrs_batch(prior, c, 1, rng, extra_loops, budget)[0]


# ---------------------------------------------------------------------------
# Recursive adaptive weighted rejection sampling


def _rawrs_chunk(prior, c, n, rng, R) -> BatchWeighted:
    probs = prior.probs
    rem = _Removed(n, probs, prior.cumulative())
    tokens = np.full(n, -1, dtype=np.int64)
    zhats = np.zeros(n)
    trials = np.zeros(n, dtype=np.int64)
    eta = np.ones(n)
    q_n = np.zeros(n)
    eta_n = np.ones(n)
    psi_scan = np.zeros(n)
    nsteps = np.zeros(n, dtype=np.int64)
    failed = np.zeros(n, dtype=np.int64)
    phase = np.full(n, 0, dtype=np.int8)  # 0 scan, 1 probe, 2 done

    while True:
        scanning = np.flatnonzero(phase == 0)
        if scanning.size == 0:
            break
        denom = 1.0 - rem.mass[scanning]
        cand = rem.draw(scanning, rng)
        # Clamp guards against q > 1 from float drift once nearly all
        # mass has been removed.
        q_i = np.minimum(probs[cand] / denom, 1.0)
        ok = c.evaluate_many(cand)
        trials[scanning] += 1
        nsteps[scanning] += 1
        last = nsteps[scanning] == R

        acc_last = scanning[ok & last]
        tokens[acc_last] = cand[ok & last]
        zhats[acc_last] = eta[acc_last]
        phase[acc_last] = 2

        rej = scanning[~ok]
        failed[rej] += 1
        rej_last = scanning[~ok & last]
        tokens[rej_last] = cand[~ok & last]
        zhats[rej_last] = 0.0
        phase[rej_last] = 2

        more = scanning[~ok & ~last]
        eta[more] *= 1.0 - q_i[~ok & ~last]
        rem.add(rej, cand[~ok])
        psi_scan[rej] = rem.mass[rej]

        # Acceptance before the budget: remember the recursion state and
        # move to the probe. The accepted token leaves the pool too, since
        # the probe conditions on everything drawn so far.
        acc = scanning[ok & ~last]
        tokens[acc] = cand[ok & ~last]
        q_n[acc] = q_i[ok & ~last]
        eta_n[acc] = eta[acc]
        rem.add(acc, cand[ok & ~last])
        phase[acc] = 1

    probing = np.flatnonzero(phase == 1)
    # A drained pool means the accepted token had conditional probability
    # one, where the probe branches coincide at eta_n.
    drained = ~np.any(~rem.mask[probing] & (probs > 0)[None, :], axis=1)
    zhats[probing[drained]] = eta_n[probing[drained]]
    probing = probing[~drained]
    if probing.size:
        cand = rem.draw(probing, rng)
        ok = c.evaluate_many(cand)
        trials[probing] += 1
        zhats[probing] = np.where(ok, eta_n[probing], q_n[probing] * eta_n[probing])

    assert np.all(failed <= R)
    return BatchWeighted(tokens=tokens, zhats=zhats, trials=trials, rejected_mass_first_loop=psi_scan)


def rawrs_batch(
    prior: Categorical,
    c: TokenConstraint,
    n: int,
    rng: np.random.Generator,
    budget: int = 8,
) -> BatchWeighted:
    """Without-replacement scan with a recursive conditional-mass estimate.

    Scans a without-replacement sequence until the first acceptance or
    until R = budget tokens have been checked. With ``q_i`` the conditional
    probability of the i-th draw and ``eta_i`` the product of
    ``(1 - q_j)`` over the rejections so far: stopping at the budget gives
    ``zhat = eta`` on acceptance and 0 otherwise; stopping early on an
    acceptance spends one extra probe draw from the remaining pool and
    gives ``eta_n`` if the probe is valid, else ``q_n * eta_n``. At most R
    scan evaluations plus one probe per run.
    """
    R = int(budget)
    if R < 1:
        raise ValueError("budget must be >= 1")
    parts = [_rawrs_chunk(prior, c, m, rng, R) for m in _chunks(n, prior.vocab_size)]
    return _cat_weighted(parts)


def rawrs(
    prior: Categorical,
    c: TokenConstraint,
    rng: np.random.Generator,
    budget: int = 8,
) -> WeightedToken:
    """Recursive adaptive weighted rejection sampling for a single draw."""
    return rawrs_batch(prior, c, 1, rng, budget)[0]


# ---------------------------------------------------------------------------
# Nucleus truncation


def top_p_compose(prior: Categorical, p: float) -> Categorical:
    """Keep the smallest high-probability nucleus of mass >= p, renormalized.

    Tokens are ranked by probability with ties broken by token id; every
    token tied with the boundary probability is kept, so the result is
    deterministic and never splits a tie across the cut.
    """
    if not (0.0 < p <= 1.0):
        raise ValueError("p must lie in (0, 1]")
    probs = prior.probs
    order = np.lexsort((np.arange(probs.shape[0]), -probs))
    csum = np.cumsum(probs[order])
    cut = int(np.searchsorted(csum, p - 1e-12, side="left"))
    cut = min(cut, probs.shape[0] - 1)
    boundary = probs[order[cut]]
    keep = np.zeros(probs.shape[0], dtype=bool)
    keep[order[: cut + 1]] = True
    keep |= probs == boundary
    kept = np.where(keep, probs, 0.0)
    return Categorical(kept / kept.sum())
