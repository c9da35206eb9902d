"""Sequential Monte Carlo over toy language models.

Two engines share one skeleton. The twist engine proposes tokens straight
from the model and multiplies weights by the 0/1 constraint indicator.
The properly-weighted-proposal engine draws (token, weight) pairs from a
weighted rejection sampler whose weight is an unbiased estimate of the
local valid mass; multiplying those estimates into the particle weight
keeps the ensemble unbiased for the global satisfaction probability g
while sampling tokens exactly from the locally constrained posterior.

Each particle owns an independent counter-based random stream derived
from (run seed, particle index), so extension order cannot change results
and resampling never correlates particle futures. Resampling itself draws
from a separate dedicated stream.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .constraints import TokenConstraint
from .dist import Categorical, sample
from .errors import AllDead, DeadPrefix, NoValidToken
from .oracle import token_mask
from .rng import make_rng
from .samplers import awrs, cawrs, cwrs, gawrs, rawrs, wrs
from .samplers import ars as ars_sampler
from .toylm import ToyLM

__all__ = [
    "Particle",
    "Ensemble",
    "ess",
    "resample_multinomial",
    "resample_stratified",
    "weighted_proposal",
    "smc_twist",
    "smc_pwp",
    "importance_sample",
    "sample_verify",
    "lcd_generate",
    "DEFAULT_MAX_STEPS",
]

DEFAULT_MAX_STEPS = 64


@dataclass
class Particle:
    """One partial or complete string with its accumulated weight."""

    prefix: str
    weight: float
    active: bool


@dataclass
class Ensemble:
    """A weighted population of strings and the estimates built from it."""

    particles: list[Particle]
    g_hat: float
    posterior_estimate: dict[str, float]
    eval_counts: list[int] = field(default_factory=list)
    steps: int = 0

    @property
    def eval_count(self) -> int:
        return sum(self.eval_counts)


def ess(weights) -> float:
    """Effective sample size W^2 / sum(w^2); in [1, N] when any w > 0."""
    w = np.asarray(weights, dtype=np.float64)
    total = float(w.sum())
    sq = float(np.sum(w * w))
    if sq <= 0.0:
        raise AllDead("all weights are zero")
    return total * total / sq


def _freshen(particles: list[Particle], idx: np.ndarray, mean_w: float) -> list[Particle]:
    return [
        Particle(prefix=particles[i].prefix, weight=mean_w, active=particles[i].active)
        for i in idx
    ]


def resample_multinomial(particles: list[Particle], rng: np.random.Generator) -> list[Particle]:
    """N independent draws proportional to weight; weights reset to W/N."""
    w = np.array([p.weight for p in particles])
    total = float(w.sum())
    if total <= 0.0:
        raise AllDead("cannot resample an all-dead population")
    n = len(particles)
    idx = rng.choice(n, size=n, p=w / total)
    return _freshen(particles, idx, total / n)


def resample_stratified(particles: list[Particle], rng: np.random.Generator) -> list[Particle]:
    """One uniform per stratum of the cumulative weights; weights W/N.

    Copy counts are within one of their expectations N * w_i / W, unlike
    the multinomial scheme.
    """
    w = np.array([p.weight for p in particles])
    total = float(w.sum())
    if total <= 0.0:
        raise AllDead("cannot resample an all-dead population")
    n = len(particles)
    u = (np.arange(n) + rng.random(n)) / n
    idx = np.searchsorted(np.cumsum(w / total), u, side="right")
    idx = np.minimum(idx, n - 1)
    return _freshen(particles, idx, total / n)


_RESAMPLERS = {
    "multinomial": resample_multinomial,
    "stratified": resample_stratified,
}

# A proposal maps (prior, constraint, rng) to a (token, weight) pair that
# is properly weighted for the unnormalized local target prior * c.
Proposal = Callable[[Categorical, TokenConstraint, np.random.Generator], tuple[int, float]]


def weighted_proposal(name: str, **params) -> Proposal:
    """Build a properly weighted local proposal by sampler name.

    ``exact`` computes the local posterior by full token masking and
    returns the true z as the weight; the rest return unbiased estimates.
    """

    def _exact(prior, c, rng):
        local = token_mask(prior, c)
        return sample(local.post, rng), local.z

    def _awrs(prior, c, rng):
        out = awrs(prior, c, rng)
        return out.token, out.zhat

    def _wrs(prior, c, rng):
        out = wrs(prior, c, rng, extra_loops=params.get("extra_loops", 1))
        return out.token, out.zhat

    def _cawrs(prior, c, rng):
        out = cawrs(prior, c, rng, theta0=params.get("theta0", 0.25), theta1=params.get("theta1", 0.75))
        return out.token, out.zhat

    def _cwrs(prior, c, rng):
        out = cwrs(prior, c, rng, extra_loops=params.get("extra_loops", 1), budget=params.get("budget", 8))
        return out.token, out.zhat

    def _gawrs(prior, c, rng):
        out = gawrs(prior, c, rng, extra_loops=params.get("extra_loops", 1), budget=params.get("budget", 8))
        return out.token, out.zhat

    def _rawrs(prior, c, rng):
        out = rawrs(prior, c, rng, budget=params.get("budget", 8))
        return out.token, out.zhat

    table = {
        "exact": _exact,
        "awrs": _awrs,
        "wrs": _wrs,
        "cawrs": _cawrs,
        "cwrs": _cwrs,
        "gawrs": _gawrs,
        "rawrs": _rawrs,
    }
    try:
        return table[name]
    except KeyError:
        raise KeyError(f"unknown proposal {name!r}; choices: {sorted(table)}")


def _finalize(particles: list[Particle], eval_counts: list[int], steps: int) -> Ensemble:
    weights = [p.weight for p in particles]
    total = math.fsum(weights)
    g_hat = total / len(particles)
    post: dict[str, float] = {}
    if total > 0:
        for p in particles:
            if p.weight > 0 and not p.active:
                post[p.prefix] = post.get(p.prefix, 0.0) + p.weight / total
    return Ensemble(
        particles=particles,
        g_hat=g_hat,
        posterior_estimate=dict(sorted(post.items())),
        eval_counts=eval_counts,
        steps=steps,
    )


def _run_smc(
    lm: ToyLM,
    family,
    extend,
    n_particles: int,
    tau: float,
    seed: int,
    max_steps: int,
    resample: str,
) -> Ensemble:
    if n_particles < 1:
        raise ValueError("need at least one particle")
    if not (0.0 <= tau <= 1.0):
        raise ValueError("tau must lie in [0, 1]")
    resampler = _RESAMPLERS[resample]
    init_w = 1.0 if family.is_valid_prefix("") else 0.0
    particles = [Particle(prefix="", weight=init_w, active=True) for _ in range(n_particles)]
    gens = [make_rng(seed, 0, i) for i in range(n_particles)]
    resample_rng = make_rng(seed, 1)
    eval_counts: list[int] = []
    steps = 0

    while any(p.active for p in particles) and steps < max_steps:
        before = family.counter.count
        for i, p in enumerate(particles):
            if not p.active:
                continue
            if p.weight <= 0.0:
                # Dead particles are not worth extending; resampling will
                # replace them.
                p.active = False
                continue
            extend(p, gens[i])
        steps += 1
        eval_counts.append(family.counter.count - before)

        weights = [p.weight for p in particles]
        if math.fsum(weights) <= 0.0:
            raise AllDead(f"all {n_particles} particles died at step {steps}")
        # Strict inequality: ties at tau * N do not trigger a resample.
        if ess(weights) < tau * n_particles:
            particles = resampler(particles, resample_rng)

    for p in particles:
        if p.active:
            # Ran into the step cutoff without end-of-string.
            p.weight = 0.0
            p.active = False
    weights = [p.weight for p in particles]
    if math.fsum(weights) <= 0.0:
        raise AllDead("no particle completed a string within the step limit")
    return _finalize(particles, eval_counts, steps)


def smc_twist(
    lm: ToyLM,
    family,
    n_particles: int,
    tau: float = 0.5,
    seed: int = 0,
    max_steps: int = DEFAULT_MAX_STEPS,
    resample: str = "multinomial",
) -> Ensemble:
    """SMC with the raw model as proposal and the constraint as twist.

    Tokens are proposed from the unconstrained model; a particle's weight
    is multiplied by the 0/1 indicator that its extended prefix (or, on
    end-of-string, the complete string) still satisfies the constraint.
    """

    def extend(p: Particle, rng: np.random.Generator):
        prior = lm.next_dist(p.prefix)
        token = sample(prior, rng)
        c = family.constraint_at(p.prefix)
        ok = bool(c(token))
        if token == lm.eos:
            p.active = False
        else:
            p.prefix += lm.alphabet[token]
        p.weight *= 1.0 if ok else 0.0

    return _run_smc(lm, family, extend, n_particles, tau, seed, max_steps, resample)


def smc_pwp(
    lm: ToyLM,
    family,
    proposal: Proposal | str = "awrs",
    n_particles: int = 100,
    tau: float = 0.5,
    seed: int = 0,
    max_steps: int = DEFAULT_MAX_STEPS,
    resample: str = "multinomial",
    **proposal_params,
) -> Ensemble:
    """SMC whose proposal returns properly weighted (token, weight) pairs.

    Each step multiplies the particle weight by the proposal's weight,
    which for the weighted rejection samplers is an unbiased estimate of
    the local valid mass. The resulting g_hat is unbiased for the global
    satisfaction probability, and the posterior estimate converges to the
    globally conditioned distribution. Proposals returning weight zero
    (clipped variants) yield dead particles that resampling removes.
    """
    if isinstance(proposal, str):
        proposal = weighted_proposal(proposal, **proposal_params)

    def extend(p: Particle, rng: np.random.Generator):
        prior = lm.next_dist(p.prefix)
        c = family.constraint_at(p.prefix)
        try:
            token, w = proposal(prior, c, rng)
        except NoValidToken:
            p.weight = 0.0
            p.active = False
            return
        if token == lm.eos:
            p.active = False
        else:
            p.prefix += lm.alphabet[token]
        p.weight *= w

    return _run_smc(lm, family, extend, n_particles, tau, seed, max_steps, resample)


def importance_sample(lm: ToyLM, family, n: int, seed: int = 0) -> Ensemble:
    """Independent locally-constrained rollouts with cumulative-mass weights.

    Every step samples the exact local posterior via token masking and
    multiplies the local valid mass z into the rollout's weight, so the
    mean weight estimates g and the reweighted ensemble estimates the
    global posterior.
    """
    eval_before = family.counter.count
    particles = []
    for i in range(n):
        rng = make_rng(seed, 0, i)
        prefix, w = "", 1.0
        while True:
            local = token_mask(lm.next_dist(prefix), family.constraint_at(prefix))
            w *= local.z
            token = sample(local.post, rng)
            if token == lm.eos:
                break
            prefix += lm.alphabet[token]
        particles.append(Particle(prefix=prefix, weight=w, active=False))
    return _finalize(particles, [family.counter.count - eval_before], steps=1)


def sample_verify(lm: ToyLM, verifier, n: int, seed: int = 0) -> Ensemble:
    """Unconstrained rollouts kept or discarded by a whole-string check.

    ``verifier`` is a callable str -> bool (a TrieLanguage works via its
    membership test). Raises AllDead if every rollout fails.
    """
    check = verifier if callable(verifier) else lambda s: s in verifier
    particles = []
    for i in range(n):
        rng = make_rng(seed, 0, i)
        prefix = ""
        while True:
            token = sample(lm.next_dist(prefix), rng)
            if token == lm.eos:
                break
            prefix += lm.alphabet[token]
        particles.append(Particle(prefix=prefix, weight=1.0 if check(prefix) else 0.0, active=False))
    if not any(p.weight > 0 for p in particles):
        raise AllDead(f"none of {n} rollouts satisfied the constraint")
    return _finalize(particles, [], steps=1)


def lcd_generate(
    lm: ToyLM,
    family,
    rng: np.random.Generator,
    sampler: str = "ars",
) -> str:
    """One unweighted rollout from the locally constrained distribution.

    ``sampler`` picks how each step draws from the local posterior:
    ``ars`` (adaptive rejection sampling, few constraint calls) or
    ``mask`` (full token masking). Both sample the identical distribution.
    Raises DeadPrefix if a step has no valid token.
    """
    if sampler not in ("ars", "mask"):
        raise ValueError("sampler must be 'ars' or 'mask'")
    prefix = ""
    while True:
        prior = lm.next_dist(prefix)
        c = family.constraint_at(prefix)
        try:
            if sampler == "ars":
                token = ars_sampler(prior, c, rng)
            else:
                token = sample(token_mask(prior, c).post, rng)
        except NoValidToken as e:
            raise DeadPrefix(f"no valid continuation of {prefix!r}") from e
        if token == lm.eos:
            return prefix
        prefix += lm.alphabet[token]
