"""Exact, slow reference computations that every sampler is tested against.

These enumerate rather than sample. They are bounded on purpose: past the
configured language size or string length they refuse instead of silently
approximating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constraints import TokenConstraint, TrieLanguage
from .dist import Categorical
from .errors import EmptyPosterior, EnumerationLimitExceeded, NoValidToken
from .toylm import ToyLM

__all__ = [
    "LocalPosterior",
    "token_mask",
    "GlobalPosterior",
    "global_posterior",
    "LcdDistribution",
    "lcd_distribution",
    "kl_local",
    "MAX_LANGUAGE_SIZE",
    "MAX_STRING_LEN",
]

MAX_LANGUAGE_SIZE = 100_000
MAX_STRING_LEN = 16


@dataclass
class LocalPosterior:
    """The prior restricted to valid tokens, with its normalizing mass z."""

    post: Categorical
    z: float


def token_mask(prior: Categorical, c: TokenConstraint) -> LocalPosterior:
    """Exact local posterior by evaluating the constraint on every token.

    This is the full-vocabulary enumeration path: it always costs exactly
    ``vocab_size`` constraint evaluations and yields the exact z, unlike
    the rejection samplers which trade exact z for far fewer evaluations.
    Raises NoValidToken when no valid token has prior mass (z = 0).
    """
    valid = c.evaluate_many(np.arange(prior.vocab_size, dtype=np.int64))
    unnorm = np.where(valid, prior.probs, 0.0)
    z = float(unnorm.sum())
    if z <= 0.0:
        raise NoValidToken("constraint leaves no prior mass")
    return LocalPosterior(post=Categorical(unnorm / z), z=z)


def _check_bounds(lang: TrieLanguage):
    if len(lang) > MAX_LANGUAGE_SIZE:
        raise EnumerationLimitExceeded(f"language has {len(lang)} strings (limit {MAX_LANGUAGE_SIZE})")
    too_long = max((len(s) for s in lang.strings), default=0)
    if too_long > MAX_STRING_LEN:
        raise EnumerationLimitExceeded(f"language has a string of length {too_long} (limit {MAX_STRING_LEN})")


@dataclass
class GlobalPosterior:
    """Exact distribution over complete strings given the sequence constraint."""

    dist: dict[str, float]
    g: float


def global_posterior(lm: ToyLM, lang: TrieLanguage) -> GlobalPosterior:
    """Condition the model on membership in ``lang`` by full enumeration.

    Returns the posterior over satisfying strings together with g, the
    total prior probability of satisfying the constraint. Raises
    EmptyPosterior when g = 0.
    """
    _check_bounds(lang)
    masses = {s: lm.string_prob(s) for s in sorted(lang.strings)}
    g = math.fsum(masses.values())
    if g <= 0.0:
        raise EmptyPosterior("no string in the language has positive model probability")
    return GlobalPosterior(dist={s: m / g for s, m in masses.items() if m > 0}, g=g)


@dataclass
class LcdDistribution:
    """The product-of-locals string distribution and its per-string weights.

    ``dist[s]`` is the probability of producing ``s`` when every step
    samples from the locally renormalized posterior; ``weights[s]`` is the
    product of the local normalizing masses along the way. Reweighting
    ``dist`` by ``weights`` and normalizing recovers the global posterior.
    """

    dist: dict[str, float]
    weights: dict[str, float]


def lcd_distribution(lm: ToyLM, lang: TrieLanguage) -> LcdDistribution:
    """Enumerate the locally-constrained decoding distribution exactly."""
    _check_bounds(lang)
    if not lang.is_valid_prefix(""):
        raise EmptyPosterior("the language admits no valid prefix at the root")
    out_p: dict[str, float] = {}
    out_w: dict[str, float] = {}
    # Depth-first walk over valid prefixes, carrying the product of local
    # posteriors (path_p) and of local normalizing masses (path_w).
    stack = [("", 1.0, 1.0)]
    while stack:
        prefix, path_p, path_w = stack.pop()
        prior = lm.next_dist(prefix)
        local = token_mask(prior, lang.constraint_at(prefix))
        post = local.post.probs
        w = path_w * local.z
        p_eos = float(post[lang.eos])
        if p_eos > 0:
            out_p[prefix] = path_p * p_eos
            out_w[prefix] = w
        for i, ch in enumerate(lang.alphabet):
            q = float(post[i])
            if q > 0:
                stack.append((prefix + ch, path_p * q, w))
    return LcdDistribution(dist=out_p, weights=out_w)


def kl_local(post: Categorical, prior: Categorical) -> float:
    """KL divergence of the local posterior from the prior, in nats."""
    p = post.probs
    q = prior.probs
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))
