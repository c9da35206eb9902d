"""Constrained categorical sampling with unbiased normalizing-mass estimates.

The library provides, at desk scale and with exact reference oracles:

- dense categorical distributions and without-replacement key orderings
  (:mod:`zest.dist`);
- local token constraints with evaluation counting (:mod:`zest.constraints`);
- the family of exact and budgeted weighted rejection samplers
  (:mod:`zest.samplers`);
- exact enumeration oracles (:mod:`zest.oracle`) and tiny autoregressive
  models with finite support (:mod:`zest.toylm`);
- sequential Monte Carlo with properly weighted proposals (:mod:`zest.smc`);
- analytic expected-cost laws (:mod:`zest.analytics`) and the batch
  experiment harness (:mod:`zest.simharness`).
"""

from . import analytics, constraints, dist, errors, oracle, rng, samplers, smc, toylm
from .constraints import DfaPattern, TokenConstraint, TrieLanguage
from .dist import Categorical, KeyedOrdering, normalize, remove_renormalize, sample, swor_keys
from .oracle import LocalPosterior, global_posterior, lcd_distribution, token_mask
from .rng import make_rng
from .samplers import (
    SamplerConfig,
    WeightedToken,
    ars,
    awrs,
    awrs_sorted,
    cawrs,
    cwrs,
    gawrs,
    rawrs,
    rs,
    top_p_compose,
    wrs,
)
from .smc import Ensemble, Particle, ess, importance_sample, lcd_generate, sample_verify, smc_pwp, smc_twist
from .toylm import ToyLM, example_a1, random_lm

__version__ = "0.1.0"
