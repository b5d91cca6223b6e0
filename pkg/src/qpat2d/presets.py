"""Hand-tuned parameter sets for the two example scenes at each noise level.

Keys are "<scene>_<noise>" with scene in {a, b} and noise in
{noise_free, low_noise, high_noise} (0%, 0.1% and 10% of the mean signal).
Edge detection uses fewer stages as the noise grows: all three derivative
orders on clean data, data and first derivatives at low noise, the data
alone at high noise.
"""

from __future__ import annotations

from .edges import EdgeParams
from .variational import Hyperparams

BOX_LOWER = 0.01
BOX_UPPER = 3.0
EPSILON = 0.01

NOISE_LEVELS = {"noise_free": 0.0, "low_noise": 0.001, "high_noise": 0.10}

FUNCTIONAL = {
    "a_noise_free": dict(alpha_mu=1e-2, alpha_d=1e-4, beta_mu=1e-6, beta_d=1e-8,
                         zeta_mu=1e-6, zeta_d=1e-4),
    "a_low_noise": dict(alpha_mu=1e-2, alpha_d=1e-5, beta_mu=1e-6, beta_d=1e-8,
                        zeta_mu=1e-6, zeta_d=1e-3),
    "a_high_noise": dict(alpha_mu=1.0, alpha_d=5e-3, beta_mu=1e-5, beta_d=5e-6,
                         zeta_mu=1e-5, zeta_d=1e-3),
    "b_noise_free": dict(alpha_mu=1e-2, alpha_d=1e-4, beta_mu=1e-6, beta_d=1e-8,
                         zeta_mu=1e-6, zeta_d=1e-5),
    "b_low_noise": dict(alpha_mu=1e-2, alpha_d=1e-5, beta_mu=1e-6, beta_d=1e-8,
                        zeta_mu=1e-6, zeta_d=1e-3),
    "b_high_noise": dict(alpha_mu=1.0, alpha_d=1e-3, beta_mu=1e-5, beta_d=1e-7,
                         zeta_mu=1e-5, zeta_d=1e-3),
}

EDGE = {
    "a_noise_free": dict(sigma=(0.5, 0.5, 0.5), xi=(0.1, 0.1, 0.1),
                         gamma=1e-4, stages=(0, 1, 2)),
    "a_low_noise": dict(sigma=(0.5, 2.0), xi=(0.05, 0.06),
                        gamma=1e-5, stages=(0, 1)),
    "a_high_noise": dict(sigma=(1.5,), xi=(0.05,), gamma=1e-4, stages=(0,)),
    "b_noise_free": dict(sigma=(0.5, 0.5, 0.5), xi=(0.1, 0.1, 0.1),
                         gamma=1e-6, stages=(0, 1, 2)),
    "b_low_noise": dict(sigma=(0.5, 2.4), xi=(0.05, 0.06),
                        gamma=1e-7, stages=(0, 1)),
    "b_high_noise": dict(sigma=(1.5,), xi=(0.03,), gamma=1e-4, stages=(0,)),
}


def hyperparams(preset: str, **overrides) -> Hyperparams:
    base = dict(FUNCTIONAL[preset], epsilon=EPSILON, lower=BOX_LOWER,
                upper=BOX_UPPER)
    base.update(overrides)
    return Hyperparams(**base)


def edge_params(preset: str, **overrides) -> EdgeParams:
    base = dict(EDGE[preset])
    base.update(overrides)
    return EdgeParams(**base)
