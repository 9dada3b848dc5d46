"""SIG cross-entropy estimator, GAN losses and the GAN-SI combination.

All discriminator-based losses take raw logits and use
``log sigmoid(t) = -softplus(-t)`` and ``log(1 - sigmoid(t)) = -softplus(t)``.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import autodiff as ad
from .models import log_obs_density

LAMBDA_MIN = 1e-4
LAMBDA_MAX = 1e4


@dataclass
class LossValue:
    tensor: ad.Tensor
    value: float
    breakdown: dict = field(default_factory=dict)

    @classmethod
    def of(cls, t, **breakdown):
        return cls(t, float(t.value), breakdown)


def _nonempty(t, what):
    if t.value.size == 0:
        raise ValueError(f"{what} is empty")


def sig_loss_HM(obs, x_batch, theta_batch, fused=True):
    """Monte-Carlo estimate of H_M: ``-(1/N) sum_i log (1/M) sum_j p(x_i | theta_j)``.

    Computed in log space. ``fused`` routes the pairwise loop through the
    kernel-backed primitive; ``fused=False`` composes it from elementary ops.
    """
    x = ad.constant(x_batch)
    theta = ad.constant(theta_batch)
    _nonempty(x, "x batch")
    _nonempty(theta, "theta batch")
    n, m = x.shape[0], theta.shape[0]
    log_m = math.log(m)
    if fused and obs.kind == "gaussian":
        d = theta.shape[1]
        norm = -0.5 * d * math.log(2 * math.pi * obs.sigma ** 2)
        lme = ad.gaussian_lme(ad.constant(x.value.reshape(n, d)), theta, obs.sigma)
        loss = -lme + (log_m - norm)
    elif fused:
        xv = x.value.reshape(-1)
        if np.any(xv < 0) or np.any(xv != np.floor(xv)):
            raise ValueError("poisson observations must be nonnegative integers")
        lme = ad.poisson_lme(xv, theta)
        loss = -lme + (log_m + float(np.mean(special.gammaln(xv + 1.0))))
    else:
        logp = log_obs_density(obs, x, theta)
        loss = -ad.mean(ad.logsumexp(logp, axis=1)) + log_m
    return LossValue.of(loss, sig_term=float(loss.value))


def gan_disc_loss(real_logits, fake_logits):
    """``-mean log D(x_real) - mean log(1 - D(x_fake))`` from logits."""
    real, fake = ad.constant(real_logits), ad.constant(fake_logits)
    _nonempty(real, "real logits")
    _nonempty(fake, "fake logits")
    loss = ad.mean(ad.softplus(-real)) + ad.mean(ad.softplus(fake))
    return LossValue.of(loss)


def gan_gen_loss(fake_logits):
    """Non-saturating generator loss ``-mean log D(g(z))``."""
    fake = ad.constant(fake_logits)
    _nonempty(fake, "fake logits")
    loss = ad.mean(ad.softplus(-fake))
    return LossValue.of(loss, gan_term=float(loss.value))


def gan_gen_loss_exp_logit(fake_logits):
    """Diagnostic variant ``0.5 * mean exp(logit(D(g(z))))``; not used for training by default."""
    fake = ad.constant(fake_logits)
    _nonempty(fake, "fake logits")
    loss = 0.5 * ad.mean(ad.exp(fake))
    return LossValue.of(loss, gan_term=float(loss.value))


def gan_si_gen_loss(fake_logits, obs, x_batch, theta_batch, lam, gan_weight=1.0, fused=True):
    """GAN generator loss plus ``lam`` times the SIG cross-entropy on the same theta draws.

    Terms with zero weight are left out of the graph entirely.
    """
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    gan = gan_gen_loss(fake_logits) if gan_weight != 0 else None
    sig = sig_loss_HM(obs, x_batch, theta_batch, fused=fused) if lam != 0 else None
    return combine_generator_terms(gan, sig, lam, gan_weight)


def combine_generator_terms(gan, sig, lam, gan_weight=1.0):
    """``gan_weight * gan + lam * sig`` from already-built term losses (either may be None)."""
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    terms = []
    if gan is not None and gan_weight != 0:
        terms.append(gan.tensor if gan_weight == 1 else gan.tensor * gan_weight)
    if sig is not None and lam != 0:
        terms.append(sig.tensor * lam)
    if not terms:
        raise ValueError("both loss terms have zero weight")
    total = terms[0] if len(terms) == 1 else terms[0] + terms[1]
    return LossValue(total, float(total.value), {
        "gan_term": gan.value if gan is not None else 0.0,
        "sig_term": sig.value if sig is not None else 0.0,
        "lambda": lam,
        "gan_weight": gan_weight,
    })


def auto_lambda(gan_term_ema, sig_term_ema):
    """Weight putting both generator terms on the same scale, clamped to [1e-4, 1e4]."""
    gan, sig = abs(gan_term_ema), abs(sig_term_ema)
    if sig == 0:
        warnings.warn("SIG term EMA is zero; lambda clamped to its upper bound", RuntimeWarning)
        return LAMBDA_MAX
    return float(min(max(gan / sig, LAMBDA_MIN), LAMBDA_MAX))


@dataclass
class LambdaController:
    """Tracks EMAs of both generator terms and refreshes lambda every ``interval`` steps.

    The EMAs start at zero; with equal decay the ratio is unaffected by that
    start-up bias.
    """

    fixed: float = None
    decay: float = 0.99
    interval: int = 100
    gan_ema: float = 0.0
    sig_ema: float = 0.0
    current: float = 1.0
    updates: int = 0

    def value(self, step):
        if self.fixed is not None:
            return self.fixed
        return self.current

    def observe(self, step, gan_term, sig_term):
        """Fold in this step's term values; recompute lambda on interval boundaries."""
        self.gan_ema = self.decay * self.gan_ema + (1 - self.decay) * gan_term
        self.sig_ema = self.decay * self.sig_ema + (1 - self.decay) * sig_term
        self.updates += 1
        if self.fixed is None and step % self.interval == 0:
            self.current = auto_lambda(self.gan_ema, self.sig_ema)

    def state(self):
        return {"gan_ema": self.gan_ema, "sig_ema": self.sig_ema, "current": self.current, "updates": self.updates}

    def load_state(self, d):
        self.gan_ema = d["gan_ema"]
        self.sig_ema = d["sig_ema"]
        self.current = d["current"]
        self.updates = d["updates"]
