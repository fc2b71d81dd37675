"""
Posterior probability that a reference method has the smaller mean distance.

Paired differences ``d = method - reference`` are modelled as Student-t::

    d_i ~ t(nu, mu, sigma)
    mu ~ Normal(0, 10 s)      sigma ~ HalfNormal(10 s)      nu - 1 ~ Exponential(mean 29)

with ``s`` the sample standard deviation of ``d``.  The posterior is explored by
random-walk Metropolis over ``(mu, log sigma, log(nu - 1))``; the answer is the fraction of
draws with ``mu > 0``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.special import gammaln

from cfrobust.errors import ParameterError

logger = logging.getLogger(__name__)

PRIOR_SCALE = 10.0
NU_MINUS_ONE_MEAN = 29.0
TARGET_ACCEPTANCE = 0.3
RHAT_LIMIT = 1.1

PRIORS: dict[str, str] = {
    "mu": f"Normal(0, {PRIOR_SCALE:g} * sd(diffs))",
    "sigma": f"HalfNormal({PRIOR_SCALE:g} * sd(diffs))",
    "nu": f"1 + Exponential(mean {NU_MINUS_ONE_MEAN:g})",
}


@dataclass(frozen=True)
class MCMCConfig:
    chains: int = 4
    draws: int = 2000
    warmup: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.chains < 2 or self.draws < 10 or self.warmup < 0:
            raise ParameterError("need chains >= 2, draws >= 10 and warmup >= 0")


@dataclass(frozen=True)
class PosteriorResult:
    p_best: float
    mcse: float
    rhat: float
    converged: bool
    acceptance: float
    n_draws: int
    degenerate: bool = False
    nu: float | None = None
    warnings: tuple[str, ...] = field(default_factory=tuple)


def student_t_logpdf(
    z: np.ndarray, mu: np.ndarray, sigma: np.ndarray, nu: np.ndarray
) -> np.ndarray:
    """Elementwise log density; parameters broadcast against ``z``."""
    u = (z - mu) / sigma
    return (
        gammaln((nu + 1.0) / 2.0)
        - gammaln(nu / 2.0)
        - 0.5 * np.log(nu * math.pi)
        - np.log(sigma)
        - (nu + 1.0) / 2.0 * np.log1p(u * u / nu)
    )


def _log_posterior(theta: np.ndarray, z: np.ndarray, nu_fixed: float | None) -> np.ndarray:
    """Unnormalized log posterior of standardized data for each chain's ``theta`` row."""
    mu, log_sigma = theta[:, 0], theta[:, 1]
    sigma = np.exp(log_sigma)
    if nu_fixed is None:
        log_nu1 = theta[:, 2]
        nu = 1.0 + np.exp(log_nu1)
        prior_nu = -np.exp(log_nu1) / NU_MINUS_ONE_MEAN + log_nu1
    else:
        nu = np.full_like(mu, nu_fixed)
        prior_nu = np.zeros_like(mu)
    lik = student_t_logpdf(z[None, :], mu[:, None], sigma[:, None], nu[:, None]).sum(axis=1)
    prior_mu = -0.5 * (mu / PRIOR_SCALE) ** 2
    prior_sigma = -0.5 * (sigma / PRIOR_SCALE) ** 2 + log_sigma
    out = lik + prior_mu + prior_sigma + prior_nu
    return np.where(np.isfinite(out), out, -np.inf)


def split_rhat(samples: np.ndarray) -> float:
    """Split-chain potential scale reduction of a ``(chains, draws)`` array."""
    half = samples.shape[1] // 2
    parts = np.concatenate([samples[:, :half], samples[:, half: 2 * half]], axis=0)
    n = parts.shape[1]
    within = parts.var(axis=1, ddof=1).mean()
    between = n * parts.mean(axis=1).var(ddof=1)
    if within == 0:
        return 1.0 if between == 0 else math.inf
    var_plus = (n - 1) / n * within + between / n
    return float(math.sqrt(var_plus / within))


def batch_means_se(indicator: np.ndarray) -> float:
    """Monte-Carlo standard error of the mean of a ``(chains, draws)`` array."""
    flat = indicator.reshape(indicator.shape[0], -1)
    size = max(1, int(math.sqrt(flat.shape[1])))
    n_batches = flat.shape[1] // size
    means = flat[:, : n_batches * size].reshape(flat.shape[0], n_batches, size).mean(axis=2).ravel()
    if len(means) < 2:
        return 0.0
    return float(means.std(ddof=1) / math.sqrt(len(means)))


def _sample(z: np.ndarray, cfg: MCMCConfig, nu_fixed: float | None) -> tuple[np.ndarray, float]:
    n = len(z)
    k = 2 if nu_fixed is not None else 3
    rng = np.random.default_rng(cfg.seed)

    theta = np.empty((cfg.chains, k))
    theta[:, 0] = z.mean() + rng.standard_normal(cfg.chains) * z.std() / math.sqrt(n)
    theta[:, 1] = math.log(max(z.std(), 1e-12)) + 0.1 * rng.standard_normal(cfg.chains)
    if k == 3:
        theta[:, 2] = math.log(NU_MINUS_ONE_MEAN) + 0.5 * rng.standard_normal(cfg.chains)
    step = np.array([1.0 / math.sqrt(n), 1.0 / math.sqrt(2.0 * n), 1.0][:k]) * 2.4 / math.sqrt(k)
    log_scale = np.zeros(cfg.chains)
    current = _log_posterior(theta, z, nu_fixed)

    kept = np.empty((cfg.chains, cfg.draws))
    accepted = np.zeros(cfg.chains)
    window = np.zeros(cfg.chains)
    for it in range(cfg.warmup + cfg.draws):
        proposal = theta + rng.standard_normal((cfg.chains, k)) * step * np.exp(log_scale)[:, None]
        proposed = _log_posterior(proposal, z, nu_fixed)
        accept = np.log(rng.random(cfg.chains)) < proposed - current
        theta = np.where(accept[:, None], proposal, theta)
        current = np.where(accept, proposed, current)
        if it < cfg.warmup:
            window += accept
            if (it + 1) % 50 == 0:
                log_scale += (window / 50.0 - TARGET_ACCEPTANCE) * 2.0
                window[:] = 0.0
        else:
            kept[:, it - cfg.warmup] = theta[:, 0]
            accepted += accept
    return kept, float(accepted.sum() / (cfg.chains * cfg.draws))


def posterior_p_best(
    diffs: Sequence[float],
    mcmc: MCMCConfig | None = None,
    *,
    nu: float | None = None,
) -> PosteriorResult:
    """``P(mu > 0 | diffs)`` for differences ``method - reference``.

    ``nu`` fixes the degrees of freedom instead of sampling them.  Negating ``diffs`` gives
    exactly ``1 - p_best``: the sampler always runs on data with a nonnegative mean.
    """
    d = np.asarray(diffs, dtype=float)
    if d.ndim != 1 or len(d) < 5:
        raise ParameterError(f"posterior_p_best needs at least 5 differences, got {d.shape}")
    if not np.all(np.isfinite(d)):
        raise ParameterError("differences must be finite")
    if nu is not None and not nu > 0:
        raise ParameterError(f"nu must be positive, got {nu}")
    cfg = mcmc or MCMCConfig()

    sd = float(d.std(ddof=1))
    if sd == 0.0:
        c = float(d[0])
        p = 1.0 if c > 0 else 0.0 if c < 0 else 0.5
        return PosteriorResult(p, 0.0, 1.0, True, 0.0, 0, degenerate=True, nu=nu)

    flip = float(d.mean()) < 0
    z = (-d if flip else d) / sd
    samples, acceptance = _sample(z, cfg, nu)
    p = float(np.mean(samples > 0))
    mcse = batch_means_se((samples > 0).astype(float))
    rhat = split_rhat(samples)
    warnings: list[str] = []
    if not rhat <= RHAT_LIMIT:
        msg = f"posterior sampler did not converge (split R-hat {rhat:.3f} > {RHAT_LIMIT})"
        logger.warning(msg)
        warnings.append(msg)
    return PosteriorResult(
        p_best=1.0 - p if flip else p,
        mcse=mcse,
        rhat=rhat,
        converged=not warnings,
        acceptance=acceptance,
        n_draws=samples.size,
        nu=nu,
        warnings=tuple(warnings),
    )


def metadata() -> dict[str, Any]:
    """Model description recorded next to every comparison table."""
    return {"likelihood": "Student-t", "priors": dict(PRIORS), "sampler": "random-walk Metropolis",
            "target_acceptance": TARGET_ACCEPTANCE, "rhat_limit": RHAT_LIMIT}
