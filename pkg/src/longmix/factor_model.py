"""Sparse factor layer on the stacked random effects.

Holds the loading matrix with its global-local shrinkage auxiliaries, the
diagonal residual covariance of the stacked effects, the latent factors,
and the per-cluster scale matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distributions import (
    NotSPDError,
    sample_gig,
    sample_inverse_gamma,
    sample_inverse_gaussian,
    sample_inverse_wishart,
    spd_cholesky,
)

LAMBDA_FLOOR = 1e-10  # |loading| floor inside auxiliary updates (0 is outside their domain)


@dataclass
class NIWParams:
    """Normal-inverse-Wishart base measure over cluster (mean, scale)."""

    mu0: np.ndarray
    delta0: np.ndarray
    kappa0: float
    nu0: float

    def __post_init__(self):
        self.mu0 = np.asarray(self.mu0, dtype=float)
        d = self.mu0.shape[0]
        delta0 = np.asarray(self.delta0, dtype=float)
        if delta0.ndim == 0:
            delta0 = float(delta0) * np.eye(d)
        self.delta0 = delta0
        if self.kappa0 <= 0:
            raise ValueError("kappa0 must be positive")
        if self.nu0 <= d - 1:
            raise ValueError(f"nu0 must exceed d - 1 = {d - 1}")
        spd_cholesky(self.delta0)

    @property
    def d(self) -> int:
        return self.mu0.shape[0]


@dataclass
class FactorState:
    lam: np.ndarray  # (q, d) loadings
    sigma_beta_diag: np.ndarray  # (q,) residual variances of stacked effects
    eta: np.ndarray  # (N, d) latent factors

    @property
    def q(self) -> int:
        return self.lam.shape[0]

    @property
    def d(self) -> int:
        return self.lam.shape[1]


@dataclass
class DLState:
    """Dirichlet-Laplace auxiliaries for the loadings prior."""

    varphi: np.ndarray  # (q, d) local scales (psi in the hierarchical form)
    phi: np.ndarray  # (q, d) Dirichlet weights, summing to 1 over all entries
    tau: float
    a: float

    @classmethod
    def initial(cls, q: int, d: int, a: float, rng) -> "DLState":
        phi = rng.dirichlet(np.full(q * d, a)).reshape(q, d)
        varphi = rng.exponential(2.0, size=(q, d))
        tau = float(rng.gamma(q * d * a, 2.0))
        return cls(varphi=varphi, phi=phi, tau=tau, a=a)


def update_lambda(factor: FactorState, dl: DLState, beta: np.ndarray, rng) -> np.ndarray:
    """Row-wise conjugate refresh of the loading matrix."""
    eta = factor.eta
    d = factor.d
    ete = eta.T @ eta
    lam = np.empty_like(factor.lam)
    for k in range(factor.q):
        dk = dl.tau**2 * dl.varphi[k] * dl.phi[k] ** 2
        prec = np.diag(1.0 / dk) + ete / factor.sigma_beta_diag[k]
        rhs = eta.T @ beta[:, k] / factor.sigma_beta_diag[k]
        try:
            chol = spd_cholesky(prec)
        except NotSPDError as exc:
            raise NotSPDError(exc.pivot) from ValueError(f"singular loading posterior at row {k}")
        mean = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
        lam[k] = mean + np.linalg.solve(chol.T, rng.standard_normal(d))
    return lam


def update_dl_auxiliaries(dl: DLState, lam: np.ndarray, rng) -> DLState:
    """Refresh the shrinkage auxiliaries given current loadings.

    Order matters: the Dirichlet weights are drawn marginally of (tau,
    varphi), then tau given the weights, then the local scales given both.
    """
    q, d = lam.shape
    abs_lam = np.maximum(np.abs(lam), LAMBDA_FLOOR)

    t = np.empty((q, d))
    for k in range(q):
        for h in range(d):
            t[k, h] = sample_gig(dl.a - 1.0, 1.0, 2.0 * abs_lam[k, h], rng)
    phi = t / t.sum()

    tau = sample_gig(q * d * (dl.a - 1.0), 1.0, 2.0 * float(np.sum(abs_lam / phi)), rng)

    varphi = np.empty((q, d))
    for k in range(q):
        for h in range(d):
            mu = tau * phi[k, h] / abs_lam[k, h]
            varphi[k, h] = 1.0 / sample_inverse_gaussian(mu, 1.0, rng)
    return DLState(varphi=varphi, phi=phi, tau=tau, a=dl.a)


def update_sigma_beta(factor: FactorState, beta: np.ndarray, a_omega: float,
                      b_omega: float, rng) -> np.ndarray:
    """Refresh the diagonal residual variances of the stacked effects."""
    n = beta.shape[0]
    resid = beta - factor.eta @ factor.lam.T
    out = np.empty(factor.q)
    for k in range(factor.q):
        out[k] = sample_inverse_gamma(a_omega + 0.5 * n,
                                      b_omega + 0.5 * float(resid[:, k] @ resid[:, k]), rng)
    return out


def delta_posterior_scale(members: np.ndarray, niw: NIWParams) -> tuple[float, np.ndarray]:
    """Posterior (df, scale) of a cluster's scale matrix, mean marginalized."""
    n = members.shape[0] if members.ndim == 2 else 0
    if n == 0:
        return niw.nu0, niw.delta0.copy()
    bar = members.mean(axis=0)
    dev = members - bar
    scatter = dev.T @ dev
    shrink = niw.kappa0 * n / (niw.kappa0 + n)
    diff = bar - niw.mu0
    scale = niw.delta0 + scatter + shrink * np.outer(diff, diff)
    return niw.nu0 + n, scale


def update_delta(members: np.ndarray, niw: NIWParams, rng) -> np.ndarray:
    """Draw a cluster scale matrix; an empty cluster draws from the prior."""
    df, scale = delta_posterior_scale(members, niw)
    return sample_inverse_wishart(df, scale, rng)


def eta_conditional(beta_i: np.ndarray, lam: np.ndarray, sigma_beta_diag: np.ndarray,
                    delta_h: np.ndarray, n_minus: int, etabar_minus: np.ndarray,
                    kappa0: float, mode: str,
                    mu0: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of one latent factor's conditional.

    ``mode`` selects the inflated-covariance form ('inflated': covariance
    Omega + Omega (kappa_hat Delta)^-1 Omega, a Gaussian approximation that
    widens the conjugate draw to account for cluster-mean uncertainty), the
    plain conjugate form ('standard'), or the exact conditional with the
    cluster mean marginalized ('collapsed').
    """
    d = lam.shape[1]
    lt_sinv = lam.T / sigma_beta_diag
    lik_prec = lt_sinv @ lam
    lik_rhs = lt_sinv @ beta_i
    kappa_hat = kappa0 + n_minus
    base_mean = np.zeros(d) if mu0 is None else mu0
    mu_hat = (kappa0 * base_mean + n_minus * etabar_minus) / kappa_hat
    delta_inv = np.linalg.inv(delta_h)

    if mode == "collapsed":
        # Predictive prior eta_i | eta_{-i}, Delta is MVN(mu_hat,
        # Delta (kappa_hat + 1)/kappa_hat); combine with the likelihood.
        prior_prec = delta_inv * (kappa_hat / (kappa_hat + 1.0))
        prec = lik_prec + prior_prec
        cov = np.linalg.inv(prec)
        mean = cov @ (lik_rhs + prior_prec @ mu_hat)
        return mean, cov

    omega = np.linalg.inv(lik_prec + delta_inv)
    rho = lik_rhs + delta_inv @ mu_hat
    mean = omega @ rho
    if mode == "standard":
        return mean, omega
    if mode == "inflated":
        cov = omega + omega @ np.linalg.inv(kappa_hat * delta_h) @ omega
        return mean, cov
    raise ValueError(f"unknown eta update mode {mode!r}")


def update_eta(beta_i: np.ndarray, factor: FactorState, delta_h: np.ndarray,
               n_minus: int, etabar_minus: np.ndarray, kappa0: float, rng,
               mode: str = "inflated", mu0: np.ndarray | None = None) -> np.ndarray:
    mean, cov = eta_conditional(beta_i, factor.lam, factor.sigma_beta_diag, delta_h,
                                n_minus, etabar_minus, kappa0, mode, mu0=mu0)
    chol = spd_cholesky(cov)
    return mean + chol @ rng.standard_normal(mean.shape[0])
