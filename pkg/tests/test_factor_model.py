"""Factor layer: loading updates, shrinkage auxiliaries, latent-factor
conditionals, and cluster scale updates."""

import math

import numpy as np
import pytest
from scipy import stats

from longmix import factor_model as fm
from longmix.rng import RngStream


def make_factor(q=3, d=2, seed=0):
    g = RngStream(seed)
    lam = g.standard_normal((q, d))
    eta = g.standard_normal((8, d))
    sigma = np.array([0.5, 1.0, 2.0])[:q]
    return fm.FactorState(lam=lam, sigma_beta_diag=sigma, eta=eta)


def test_niw_params_validation():
    p = fm.NIWParams(mu0=np.zeros(2), delta0=3.0, kappa0=0.5, nu0=4.0)
    np.testing.assert_array_equal(p.delta0, 3.0 * np.eye(2))
    assert p.d == 2
    with pytest.raises(ValueError, match="kappa0"):
        fm.NIWParams(mu0=np.zeros(2), delta0=np.eye(2), kappa0=0.0, nu0=4.0)
    with pytest.raises(ValueError, match="nu0"):
        fm.NIWParams(mu0=np.zeros(3), delta0=np.eye(3), kappa0=1.0, nu0=1.5)


def test_update_lambda_matches_conjugate_posterior():
    """Monte Carlo check of one row's posterior mean and variance."""
    factor = make_factor(q=2, d=2, seed=1)
    g = RngStream(2)
    beta = factor.eta @ factor.lam.T + g.standard_normal((8, 2))
    dl = fm.DLState(varphi=np.full((2, 2), 1.3), phi=np.full((2, 2), 0.25),
                    tau=2.0, a=0.5)
    # independent derivation of row 0's conditional
    dk = dl.tau**2 * dl.varphi[0] * dl.phi[0] ** 2
    prec = np.diag(1.0 / dk) + factor.eta.T @ factor.eta / factor.sigma_beta_diag[0]
    cov = np.linalg.inv(prec)
    mean = cov @ (factor.eta.T @ beta[:, 0] / factor.sigma_beta_diag[0])

    n_mc = 20000
    draws = np.array([fm.update_lambda(factor, dl, beta, RngStream(100 + i))[0]
                      for i in range(n_mc)])
    for j in range(2):
        se = draws[:, j].std(ddof=1) / math.sqrt(n_mc)
        assert abs(draws[:, j].mean() - mean[j]) < 5 * se
        assert draws[:, j].var(ddof=1) == pytest.approx(cov[j, j], rel=0.1)


def prior_dl_state(q, d, a, g):
    phi = g.dirichlet(np.full(q * d, a)).reshape(q, d)
    varphi = g.exponential(2.0, size=(q, d))
    tau = float(g.gamma(q * d * a, 2.0))
    return fm.DLState(varphi=varphi, phi=phi, tau=tau, a=a)


def test_dl_auxiliaries_preserve_the_prior():
    """Successive-conditional check of the shrinkage block.

    Alternating (loadings | auxiliaries) prior draws with the auxiliary
    update must keep the joint at its prior; compare the stationary
    marginals of a loading and of the global scale against fresh prior
    samples.
    """
    q, d, a = 2, 2, 0.5
    g = RngStream(3)
    dl = prior_dl_state(q, d, a, g)
    lam_samples, tau_samples = [], []
    n_rounds, thin = 30000, 10
    for r in range(n_rounds):
        sd = dl.tau * dl.phi * np.sqrt(dl.varphi)
        lam = sd * g.standard_normal((q, d))
        dl = fm.update_dl_auxiliaries(dl, lam, g)
        if r % thin == 0:
            lam_samples.append(lam[0, 0])
            tau_samples.append(dl.tau)
    g2 = RngStream(4)
    ref_lam, ref_tau = [], []
    for _ in range(len(lam_samples)):
        ref = prior_dl_state(q, d, a, g2)
        ref_lam.append(float(ref.tau * ref.phi[0, 0] * math.sqrt(ref.varphi[0, 0])
                             * g2.standard_normal()))
        ref_tau.append(ref.tau)
    assert stats.ks_2samp(lam_samples, ref_lam).pvalue > 0.01
    assert stats.ks_2samp(tau_samples, ref_tau).pvalue > 0.01


def test_dl_update_keeps_phi_normalized():
    g = RngStream(5)
    dl = prior_dl_state(3, 2, 0.5, g)
    lam = g.standard_normal((3, 2))
    new = fm.update_dl_auxiliaries(dl, lam, g)
    assert new.phi.sum() == pytest.approx(1.0)
    assert np.all(new.phi > 0)
    assert np.all(new.varphi > 0)
    assert new.tau > 0


def test_dl_update_handles_zero_loadings():
    g = RngStream(6)
    dl = prior_dl_state(2, 2, 0.5, g)
    new = fm.update_dl_auxiliaries(dl, np.zeros((2, 2)), g)
    assert np.all(np.isfinite(new.phi))
    assert np.isfinite(new.tau)


def test_update_sigma_beta_matches_inverse_gamma_posterior():
    factor = make_factor(q=2, d=1, seed=7)
    g = RngStream(8)
    beta = factor.eta @ factor.lam.T + g.standard_normal((8, 2))
    a_om, b_om = 2.0, 1.5
    resid = beta - factor.eta @ factor.lam.T
    ss = float(resid[:, 0] @ resid[:, 0])
    draws = np.array([fm.update_sigma_beta(factor, beta, a_om, b_om, RngStream(200 + i))[0]
                      for i in range(5000)])
    ref = stats.invgamma(a_om + 4.0, scale=b_om + 0.5 * ss)
    assert stats.kstest(draws, ref.cdf).pvalue > 0.01


def test_delta_posterior_scale_formula():
    niw = fm.NIWParams(mu0=np.array([1.0, -1.0]), delta0=2.0 * np.eye(2),
                       kappa0=0.5, nu0=5.0)
    g = RngStream(9)
    members = g.standard_normal((6, 2)) + np.array([2.0, 0.0])
    df, scale = fm.delta_posterior_scale(members, niw)
    assert df == 11.0
    bar = members.mean(axis=0)
    dev = members - bar
    diff = bar - niw.mu0
    expect = niw.delta0 + dev.T @ dev + (0.5 * 6 / 6.5) * np.outer(diff, diff)
    np.testing.assert_allclose(scale, expect)
    # empty cluster falls back to the prior
    df0, scale0 = fm.delta_posterior_scale(np.zeros((0, 2)), niw)
    assert df0 == 5.0
    np.testing.assert_array_equal(scale0, niw.delta0)


def test_update_delta_empty_cluster_is_prior_draw():
    niw = fm.NIWParams(mu0=np.zeros(1), delta0=np.array([[2.0]]), kappa0=1.0, nu0=5.0)
    draws = np.array([fm.update_delta(np.zeros((0, 1)), niw, RngStream(300 + i))[0, 0]
                      for i in range(5000)])
    ref = stats.invgamma(5.0 / 2, scale=2.0 / 2)
    assert stats.kstest(draws, ref.cdf).pvalue > 0.01


def eta_setup(d=2):
    g = RngStream(10)
    lam = g.standard_normal((4, d))
    sigma = np.array([0.5, 1.0, 1.5, 0.8])
    beta_i = g.standard_normal(4)
    delta = np.eye(d) + 0.2
    etabar = g.standard_normal(d)
    return beta_i, lam, sigma, delta, etabar


def test_eta_conditional_standard_mode_formula():
    beta_i, lam, sigma, delta, etabar = eta_setup()
    kappa0, n_minus = 0.5, 3
    mean, cov = fm.eta_conditional(beta_i, lam, sigma, delta, n_minus, etabar,
                                   kappa0, "standard")
    lik_prec = lam.T @ np.diag(1.0 / sigma) @ lam
    mu_hat = n_minus * etabar / (kappa0 + n_minus)
    omega = np.linalg.inv(lik_prec + np.linalg.inv(delta))
    expect_mean = omega @ (lam.T @ np.diag(1.0 / sigma) @ beta_i
                           + np.linalg.inv(delta) @ mu_hat)
    np.testing.assert_allclose(cov, omega, atol=1e-12)
    np.testing.assert_allclose(mean, expect_mean, atol=1e-12)


def test_eta_conditional_paper_mode_inflates_covariance():
    beta_i, lam, sigma, delta, etabar = eta_setup()
    kappa0, n_minus = 0.5, 3
    m_std, omega = fm.eta_conditional(beta_i, lam, sigma, delta, n_minus, etabar,
                                      kappa0, "standard")
    m_inf, cov = fm.eta_conditional(beta_i, lam, sigma, delta, n_minus, etabar,
                                    kappa0, "inflated")
    np.testing.assert_allclose(m_inf, m_std, atol=1e-12)
    kappa_hat = kappa0 + n_minus
    expect = omega + omega @ np.linalg.inv(kappa_hat * delta) @ omega
    np.testing.assert_allclose(cov, expect, atol=1e-12)
    # strictly larger along the diagonal
    assert np.all(np.diag(cov) > np.diag(omega))


def test_eta_conditional_collapsed_matches_quadrature():
    """Quadrature oracle: density = likelihood x predictive prior where the
    predictive prior (cluster mean marginalized over its conditional given
    the other members) is N(mu_hat, Delta (kappa_hat + 1) / kappa_hat)."""
    beta_i, lam, sigma, delta, etabar = eta_setup(d=1)
    kappa0, n_minus = 0.8, 4
    mean_c, cov_c = fm.eta_conditional(beta_i, lam, sigma, delta, n_minus, etabar,
                                       kappa0, "collapsed")
    kappa_hat = kappa0 + n_minus
    mu_hat = float(n_minus * etabar[0] / kappa_hat)
    pred_var = delta[0, 0] * (kappa_hat + 1.0) / kappa_hat
    grid = np.linspace(-20, 20, 200001)
    loglik = np.zeros_like(grid)
    for k in range(4):
        loglik += -0.5 * (beta_i[k] - lam[k, 0] * grid) ** 2 / sigma[k]
    logprior = -0.5 * (grid - mu_hat) ** 2 / pred_var
    w = np.exp(loglik + logprior - (loglik + logprior).max())
    w /= w.sum()
    m = float(w @ grid)
    v = float(w @ (grid - m) ** 2)
    assert mean_c[0] == pytest.approx(m, abs=1e-6)
    assert cov_c[0, 0] == pytest.approx(v, rel=1e-6)


def test_eta_conditional_unknown_mode():
    beta_i, lam, sigma, delta, etabar = eta_setup()
    with pytest.raises(ValueError, match="unknown eta update mode"):
        fm.eta_conditional(beta_i, lam, sigma, delta, 2, etabar, 0.5, "exactish")


def test_update_eta_uses_base_mean():
    beta_i, lam, sigma, delta, etabar = eta_setup()
    mu0 = np.array([5.0, -5.0])
    m0, _ = fm.eta_conditional(beta_i, lam, sigma, delta, 0, etabar, 1.0,
                               "standard")
    m1, _ = fm.eta_conditional(beta_i, lam, sigma, delta, 0, etabar, 1.0,
                               "standard", mu0=mu0)
    assert not np.allclose(m0, m1)
