"""Random-variate generators and log-densities used by the Gibbs sampler.

Everything takes an explicit generator (an ``RngStream`` or
``numpy.random.Generator``) so draws are reproducible and streams can be
used concurrently.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln, multigammaln


class ParameterError(ValueError):
    """Raised when a sampler is called outside its valid parameter regime."""


class NotSPDError(ValueError):
    """Raised when a matrix that must be SPD fails its Cholesky factorization."""

    def __init__(self, pivot: int):
        self.pivot = pivot
        super().__init__(f"matrix is not symmetric positive definite (pivot {pivot})")


def spd_cholesky(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, reporting the failing pivot on non-SPD input."""
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        # Locate the first failing leading minor for the error message.
        for k in range(1, a.shape[0] + 1):
            try:
                np.linalg.cholesky(a[:k, :k])
            except np.linalg.LinAlgError:
                raise NotSPDError(k - 1) from None
        raise NotSPDError(a.shape[0] - 1) from None


def sample_mvn(mean: np.ndarray, covariance: np.ndarray, rng) -> np.ndarray:
    """Draw from MVN(mean, covariance). Covariance must be SPD."""
    mean = np.asarray(mean, dtype=float)
    chol = spd_cholesky(np.asarray(covariance, dtype=float))
    z = rng.standard_normal(mean.shape[0])
    return mean + chol @ z


def sample_mvn_precision(mean_rhs: np.ndarray, precision: np.ndarray, rng) -> np.ndarray:
    """Draw from MVN with given precision matrix and mean = precision^-1 @ mean_rhs.

    Avoids forming the covariance: solve with the Cholesky factor of the
    precision.
    """
    chol = spd_cholesky(np.asarray(precision, dtype=float))
    # mean = P^-1 rhs
    tmp = np.linalg.solve(chol, mean_rhs)
    mean = np.linalg.solve(chol.T, tmp)
    z = rng.standard_normal(mean.shape[0])
    return mean + np.linalg.solve(chol.T, z)


def sample_inverse_gaussian(mu: float, lam: float, rng) -> float:
    """Exact inverse-Gaussian draw (Michael, Schucany & Haas)."""
    if mu <= 0 or lam <= 0:
        raise ParameterError(f"inverse-Gaussian requires mu, lambda > 0 (got {mu}, {lam})")
    v = rng.standard_normal()
    y = v * v
    # smaller quadratic root, written as mu / (1 + w + sqrt(w (w + 2))) so
    # large mu*y/lam cannot cancel it to zero
    w = mu * y / (2.0 * lam)
    x = mu / (1.0 + w + math.sqrt(w * (w + 2.0)))
    u = rng.random()
    if u <= mu / (mu + x):
        return float(x)
    return float(mu * mu / x)


def _gig_psi(x: float, alpha: float, lam: float) -> float:
    return -alpha * (math.cosh(x) - 1.0) - lam * (math.exp(x) - x - 1.0)


def _gig_dpsi(x: float, alpha: float, lam: float) -> float:
    return -alpha * math.sinh(x) - lam * (math.exp(x) - 1.0)


def sample_gig(p: float, a: float, b: float, rng) -> float:
    """Draw from the generalized inverse Gaussian distribution.

    Density proportional to x^(p-1) exp(-(a*x + b/x)/2) on x > 0, sampled
    with Devroye's (2014) rejection scheme for the two-parameter form.
    """
    if a <= 0 or b <= 0:
        raise ParameterError(f"giG requires a, b > 0 (got a={a}, b={b})")
    p = float(p)
    lam = p
    omega = math.sqrt(a * b)
    swap = False
    if lam < 0:
        lam = -lam
        swap = True
    alpha = math.sqrt(omega * omega + lam * lam) - lam

    # Devroye's envelope: a uniform piece flanked by two exponential tails.
    x = -_gig_psi(1.0, alpha, lam)
    if 0.5 <= x <= 2.0:
        t = 1.0
    elif x > 2.0:
        t = 1.0 if (alpha == 0 and lam == 0) else math.sqrt(2.0 / (alpha + lam))
    else:
        t = 1.0 if (alpha == 0 and lam == 0) else math.log(4.0 / (alpha + 2.0 * lam))

    x = -_gig_psi(-1.0, alpha, lam)
    if 0.5 <= x <= 2.0:
        s = 1.0
    elif x > 2.0:
        s = 1.0 if (alpha == 0 and lam == 0) else math.sqrt(4.0 / (alpha * math.cosh(1.0) + lam))
    else:
        if alpha == 0 and lam == 0:
            s = 1.0
        elif alpha == 0:
            s = 1.0 / lam
        elif lam == 0:
            s = math.log(1.0 + 1.0 / alpha + math.sqrt(1.0 / (alpha * alpha) + 2.0 / alpha))
        else:
            s = min(1.0 / lam, math.log(1.0 + 1.0 / alpha + math.sqrt(1.0 / (alpha * alpha) + 2.0 / alpha)))

    eta = -_gig_psi(t, alpha, lam)
    zeta = -_gig_dpsi(t, alpha, lam)
    theta = -_gig_psi(-s, alpha, lam)
    xi = _gig_dpsi(-s, alpha, lam)
    pp = 1.0 / xi
    r = 1.0 / zeta
    td = t - r * eta
    sd = s - pp * theta
    q = td + sd

    while True:
        u = rng.random()
        v = rng.random()
        w = rng.random()
        if u < q / (pp + q + r):
            rnd = -sd + q * v
        elif u < (q + r) / (pp + q + r):
            rnd = td - r * math.log(v)
        else:
            rnd = -sd + pp * math.log(v)
        if rnd > td:
            f1 = math.exp(-eta - zeta * (rnd - t))
        elif rnd < -sd:
            f1 = math.exp(-theta + xi * (rnd + s))
        else:
            f1 = 1.0
        if w * f1 <= math.exp(_gig_psi(rnd, alpha, lam)):
            break

    # Transform back to giG(lam, omega) and then to the (p, a, b) scale.
    val = math.exp(rnd) * (lam / omega + math.sqrt(1.0 + (lam / omega) ** 2))
    if swap:
        val = 1.0 / val
    return val / math.sqrt(a / b)


def sample_inverse_wishart(df: float, scale: np.ndarray, rng) -> np.ndarray:
    """Draw from the inverse-Wishart with E[X] = scale / (df - d - 1)."""
    scale = np.asarray(scale, dtype=float)
    d = scale.shape[0]
    if df <= d - 1:
        raise ParameterError(f"inverse-Wishart requires df > d - 1 (got df={df}, d={d})")
    chol_scale = spd_cholesky(scale)
    # Bartlett decomposition of Wishart(df, scale^-1), then invert.
    a = np.zeros((d, d))
    for i in range(d):
        a[i, i] = math.sqrt(rng.chisquare(df - i))
        for j in range(i):
            a[i, j] = rng.standard_normal()
    # W = L^-T A A^T L^-1 ~ Wishart(df, scale^-1) where L = chol(scale)
    m = np.linalg.solve(chol_scale.T, a)
    w = m @ m.T
    x = np.linalg.inv(w)
    return (x + x.T) / 2.0


def mvt_logpdf(x: np.ndarray, location: np.ndarray, scale: np.ndarray, df: float) -> float:
    """Log-density of the multivariate Student-t."""
    x = np.asarray(x, dtype=float)
    location = np.asarray(location, dtype=float)
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    d = location.shape[0]
    chol = spd_cholesky(scale)
    dev = np.linalg.solve(chol, x - location)
    maha = float(dev @ dev)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return float(
        gammaln((df + d) / 2.0)
        - gammaln(df / 2.0)
        - 0.5 * d * math.log(df * math.pi)
        - 0.5 * logdet
        - 0.5 * (df + d) * math.log1p(maha / df)
    )


def mvn_logpdf(x: np.ndarray, mean: np.ndarray, covariance: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    cov = np.atleast_2d(np.asarray(covariance, dtype=float))
    d = mean.shape[0]
    chol = spd_cholesky(cov)
    dev = np.linalg.solve(chol, x - mean)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return float(-0.5 * (d * math.log(2.0 * math.pi) + logdet + dev @ dev))


# -- thin wrappers over numpy's generators (kept for a uniform surface) ------

def sample_gamma(shape: float, rate: float, rng) -> float:
    """Gamma with mean shape/rate."""
    if shape <= 0 or rate <= 0:
        raise ParameterError(f"gamma requires shape, rate > 0 (got {shape}, {rate})")
    return float(rng.gamma(shape, 1.0 / rate))


def sample_inverse_gamma(shape: float, scale: float, rng) -> float:
    """Inverse-gamma with mean scale/(shape-1) for shape > 1."""
    if shape <= 0 or scale <= 0:
        raise ParameterError(f"inverse-gamma requires shape, scale > 0 (got {shape}, {scale})")
    return float(scale / rng.gamma(shape, 1.0))


def sample_dirichlet(alphas: np.ndarray, rng) -> np.ndarray:
    alphas = np.asarray(alphas, dtype=float)
    if np.any(alphas <= 0):
        raise ParameterError("dirichlet requires positive concentration parameters")
    return rng.dirichlet(alphas)


def sample_beta(a: float, b: float, rng) -> float:
    if a <= 0 or b <= 0:
        raise ParameterError(f"beta requires a, b > 0 (got {a}, {b})")
    return float(rng.beta(a, b))


def sample_exponential(rate: float, rng) -> float:
    if rate <= 0:
        raise ParameterError(f"exponential requires rate > 0 (got {rate})")
    return float(rng.exponential(1.0 / rate))


def sample_poisson(mean: float, rng) -> int:
    if mean < 0:
        raise ParameterError(f"poisson requires mean >= 0 (got {mean})")
    return int(rng.poisson(mean))


def sample_bernoulli(prob: float, rng) -> int:
    if not 0.0 <= prob <= 1.0:
        raise ParameterError(f"bernoulli requires prob in [0, 1] (got {prob})")
    return int(rng.random() < prob)


def log_multigamma(a: float, d: int) -> float:
    return float(multigammaln(a, d))
