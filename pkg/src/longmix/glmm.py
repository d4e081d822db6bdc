"""Per-feature generalized linear mixed model updates.

Each feature gets its own regression: fixed effects gamma_r, per-individual
random-effect block beta_ir (intercept or intercept plus slope), and for
Gaussian features a residual variance sigma2_r. Gaussian blocks have exact
conjugate updates; Poisson and binomial blocks use adaptive random-walk
Metropolis steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data_model import FAMILIES, LongitudinalDataset
from .distributions import sample_inverse_gamma

GAMMA_PRIOR_VAR = 100.0

_FAMILY_CODE = {name: code for code, name in enumerate(FAMILIES)}


@dataclass
class FeatureData:
    """Flattened observations plus precomputed Grams for one feature."""

    family_code: int
    y: np.ndarray  # (n_obs,)
    x: np.ndarray  # (n_obs, p)
    z: np.ndarray  # (n_obs, q_r)
    ind: np.ndarray  # (n_obs,) individual index per observation
    zz: np.ndarray  # (N, q_r, q_r) per-individual Z'Z
    zy: np.ndarray  # (N, q_r) per-individual Z'y
    zx: np.ndarray  # (N, q_r, p) per-individual Z'X
    n_obs_per_ind: np.ndarray  # (N,)

    @property
    def q_r(self) -> int:
        return self.z.shape[1]

    @property
    def p(self) -> int:
        return self.x.shape[1]


def build_feature_data(dataset: LongitudinalDataset) -> list[FeatureData]:
    """Flatten the ragged per-(individual, feature) arrays feature by feature."""
    out = []
    n = dataset.N
    for r, spec in enumerate(dataset.feature_specs):
        ys, xs, zs, inds = [], [], [], []
        for i in range(n):
            yi = dataset.values[i][r]
            ys.append(yi)
            # designs are stored (p, n_ir); flatten observation-major
            xs.append(dataset.x[i][r].T)
            zs.append(dataset.z[i][r].T)
            inds.append(np.full(yi.size, i, dtype=np.int64))
        y = np.concatenate(ys)
        x = np.concatenate(xs, axis=0)
        z = np.concatenate(zs, axis=0)
        ind = np.concatenate(inds)
        qr, p = z.shape[1], x.shape[1]
        zz = np.zeros((n, qr, qr))
        zy = np.zeros((n, qr))
        zx = np.zeros((n, qr, p))
        counts = np.zeros(n, dtype=np.int64)
        for i in range(n):
            sel = ind == i
            counts[i] = int(sel.sum())
            if counts[i]:
                zi, xi2, yi2 = z[sel], x[sel], y[sel]
                zz[i] = zi.T @ zi
                zy[i] = zi.T @ yi2
                zx[i] = zi.T @ xi2
        out.append(FeatureData(
            family_code=_FAMILY_CODE[spec.family],
            y=np.ascontiguousarray(y, dtype=float),
            x=np.ascontiguousarray(x, dtype=float),
            z=np.ascontiguousarray(z, dtype=float),
            ind=ind, zz=zz, zy=zy, zx=zx, n_obs_per_ind=counts))
    return out


@dataclass
class RegressionState:
    """All regression-level unknowns across features."""

    beta: np.ndarray  # (N, q_total) stacked random effects
    gamma: list  # per feature, (p,)
    sigma2: np.ndarray  # (R,), used for Gaussian features only
    mh_scale_beta: np.ndarray  # (N, R) RW proposal sd per individual block
    mh_scale_gamma: np.ndarray  # (R,)
    accept_beta: np.ndarray = field(default=None)  # running acceptance counts
    accept_gamma: np.ndarray = field(default=None)

    @classmethod
    def initial(cls, dataset: LongitudinalDataset) -> "RegressionState":
        n, r = dataset.N, dataset.R
        return cls(
            beta=np.zeros((n, dataset.q_total)),
            gamma=[np.zeros(dataset.x[0][j].shape[0]) for j in range(r)],
            sigma2=np.ones(r),
            mh_scale_beta=np.full((n, r), 0.5),
            mh_scale_gamma=np.full(r, 0.1),
            accept_beta=np.zeros((n, r)),
            accept_gamma=np.zeros(r),
        )


def feature_loglik(fd: FeatureData, beta_block: np.ndarray, gamma: np.ndarray,
                   sigma2: float) -> np.ndarray:
    """Per-individual log-likelihood contributions (beta/gamma terms only)."""
    out = np.zeros(beta_block.shape[0])
    kernels.glm_loglik_feature(
        fd.y, fd.x, fd.z, fd.ind, np.ascontiguousarray(beta_block, dtype=float),
        np.ascontiguousarray(gamma, dtype=float), fd.family_code, float(sigma2), out)
    return out


def feature_residual(fd: FeatureData, beta_block: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    xi = fd.x @ gamma + np.einsum("ja,ja->j", fd.z, beta_block[fd.ind])
    return fd.y - xi


def update_beta_gaussian(fd: FeatureData, beta_block: np.ndarray,
                         prior_mean: np.ndarray, prior_var: np.ndarray,
                         gamma: np.ndarray, sigma2: float, rng) -> None:
    """Exact conjugate draw of every individual's block for a Gaussian feature.

    The posterior factorizes over individuals; the q_r x q_r block solves
    (q_r at most 2) are written out explicitly and vectorized over i.
    """
    n, qr = beta_block.shape
    resid_gram = fd.zy - fd.zx @ gamma  # (N, q_r), Z'(y - X gamma)
    prior_prec = 1.0 / prior_var
    if qr == 1:
        prec = fd.zz[:, 0, 0] / sigma2 + prior_prec[0]
        mean = (resid_gram[:, 0] / sigma2 + prior_prec[0] * prior_mean[:, 0]) / prec
        beta_block[:, 0] = mean + rng.standard_normal(n) / np.sqrt(prec)
        return
    a = fd.zz[:, 0, 0] / sigma2 + prior_prec[0]
    b = fd.zz[:, 0, 1] / sigma2
    c = fd.zz[:, 1, 1] / sigma2 + prior_prec[1]
    r0 = resid_gram[:, 0] / sigma2 + prior_prec[0] * prior_mean[:, 0]
    r1 = resid_gram[:, 1] / sigma2 + prior_prec[1] * prior_mean[:, 1]
    det = a * c - b * b
    m0 = (c * r0 - b * r1) / det
    m1 = (a * r1 - b * r0) / det
    # draw N(0, prec^{-1}) from the precision Cholesky L = [[la, 0], [lb, lc]]
    la = np.sqrt(a)
    lb = b / la
    lc = np.sqrt(c - lb * lb)
    z0 = rng.standard_normal(n)
    z1 = rng.standard_normal(n)
    x1 = z1 / lc
    x0 = (z0 - lb * x1) / la
    beta_block[:, 0] = m0 + x0
    beta_block[:, 1] = m1 + x1


def update_beta_mh(fd: FeatureData, beta_block: np.ndarray,
                   prior_mean: np.ndarray, prior_var: np.ndarray,
                   gamma: np.ndarray, scale: np.ndarray, rng) -> np.ndarray:
    """Joint random-walk step on each individual's block (non-Gaussian).

    The likelihood factorizes across individuals, so all blocks are proposed
    at once and accepted element-wise. Returns the per-individual accept
    indicator for adaptation.
    """
    n, qr = beta_block.shape
    prop = beta_block + scale[:, None] * rng.standard_normal((n, qr))
    ll_cur = feature_loglik(fd, beta_block, gamma, 1.0)
    ll_prop = feature_loglik(fd, prop, gamma, 1.0)
    dev_cur = (beta_block - prior_mean) ** 2 / prior_var
    dev_prop = (prop - prior_mean) ** 2 / prior_var
    log_ratio = (ll_prop - ll_cur) - 0.5 * (dev_prop.sum(axis=1) - dev_cur.sum(axis=1))
    accept = np.log(rng.random(n)) < log_ratio
    beta_block[accept] = prop[accept]
    return accept


def update_gamma_gaussian(fd: FeatureData, beta_block: np.ndarray, gamma: np.ndarray,
                          sigma2: float, rng) -> np.ndarray:
    """Conjugate fixed-effect draw under a N(0, GAMMA_PRIOR_VAR I) prior."""
    p = gamma.shape[0]
    resid = fd.y - np.einsum("ja,ja->j", fd.z, beta_block[fd.ind])
    prec = fd.x.T @ fd.x / sigma2 + np.eye(p) / GAMMA_PRIOR_VAR
    b = fd.x.T @ resid / sigma2
    chol = np.linalg.cholesky(prec)
    mean = np.linalg.solve(prec, b)
    gamma[:] = mean + np.linalg.solve(chol.T, rng.standard_normal(p))
    return gamma


def update_gamma_mh(fd: FeatureData, beta_block: np.ndarray, gamma: np.ndarray,
                    scale: float, rng) -> bool:
    """Joint random-walk step on a non-Gaussian feature's fixed effects."""
    p = gamma.shape[0]
    prop = gamma + scale * rng.standard_normal(p)
    ll_cur = feature_loglik(fd, beta_block, gamma, 1.0).sum()
    ll_prop = feature_loglik(fd, beta_block, prop, 1.0).sum()
    log_ratio = (ll_prop - ll_cur) - 0.5 * (prop @ prop - gamma @ gamma) / GAMMA_PRIOR_VAR
    if math.log(rng.random()) < log_ratio:
        gamma[:] = prop
        return True
    return False


def update_sigma2(fd: FeatureData, beta_block: np.ndarray, gamma: np.ndarray,
                  a_sigma: float, b_sigma: float, rng) -> float:
    resid = feature_residual(fd, beta_block, gamma)
    return sample_inverse_gamma(a_sigma + 0.5 * resid.size,
                                b_sigma + 0.5 * float(resid @ resid), rng)


def adapt_scale(scale, accepted, iteration: int, target: float = 0.3):
    """Robbins-Monro log-scale adaptation; call during burn-in only."""
    step = 1.0 / math.sqrt(iteration + 1.0)
    return scale * np.exp(step * (np.asarray(accepted, dtype=float) - target))
