"""Hot numeric kernels for the Gibbs sampler.

Every kernel here is written once in plain numpy-compatible Python and
compiled with numba's ``@njit`` by default. Setting the environment
variable ``LONGMIX_NO_NUMBA=1`` before import selects the uncompiled
pure-numpy path instead (same code, same results, slower). Run
``python -m longmix.bench_kernels`` to compare the two.

Randomness enters only through pre-drawn uniform buffers, so both paths
are deterministic given the caller's RNG stream.
"""

from __future__ import annotations

import math
import os

import numpy as np

USE_NUMBA = os.environ.get("LONGMIX_NO_NUMBA", "").lower() not in ("1", "true", "yes")

if USE_NUMBA:
    from numba import njit as _njit

    def _maybe_jit(fn):
        return _njit(cache=True)(fn)
else:
    def _maybe_jit(fn):
        return fn


FAMILY_GAUSSIAN = 0
FAMILY_POISSON = 1
FAMILY_BINOMIAL = 2


def _niw_pred_logpdf(x, n, s, scatter, mu0, kappa0, nu0, delta0):
    """Posterior-predictive log-density of one point under a NIW base.

    ``s`` and ``scatter`` are the uncentered sum and sum of outer products
    of the cluster members; n = 0 gives the prior predictive. Returns the
    multivariate Student-t log-density with df = nu_n - d + 1.
    """
    d = x.shape[0]
    kn = kappa0 + n
    nun = nu0 + n
    mun = np.empty(d)
    for a in range(d):
        mun[a] = (kappa0 * mu0[a] + s[a]) / kn
    # Delta_n = Delta_0 + scatter + kappa0 mu0 mu0' - k_n mu_n mu_n'
    dn = np.empty((d, d))
    for a in range(d):
        for b in range(d):
            dn[a, b] = delta0[a, b] + scatter[a, b] + kappa0 * mu0[a] * mu0[b] - kn * mun[a] * mun[b]
    df = nun - d + 1.0
    c = (kn + 1.0) / (kn * df)
    for a in range(d):
        for b in range(d):
            dn[a, b] *= c
    chol = np.linalg.cholesky(dn)
    # forward-solve chol * v = (x - mun)
    v = np.empty(d)
    for a in range(d):
        acc = x[a] - mun[a]
        for b in range(a):
            acc -= chol[a, b] * v[b]
        v[a] = acc / chol[a, a]
    maha = 0.0
    logdet = 0.0
    for a in range(d):
        maha += v[a] * v[a]
        logdet += 2.0 * math.log(chol[a, a])
    return (
        math.lgamma(0.5 * (df + d))
        - math.lgamma(0.5 * df)
        - 0.5 * d * math.log(df * math.pi)
        - 0.5 * logdet
        - 0.5 * (df + d) * math.log(1.0 + maha / df)
    )


_niw_pred_logpdf = _maybe_jit(_niw_pred_logpdf)


def _indicator_sweep(eta, labels, counts, sums, scatters, k_in, log_alpha,
                     mu0, kappa0, nu0, delta0, unif):
    """One sequential sweep of collapsed cluster-indicator updates.

    Cluster statistics (counts, sums, scatters) are maintained in place in
    compact slots 0..K-1; emptied clusters are swap-deleted. Exactly one
    uniform per individual is consumed. Returns the new number of clusters.
    """
    n_ind, d = eta.shape
    k = k_in
    logw = np.empty(n_ind + 1)
    for i in range(n_ind):
        h = labels[i]
        # remove i from its cluster
        counts[h] -= 1
        for a in range(d):
            sums[h, a] -= eta[i, a]
            for b in range(d):
                scatters[h, a, b] -= eta[i, a] * eta[i, b]
        if counts[h] == 0:
            # swap-delete slot h with the last active slot
            k -= 1
            if h != k:
                counts[h] = counts[k]
                for a in range(d):
                    sums[h, a] = sums[k, a]
                    for b in range(d):
                        scatters[h, a, b] = scatters[k, a, b]
                for j in range(n_ind):
                    if labels[j] == k:
                        labels[j] = h
            counts[k] = 0
            for a in range(d):
                sums[k, a] = 0.0
                for b in range(d):
                    scatters[k, a, b] = 0.0

        for h2 in range(k):
            logw[h2] = math.log(float(counts[h2])) + _niw_pred_logpdf(
                eta[i], float(counts[h2]), sums[h2], scatters[h2], mu0, kappa0, nu0, delta0
            )
        logw[k] = log_alpha + _niw_pred_logpdf(
            eta[i], 0.0, sums[k], scatters[k], mu0, kappa0, nu0, delta0
        )
        mx = logw[0]
        for h2 in range(1, k + 1):
            if logw[h2] > mx:
                mx = logw[h2]
        tot = 0.0
        for h2 in range(k + 1):
            logw[h2] = math.exp(logw[h2] - mx)
            tot += logw[h2]
        u = unif[i] * tot
        acc = 0.0
        newc = k
        for h2 in range(k + 1):
            acc += logw[h2]
            if u <= acc:
                newc = h2
                break
        if newc == k:
            k += 1
        labels[i] = newc
        counts[newc] += 1
        for a in range(d):
            sums[newc, a] += eta[i, a]
            for b in range(d):
                scatters[newc, a, b] += eta[i, a] * eta[i, b]
    return k


_indicator_sweep = _maybe_jit(_indicator_sweep)


def _restricted_scan(eta, assign, count0, sum0, scat0, count1, sum1, scat1,
                     mu0, kappa0, nu0, delta0, unif, forced, target):
    """One restricted Gibbs pass over eta rows between two clusters.

    ``assign`` holds 0/1 labels and is updated in place; cluster statistics
    include the fixed anchors and are updated in place. When ``forced`` the
    pass deterministically reassigns to ``target`` and only accumulates the
    transition log-probability. Returns (logprob, count0, count1).
    """
    m, d = eta.shape
    c0 = count0
    c1 = count1
    logprob = 0.0
    for i in range(m):
        cur = assign[i]
        if cur == 0:
            c0 -= 1
            for a in range(d):
                sum0[a] -= eta[i, a]
                for b in range(d):
                    scat0[a, b] -= eta[i, a] * eta[i, b]
        else:
            c1 -= 1
            for a in range(d):
                sum1[a] -= eta[i, a]
                for b in range(d):
                    scat1[a, b] -= eta[i, a] * eta[i, b]
        w0 = math.log(float(c0)) + _niw_pred_logpdf(eta[i], float(c0), sum0, scat0, mu0, kappa0, nu0, delta0)
        w1 = math.log(float(c1)) + _niw_pred_logpdf(eta[i], float(c1), sum1, scat1, mu0, kappa0, nu0, delta0)
        mx = w0 if w0 > w1 else w1
        p0 = math.exp(w0 - mx)
        p1 = math.exp(w1 - mx)
        tot = p0 + p1
        prob1 = p1 / tot
        if forced:
            c = target[i]
        else:
            c = 1 if unif[i] < prob1 else 0
        logprob += math.log(prob1) if c == 1 else math.log(1.0 - prob1)
        assign[i] = c
        if c == 0:
            c0 += 1
            for a in range(d):
                sum0[a] += eta[i, a]
                for b in range(d):
                    scat0[a, b] += eta[i, a] * eta[i, b]
        else:
            c1 += 1
            for a in range(d):
                sum1[a] += eta[i, a]
                for b in range(d):
                    scat1[a, b] += eta[i, a] * eta[i, b]
    return logprob, c0, c1


_restricted_scan = _maybe_jit(_restricted_scan)


def _glm_loglik_feature(y, xmat, zmat, ind, beta_block, gamma, family, sigma2, out):
    """Accumulate one feature's GLM log-likelihood into per-individual ``out``.

    beta_block is the (N, q_r) slice of the stacked random effects for this
    feature. Only terms depending on (beta, gamma) are included. Returns the
    number of observations whose linear predictor overflowed (those
    contribute -inf).
    """
    n_obs = y.shape[0]
    p = xmat.shape[1]
    qr = zmat.shape[1]
    overflow = 0
    for j in range(n_obs):
        i = ind[j]
        xi = 0.0
        for a in range(p):
            xi += xmat[j, a] * gamma[a]
        for a in range(qr):
            xi += zmat[j, a] * beta_block[i, a]
        if family == 0:
            r = y[j] - xi
            out[i] += -0.5 * r * r / sigma2
        elif family == 1:
            if xi > 500.0:
                out[i] = -np.inf
                overflow += 1
            else:
                out[i] += y[j] * xi - math.exp(xi)
        else:
            if xi > 0.0:
                out[i] += y[j] * xi - (xi + math.log(1.0 + math.exp(-xi)))
            else:
                out[i] += y[j] * xi - math.log(1.0 + math.exp(xi))
    return overflow


_glm_loglik_feature = _maybe_jit(_glm_loglik_feature)


def _cocluster_counts(draws, out):
    """Accumulate pairwise co-clustering counts over stored label draws."""
    n_draws, n = draws.shape
    for s in range(n_draws):
        for i in range(n):
            ci = draws[s, i]
            out[i, i] += 1
            for j in range(i + 1, n):
                if draws[s, j] == ci:
                    out[i, j] += 1
                    out[j, i] += 1


_cocluster_counts = _maybe_jit(_cocluster_counts)


# Public aliases
niw_pred_logpdf = _niw_pred_logpdf
indicator_sweep = _indicator_sweep
restricted_scan = _restricted_scan
glm_loglik_feature = _glm_loglik_feature
cocluster_counts = _cocluster_counts
