"""Dirichlet-process mixture machinery over the latent factors.

Collapsed indicator updates (cluster mean and scale integrated out under
the normal-inverse-Wishart base), the auxiliary-variable concentration
update, and conjugate split-merge proposals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .distributions import log_multigamma, sample_beta, sample_gamma
from .factor_model import NIWParams


@dataclass
class ClusterState:
    """Labels plus incrementally maintained per-cluster sufficient statistics.

    Labels live in compact slots 0..K-1. ``sums`` and ``scatters`` are the
    uncentered sum and sum of outer products of the member factors.
    """

    labels: np.ndarray  # (N,) int64
    counts: np.ndarray  # (N+1,) int64, slots >= K zero
    sums: np.ndarray  # (N+1, d)
    scatters: np.ndarray  # (N+1, d, d)
    n_clusters: int
    alpha: float
    alpha_prior: tuple[float, float]
    deltas: list = field(default_factory=list)  # per-cluster scale draws, len K

    @classmethod
    def from_labels(cls, labels: np.ndarray, eta: np.ndarray, alpha: float,
                    alpha_prior: tuple[float, float]) -> "ClusterState":
        labels = np.asarray(labels, dtype=np.int64).copy()
        n, d = eta.shape
        uniq = np.unique(labels)
        remap = {int(u): k for k, u in enumerate(uniq)}
        labels = np.array([remap[int(c)] for c in labels], dtype=np.int64)
        k = uniq.size
        counts = np.zeros(n + 1, dtype=np.int64)
        sums = np.zeros((n + 1, d))
        scatters = np.zeros((n + 1, d, d))
        for i in range(n):
            c = labels[i]
            counts[c] += 1
            sums[c] += eta[i]
            scatters[c] += np.outer(eta[i], eta[i])
        return cls(labels=labels, counts=counts, sums=sums, scatters=scatters,
                   n_clusters=k, alpha=alpha, alpha_prior=alpha_prior)

    def recompute(self, eta: np.ndarray) -> "ClusterState":
        """Rebuild statistics from scratch (integrity checks, tests)."""
        fresh = ClusterState.from_labels(self.labels, eta, self.alpha, self.alpha_prior)
        fresh.deltas = self.deltas
        return fresh

    def members(self, h: int) -> np.ndarray:
        return np.flatnonzero(self.labels == h)


def predictive_logdensity(eta_i: np.ndarray, niw: NIWParams, n: int = 0,
                          total: np.ndarray | None = None,
                          scatter: np.ndarray | None = None) -> float:
    """Closed-form posterior-predictive log-density of one factor vector.

    With empty statistics this is the prior predictive. The density is a
    multivariate Student-t with df = nu0 + n - d + 1.
    """
    d = niw.d
    if niw.nu0 + n - d + 1 <= 0:
        raise ValueError(f"nu0 = {niw.nu0} too small for dimension {d}")
    if total is None:
        total = np.zeros(d)
    if scatter is None:
        scatter = np.zeros((d, d))
    return float(kernels.niw_pred_logpdf(
        np.ascontiguousarray(eta_i, dtype=float), float(n),
        np.ascontiguousarray(total, dtype=float),
        np.ascontiguousarray(scatter, dtype=float),
        np.ascontiguousarray(niw.mu0, dtype=float), float(niw.kappa0), float(niw.nu0),
        np.ascontiguousarray(niw.delta0, dtype=float)))


def marginal_loglik(members: np.ndarray, niw: NIWParams) -> float:
    """Log marginal likelihood of a cluster under the NIW base."""
    members = np.atleast_2d(members)
    n, d = members.shape
    if n == 0:
        return 0.0
    kn = niw.kappa0 + n
    nun = niw.nu0 + n
    bar = members.mean(axis=0)
    dev = members - bar
    diff = bar - niw.mu0
    delta_n = (niw.delta0 + dev.T @ dev
               + (niw.kappa0 * n / kn) * np.outer(diff, diff))
    sign0, logdet0 = np.linalg.slogdet(niw.delta0)
    sign_n, logdet_n = np.linalg.slogdet(delta_n)
    return float(
        -0.5 * n * d * math.log(math.pi)
        + log_multigamma(nun / 2.0, d) - log_multigamma(niw.nu0 / 2.0, d)
        + 0.5 * niw.nu0 * logdet0 - 0.5 * nun * logdet_n
        + 0.5 * d * (math.log(niw.kappa0) - math.log(kn))
    )


def update_indicators(state: ClusterState, eta: np.ndarray, niw: NIWParams, rng) -> ClusterState:
    """One sequential collapsed sweep over all individuals (in place)."""
    n = eta.shape[0]
    unif = rng.random(n)
    k = kernels.indicator_sweep(
        np.ascontiguousarray(eta, dtype=float), state.labels, state.counts,
        state.sums, state.scatters, state.n_clusters, math.log(state.alpha),
        np.ascontiguousarray(niw.mu0, dtype=float), float(niw.kappa0), float(niw.nu0),
        np.ascontiguousarray(niw.delta0, dtype=float), unif)
    state.n_clusters = int(k)
    return state


def update_alpha(state: ClusterState, n: int, rng) -> float:
    """Auxiliary-variable refresh of the concentration (Escobar-West)."""
    a_alpha, b_alpha = state.alpha_prior
    r = state.n_clusters
    w = sample_beta(state.alpha + 1.0, float(n), rng)
    rate = b_alpha - math.log(w)
    odds = (a_alpha + r - 1.0) / (n * rate)
    if rng.random() < odds / (1.0 + odds):
        alpha = sample_gamma(a_alpha + r, rate, rng)
    else:
        alpha = sample_gamma(a_alpha + r - 1.0, rate, rng)
    state.alpha = alpha
    return alpha


def _cluster_stats(eta_rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = eta_rows.sum(axis=0)
    m = eta_rows.T @ eta_rows
    return s, m


def split_merge_move(state: ClusterState, eta: np.ndarray, niw: NIWParams, rng,
                     n_restricted_scans: int = 5) -> bool:
    """One conjugate split-merge proposal (restricted-scan launch state).

    Picks two anchors uniformly; same cluster proposes a split, different
    clusters a merge. Accepts with the Metropolis-Hastings ratio built from
    NIW marginal likelihoods, the partition prior, and the restricted-scan
    transition probability. Returns whether the proposal was accepted.
    """
    n = eta.shape[0]
    d = eta.shape[1]
    if n < 2:
        return False
    i = int(rng.integers(n))
    j = int(rng.integers(n - 1))
    if j >= i:
        j += 1
    ci, cj = int(state.labels[i]), int(state.labels[j])
    split = ci == cj

    if split:
        pool = np.flatnonzero(state.labels == ci)
    else:
        pool = np.flatnonzero((state.labels == ci) | (state.labels == cj))
    others = pool[(pool != i) & (pool != j)]
    eta_s = np.ascontiguousarray(eta[others], dtype=float)
    m = others.size

    # Launch state: anchors fixed in clusters 0 (i) and 1 (j); remaining
    # items coin-flipped, then refined with restricted Gibbs scans.
    assign = (rng.random(m) < 0.5).astype(np.int64)
    sum0 = eta[i].astype(float).copy()
    scat0 = np.outer(eta[i], eta[i]).astype(float)
    sum1 = eta[j].astype(float).copy()
    scat1 = np.outer(eta[j], eta[j]).astype(float)
    c0, c1 = 1, 1
    for idx in range(m):
        if assign[idx] == 0:
            c0 += 1
            sum0 += eta_s[idx]
            scat0 += np.outer(eta_s[idx], eta_s[idx])
        else:
            c1 += 1
            sum1 += eta_s[idx]
            scat1 += np.outer(eta_s[idx], eta_s[idx])

    mu0 = np.ascontiguousarray(niw.mu0, dtype=float)
    delta0 = np.ascontiguousarray(niw.delta0, dtype=float)
    dummy_target = np.zeros(m, dtype=np.int64)
    if m > 0:
        for _ in range(n_restricted_scans):
            unif = rng.random(m)
            _, c0, c1 = kernels.restricted_scan(
                eta_s, assign, c0, sum0, scat0, c1, sum1, scat1,
                mu0, niw.kappa0, niw.nu0, delta0, unif, False, dummy_target)

    if split:
        # Final unforced scan generates the proposal and its probability.
        if m > 0:
            unif = rng.random(m)
            log_q, c0, c1 = kernels.restricted_scan(
                eta_s, assign, c0, sum0, scat0, c1, sum1, scat1,
                mu0, niw.kappa0, niw.nu0, delta0, unif, False, dummy_target)
        else:
            log_q = 0.0
        members0 = np.concatenate([[i], others[assign == 0]])
        members1 = np.concatenate([[j], others[assign == 1]])
        n0, n1 = members0.size, members1.size
        log_prior = math.log(state.alpha) + math.lgamma(n0) + math.lgamma(n1) - math.lgamma(n0 + n1)
        log_lik = (marginal_loglik(eta[members0], niw) + marginal_loglik(eta[members1], niw)
                   - marginal_loglik(eta[pool], niw))
        log_acc = log_prior + log_lik - log_q
        if math.log(rng.random()) < log_acc:
            new_label = state.n_clusters
            state.labels[members1] = new_label
            # ci keeps members0; new slot gets members1
            s1, m1 = _cluster_stats(eta[members1])
            state.counts[new_label] = n1
            state.sums[new_label] = s1
            state.scatters[new_label] = m1
            s0, m0 = _cluster_stats(eta[members0])
            state.counts[ci] = n0
            state.sums[ci] = s0
            state.scatters[ci] = m0
            state.n_clusters += 1
            return True
        return False

    # Merge: transition probability of regenerating the original split from
    # the launch state via one forced scan.
    target = (state.labels[others] == cj).astype(np.int64)
    if m > 0:
        unif = np.zeros(m)
        log_q, c0, c1 = kernels.restricted_scan(
            eta_s, assign, c0, sum0, scat0, c1, sum1, scat1,
            mu0, niw.kappa0, niw.nu0, delta0, unif, True, target)
    else:
        log_q = 0.0
    members_i = state.members(ci)
    members_j = state.members(cj)
    n0, n1 = members_i.size, members_j.size
    merged = np.concatenate([members_i, members_j])
    log_prior = math.log(state.alpha) + math.lgamma(n0) + math.lgamma(n1) - math.lgamma(n0 + n1)
    log_lik = (marginal_loglik(eta[members_i], niw) + marginal_loglik(eta[members_j], niw)
               - marginal_loglik(eta[merged], niw))
    log_acc = log_q - log_prior - log_lik
    if math.log(rng.random()) < log_acc:
        state.labels[merged] = ci
        s, mm = _cluster_stats(eta[merged])
        state.counts[ci] = merged.size
        state.sums[ci] = s
        state.scatters[ci] = mm
        # swap-delete slot cj
        k = state.n_clusters - 1
        if cj != k:
            state.counts[cj] = state.counts[k]
            state.sums[cj] = state.sums[k]
            state.scatters[cj] = state.scatters[k]
            state.labels[state.labels == k] = cj
        state.counts[k] = 0
        state.sums[k] = 0.0
        state.scatters[k] = 0.0
        state.n_clusters = k
        return True
    return False
