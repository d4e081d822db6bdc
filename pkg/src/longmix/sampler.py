"""Gibbs sampler orchestration: pilot fits, latent-dimension selection,
the full update cycle, chain storage, checkpoints, and the Geweke diagnostic.
"""

from __future__ import annotations

import math
import pickle
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import dp_cluster, factor_model, glmm
from .data_model import LongitudinalDataset
from .factor_model import DLState, FactorState, NIWParams
from .glmm import FeatureData, RegressionState
from .rng import RngStream

CHECKPOINT_VERSION = 1


class SamplerError(RuntimeError):
    """Numeric failure inside a Gibbs block, tagged with iteration and block."""


@dataclass
class Hyperparameters:
    """Model-level constants for every Gibbs block."""

    dl_a: float = 0.5
    a_sigma: float = 0.01
    b_sigma: float = 0.01
    a_omega: float = 0.01
    b_omega: float = 0.01
    alpha_prior: tuple = (0.1, 0.1)
    kappa0: float = 1e-3
    nu0_extra: float = 2.0  # nu0 = d + nu0_extra; keep small so Delta_h tracks the data
    xi2: float = 1.0  # base scale Delta0 = xi2 I

    def niw(self, d: int) -> NIWParams:
        return NIWParams(mu0=np.zeros(d), delta0=self.xi2 * np.eye(d),
                         kappa0=self.kappa0, nu0=d + self.nu0_extra)


@dataclass
class ChainConfig:
    """Run-level knobs: schedule, seed, and structural options."""

    n_iter: int = 20000
    n_burn: int = 10000
    thin: int = 10
    seed: int = 0
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    d_override: int | None = None
    pca_threshold: float = 0.95
    split_merge_every: int = 1
    eta_update: str = "inflated"
    n_restricted_scans: int = 5
    fix_alpha: float | None = None
    alpha_init: float = 1.0
    init_clusters: int = 5
    store_eta: bool = False
    checkpoint_every: int | None = None
    checkpoint_path: str | None = None

    def __post_init__(self):
        if not (0 <= self.n_burn < self.n_iter):
            raise ValueError("require 0 <= n_burn < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")

    @property
    def n_stored(self) -> int:
        return (self.n_iter - self.n_burn) // self.thin


@dataclass
class ChainRecord:
    """Stored draws and traces from one chain."""

    labels: np.ndarray  # (S, N) int
    alpha: np.ndarray  # (S,)
    n_clusters: np.ndarray  # (S,)
    sigma2: np.ndarray  # (S, R) Gaussian features only carry meaning
    iters: np.ndarray  # (S,) iteration index of each stored draw
    seconds_per_iter: np.ndarray  # (n_iter,)
    accept_beta: np.ndarray  # (R,) mean acceptance of non-Gaussian beta steps
    accept_gamma: np.ndarray  # (R,)
    d: int
    eta: np.ndarray | None = None  # (S, N, d) when requested

    @property
    def n_draws(self) -> int:
        return self.labels.shape[0]


@dataclass
class ModelState:
    """Everything the chain needs to continue from where it stopped."""

    factor: FactorState
    dl: DLState
    clusters: dp_cluster.ClusterState
    deltas: list
    reg: RegressionState | None
    beta: np.ndarray  # (N, q) current stacked effects (alias of reg.beta in long mode)
    niw: NIWParams
    iteration: int


# ---------------------------------------------------------------------------
# Pilot fits and latent-dimension selection


def _working_response(y: np.ndarray, family: str) -> np.ndarray:
    if family == "gaussian":
        return y
    if family == "poisson":
        return np.log(y + 0.5)
    return np.log((y + 0.5) / (1.0 - y + 0.5))


def _pilot_gaussian(fd: FeatureData, n: int) -> np.ndarray:
    """Closed-form BLUPs under a method-of-moments variance-component fit."""
    qr = fd.q_r
    gamma, *_ = np.linalg.lstsq(fd.x, fd.y, rcond=None) if fd.y.size else (np.zeros(fd.p),)
    resid = fd.y - fd.x @ gamma
    # per-individual OLS where identifiable, pooled residual variance
    raw = np.zeros((n, qr))
    ok = np.zeros(n, dtype=bool)
    ss, dof = 0.0, 0
    for i in range(n):
        m = int(fd.n_obs_per_ind[i])
        if m <= qr:
            continue
        sel = fd.ind == i
        zi, ri = fd.z[sel], resid[sel]
        bi, res_ss, rank, _ = np.linalg.lstsq(zi, ri, rcond=None)
        if rank < qr:
            continue
        raw[i] = bi
        ok[i] = True
        ss += float(res_ss[0]) if res_ss.size else float(((ri - zi @ bi) ** 2).sum())
        dof += m - qr
    sigma2 = ss / dof if dof > 0 else 1.0
    if ok.sum() >= 2:
        # MoM: between-individual variance = var(raw) - mean sampling variance
        samp = np.zeros(qr)
        for i in np.flatnonzero(ok):
            sel = fd.ind == i
            zi = fd.z[sel]
            samp += sigma2 * np.diag(np.linalg.inv(zi.T @ zi))
        samp /= ok.sum()
        dvar = np.maximum(raw[ok].var(axis=0, ddof=1) - samp, 1e-3)
    else:
        dvar = np.ones(qr)
    out = np.zeros((n, qr))
    resid_gram = fd.zy - fd.zx @ gamma
    for i in range(n):
        if fd.n_obs_per_ind[i] == 0:
            continue
        prec = fd.zz[i] / sigma2 + np.diag(1.0 / dvar)
        out[i] = np.linalg.solve(prec, resid_gram[i] / sigma2)
    return out


def _pilot_glm(fd: FeatureData, n: int, family: str, ridge_var: float = 4.0,
               max_iter: int = 50, tol: float = 1e-8) -> np.ndarray:
    """Per-individual posterior mode by Newton iterations with a fixed ridge."""
    w = _working_response(fd.y, family)
    gamma, *_ = np.linalg.lstsq(fd.x, w, rcond=None) if w.size else (np.zeros(fd.p),)
    qr = fd.q_r
    out = np.zeros((n, qr))
    for i in range(n):
        if fd.n_obs_per_ind[i] == 0:
            continue
        sel = fd.ind == i
        zi, xi, yi = fd.z[sel], fd.x[sel], fd.y[sel]
        off = xi @ gamma
        b = np.zeros(qr)
        converged = False
        for _ in range(max_iter):
            lin = off + zi @ b
            lin = np.clip(lin, -30.0, 30.0)
            if family == "poisson":
                mu = np.exp(lin)
                wgt = mu
            else:
                mu = 1.0 / (1.0 + np.exp(-lin))
                wgt = mu * (1.0 - mu)
            grad = zi.T @ (yi - mu) - b / ridge_var
            hess = zi.T @ (zi * wgt[:, None]) + np.eye(qr) / ridge_var
            step = np.linalg.solve(hess, grad)
            b = b + step
            if not np.all(np.isfinite(b)):
                converged = False
                break
            if float(np.abs(step).max()) < tol:
                converged = True
                break
        if not converged:
            warnings.warn(f"pilot Newton fit failed for individual {i}; using zeros")
            b = np.zeros(qr)
        out[i] = b
    return out


def fit_pilot(dataset: LongitudinalDataset) -> np.ndarray:
    """Independent per-feature random-effect estimates, stacked to (N, q)."""
    feats = glmm.build_feature_data(dataset)
    n = dataset.N
    blocks = []
    for r, (fd, spec) in enumerate(zip(feats, dataset.feature_specs)):
        if spec.family == "gaussian":
            blocks.append(_pilot_gaussian(fd, n))
        else:
            blocks.append(_pilot_glm(fd, n, spec.family))
    return np.concatenate(blocks, axis=1)


def select_latent_dim(beta_hat: np.ndarray, threshold: float = 0.95) -> int:
    """Smallest d whose leading eigenvalue share reaches the threshold.

    Result is forced into [1, q - 1]; a clamp triggers a warning.
    """
    beta_hat = np.asarray(beta_hat, dtype=float)
    n, q = beta_hat.shape
    centered = beta_hat - beta_hat.mean(axis=0)
    cov = centered.T @ centered / max(n - 1, 1)
    evals = np.linalg.eigvalsh(cov)[::-1]
    evals = np.maximum(evals, 0.0)
    total = evals.sum()
    if total <= 0:
        raise ValueError("degenerate covariance: rank 0")
    shares = np.cumsum(evals) / total
    d = int(np.searchsorted(shares, threshold - 1e-12) + 1)
    if d > q - 1:
        warnings.warn(f"latent dimension {d} clamped to q - 1 = {q - 1}")
        d = max(q - 1, 1)
    return max(d, 1)


# ---------------------------------------------------------------------------
# The Gibbs cycle


def _block(name: str, t: int):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, SamplerError):
                raise SamplerError(f"iteration {t}, block {name}: {exc}") from exc
            return False

    return _Ctx()


def _init_state(beta: np.ndarray, d: int, config: ChainConfig, rng) -> ModelState:
    n, q = beta.shape
    hyper = config.hyper
    niw = hyper.niw(d)
    # SVD warm start: beta ~ eta lam', factors scaled to unit sample variance
    u, s, vt = np.linalg.svd(beta - beta.mean(axis=0), full_matrices=False)
    eta = u[:, :d] * math.sqrt(n)
    lam = (vt[:d].T * (s[:d] / math.sqrt(n)))
    if lam.shape != (q, d):  # degenerate input, fall back to noise
        lam = 0.1 * rng.standard_normal((q, d))
        eta = rng.standard_normal((n, d))
    resid = beta - eta @ lam.T
    sigma_beta = np.maximum(resid.var(axis=0), 1e-3)
    factor = FactorState(lam=lam, sigma_beta_diag=sigma_beta, eta=eta)
    dl = DLState.initial(q, d, hyper.dl_a, rng)
    k0 = min(config.init_clusters, n)
    labels = rng.integers(k0, size=n)
    alpha = config.fix_alpha if config.fix_alpha is not None else config.alpha_init
    clusters = dp_cluster.ClusterState.from_labels(labels, eta, float(alpha), hyper.alpha_prior)
    deltas = [np.eye(d) for _ in range(clusters.n_clusters)]
    return ModelState(factor=factor, dl=dl, clusters=clusters, deltas=deltas,
                      reg=None, beta=beta, niw=niw, iteration=0)


def _one_iteration(state: ModelState, feats: list | None,
                   dataset: LongitudinalDataset | None, missing_mask: np.ndarray | None,
                   config: ChainConfig, rng, t: int) -> None:
    hyper = config.hyper
    factor, dl, clusters = state.factor, state.dl, state.clusters
    beta, niw = state.beta, state.niw
    eta = factor.eta
    n, d = eta.shape

    if missing_mask is not None and missing_mask.any():
        with _block("impute", t):
            mu = eta @ factor.lam.T
            sd = np.sqrt(factor.sigma_beta_diag)
            draw = mu + sd * rng.standard_normal(beta.shape)
            beta[missing_mask] = draw[missing_mask]

    with _block("lambda", t):
        factor.lam = factor_model.update_lambda(factor, dl, beta, rng)
        state.dl = factor_model.update_dl_auxiliaries(dl, factor.lam, rng)
    with _block("sigma_beta", t):
        factor.sigma_beta_diag = factor_model.update_sigma_beta(
            factor, beta, hyper.a_omega, hyper.b_omega, rng)
    with _block("delta", t):
        state.deltas = [
            factor_model.update_delta(eta[clusters.members(h)], niw, rng)
            for h in range(clusters.n_clusters)
        ]
    with _block("eta", t):
        for i in range(n):
            h = int(clusters.labels[i])
            old = eta[i].copy()
            n_minus = int(clusters.counts[h]) - 1
            if n_minus > 0:
                etabar = (clusters.sums[h] - old) / n_minus
            else:
                etabar = np.zeros(d)
            new = factor_model.update_eta(
                beta[i], factor, state.deltas[h], n_minus, etabar,
                niw.kappa0, rng, mode=config.eta_update, mu0=niw.mu0)
            clusters.sums[h] += new - old
            clusters.scatters[h] += np.outer(new, new) - np.outer(old, old)
            eta[i] = new
    with _block("indicators", t):
        dp_cluster.update_indicators(clusters, eta, niw, rng)
    if config.split_merge_every > 0 and t % config.split_merge_every == 0:
        with _block("split_merge", t):
            dp_cluster.split_merge_move(clusters, eta, niw, rng,
                                        n_restricted_scans=config.n_restricted_scans)
    if config.fix_alpha is None:
        with _block("alpha", t):
            dp_cluster.update_alpha(clusters, n, rng)

    if feats is None:
        return
    reg = state.reg
    adapting = t <= config.n_burn
    prior_mean_all = eta @ factor.lam.T
    for r, fd in enumerate(feats):
        lo = dataset.block_offsets[r]
        hi = lo + fd.q_r
        block = beta[:, lo:hi]
        pm = prior_mean_all[:, lo:hi]
        pv = factor.sigma_beta_diag[lo:hi]
        with _block(f"beta[{r}]", t):
            if fd.family_code == 0:
                glmm.update_beta_gaussian(fd, block, pm, pv, reg.gamma[r],
                                          reg.sigma2[r], rng)
            else:
                acc = glmm.update_beta_mh(fd, block, pm, pv, reg.gamma[r],
                                          reg.mh_scale_beta[:, r], rng)
                reg.accept_beta[:, r] += acc
                if adapting:
                    reg.mh_scale_beta[:, r] = glmm.adapt_scale(
                        reg.mh_scale_beta[:, r], acc, t)
        with _block(f"gamma[{r}]", t):
            if fd.family_code == 0:
                glmm.update_gamma_gaussian(fd, block, reg.gamma[r], reg.sigma2[r], rng)
            else:
                acc = glmm.update_gamma_mh(fd, block, reg.gamma[r],
                                           float(reg.mh_scale_gamma[r]), rng)
                reg.accept_gamma[r] += acc
                if adapting:
                    reg.mh_scale_gamma[r] = float(glmm.adapt_scale(
                        reg.mh_scale_gamma[r], acc, t))
        if fd.family_code == 0:
            with _block(f"sigma2[{r}]", t):
                reg.sigma2[r] = glmm.update_sigma2(fd, block, reg.gamma[r],
                                                   hyper.a_sigma, hyper.b_sigma, rng)


def save_checkpoint(path: str, state: ModelState, rng: RngStream, config: ChainConfig,
                    stored: dict) -> None:
    payload = {"version": CHECKPOINT_VERSION, "state": state,
               "rng_state": rng.get_state(), "config": config, "stored": stored}
    with open(path, "wb") as fh:
        pickle.dump(payload, fh)


def load_checkpoint(path: str) -> dict:
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    return payload


def run_gibbs(dataset: LongitudinalDataset | None = None,
              config: ChainConfig | None = None,
              beta_matrix: np.ndarray | None = None,
              resume_from: str | None = None) -> tuple[ChainRecord, ModelState]:
    """Run one chain on longitudinal data or directly on an effects matrix.

    Exactly one of ``dataset`` and ``beta_matrix`` drives the likelihood.
    ``beta_matrix`` may contain NaN entries; those are treated as missing and
    imputed from the factor model each iteration.
    """
    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        config = payload["config"]
        state = payload["state"]
        stored = payload["stored"]
        rng = RngStream(config.seed)
        rng.set_state(payload["rng_state"])
        start = state.iteration
        missing_mask = stored.pop("_missing_mask", None)
        feats = glmm.build_feature_data(dataset) if dataset is not None else None
    else:
        if config is None:
            config = ChainConfig()
        rng = RngStream(config.seed)
        if (dataset is None) == (beta_matrix is None):
            raise ValueError("pass exactly one of dataset or beta_matrix")
        if dataset is not None:
            feats = glmm.build_feature_data(dataset)
            beta_hat = fit_pilot(dataset)
            beta = beta_hat.copy()
            missing_mask = None
        else:
            feats = None
            beta = np.asarray(beta_matrix, dtype=float).copy()
            missing_mask = ~np.isfinite(beta)
            observed = np.where(missing_mask, 0.0, beta)
            n_obs = (~missing_mask).sum(axis=0)
            col_mean = observed.sum(axis=0) / np.maximum(n_obs, 1)
            beta[missing_mask] = np.broadcast_to(col_mean, beta.shape)[missing_mask]
            beta_hat = beta
        d = config.d_override or select_latent_dim(beta_hat, config.pca_threshold)
        state = _init_state(beta, d, config, rng)
        if dataset is not None:
            state.reg = RegressionState.initial(dataset)
            state.reg.beta = state.beta
        stored = {"labels": [], "alpha": [], "k": [], "sigma2": [], "iters": [],
                  "eta": [], "seconds": []}
        start = 0

    n = state.beta.shape[0]
    n_feat = len(feats) if feats is not None else 0
    for t in range(start + 1, config.n_iter + 1):
        tic = time.perf_counter()
        _one_iteration(state, feats, dataset, missing_mask, config, rng, t)
        stored["seconds"].append(time.perf_counter() - tic)
        state.iteration = t
        if t > config.n_burn and (t - config.n_burn) % config.thin == 0:
            stored["labels"].append(state.clusters.labels.copy())
            stored["alpha"].append(state.clusters.alpha)
            stored["k"].append(state.clusters.n_clusters)
            stored["sigma2"].append(state.reg.sigma2.copy() if state.reg is not None
                                    else np.zeros(0))
            stored["iters"].append(t)
            if config.store_eta:
                stored["eta"].append(state.factor.eta.copy())
        if (config.checkpoint_every and config.checkpoint_path
                and t % config.checkpoint_every == 0 and t < config.n_iter):
            extra = dict(stored)
            extra["_missing_mask"] = missing_mask
            save_checkpoint(config.checkpoint_path, state, rng, config, extra)

    reg = state.reg
    record = ChainRecord(
        labels=np.array(stored["labels"], dtype=np.int64).reshape(len(stored["labels"]), n),
        alpha=np.array(stored["alpha"]),
        n_clusters=np.array(stored["k"], dtype=np.int64),
        sigma2=np.array(stored["sigma2"]).reshape(len(stored["sigma2"]), -1),
        iters=np.array(stored["iters"], dtype=np.int64),
        seconds_per_iter=np.array(stored["seconds"]),
        accept_beta=(reg.accept_beta.mean(axis=0) / max(config.n_iter, 1)
                     if reg is not None else np.zeros(n_feat)),
        accept_gamma=(reg.accept_gamma / max(config.n_iter, 1)
                      if reg is not None else np.zeros(n_feat)),
        d=state.factor.eta.shape[1],
        eta=np.array(stored["eta"]) if config.store_eta and stored["eta"] else None,
    )
    return record, state


# ---------------------------------------------------------------------------
# Diagnostics


def _obm_variance(x: np.ndarray) -> float:
    """Spectral density at zero via overlapping batch means."""
    n = x.shape[0]
    b = int(math.ceil(math.sqrt(n)))
    csum = np.concatenate([[0.0], np.cumsum(x)])
    means = (csum[b:] - csum[:-b]) / b
    dev = means - x.mean()
    return float(n * b / ((n - b) * (n - b + 1)) * (dev @ dev))


def geweke_z(trace: np.ndarray, frac_first: float = 0.1, frac_last: float = 0.5) -> float:
    """Geweke mean-equality z-score between early and late chain segments."""
    x = np.asarray(trace, dtype=float)
    n = x.shape[0]
    if n < 100:
        raise ValueError("trace too short for the Geweke diagnostic")
    na = int(frac_first * n)
    nb = int(frac_last * n)
    a, b = x[:na], x[n - nb:]
    if a.var() == 0.0 or b.var() == 0.0:
        raise ValueError("degenerate trace")
    va, vb = _obm_variance(a), _obm_variance(b)
    return float((a.mean() - b.mean()) / math.sqrt(va / na + vb / nb))


def write_trace_csv(path: str, record: ChainRecord) -> None:
    """One row per stored draw: iter, alpha, K, sigma2_1..R, acceptance_rate."""
    r = record.sigma2.shape[1]
    acc = float(record.accept_beta.mean()) if record.accept_beta.size else 1.0
    header = ["iter", "alpha", "K"] + [f"sigma2_{j + 1}" for j in range(r)] + ["acceptance_rate"]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for s in range(record.n_draws):
            row = [str(int(record.iters[s])), repr(float(record.alpha[s])),
                   str(int(record.n_clusters[s]))]
            row += [repr(float(v)) for v in record.sigma2[s]]
            row.append(repr(acc))
            fh.write(",".join(row) + "\n")
