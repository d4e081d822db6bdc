"""Synthetic-data generator, fit variants, and benchmark/stability harnesses.

The generator draws mixed-type longitudinal features whose clustering signal
lives either in random intercepts (scenario S1) or random slopes (S2).
Published descriptions pin down the design (visit windows, feature counts,
cluster sizes, the -0.5 binary-covariate effect) but not the numeric
separations; those live in ``CONSTANTS`` below, are versioned, and were
calibrated once so desk-scale runs reproduce the qualitative orderings.
"""

from __future__ import annotations

import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import partition as partition_mod
from . import sampler as sampler_mod
from .data_model import FeatureSpec, LongitudinalDataset, TruthLabels
from .rng import RngStream

CONSTANTS_VERSION = 1

# Generator constants not fixed by the published design (reconstructed).
CONSTANTS = {
    "version": CONSTANTS_VERSION,
    "sigma_obs": 1.0,  # observation noise sd, all Gaussian features
    "visit_windows": ((0, 2), (3, 5), (6, 8), (12, 14), (18, 20), (24, 26), (30, 32)),
    "time_scale": 26.0,  # design-matrix time divisor used by the long variant
    # scenario S1: cluster signal in intercepts, slopes near zero
    "s1_intercept_gap": 10.0,  # spacing between adjacent cluster intercept means
    "s1_intercept_sd": 1.0,  # within-cluster intercept sd, signal features
    "s1_slope_sd": 0.02,
    # scenario S2: identical intercept distributions, signal in slopes. The
    # baseline is a single individual-level shift shared by the signal
    # features plus a small feature-specific part.
    "s2_intercept_sd": 14.0,  # sd of the shared baseline shift
    "s2_intercept_ind_sd": 1.0,  # per-feature independent intercept sd
    "s2_slope_gap": 0.5,  # spacing between adjacent cluster slope means
    "s2_slope_sd": 0.02,
    # noise features: random effects present but carrying no cluster signal
    "noise_intercept_sd": 0.1,
    "noise_slope_sd": 0.004,
    "fixed_effect": -0.5,  # published binary-covariate coefficient
}

VARIANTS = ("long", "twostage", "first", "last")


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str  # "S1" or "S2"
    n_clusters: int  # 2, 3, or 4
    r_noise: int  # 25, 50, 75, or 100
    n_per_cluster: int = 50
    n_obs: int = 6
    r_signal: int = 3
    seed: int = 0
    use_last_windows: bool = False  # last 6 of the 7 visit windows instead of first 6

    def __post_init__(self):
        if self.scenario not in ("S1", "S2"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.n_obs > len(CONSTANTS["visit_windows"]):
            raise ValueError("n_obs exceeds the number of visit windows")

    @property
    def n_individuals(self) -> int:
        return self.n_clusters * self.n_per_cluster

    @property
    def n_features(self) -> int:
        return self.r_signal + self.r_noise


def _cluster_means(k: int, gap: float) -> np.ndarray:
    # symmetric grid around zero with adjacent spacing = gap
    return gap * (np.arange(k) - (k - 1) / 2.0)


def generate_scenario(spec: ScenarioSpec) -> tuple[LongitudinalDataset, TruthLabels]:
    """Draw one synthetic dataset and its ground-truth partition."""
    rng = RngStream(spec.seed, stream_id=101)
    c = CONSTANTS
    n, r_all = spec.n_individuals, spec.n_features
    labels = np.repeat(np.arange(spec.n_clusters), spec.n_per_cluster)

    if spec.scenario == "S1":
        int_means = _cluster_means(spec.n_clusters, c["s1_intercept_gap"])
        slo_means = np.zeros(spec.n_clusters)
        int_sd, slo_sd = c["s1_intercept_sd"], c["s1_slope_sd"]
    else:
        int_means = np.zeros(spec.n_clusters)
        slo_means = _cluster_means(spec.n_clusters, c["s2_slope_gap"])
        int_sd, slo_sd = c["s2_intercept_sd"], c["s2_slope_sd"]

    windows = c["visit_windows"]
    windows = windows[-spec.n_obs:] if spec.use_last_windows else windows[:spec.n_obs]
    lo = np.array([w[0] for w in windows], dtype=float)
    hi = np.array([w[1] for w in windows], dtype=float)

    covariate = rng.integers(0, 2, size=n).astype(float)  # Bernoulli(0.5)
    feature_specs = [
        FeatureSpec(id=f"f{r + 1:03d}", family="gaussian",
                    fixed_covariate_names=("w",), random_design="intercept_plus_time")
        for r in range(r_all)
    ]

    times, values, xs = [], [], []
    for i in range(n):
        k = labels[i]
        ti, vi, xi = [], [], []
        shared_b0 = int_sd * rng.standard_normal() if spec.scenario == "S2" else 0.0
        for r in range(r_all):
            t = lo + (hi - lo) * rng.random(spec.n_obs)
            if r < spec.r_signal:
                if spec.scenario == "S2":
                    b0 = shared_b0 + c["s2_intercept_ind_sd"] * rng.standard_normal()
                else:
                    b0 = int_means[k] + int_sd * rng.standard_normal()
                b1 = slo_means[k] + slo_sd * rng.standard_normal()
            else:
                b0 = c["noise_intercept_sd"] * rng.standard_normal()
                b1 = c["noise_slope_sd"] * rng.standard_normal()
            y = (b0 + b1 * t + c["fixed_effect"] * covariate[i]
                 + c["sigma_obs"] * rng.standard_normal(spec.n_obs))
            ti.append(t)
            vi.append(y)
            xi.append(np.full((1, spec.n_obs), covariate[i]))
        times.append(ti)
        values.append(vi)
        xs.append(xi)

    dataset = LongitudinalDataset(
        individual_ids=[f"i{i + 1:04d}" for i in range(n)],
        feature_specs=feature_specs,
        times=times, values=values, x=xs,
        covariate_names=("w",), covariates=covariate[:, None])
    return dataset, TruthLabels(labels=labels + 1)


def _endpoint_matrix(dataset: LongitudinalDataset, which: str) -> np.ndarray:
    """Each individual's first or last observed value per feature (NaN if none)."""
    n, r_all = dataset.N, dataset.R
    out = np.full((n, r_all), np.nan)
    for i in range(n):
        for r in range(r_all):
            t = dataset.times[i][r]
            if t.size == 0:
                continue
            j = int(np.argmin(t)) if which == "first" else int(np.argmax(t))
            out[i, r] = dataset.values[i][r][j]
    return out


@dataclass
class VariantResult:
    partition: partition_mod.PartitionResult
    record: sampler_mod.ChainRecord

    @property
    def n_clusters(self) -> int:
        return self.partition.n_clusters


def fit_variant(dataset: LongitudinalDataset, variant: str,
                config: sampler_mod.ChainConfig) -> VariantResult:
    """Fit one model variant and return its Binder point partition.

    long     full longitudinal model (time rescaled per CONSTANTS);
    twostage pilot random-effect estimates, then the factor-mixture chain
             on those estimates as a fixed matrix;
    first    factor-mixture chain on each individual's earliest value per
             feature;
    last     same on the latest value per feature.
    """
    if variant == "long":
        scaled = dataset.with_time_scale(CONSTANTS["time_scale"])
        record, _ = sampler_mod.run_gibbs(dataset=scaled, config=config)
    elif variant == "twostage":
        beta_hat = sampler_mod.fit_pilot(dataset)
        record, _ = sampler_mod.run_gibbs(beta_matrix=beta_hat, config=config)
    elif variant in ("first", "last"):
        mat = _endpoint_matrix(dataset, variant)
        if np.isnan(mat).all(axis=1).any():
            raise ValueError(f"variant {variant!r} needs at least one observation per individual")
        record, _ = sampler_mod.run_gibbs(beta_matrix=mat, config=config)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    sim = partition_mod.similarity_matrix(record.labels)
    part = partition_mod.binder_partition(sim, record.labels)
    return VariantResult(partition=part, record=record)


def stability_holdout(dataset: LongitudinalDataset, config: sampler_mod.ChainConfig,
                      n_subsets: int, holdout_size: int = 1,
                      variant: str = "long", seed: int = 0) -> list[tuple[int, float]]:
    """Refit on random subsets; score each against the full-data partition.

    Returns one (cluster count, adjusted Rand on the common individuals)
    pair per subset.
    """
    full = fit_variant(dataset, variant, config)
    rng = RngStream(seed, stream_id=7)
    n = dataset.N
    results = []
    for s in range(n_subsets):
        drop = set(rng.choice(n, size=holdout_size, replace=False).tolist())
        keep = [i for i in range(n) if i not in drop]
        sub = dataset.subset(keep)
        sub_cfg = replace(config, seed=config.seed + 1000 + s)
        fit = fit_variant(sub, variant, sub_cfg)
        ari = partition_mod.adjusted_rand(fit.partition.labels, full.partition.labels[keep])
        results.append((fit.n_clusters, float(ari)))
    return results


@dataclass
class BenchCell:
    scenario: str
    n_clusters: int
    r_noise: int
    variant: str
    replicate: int
    k_hat: int | None
    arand: float | None
    seconds: float
    error: str | None = None


def _run_cell(args) -> BenchCell:
    spec, variant, replicate, config = args
    tic = _time.perf_counter()
    try:
        dataset, truth = generate_scenario(spec)
        fit = fit_variant(dataset, variant, config)
        ari = partition_mod.adjusted_rand(fit.partition.labels, truth.labels)
        return BenchCell(spec.scenario, spec.n_clusters, spec.r_noise, variant,
                         replicate, fit.n_clusters, float(ari),
                         _time.perf_counter() - tic)
    except Exception as exc:  # cell failures are recorded, not fatal
        return BenchCell(spec.scenario, spec.n_clusters, spec.r_noise, variant,
                         replicate, None, None, _time.perf_counter() - tic,
                         error=f"{type(exc).__name__}: {exc}")


def run_benchmark(scenarios, variants, n_replicates: int,
                  config: sampler_mod.ChainConfig, seed: int = 0,
                  jobs: int = 1) -> list[BenchCell]:
    """Grid of scenario x variant x replicate fits, each on its own seed."""
    tasks = []
    for s_idx, base in enumerate(scenarios):
        for v_idx, variant in enumerate(variants):
            for rep in range(n_replicates):
                spec = replace(base, seed=seed + 10_000 * s_idx + rep)
                cfg = replace(config, seed=seed + 10_000 * s_idx + 100 * v_idx + rep)
                tasks.append((spec, variant, rep, cfg))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_cell, tasks))
    return [_run_cell(t) for t in tasks]


def write_bench_csv(path: str, cells: list[BenchCell]) -> None:
    with open(path, "w") as fh:
        fh.write("scenario,K,R_noise,variant,replicate,K_hat,aRand,seconds\n")
        for c in cells:
            k_hat = "" if c.k_hat is None else str(c.k_hat)
            ari = "" if c.arand is None else repr(round(c.arand, 6))
            fh.write(f"{c.scenario},{c.n_clusters},{c.r_noise},{c.variant},"
                     f"{c.replicate},{k_hat},{ari},{c.seconds:.3f}\n")


def summarize(cells: list[BenchCell]) -> dict:
    """Per-(scenario, K, R_noise, variant) mean (SD) of K_hat and aRand."""
    groups: dict = {}
    for c in cells:
        if c.error is not None:
            continue
        key = (c.scenario, c.n_clusters, c.r_noise, c.variant)
        groups.setdefault(key, []).append(c)
    out = {}
    for key, cs in groups.items():
        ks = np.array([c.k_hat for c in cs], dtype=float)
        ar = np.array([c.arand for c in cs], dtype=float)
        out[key] = {
            "n": len(cs),
            "K_hat_mean": float(ks.mean()),
            "K_hat_sd": float(ks.std(ddof=1)) if len(cs) > 1 else 0.0,
            "aRand_mean": float(ar.mean()),
            "aRand_sd": float(ar.std(ddof=1)) if len(cs) > 1 else 0.0,
        }
    return out
