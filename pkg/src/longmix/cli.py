"""Command-line interface: fit, simulate, bench, stability, diag."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
import traceback

import numpy as np

from . import __version__, data_model, partition, sampler, simulation


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_manifest(out_dir: str, command: list[str], config: dict,
                   inputs: dict, start: float) -> None:
    manifest = {
        "command": command,
        "config": config,
        "config_digest": _sha256_text(json.dumps(config, sort_keys=True)),
        "seed": config.get("seed"),
        "input_digests": {name: _sha256_file(p) for name, p in inputs.items()},
        "version": __version__,
        "constants_version": simulation.CONSTANTS_VERSION,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(start)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    }
    _atomic_write(os.path.join(out_dir, "manifest.json"),
                  json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_config_file(path: str) -> dict:
    """Plain key=value config; '#' starts a comment, blank lines ignored."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key] = value
    return out


_INT_KEYS = {"n_iter", "n_burn", "thin", "seed", "d", "split_merge_every",
             "n_restricted_scans", "init_clusters", "checkpoint_every"}
_FLOAT_KEYS = {"dl_a", "a_sigma", "b_sigma", "a_omega", "b_omega", "kappa0",
               "nu0_extra", "xi2", "alpha_init", "fix_alpha", "pca_threshold",
               "time_scale"}


def build_chain_config(raw: dict) -> tuple[sampler.ChainConfig, float]:
    """Resolve string key=value settings into a ChainConfig and time scale."""
    vals: dict = {}
    hyper_kwargs: dict = {}
    time_scale = 1.0
    for key, value in raw.items():
        if key == "alpha_prior":
            a, b = (float(v) for v in str(value).split(","))
            hyper_kwargs["alpha_prior"] = (a, b)
        elif key in ("dl_a", "a_sigma", "b_sigma", "a_omega", "b_omega",
                     "kappa0", "nu0_extra", "xi2"):
            hyper_kwargs[key] = float(value)
        elif key == "time_scale":
            time_scale = float(value)
        elif key == "d":
            vals["d_override"] = int(value)
        elif key in _INT_KEYS:
            vals[key] = int(value)
        elif key in _FLOAT_KEYS:
            vals[key] = float(value)
        elif key == "eta_update":
            vals[key] = str(value)
        elif key == "checkpoint_path":
            vals[key] = str(value)
        else:
            raise ValueError(f"unknown config key {key!r}")
    cfg = sampler.ChainConfig(hyper=sampler.Hyperparameters(**hyper_kwargs), **vals)
    return cfg, time_scale


def _write_similarity(path: str, sim: partition.SimilarityMatrix) -> None:
    with open(path, "w") as fh:
        for row in sim.values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _write_partition(path: str, ids, labels) -> None:
    with open(path, "w") as fh:
        fh.write("individual_id,label\n")
        for ident, lab in zip(ids, labels):
            fh.write(f"{ident},{int(lab) + 1}\n")


def _fail(exc: Exception, out_dir: str | None) -> int:
    record = {"error": type(exc).__name__, "message": str(exc),
              "traceback": traceback.format_exc()}
    if out_dir and os.path.isdir(out_dir):
        _atomic_write(os.path.join(out_dir, "error.json"),
                      json.dumps(record, indent=2) + "\n")
    print(f"error: {record['error']}: {record['message']}", file=sys.stderr)
    return 1


def cmd_fit(args) -> int:
    start = time.time()
    os.makedirs(args.out, exist_ok=True)
    try:
        raw = load_config_file(args.config) if args.config else {}
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.d is not None:
            raw["d"] = args.d
        if args.alpha_prior is not None:
            raw["alpha_prior"] = args.alpha_prior
        config, time_scale = build_chain_config(raw)
        dataset = data_model.load_dataset(args.data, args.covariates, args.spec)
        if time_scale != 1.0:
            dataset = dataset.with_time_scale(time_scale)
        for warning in data_model.validate(dataset):
            print(f"warning: {warning}", file=sys.stderr)
        record, _ = sampler.run_gibbs(dataset=dataset, config=config)
        sim = partition.similarity_matrix(record.labels)
        part = partition.binder_partition(sim, record.labels)
        sampler.write_trace_csv(os.path.join(args.out, "trace.csv"), record)
        _write_similarity(os.path.join(args.out, "similarity.csv"), sim)
        _write_partition(os.path.join(args.out, "partition.csv"),
                         dataset.individual_ids, part.labels)
        metrics = {"K": part.n_clusters, "binder_loss": part.binder_loss,
                   "d": record.d, "n_draws": record.n_draws}
        if args.truth:
            truth = np.loadtxt(args.truth, delimiter=",", skiprows=1, usecols=1, dtype=int)
            metrics["aRand"] = partition.adjusted_rand(part.labels, truth)
        _atomic_write(os.path.join(args.out, "metrics.json"),
                      json.dumps(metrics, indent=2, sort_keys=True) + "\n")
        inputs = {"data": args.data}
        if args.covariates:
            inputs["covariates"] = args.covariates
        if args.spec:
            inputs["spec"] = args.spec
        resolved = dict(raw)
        resolved.setdefault("seed", config.seed)
        write_manifest(args.out, sys.argv[1:], resolved, inputs, start)
        return 0
    except Exception as exc:
        return _fail(exc, args.out)


def cmd_simulate(args) -> int:
    start = time.time()
    os.makedirs(args.out, exist_ok=True)
    try:
        spec = simulation.ScenarioSpec(scenario=args.scenario, n_clusters=args.K,
                                       r_noise=args.noise, seed=args.seed)
        dataset, truth = simulation.generate_scenario(spec)
        data_model.write_dataset(dataset,
                                 os.path.join(args.out, "data.csv"),
                                 os.path.join(args.out, "covariates.csv"),
                                 os.path.join(args.out, "spec.csv"))
        with open(os.path.join(args.out, "truth.csv"), "w") as fh:
            fh.write("individual_id,label\n")
            for ident, lab in zip(dataset.individual_ids, truth.labels):
                fh.write(f"{ident},{int(lab)}\n")
        config = {"scenario": args.scenario, "K": args.K, "noise": args.noise,
                  "seed": args.seed}
        write_manifest(args.out, sys.argv[1:], config, {}, start)
        return 0
    except Exception as exc:
        return _fail(exc, args.out)


def cmd_bench(args) -> int:
    start = time.time()
    os.makedirs(args.out, exist_ok=True)
    try:
        raw = load_config_file(args.config) if args.config else {}
        raw.setdefault("n_iter", 4000)
        raw.setdefault("n_burn", 2000)
        raw.setdefault("thin", 2)
        config, _ = build_chain_config(raw)
        scenarios = [
            simulation.ScenarioSpec(scenario=s, n_clusters=k, r_noise=noise)
            for s in args.scenarios.split(",")
            for k in (int(v) for v in args.K.split(","))
            for noise in (int(v) for v in args.noise.split(","))
        ]
        variants = args.variants.split(",")
        cells = simulation.run_benchmark(scenarios, variants, args.replicates,
                                         config, seed=args.seed, jobs=args.jobs)
        simulation.write_bench_csv(os.path.join(args.out, "bench_results.csv"), cells)
        summary = {" / ".join(map(str, key)): val
                   for key, val in simulation.summarize(cells).items()}
        _atomic_write(os.path.join(args.out, "summary.json"),
                      json.dumps(summary, indent=2, sort_keys=True) + "\n")
        failures = [c for c in cells if c.error is not None]
        for c in failures:
            print(f"warning: cell {c.scenario}/K={c.n_clusters}/{c.variant}"
                  f"/rep{c.replicate} failed: {c.error}", file=sys.stderr)
        write_manifest(args.out, sys.argv[1:], dict(raw, seed=args.seed), {}, start)
        return 0
    except Exception as exc:
        return _fail(exc, args.out)


def cmd_stability(args) -> int:
    start = time.time()
    os.makedirs(args.out, exist_ok=True)
    try:
        raw = load_config_file(args.config) if args.config else {}
        config, time_scale = build_chain_config(raw)
        dataset = data_model.load_dataset(args.data, args.covariates, args.spec)
        if time_scale != 1.0:
            dataset = dataset.with_time_scale(time_scale)
        results = simulation.stability_holdout(dataset, config, args.subsets,
                                               holdout_size=args.holdout,
                                               seed=config.seed)
        with open(os.path.join(args.out, "stability.csv"), "w") as fh:
            fh.write("subset,K_hat,aRand\n")
            for s, (k, ari) in enumerate(results):
                fh.write(f"{s},{k},{repr(round(ari, 6))}\n")
        write_manifest(args.out, sys.argv[1:], dict(raw), {"data": args.data}, start)
        return 0
    except Exception as exc:
        return _fail(exc, args.out)


def cmd_diag(args) -> int:
    try:
        with open(args.trace) as fh:
            header = fh.readline().strip().split(",")
        table = np.loadtxt(args.trace, delimiter=",", skiprows=1, ndmin=2)
        report = {}
        for j, name in enumerate(header):
            if name == "iter":
                continue
            col = table[:, j]
            try:
                report[name] = sampler.geweke_z(col)
            except ValueError as exc:
                report[name] = str(exc)
        for name, z in report.items():
            flag = ""
            if isinstance(z, float):
                flag = "  *" if abs(z) > 1.96 else ""
                print(f"{name}: z = {z:+.3f}{flag}")
            else:
                print(f"{name}: {z}")
        return 0
    except Exception as exc:
        return _fail(exc, None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="longmix",
        description="Bayesian latent-factor mixture clustering of "
                    "high-dimensional longitudinal data")
    constants_digest = _sha256_text(json.dumps(
        {k: str(v) for k, v in simulation.CONSTANTS.items()}, sort_keys=True))[:12]
    parser.add_argument("--version", action="version",
                        version=f"longmix {__version__} (constants {constants_digest})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the model to a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--covariates")
    p.add_argument("--spec")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--alpha-prior", dest="alpha_prior")
    p.add_argument("--truth")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--scenario", choices=("S1", "S2"), required=True)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--noise", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="run the simulation benchmark grid")
    p.add_argument("--scenarios", default="S1,S2")
    p.add_argument("--K", default="2,3")
    p.add_argument("--noise", default="25")
    p.add_argument("--variants", default=",".join(simulation.VARIANTS))
    p.add_argument("--replicates", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("stability", help="holdout stability of the partition")
    p.add_argument("--data", required=True)
    p.add_argument("--covariates")
    p.add_argument("--spec")
    p.add_argument("--config")
    p.add_argument("--subsets", type=int, default=50)
    p.add_argument("--holdout", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("diag", help="Geweke diagnostics for a trace.csv")
    p.add_argument("trace")
    p.set_defaults(func=cmd_diag)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
