"""Mixed-type longitudinal datasets with irregular per-individual time grids."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FAMILIES = ("gaussian", "poisson", "binomial")
CANONICAL_LINKS = {"gaussian": "identity", "poisson": "log", "binomial": "logit"}
RANDOM_DESIGNS = ("intercept_only", "intercept_plus_time")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSpec:
    id: str
    family: str
    fixed_covariate_names: tuple[str, ...] = ()
    random_design: str = "intercept_plus_time"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DataError(f"unknown family {self.family!r} for feature {self.id!r}")
        if self.random_design not in RANDOM_DESIGNS:
            raise DataError(f"unknown random_design {self.random_design!r} for feature {self.id!r}")

    @property
    def link(self) -> str:
        return CANONICAL_LINKS[self.family]

    @property
    def q_r(self) -> int:
        return 1 if self.random_design == "intercept_only" else 2


@dataclass(frozen=True)
class TruthLabels:
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        object.__setattr__(self, "labels", labels)
        uniq = np.unique(labels)
        if not np.array_equal(uniq, np.arange(1, uniq.size + 1)):
            raise DataError("truth labels must be a surjection onto {1..K}")


@dataclass
class LongitudinalDataset:
    """Ragged per-individual, per-feature observation series plus designs.

    Immutable after construction; shared freely across chains. ``times``,
    ``values`` are lists indexed [i][r]; ``x`` holds the p_r x n_ir fixed
    design and ``z`` the q_r x n_ir random design per (i, r).
    """

    individual_ids: list
    feature_specs: list[FeatureSpec]
    times: list  # [i][r] -> (n_ir,) float array
    values: list  # [i][r] -> (n_ir,) float array
    x: list  # [i][r] -> (p_r, n_ir) float array
    covariate_names: tuple[str, ...] = ()
    covariates: np.ndarray | None = None  # (N, n_cov) time-constant values
    time_scale: float = 1.0
    z: list = field(default_factory=list)  # built in __post_init__

    def __post_init__(self):
        if not self.z:
            self.z = [
                [self._build_z(self.times[i][r], self.feature_specs[r]) for r in range(self.R)]
                for i in range(self.N)
            ]
        for i in range(self.N):
            if all(self.times[i][r].size == 0 for r in range(self.R)):
                raise DataError(
                    f"individual {self.individual_ids[i]!r} has no observations on any feature"
                )
        for r, spec in enumerate(self.feature_specs):
            for i in range(self.N):
                vals = self.values[i][r]
                t = self.times[i][r]
                if not np.all(np.isfinite(t)):
                    raise DataError(f"non-finite time for ({self.individual_ids[i]}, {spec.id})")
                if spec.family == "binomial" and vals.size and not np.isin(vals, (0.0, 1.0)).all():
                    raise DataError(f"binomial feature {spec.id!r} has values outside {{0, 1}}")
                if spec.family == "poisson" and vals.size:
                    if np.any(vals < 0) or np.any(vals != np.round(vals)):
                        raise DataError(f"poisson feature {spec.id!r} has negative or non-integer values")

    def _build_z(self, t: np.ndarray, spec: FeatureSpec) -> np.ndarray:
        n = t.size
        if spec.random_design == "intercept_only":
            return np.ones((1, n))
        return np.vstack([np.ones(n), t / self.time_scale])

    @property
    def N(self) -> int:
        return len(self.individual_ids)

    @property
    def R(self) -> int:
        return len(self.feature_specs)

    @property
    def q_per_feature(self) -> list[int]:
        return [s.q_r for s in self.feature_specs]

    @property
    def q_total(self) -> int:
        return sum(self.q_per_feature)

    @property
    def block_offsets(self) -> list[int]:
        offs = [0]
        for s in self.feature_specs:
            offs.append(offs[-1] + s.q_r)
        return offs[:-1]

    def n_obs(self, i: int, r: int) -> int:
        return self.times[i][r].size

    def subset(self, indices) -> "LongitudinalDataset":
        """Dataset restricted to the given individual indices, order kept."""
        indices = list(indices)
        return LongitudinalDataset(
            individual_ids=[self.individual_ids[i] for i in indices],
            feature_specs=self.feature_specs,
            times=[self.times[i] for i in indices],
            values=[self.values[i] for i in indices],
            x=[self.x[i] for i in indices],
            covariate_names=self.covariate_names,
            covariates=(self.covariates[indices] if self.covariates is not None else None),
            time_scale=self.time_scale,
        )

    def with_time_scale(self, time_scale: float) -> "LongitudinalDataset":
        """Rebuild the random-effect designs with time divided by time_scale."""
        return LongitudinalDataset(
            individual_ids=self.individual_ids,
            feature_specs=self.feature_specs,
            times=self.times,
            values=self.values,
            x=self.x,
            covariate_names=self.covariate_names,
            covariates=self.covariates,
            time_scale=float(time_scale),
        )


def _parse_number(token: str, where: str) -> float:
    try:
        v = float(token)
    except ValueError:
        raise DataError(f"non-numeric value {token!r} at {where}") from None
    if not math.isfinite(v):
        raise DataError(f"non-finite value at {where}")
    return v


def load_feature_specs(spec_file) -> list[FeatureSpec]:
    """Spec file: one feature per line, `feature_id,family,random_design`."""
    specs = []
    with open(spec_file, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#"):
                continue
            if row[0].strip() == "feature_id":
                continue
            if len(row) < 3:
                raise DataError(f"spec file line {lineno}: expected feature_id,family,random_design")
            specs.append(FeatureSpec(id=row[0].strip(), family=row[1].strip(),
                                     random_design=row[2].strip()))
    if not specs:
        raise DataError("spec file declares no features")
    return specs


def load_dataset(long_format_file, covariate_file=None, spec_file=None,
                 feature_specs: list[FeatureSpec] | None = None,
                 time_scale: float = 1.0) -> LongitudinalDataset:
    """Load a long-format CSV into a validated dataset.

    Long file columns: individual_id,feature_id,time,value[,xvar...]; the
    covariate file (optional) has one row per individual with time-constant
    covariates that are duplicated into every feature's fixed design.
    Individuals are indexed in first-appearance order.
    """
    if feature_specs is None:
        if spec_file is None:
            raise DataError("either spec_file or feature_specs is required")
        feature_specs = load_feature_specs(spec_file)
    spec_index = {s.id: r for r, s in enumerate(feature_specs)}
    R = len(feature_specs)

    ind_index: dict = {}
    ind_ids: list = []
    rows: list = []  # (i, r, t, v, extra covariate values)
    extra_names: tuple[str, ...] = ()
    with open(long_format_file, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) < 4 or header[:4] != ["individual_id", "feature_id", "time", "value"]:
            raise DataError("long file must start with columns individual_id,feature_id,time,value")
        extra_names = tuple(header[4:])
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            iid, fid = row[0], row[1]
            if fid not in spec_index:
                raise DataError(f"row {lineno}: unknown feature_id {fid!r}")
            r = spec_index[fid]
            t = _parse_number(row[2], f"row {lineno} (time)")
            v = _parse_number(row[3], f"row {lineno} (value)")
            key = (iid, fid, t)
            if key in seen:
                raise DataError(f"row {lineno}: duplicated (individual, feature, time) triple {key}")
            seen.add(key)
            if iid not in ind_index:
                ind_index[iid] = len(ind_ids)
                ind_ids.append(iid)
            extras = [_parse_number(tok, f"row {lineno} ({name})")
                      for name, tok in zip(extra_names, row[4:])]
            rows.append((ind_index[iid], r, t, v, extras))

    N = len(ind_ids)
    cov_names: tuple[str, ...] = ()
    cov_matrix = None
    if covariate_file is not None:
        cov_rows = {}
        with open(covariate_file, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[0] != "individual_id":
                raise DataError("covariate file must start with column individual_id")
            cov_names = tuple(header[1:])
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                cov_rows[row[0]] = [_parse_number(tok, f"covariates row {lineno}") for tok in row[1:]]
        cov_matrix = np.zeros((N, len(cov_names)))
        for iid, i in ind_index.items():
            if iid not in cov_rows:
                raise DataError(f"individual {iid!r} missing from covariate file")
            cov_matrix[i] = cov_rows[iid]

    # Assemble ragged structures sorted by time within each (i, r).
    buckets: list = [[[] for _ in range(R)] for _ in range(N)]
    for i, r, t, v, extras in rows:
        buckets[i][r].append((t, v, extras))
    times, values, xmats = [], [], []
    n_extra = len(extra_names)
    n_cov = len(cov_names)
    p = n_cov + n_extra
    for i in range(N):
        t_i, v_i, x_i = [], [], []
        for r in range(R):
            entries = sorted(buckets[i][r], key=lambda e: e[0])
            t = np.array([e[0] for e in entries], dtype=float)
            v = np.array([e[1] for e in entries], dtype=float)
            x = np.zeros((p, t.size))
            if n_cov and cov_matrix is not None:
                x[:n_cov, :] = cov_matrix[i][:, None]
            for j, e in enumerate(entries):
                for a, val in enumerate(e[2]):
                    x[n_cov + a, j] = val
            t_i.append(t)
            v_i.append(v)
            x_i.append(x)
        times.append(t_i)
        values.append(v_i)
        xmats.append(x_i)

    all_names = cov_names + extra_names
    specs = [
        FeatureSpec(id=s.id, family=s.family, fixed_covariate_names=all_names,
                    random_design=s.random_design)
        for s in feature_specs
    ]
    return LongitudinalDataset(
        individual_ids=ind_ids,
        feature_specs=specs,
        times=times,
        values=values,
        x=xmats,
        covariate_names=cov_names,
        covariates=cov_matrix,
        time_scale=time_scale,
    )


def write_dataset(dataset: LongitudinalDataset, long_format_file, covariate_file=None,
                  spec_file=None) -> None:
    """Write a dataset back out in the canonical long CSV form."""
    n_cov = len(dataset.covariate_names)
    spec0 = dataset.feature_specs[0]
    extra_names = tuple(spec0.fixed_covariate_names[n_cov:])
    with open(long_format_file, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["individual_id", "feature_id", "time", "value", *extra_names])
        for i in range(dataset.N):
            for r, spec in enumerate(dataset.feature_specs):
                t = dataset.times[i][r]
                v = dataset.values[i][r]
                x = dataset.x[i][r]
                for j in range(t.size):
                    extras = [repr(float(x[n_cov + a, j])) for a in range(len(extra_names))]
                    writer.writerow([dataset.individual_ids[i], spec.id, repr(float(t[j])), repr(float(v[j])), *extras])
    if covariate_file is not None and dataset.covariates is not None:
        with open(covariate_file, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["individual_id", *dataset.covariate_names])
            for i in range(dataset.N):
                writer.writerow([dataset.individual_ids[i],
                                 *[repr(float(v)) for v in dataset.covariates[i]]])
    if spec_file is not None:
        with open(spec_file, "w", newline="") as fh:
            writer = csv.writer(fh)
            for spec in dataset.feature_specs:
                writer.writerow([spec.id, spec.family, spec.random_design])


def validate(dataset: LongitudinalDataset) -> list[str]:
    """Non-fatal data quality checks; returns human-readable warnings."""
    warnings = []
    for r, spec in enumerate(dataset.feature_specs):
        observed = 0
        for i in range(dataset.N):
            n = dataset.n_obs(i, r)
            if n > 0:
                observed += 1
            if 0 < n < 2 and spec.random_design == "intercept_plus_time":
                warnings.append(
                    f"individual {dataset.individual_ids[i]!r} has {n} observation(s) on feature "
                    f"{spec.id!r} under a random-slope design; the slope is weakly identified"
                )
        if observed < 0.1 * dataset.N:
            warnings.append(
                f"feature {spec.id!r} observed in only {observed}/{dataset.N} individuals"
            )
    return warnings
