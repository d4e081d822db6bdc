"""Bayesian latent-factor mixture clustering of high-dimensional,
irregularly sampled, mixed-type longitudinal data."""

__version__ = "0.1.0"

from .data_model import (  # noqa: F401
    FeatureSpec,
    LongitudinalDataset,
    TruthLabels,
    load_dataset,
    write_dataset,
)
from .partition import adjusted_rand, binder_partition, similarity_matrix  # noqa: F401
from .sampler import (  # noqa: F401
    ChainConfig,
    ChainRecord,
    Hyperparameters,
    fit_pilot,
    geweke_z,
    run_gibbs,
    select_latent_dim,
)
from .simulation import ScenarioSpec, fit_variant, generate_scenario  # noqa: F401
