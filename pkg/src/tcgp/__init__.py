"""Bayesian inference of sparse, spatially varying correlations between two
co-registered image modalities.

The model couples two per-subject image stacks through a latent Gaussian
process whose thresholded magnitude controls where (and with which sign) the
modalities are correlated.  Posterior computation is an exact Gibbs sampler
over mixtures of truncated densities, with an optional mini-batch
Metropolis-within-Gibbs accelerator for large grids.
"""

from .types import (
    GridDomain,
    ImageDataset,
    TransformedDataset,
    HyperParams,
    ChainState,
    normalize_dataset,
    transform_data,
)
from .kernels import (
    KLBasis,
    matern,
    gram_matrix,
    eigendecompose,
    select_truncation,
    evaluate_basis,
    build_basis,
)
from .model import threshold_G, rho_from_xi, s_transform, mean_fields, CorrelationField
from .piecewise import ThresholdTerm, PiecewiseDensity, build, log_density, sample
from .gibbs import GibbsConfig, PosteriorSamples, GibbsSampler, run_gibbs, log_joint
from .hybrid import HybridConfig, HybridSampler, run_hybrid, subsample_batch, accept_ratio
from .simulate import SimSpec2D, SimTruth, generate_2d, generate_3d
from .analysis import (
    PosteriorSummary,
    ClusterReport,
    summarize,
    metrics,
    clusters,
    voxelwise_baseline,
)

__version__ = "0.1.0"

__all__ = [
    "GridDomain", "ImageDataset", "TransformedDataset", "HyperParams", "ChainState",
    "normalize_dataset", "transform_data",
    "KLBasis", "matern", "gram_matrix", "eigendecompose", "select_truncation",
    "evaluate_basis", "build_basis",
    "threshold_G", "rho_from_xi", "s_transform", "mean_fields", "CorrelationField",
    "ThresholdTerm", "PiecewiseDensity", "build", "log_density", "sample",
    "GibbsConfig", "PosteriorSamples", "GibbsSampler", "run_gibbs", "log_joint",
    "HybridConfig", "HybridSampler", "run_hybrid", "subsample_batch", "accept_ratio",
    "SimSpec2D", "SimTruth", "generate_2d", "generate_3d",
    "PosteriorSummary", "ClusterReport", "summarize", "metrics", "clusters",
    "voxelwise_baseline",
]
