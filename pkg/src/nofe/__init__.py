"""Domain-aware dimensionality reduction with a graph kernel neural operator."""

from .baselines import PcaModel, pca_fit, pca_transform
from .errors import NumericError, ValidationError
from .graph import (
    DomainGraph,
    DualGraph,
    FunctionSample,
    build_dual_graph,
    build_knn_graph,
    idw_init,
    receptive_field,
)
from .metrics import (
    MetricReport,
    PatchSplit,
    gluing_mse,
    grayscale_correlation,
    lipschitz_ratios,
    patch_stitching_error,
    stress1,
    stress_local,
)
from .model import ModelConfig, ModelParams, forward, forward_dual, init_params, kernel_matrix
from .training import (
    AffinityTable,
    TrainConfig,
    TrainState,
    adamw_step,
    affinities,
    kl_divergence,
    loss_and_gradients,
    train,
)

__version__ = "0.1.0"
