"""Robust two-dimensional SVD under the generalized kernel risk sensitive loss."""
from .decomp2d import (
    Decomposition2D,
    IterationState,
    MeanUpdate,
    RankConfig,
    SampleSet,
    SolverConfig,
    gkrsl_objective_at,
    gkrsl_svd2d_fit,
    kkt_residual,
    project,
    r1_svd2d_fit,
    reconstruct,
    residual,
    residuals,
    svd2d_fit,
    update_mean,
)
from ._mm import ConvergenceError
from .loss import (
    GkrslParams,
    adaptive_sigma,
    correntropy_kernel,
    effective_eigen_weight,
    gkrsl_objective,
    gkrsl_value,
    gkrsl_weight,
    weight_peak,
)
from .tensor import TensorModel, fold, ho_gkrsl_fit, ho_residual, ho_svd_fit, multi_mode_product, n_mode_product, unfold
from .evaluation import (
    ClusteringResult,
    FeatureSet,
    clustering_accuracy,
    density_peaks_init,
    kmeans,
    knn1_classify,
    knn1_predict,
    nmi,
    principal_angles,
    reconstruction_error,
)
from .data import ContaminatedSet, DataError, OutlierConfig, inject_outliers, load_idx, load_image_dir, normalize_frobenius
from .io import load_model, load_tensor, save_model, save_tensor

__version__ = "0.1.0"
