from .checkpoint import CheckpointError, CheckpointHeader, load_checkpoint, save_checkpoint
from .exact_gp import (
    ExactGpError,
    GpModel,
    LmlBreakdown,
    TrainingDivergedError,
    complexity_expansion,
    fit_full_batch,
    log_marginal_decomposed,
    optimal_signal_variance,
    predict,
    with_signal_variance,
)
from .feature_net import (
    DenseLayer,
    FeatureNetError,
    FeatureNetParams,
    NetSpec,
    constant_params,
    forward,
    identity_params,
    init_params,
)
from .kernels import (
    ArdSeParams,
    BaseKernel,
    DeepKernel,
    KernelError,
    ard_se_matrix,
    correlation_profile,
    deep_kernel_matrix,
    mean_abs_correlation,
)
from .nn_baseline import NnBaseline, PretrainError, PretrainResult, fit_nn_baseline, pretrain_feature_net
from .svgp import (
    ElboTerms,
    GaussianLikelihood,
    LikelihoodSpec,
    SoftmaxLikelihood,
    SvgpError,
    SvgpModel,
    VariationalState,
    elbo_gaussian,
    elbo_softmax_mc,
    fit_svgp,
    init_inducing_kmeans,
    kl_whitened,
    optimal_gaussian_variational,
    predict_classes,
    predict_latent,
    predict_observed,
)

__all__ = [
    # feature net
    "NetSpec",
    "DenseLayer",
    "FeatureNetParams",
    "FeatureNetError",
    "init_params",
    "forward",
    "identity_params",
    "constant_params",
    # kernels
    "BaseKernel",
    "ArdSeParams",
    "DeepKernel",
    "KernelError",
    "ard_se_matrix",
    "deep_kernel_matrix",
    "correlation_profile",
    "mean_abs_correlation",
    # exact GP
    "GpModel",
    "LmlBreakdown",
    "ExactGpError",
    "TrainingDivergedError",
    "log_marginal_decomposed",
    "optimal_signal_variance",
    "with_signal_variance",
    "complexity_expansion",
    "predict",
    "fit_full_batch",
    # sparse variational GP
    "VariationalState",
    "GaussianLikelihood",
    "SoftmaxLikelihood",
    "LikelihoodSpec",
    "SvgpModel",
    "SvgpError",
    "ElboTerms",
    "kl_whitened",
    "predict_latent",
    "elbo_gaussian",
    "elbo_softmax_mc",
    "init_inducing_kmeans",
    "fit_svgp",
    "optimal_gaussian_variational",
    "predict_classes",
    "predict_observed",
    # pretraining and baseline
    "PretrainError",
    "PretrainResult",
    "NnBaseline",
    "pretrain_feature_net",
    "fit_nn_baseline",
    # checkpoints
    "CheckpointError",
    "CheckpointHeader",
    "save_checkpoint",
    "load_checkpoint",
]
