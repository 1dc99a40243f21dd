"""Training dynamics of softmax-cross-entropy classifiers under temperature scaling."""

from .datasets import Dataset, gaussian_blobs, load_csv, save_csv, shuffle_labels
from .dynamics import (
    FixedPointError,
    IntegrationError,
    SaturatedModelError,
    TrainConfig,
    Trajectory,
    fixed_point_large_2class,
    fixed_point_small,
    gradient_flow_train,
    linearized_flow,
    momentum_train,
    regularized_linearized_flow,
    run,
    sgd_train,
)
from .kernel import (
    KernelTensor,
    analytic_ntk_fc,
    block_diagonal_kernel,
    empirical_ntk,
    kernel_apply,
    transfer_to_test,
)
from .loss import (
    condition_bound,
    dsoftmax_spectrum_largebeta,
    hessian_near_equilibrium,
    kappa,
    residual,
    softmax,
    softmax_jacobian,
    xent_loss,
)
from .model import (
    CorrelatedModel,
    MLPModel,
    NetworkSpec,
    correlated_init,
    correlation_for_z0_target,
    forward,
    init_params,
    jacobian,
    scale_logits,
)
from .rescale import (
    MomentumCanonical,
    SchemeParams,
    canonical_momentum,
    early_momentum_expansion,
    momentum_regime,
    scheme_params,
    step_magnitudes,
)
from .timescales import (
    TimescaleReport,
    collapse_metric,
    deviation_time,
    effective_lr,
    tau_nl,
    tau_z,
    timescale_report,
)

__version__ = "0.1.0"
