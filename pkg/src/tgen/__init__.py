"""Parameter-space temporal generalization: merge, downscale and extrapolate checkpoint trajectories."""

from .checkpoints import (
    Checkpoint,
    FlatView,
    Trajectory,
    flatten,
    l2_norm,
    load,
    load_trajectory,
    save,
    save_trajectory,
    unflatten,
)
from .evaluation import FwtMatrix, Projection, avg_fwt, norm_curve, pca_project, worst_fwt
from .extrap import (
    CoeffParams,
    LearnedChangeConfig,
    TaylorConfig,
    apply_learned,
    fit_learned_coeff,
    fit_learned_offset,
    taylor_order2,
    taylor_step,
)
from .interp import DownscaleConfig, MergeWeights, downscale, ema_weights, merge, recent, uniform_weights
from .methods import MethodSpec
from .synthetic import (
    MlpSpec,
    SyntheticTask,
    TrainConfig,
    evaluate_forecast,
    generate,
    run_continual,
    true_params,
)
from .tuning import SearchSpace, ValScore, select_alpha

__version__ = "0.1.0"
