"""Rank-1 factorized CNNs: composed 3-D filters from 1-D factors, the
projected two-step training rule that keeps them rank-1, and a Hankel
matrix analysis of what that buys in output rank."""

from .tensor import (
    PADDING_MODES,
    ShapeError,
    as_tensor,
    conv1d_axis,
    conv2d_multi,
    outer3,
)
from .rank1 import (
    FactorGrads,
    Rank1Filter,
    backprop_factors,
    compose,
    mode_unfoldings,
    param_count,
    projected_update,
)
from .layers import (
    CONV_MODES,
    BatchNorm,
    ConvLayer,
    Dense,
    Dropout,
    Flatten,
    MaxPool2,
    Relu,
    canonical_mode,
    softmax_xent,
)
from .network import (
    Network,
    NetworkSpec,
    PRESETS,
    build_network,
    preset,
)
from .training import (
    TrainConfig,
    TrainingDiverged,
    TrainRun,
    evaluate,
    train,
    write_metrics_csv,
)
from .hankel import (
    HankelSystem,
    assemble_system,
    hankel_1d,
    hankel_2d,
    hankel_multi,
    jacobi_singular_values,
    numerical_rank,
    rank_bound_experiment,
    unvec,
    vec,
    write_rank_report_csv,
)
from .data import (
    CheckpointError,
    Dataset,
    IdxFormatError,
    batches,
    load_checkpoint,
    load_idx,
    save_checkpoint,
    synth_blobs,
)

__version__ = "0.1.0"
