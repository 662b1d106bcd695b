"""Tabular regression on city-year judicial indicators with row/column
encoders, arithmetic attention and a four-expert mixture."""

from .dataset import (
    TYPES,
    ColumnScaler,
    IndicatorTable,
    SampleRow,
    SplitPlan,
    SplitProtocol,
    SynthConfig,
    fit_scaler,
    generate_synthetic,
    load_table,
    make_split,
    write_table,
)
from .gradcheck import grad_check
from .model import ModelConfig, TljdModel
from .optim import AdamState, adam_step
from .params import ParamStore, load_checkpoint, save_checkpoint
from .tensor import Tensor, forward_backward
from .training import (
    MetricsReport,
    TrainConfig,
    compute_metrics,
    evaluate,
    loss_er,
    loss_joint,
    loss_reg,
    train,
)

__version__ = "0.1.0"
