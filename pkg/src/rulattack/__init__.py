"""Adversarial-attack testbed for deep remaining-useful-life regression.

Pipeline: parse C-MAPSS turbofan data, train LSTM/GRU/CNN regressors on
piece-wise RUL labels, craft FGSM/BIM adversarial examples against them,
and quantify the damage (RMSE deltas, epsilon sweeps, cross-model
transferability).
"""

from .attacks import (
    AdversarialExample,
    AttackConfig,
    craft,
    craft_batch,
    craft_bim,
    craft_fgsm,
)
from .data import (
    EngineRecord,
    EngineTrajectory,
    LabeledWindow,
    NormalizationStats,
    SensorWindow,
    filter_min_cycles,
    make_windows,
    normalize,
    parse_cmapss,
    parse_rul_file,
    select_informative_channels,
    terminal_windows,
)
from .evaluation import (
    AttackReport,
    TransferMatrix,
    epsilon_sweep,
    evaluate_attack,
    piecewise_rul,
    rmse,
    transfer_matrix,
)
from .models import (
    ModelSpec,
    RegressionModel,
    TrainConfig,
    build,
    load,
    loss_and_input_gradient,
    parameter_count,
    predict,
    predict_batch,
    preset,
    save,
    train,
)
from .tensor import Tape, Tensor, grad, record

__version__ = "0.1.0"
