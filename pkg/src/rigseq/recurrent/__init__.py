"""Recurrent units, their configs, and checkpoint IO."""

from .checkpoint import MAGIC, load_checkpoint, save_checkpoint
from .models import (
    ARCHES,
    CELL_MODES,
    CONTEXT_MODES,
    GridLstmModel,
    LstmModel,
    ModelConfig,
    RigLstmModel,
    SequenceModel,
    UnitState,
    build_model,
    degenerate_to_grid,
    validate_config,
)
from .ops import (
    StepTrace,
    gridlstm_step,
    lstm_step,
    rig_step,
    selection_masks,
    soft_state_update,
)

__all__ = [
    "ARCHES",
    "CELL_MODES",
    "CONTEXT_MODES",
    "GridLstmModel",
    "LstmModel",
    "MAGIC",
    "ModelConfig",
    "RigLstmModel",
    "SequenceModel",
    "StepTrace",
    "UnitState",
    "build_model",
    "degenerate_to_grid",
    "gridlstm_step",
    "load_checkpoint",
    "lstm_step",
    "rig_step",
    "save_checkpoint",
    "selection_masks",
    "soft_state_update",
    "validate_config",
]
