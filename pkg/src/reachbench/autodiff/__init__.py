from .layers import MLP, Conv2d, Dense, glorot_uniform
from .params import (
    Adam,
    NetParams,
    ParamEntry,
    adam_step,
    blend_into,
    dump_params,
    load_checkpoint,
    parse_params,
    save_checkpoint,
)
from .tensor import Tape, Tensor, as_tensor

__all__ = [
    "MLP", "Conv2d", "Dense", "glorot_uniform",
    "Adam", "NetParams", "ParamEntry", "adam_step", "blend_into",
    "dump_params", "load_checkpoint", "parse_params", "save_checkpoint",
    "Tape", "Tensor", "as_tensor",
]
