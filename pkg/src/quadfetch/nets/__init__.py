"""Network kernels, policy models, optimizer, checkpoints, gradient checks."""

from .checkpoint import CheckpointError, load_bundle, save_bundle
from .gradcheck import gradcheck_all
from .layers import Conv2d, Dense, GRUCell
from .models import (
    ACTION_DIM,
    CMD_DIM,
    DEPTH_RES,
    LATENT_DIM,
    PROPRIO_DIM,
    SCANDOT_DIM,
    OracleNet,
    StudentNet,
    build_from_descriptor,
)
from .optim import Adam

__all__ = [
    "ACTION_DIM",
    "Adam",
    "CMD_DIM",
    "CheckpointError",
    "Conv2d",
    "DEPTH_RES",
    "Dense",
    "GRUCell",
    "LATENT_DIM",
    "OracleNet",
    "PROPRIO_DIM",
    "SCANDOT_DIM",
    "StudentNet",
    "build_from_descriptor",
    "gradcheck_all",
    "load_bundle",
    "save_bundle",
]
