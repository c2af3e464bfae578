"""From-scratch numpy network components."""

from .checkpoint import load_checkpoint, save_checkpoint
from .lot_layer import lot_inv_scale, lot_layer_backward, lot_layer_forward
from .network import (
    BackboneConfig,
    NetworkParams,
    build_backbone,
    network_backward,
    network_forward,
    parameter_shapes,
)
from .oalfe import mlp_backward, mlp_forward, oalfe_backward, oalfe_forward
