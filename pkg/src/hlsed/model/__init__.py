from .networks import apply_bn_updates, backward, crnn_forward, forward, tcn_forward
from .weights import (
    CrnnConfig,
    ModelWeights,
    TcnConfig,
    check_shapes,
    config_from_dict,
    init_weights,
    load_weights,
    save_weights,
    tensor_shapes,
)

# small enough to train on one CPU core in minutes; the full-size defaults
# stay available through CrnnConfig()/TcnConfig()
DESK_CRNN = CrnnConfig(channels=(16, 32, 64), gru_hidden=64)
DESK_TCN = TcnConfig(channels=(16, 32, 64), n_filters=64)

__all__ = [
    "CrnnConfig",
    "TcnConfig",
    "ModelWeights",
    "DESK_CRNN",
    "DESK_TCN",
    "init_weights",
    "save_weights",
    "load_weights",
    "check_shapes",
    "config_from_dict",
    "tensor_shapes",
    "forward",
    "backward",
    "crnn_forward",
    "tcn_forward",
    "apply_bn_updates",
]
