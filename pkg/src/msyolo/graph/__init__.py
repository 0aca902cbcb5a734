from .config import (
    ConfigError,
    ConfigSemanticError,
    ConfigSyntaxError,
    LayerSpec,
    format_model_config,
    parse_model_config,
)
from .model import (
    CountReport,
    GraphModel,
    GraphShapeError,
    ModelGraph,
    UnresolvedGraphError,
    count_buffers,
    count_flops,
    count_params,
    graph_forward,
    infer_shapes,
    init_model,
    load_weights,
    save_weights,
)
from .train import ToyTask, TrainingDiverged, train_toy

__all__ = [
    "ConfigError",
    "ConfigSemanticError",
    "ConfigSyntaxError",
    "CountReport",
    "GraphModel",
    "GraphShapeError",
    "LayerSpec",
    "ModelGraph",
    "ToyTask",
    "TrainingDiverged",
    "UnresolvedGraphError",
    "count_buffers",
    "count_flops",
    "count_params",
    "format_model_config",
    "graph_forward",
    "infer_shapes",
    "init_model",
    "load_weights",
    "parse_model_config",
    "save_weights",
    "train_toy",
]
