"""Windowed-attention inference with temporal cluster assignment."""
from .backbone import GridSpec, StageModel, TokenGrid, init_weights, load_weights, save_weights, stage_forward
from .clustering import ClusteredState, cluster_frame, cluster_tokens, reconstruct
from .errors import ConfigError, FormatError, ShapeError, StateError, TcaError
from .temporal import ReferenceBank, StreamState, TcaConfig, process_frame

__version__ = "0.1.0"
