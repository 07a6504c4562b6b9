"""Layer graphs: stateful layers, automatic graph tracing, reverse-mode
gradients and a small training harness, on a numpy-backed tensor type."""
from . import tensor
from .autodiff import AdjointMap, backward, grad_check
from .errors import *  # noqa: F401,F403
from .graph import ExecutablePlan, Graph, optimize
from .layers import (
    Activation,
    Add,
    Context,
    Dropout,
    Input,
    Layer,
    LayerState,
    Linear,
    Lookup,
    MeanSquaredError,
    Module,
    SoftmaxCrossEntropy,
    seed_scope,
)
from .tensor import Tensor
from .train import SGD, History, Model

__version__ = "0.1.0"
