from parkourpy.neural.layers import CELU, GRU, MLP, Conv2d, Linear, MaxPool2d, Module, Parameter, no_grad
from parkourpy.neural.optim import Adam, clip_grad_norm
from parkourpy.neural.policy import (
    Observation,
    OraclePolicy,
    PolicyDims,
    StudentPolicy,
    ValueNetwork,
)
from parkourpy.neural.snapshot import load_snapshot, parse_snapshot, quantize, save_snapshot

__all__ = [
    "CELU",
    "GRU",
    "MLP",
    "Adam",
    "Conv2d",
    "Linear",
    "MaxPool2d",
    "Module",
    "Observation",
    "OraclePolicy",
    "Parameter",
    "PolicyDims",
    "StudentPolicy",
    "ValueNetwork",
    "clip_grad_norm",
    "load_snapshot",
    "no_grad",
    "parse_snapshot",
    "quantize",
    "save_snapshot",
]
