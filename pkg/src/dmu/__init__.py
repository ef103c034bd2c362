"""Domain Mixed Unit: a gated linear/log-space neural arithmetic unit."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    DmuError,
    DmuParams,
    ForwardTrace,
    GatePair,
    decompose,
    domain_results,
    forward,
    gate_pair,
    mix_and_finalize,
    mix_step,
    nalm_params,
    sign_linear,
    sign_log,
)
from .grad import Gradients, backward, fd_gradient, loss_and_grad  # noqa: E402

__all__ = [
    "DmuError",
    "DmuParams",
    "ForwardTrace",
    "GatePair",
    "Gradients",
    "backward",
    "decompose",
    "domain_results",
    "fd_gradient",
    "forward",
    "gate_pair",
    "loss_and_grad",
    "mix_and_finalize",
    "mix_step",
    "nalm_params",
    "sign_linear",
    "sign_log",
]
