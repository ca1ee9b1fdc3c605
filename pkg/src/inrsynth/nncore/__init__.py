from .checkpoint import load_ckpt, save_ckpt
from .gradcheck import GradCheckReport, grad_check
from .layers import (BatchNorm, Linear, MaxPoolSet, ParamStore, ReLU, Sequential, Sigmoid, Sine,
                     add_grads, maxpool_set, sine_forward)
from .losses import BCE_EPS, bce, bce_grad, mse, softmax_xent
from .optim import AdamState, adam_init, adam_step

__all__ = [
    "AdamState", "BCE_EPS", "BatchNorm", "GradCheckReport", "Linear", "MaxPoolSet", "ParamStore",
    "ReLU", "Sequential", "Sigmoid", "Sine", "adam_init", "adam_step", "add_grads", "bce", "bce_grad",
    "grad_check", "load_ckpt", "maxpool_set", "mse", "save_ckpt", "sine_forward", "softmax_xent",
]
