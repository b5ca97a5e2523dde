from .functional import (
    conv2d,
    conv2d_backward,
    leaky_relu,
    leaky_relu_backward,
    linear,
    linear_backward,
    max_pool,
    max_pool_backward,
    softmax,
)
from .gradcheck import GradCheckReport, grad_check, relative_error
from .layers import Conv2D, Flatten, LeakyReLU, Linear, MaxPool2D, Sequential
from .losses import mse, softmax_ce
from .optim import Adam, adam_step, xavier_uniform
