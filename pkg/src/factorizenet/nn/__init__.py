from . import functional
from .functional import (
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    maxpool2d_backward,
    maxpool2d_forward,
    relu_backward,
    relu_forward,
    softmax,
    softmax_crossentropy,
    softmax_crossentropy_backward,
)
from .init import derive_seed, glorot_uniform_init, make_rng
from .layers import BatchNorm, Conv2D, Dense, Layer, LayerKind, MaxPool2D, ReLU, SoftmaxOutput
from .network import Network
