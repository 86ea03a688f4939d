"""Differentiable building blocks on ``(batch, channel, z, y, x)`` tensors.

Thin, shape-checked wrappers over ``torch.nn.functional``; reverse-mode
gradients come from torch autograd.
"""
import torch
import torch.nn.functional as F

from ..errors import ShapeMismatch


def _check_5d(x, name):
    if x.dim() != 5:
        raise ShapeMismatch(f"{name} expects a 5-D (b, c, z, y, x) tensor, got {tuple(x.shape)}")


def conv3d(x, weight, bias=None):
    """Stride-1 convolution with 'same' zero padding (odd kernels)."""
    _check_5d(x, "conv3d")
    if weight.dim() != 5 or weight.shape[1] != x.shape[1]:
        raise ShapeMismatch(f"conv3d weight {tuple(weight.shape)} does not fit input "
                            f"channels {x.shape[1]}")
    k = weight.shape[2:]
    if any(s % 2 == 0 for s in k):
        raise ShapeMismatch("conv3d needs odd kernel sizes")
    return F.conv3d(x, weight, bias, padding=tuple(s // 2 for s in k))


def maxpool3d(x):
    """2x2x2 max pooling, stride 2. Ties route the gradient to the first index."""
    _check_5d(x, "maxpool3d")
    if any(s % 2 for s in x.shape[2:]):
        raise ShapeMismatch(f"maxpool3d needs even spatial dims, got {tuple(x.shape[2:])}")
    return F.max_pool3d(x, kernel_size=2, stride=2)


def upconv3d(x, weight, bias=None):
    """2x2x2 transposed convolution, stride 2; ``weight`` is (c_in, c_out, 2, 2, 2)."""
    _check_5d(x, "upconv3d")
    if weight.dim() != 5 or weight.shape[0] != x.shape[1] or tuple(weight.shape[2:]) != (2, 2, 2):
        raise ShapeMismatch(f"upconv3d weight {tuple(weight.shape)} does not fit input "
                            f"channels {x.shape[1]}")
    return F.conv_transpose3d(x, weight, bias, stride=2)


def batchnorm(x, weight, bias, running_mean=None, running_var=None, training=True,
              momentum=0.1, eps=1e-5):
    """Batch normalisation over (batch, z, y, x) per channel."""
    _check_5d(x, "batchnorm")
    if weight is not None and weight.shape[0] != x.shape[1]:
        raise ShapeMismatch("batchnorm parameters do not match channel count")
    return F.batch_norm(x, running_mean, running_var, weight, bias, training, momentum, eps)


def instancenorm(x, weight, bias, eps=1e-5):
    _check_5d(x, "instancenorm")
    return F.instance_norm(x, weight=weight, bias=bias, eps=eps)


def relu(x):
    return torch.relu(x)


def sigmoid(x):
    return torch.sigmoid(x)


def concat(tensors, dim=1):
    """Concatenate along channels; all other dims must agree."""
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.dim() != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref))
                                      if i != dim):
            raise ShapeMismatch(f"cannot concat {tuple(t.shape)} with {tuple(ref)}")
    return torch.cat(tensors, dim=dim)
