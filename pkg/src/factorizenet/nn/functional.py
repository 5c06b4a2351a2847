"""Stateless forward/backward kernels on NCHW numpy arrays.

Every kernel computes in the dtype of its inputs, so the same code serves the
float32 training path and the float64 gradient-check mode.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigurationError, RejectedInputError


def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def _check_conv(x, w, b, groups, stride, padding):
    if x.ndim != 4:
        raise RejectedInputError(f"conv2d expects NCHW input, got shape {x.shape}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise RejectedInputError(f"conv2d expects square [C_out, C_in/groups, K, K] weights, got {w.shape}")
    if groups < 1 or stride < 1 or padding < 0:
        raise ConfigurationError(f"invalid groups={groups} stride={stride} padding={padding}")
    c_in, c_out = x.shape[1], w.shape[0]
    if c_in % groups or c_out % groups:
        raise ConfigurationError(f"channels ({c_in} in, {c_out} out) not divisible by groups={groups}")
    if w.shape[1] * groups != c_in:
        raise RejectedInputError(f"input has {c_in} channels but weights expect {w.shape[1] * groups}")
    if b is not None and b.shape != (c_out,):
        raise RejectedInputError(f"bias shape {b.shape} does not match {c_out} output channels")
    k = w.shape[2]
    if x.shape[2] + 2 * padding < k or x.shape[3] + 2 * padding < k:
        raise RejectedInputError(f"kernel {k} larger than padded input {x.shape[2:]}")


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def im2col(x, kernel, groups, stride, padding):
    """Unfold x into per-group column matrices of shape [G, C_in/G * K * K, N * H' * W']."""
    n, c, h, w = x.shape
    xp = _pad(x, padding)
    h_out = conv_output_size(h, kernel, stride, padding)
    w_out = conv_output_size(w, kernel, stride, padding)
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :h_out, :w_out]
    # win: [N, C, H', W', K, K]
    win = win.reshape(n, groups, c // groups, h_out, w_out, kernel, kernel)
    cols = win.transpose(1, 2, 5, 6, 0, 3, 4).reshape(groups, (c // groups) * kernel * kernel, n * h_out * w_out)
    return cols, h_out, w_out


def conv2d_forward(x, w, b=None, groups=1, stride=1, padding=0, return_cols=False):
    """Grouped 2-D cross-correlation.

    Output channel ``o`` belongs to group ``o // (C_out / groups)`` and only sees
    the input channels of that group.
    """
    _check_conv(x, w, b, groups, stride, padding)
    n = x.shape[0]
    c_out, cg, k, _ = w.shape
    cols, h_out, w_out = im2col(x, k, groups, stride, padding)
    wg = w.reshape(groups, c_out // groups, cg * k * k)
    out = np.matmul(wg, cols)  # [G, O/G, N*H'*W']
    out = out.reshape(c_out, n, h_out, w_out).transpose(1, 0, 2, 3)
    if b is not None:
        out = out + b.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out, dtype=np.result_type(x, w))
    if return_cols:
        return out, cols
    return out


def conv2d_backward(x, w, b, grad_out, groups=1, stride=1, padding=0, cols=None):
    """Gradients of a grouped convolution. Returns a dict with ``dw``, ``db`` and ``dx``."""
    _check_conv(x, w, b, groups, stride, padding)
    n, c, h, wd = x.shape
    c_out, cg, k, _ = w.shape
    h_out = conv_output_size(h, k, stride, padding)
    w_out = conv_output_size(wd, k, stride, padding)
    if grad_out.shape != (n, c_out, h_out, w_out):
        raise RejectedInputError(f"upstream gradient shape {grad_out.shape} != output shape {(n, c_out, h_out, w_out)}")
    if cols is None:
        cols, _, _ = im2col(x, k, groups, stride, padding)

    dy = grad_out.transpose(1, 0, 2, 3).reshape(groups, c_out // groups, n * h_out * w_out)
    dw = np.matmul(dy, cols.transpose(0, 2, 1)).reshape(w.shape)
    db = grad_out.sum(axis=(0, 2, 3))

    wg = w.reshape(groups, c_out // groups, cg * k * k)
    dcols = np.matmul(wg.transpose(0, 2, 1), dy)  # [G, Cg*K*K, N*H'*W']
    dcols = dcols.reshape(groups, cg, k, k, n, h_out, w_out).transpose(4, 0, 1, 2, 3, 5, 6)
    dcols = dcols.reshape(n, c, k, k, h_out, w_out)

    dxp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=dcols.dtype)
    h_span = stride * (h_out - 1) + 1
    w_span = stride * (w_out - 1) + 1
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + h_span:stride, j:j + w_span:stride] += dcols[:, :, i, j]
    dx = dxp[:, :, padding:padding + h, padding:padding + wd]
    return {"dw": dw, "db": db, "dx": np.ascontiguousarray(dx)}


def _bn_axes(x):
    return (0,) + tuple(range(2, x.ndim))


def _bn_shape(x):
    return (1, -1) + (1,) * (x.ndim - 2)


def batchnorm_forward(x, gamma, beta, running_mean, running_var, eps=1e-3, train=False, momentum=0.99):
    """Batch normalization over every axis except the channel axis (axis 1).

    In train mode returns ``(y, cache, new_mean, new_var)`` where the new
    running statistics are the exponential moving averages; the caller decides
    whether to store them. In infer mode returns ``(y, cache, running_mean, running_var)``.
    """
    if x.ndim < 2 or x.shape[1] != gamma.shape[0]:
        raise RejectedInputError(f"batchnorm over {gamma.shape[0]} channels got input {x.shape}")
    for name, arr in (("beta", beta), ("running_mean", running_mean), ("running_var", running_var)):
        if arr.shape != gamma.shape:
            raise RejectedInputError(f"{name} shape {arr.shape} != gamma shape {gamma.shape}")
    if eps <= 0:
        raise ConfigurationError("batchnorm epsilon must be positive")
    shape = _bn_shape(x)
    if train:
        axes = _bn_axes(x)
        mean = x.mean(axis=axes)
        var = ((x - mean.reshape(shape)) ** 2).mean(axis=axes)
        new_mean = (momentum * running_mean + (1.0 - momentum) * mean).astype(running_mean.dtype)
        new_var = (momentum * running_var + (1.0 - momentum) * var).astype(running_var.dtype)
    else:
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    y = gamma.reshape(shape) * xhat + beta.reshape(shape)
    cache = {"xhat": xhat, "inv_std": inv_std, "train": train}
    return y.astype(x.dtype, copy=False), cache, new_mean, new_var


def batchnorm_backward(grad_out, gamma, cache):
    """Returns a dict with ``dgamma``, ``dbeta`` and ``dx``."""
    xhat, inv_std = cache["xhat"], cache["inv_std"]
    if grad_out.shape != xhat.shape:
        raise RejectedInputError(f"upstream gradient shape {grad_out.shape} != {xhat.shape}")
    axes = _bn_axes(grad_out)
    shape = _bn_shape(grad_out)
    dgamma = (grad_out * xhat).sum(axis=axes)
    dbeta = grad_out.sum(axis=axes)
    scale = (gamma * inv_std).reshape(shape)
    if cache["train"]:
        m = grad_out.size // grad_out.shape[1]
        dx = scale / m * (m * grad_out - dbeta.reshape(shape) - xhat * dgamma.reshape(shape))
    else:
        dx = scale * grad_out
    return {"dgamma": dgamma, "dbeta": dbeta, "dx": dx.astype(grad_out.dtype, copy=False)}


def relu_forward(x):
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(x, grad_out):
    if grad_out.shape != x.shape:
        raise RejectedInputError(f"upstream gradient shape {grad_out.shape} != {x.shape}")
    return grad_out * (x > 0)


def maxpool2d_forward(x, window=2, stride=2):
    """Returns ``(out, argmax)``; argmax indexes the flattened window of each output cell."""
    if x.ndim != 4:
        raise RejectedInputError(f"maxpool expects NCHW input, got {x.shape}")
    if window < 1 or stride < 1:
        raise ConfigurationError("pool window and stride must be positive")
    n, c, h, w = x.shape
    if h < window or w < window:
        raise RejectedInputError(f"pool window {window} larger than input {x.shape[2:]}")
    h_out = (h - window) // stride + 1
    w_out = (w - window) // stride + 1
    win = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :h_out, :w_out]
    win = win.reshape(n, c, h_out, w_out, window * window)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool2d_backward(x_shape, arg, grad_out, window=2, stride=2):
    n, c, h, w = x_shape
    if grad_out.shape != arg.shape:
        raise RejectedInputError(f"upstream gradient shape {grad_out.shape} != pooled shape {arg.shape}")
    h_out, w_out = arg.shape[2:]
    di, dj = np.divmod(arg, window)
    rows = np.arange(h_out).reshape(1, 1, -1, 1) * stride + di
    cols = np.arange(w_out).reshape(1, 1, 1, -1) * stride + dj
    flat = (np.arange(n * c).reshape(n, c, 1, 1) * h + rows) * w + cols
    dx = np.zeros(n * c * h * w, dtype=grad_out.dtype)
    if stride >= window:
        dx[flat.ravel()] = grad_out.ravel()
    else:
        np.add.at(dx, flat.ravel(), grad_out.ravel())
    return dx.reshape(x_shape)


def dense_forward(x, w, b=None):
    """Affine map on the flattened trailing axes: ``x.reshape(N, -1) @ w.T + b``."""
    x2 = x.reshape(x.shape[0], -1)
    if w.ndim != 2 or x2.shape[1] != w.shape[1]:
        raise RejectedInputError(f"dense expects {w.shape[1] if w.ndim == 2 else '?'} features, got input {x.shape}")
    out = x2 @ w.T
    if b is not None:
        if b.shape != (w.shape[0],):
            raise RejectedInputError(f"bias shape {b.shape} does not match {w.shape[0]} outputs")
        out = out + b
    return out


def dense_backward(x, w, grad_out):
    x2 = x.reshape(x.shape[0], -1)
    if grad_out.shape != (x2.shape[0], w.shape[0]):
        raise RejectedInputError(f"upstream gradient shape {grad_out.shape} != {(x2.shape[0], w.shape[0])}")
    return {"dw": grad_out.T @ x2, "db": grad_out.sum(axis=0), "dx": (grad_out @ w).reshape(x.shape)}


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_labels(labels, n, num_classes):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise RejectedInputError(f"expected {n} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise RejectedInputError("labels must be integers")
    if n and (labels.min() < 0 or labels.max() >= num_classes):
        raise RejectedInputError(f"label out of range [0, {num_classes})")
    return labels


def softmax_crossentropy(logits, labels):
    """Mean negative log-likelihood with a max-shifted softmax. Returns ``(loss, probs)``."""
    if logits.ndim != 2:
        raise RejectedInputError(f"logits must be [N, classes], got {logits.shape}")
    n, k = logits.shape
    labels = _check_labels(labels, n, k)
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(n), labels]))
    probs = np.exp(z - lse[:, None])
    return loss, probs


def softmax_crossentropy_backward(probs, labels):
    n, k = probs.shape
    labels = _check_labels(labels, n, k)
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1
    return grad / n
