"""Dense array kernels used by every layer.

Tensors are plain :class:`numpy.ndarray` objects. Training runs in float32;
float64 is used for gradient checking. Kernels preserve the dtype of their
inputs and never broadcast beyond what is documented.

Image tensors are channels-last: ``(batch, height, width, channels)``.
Convolution kernels are ``(k, k, c_in, c_out)``.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import DimensionError

DEFAULT_DTYPE = np.float32


def as_tensor(x, dtype=DEFAULT_DTYPE):
    """Return ``x`` as a C-contiguous array of ``dtype``."""
    return np.ascontiguousarray(x, dtype=dtype)


def all_finite(x):
    return bool(np.isfinite(x).all())


def matmul(a, b):
    """Matrix product of ``a`` (p x m) and ``b`` (m x n)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


# -- convolution -------------------------------------------------------------

def _same_padding(size, k, stride):
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def conv_output_size(size, k, stride, padding):
    if padding == "same":
        return -(-size // stride)
    return (size - k) // stride + 1


def _pad_amounts(h, w, k, stride, padding):
    if padding == "same":
        return _same_padding(h, k, stride), _same_padding(w, k, stride)
    if padding == "valid":
        return (0, 0), (0, 0)
    raise ValueError(f"unknown padding {padding!r}")


def _im2col(xp, k, stride, h_out, w_out):
    # (n, h', w', c, k, k) -> (n, h', w', k, k, c) to match kernel layout
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride][:, :h_out, :w_out]
    win = win.transpose(0, 1, 2, 4, 5, 3)
    n = xp.shape[0]
    return np.ascontiguousarray(win).reshape(n * h_out * w_out, -1)


def conv2d(x, kernels, bias=None, stride=1, padding="same", return_cache=False):
    """2-D cross-correlation (no kernel flip).

    ``x`` is ``(n, h, w, c_in)`` or a single image ``(h, w, c_in)``.
    ``same`` padding gives ``ceil(h / stride)`` outputs per axis, ``valid``
    gives ``(h - k) // stride + 1``.
    """
    x = np.asarray(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or kernels.ndim != 4:
        raise DimensionError(
            f"conv2d: expected NHWC input and (k, k, cin, cout) kernels, "
            f"got {x.shape} and {kernels.shape}")
    if stride < 1:
        raise DimensionError(f"conv2d: stride must be >= 1, got {stride}")
    k, k2, cin, cout = kernels.shape
    n, h, w, c = x.shape
    if k != k2:
        raise DimensionError(f"conv2d: kernel must be square, got {kernels.shape}")
    if c != cin:
        raise DimensionError(
            f"conv2d: input has {c} channels but kernels {kernels.shape} expect {cin}")
    (pt, pb), (pl, pr) = _pad_amounts(h, w, k, stride, padding)
    if k > h + pt + pb or k > w + pl + pr:
        raise DimensionError(
            f"conv2d: kernel {k}x{k} larger than padded input {x.shape[1:3]}")
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if pt + pb + pl + pr else x
    h_out = conv_output_size(h, k, stride, padding)
    w_out = conv_output_size(w, k, stride, padding)
    cols = _im2col(xp, k, stride, h_out, w_out)
    out = cols @ kernels.reshape(-1, cout)
    if bias is not None:
        out += bias
    out = out.reshape(n, h_out, w_out, cout)
    if single:
        out = out[0]
    if not return_cache:
        return out
    cache = {"x_shape": x.shape, "cols": cols, "kernels": kernels,
             "stride": stride, "pads": (pt, pb, pl, pr), "single": single}
    return out, cache


def conv2d_backward(cache, upstream):
    """Gradients of :func:`conv2d` w.r.t. input, kernels and bias."""
    upstream = np.asarray(upstream)
    if cache["single"] and upstream.ndim == 3:
        upstream = upstream[None]
    kernels = cache["kernels"]
    k, _, cin, cout = kernels.shape
    n, h, w, _ = cache["x_shape"]
    stride = cache["stride"]
    pt, pb, pl, pr = cache["pads"]
    cols = cache["cols"]
    if upstream.ndim != 4 or upstream.shape[0] != n or upstream.shape[3] != cout \
            or upstream.shape[1] * upstream.shape[2] * n != cols.shape[0]:
        raise DimensionError(
            f"conv2d_backward: upstream {upstream.shape} does not match "
            f"forward output for input {cache['x_shape']}")
    _, h_out, w_out, _ = upstream.shape
    dout = upstream.reshape(-1, cout)
    kernel_grad = (cols.T @ dout).reshape(kernels.shape)
    bias_grad = dout.sum(axis=0)
    dcols = (dout @ kernels.reshape(-1, cout).T).reshape(n, h_out, w_out, k, k, cin)
    dxp = np.zeros((n, h + pt + pb, w + pl + pr, cin), dtype=dcols.dtype)
    h_span = (h_out - 1) * stride + 1
    w_span = (w_out - 1) * stride + 1
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + h_span:stride, j:j + w_span:stride, :] += dcols[:, :, :, i, j, :]
    input_grad = dxp[:, pt:pt + h, pl:pl + w, :]
    if cache["single"]:
        input_grad = input_grad[0]
    return np.ascontiguousarray(input_grad), kernel_grad, bias_grad


# -- pooling -----------------------------------------------------------------

def maxpool2d(x, window=2, stride=2):
    """Max pooling with valid windows.

    Returns the pooled tensor and, for each output cell, the flat index into
    ``x`` of the winning element. Ties go to the first element of the window
    in row-major order.
    """
    x = np.asarray(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d: expected NHWC input, got {x.shape}")
    if stride < 1:
        raise DimensionError(f"maxpool2d: stride must be >= 1, got {stride}")
    n, h, w, c = x.shape
    if window > h or window > w:
        raise DimensionError(
            f"maxpool2d: window {window} exceeds input extent {(h, w)}")
    h_out = (h - window) // stride + 1
    w_out = (w - window) // stride + 1
    win = sliding_window_view(x, (window, window), axis=(1, 2))
    win = win[:, ::stride, ::stride][:, :h_out, :w_out]
    flat = win.reshape(n, h_out, w_out, c, window * window)
    local = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    di, dj = np.divmod(local, window)
    rows = np.arange(h_out)[None, :, None, None] * stride + di
    cols = np.arange(w_out)[None, None, :, None] * stride + dj
    bi = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, None, None, :]
    argmax = ((bi * h + rows) * w + cols) * c + ci
    if single:
        return out[0], argmax[0]
    return out, argmax


def maxpool2d_backward(argmax, upstream, input_shape):
    """Route ``upstream`` to the recorded argmax positions."""
    upstream = np.asarray(upstream)
    if upstream.shape != argmax.shape:
        raise DimensionError(
            f"maxpool2d_backward: upstream {upstream.shape} vs argmax {argmax.shape}")
    grad = np.zeros(int(np.prod(input_shape)), dtype=upstream.dtype)
    # stride < window can produce duplicate winners; add.at accumulates them
    np.add.at(grad, argmax.ravel(), upstream.ravel())
    return grad.reshape(input_shape)


# -- elementwise activations -------------------------------------------------

LEAKY_SLOPE = 0.01


def leaky_relu(x):
    x = np.asarray(x)
    return np.maximum(x.dtype.type(LEAKY_SLOPE) * x, x) if x.dtype.kind == "f" \
        else np.maximum(LEAKY_SLOPE * x, x)


def leaky_relu_grad(x):
    """Derivative of :func:`leaky_relu`; taken as 1 at exactly zero."""
    x = np.asarray(x)
    dtype = x.dtype if x.dtype.kind == "f" else np.float64
    return np.where(x >= 0, dtype.type(1), dtype.type(LEAKY_SLOPE))


def sigmoid(x):
    x = np.asarray(x)
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e))


def sigmoid_grad(x):
    s = sigmoid(x)
    return s * (1 - s)


def tanh(x):
    return np.tanh(x)


def tanh_grad(x):
    t = np.tanh(x)
    return 1 - t * t
