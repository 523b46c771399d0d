"""Trainable layers with hand-derived backward passes.

Every layer keeps its parameters in ``params`` and the matching gradients in
``grads`` (same names, same shapes). ``forward(x, training=True)`` caches what
``backward`` needs; an inference-mode forward clears the cache. ``backward``
accumulates into ``grads`` and returns the gradient w.r.t. the layer input.
"""
import numpy as np

from . import tensor_core as tc
from .exceptions import ConfigError, DimensionError, InputError


def truncated_normal(rng, shape, std, dtype):
    """Normal(0, std) samples redrawn until they fall within two std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2
    return (out * std).astype(dtype)


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Base class. Parameter-free layers only override forward/backward."""

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.cache = None

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, upstream):
        raise NotImplementedError

    def zero_grad(self):
        # in place: optimizers hold references to these arrays
        for name, p in self.params.items():
            g = self.grads.get(name)
            if g is None or g.shape != p.shape:
                self.grads[name] = np.zeros_like(p)
            else:
                g.fill(0)

    def _need_cache(self):
        if self.cache is None:
            raise RuntimeError(
                f"{type(self).__name__}.backward called without a training forward")
        return self.cache

    def __repr__(self):
        shapes = ", ".join(f"{k}={v.shape}" for k, v in self.params.items())
        return f"{type(self).__name__}({shapes})"


class Dense(Layer):
    """Affine map ``x @ W + b`` with ``W`` of shape (d_in, d_out)."""

    def __init__(self, d_in, d_out, rng=None, dtype=tc.DEFAULT_DTYPE):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = truncated_normal(rng, (d_in, d_out), np.sqrt(2.0 / d_in), dtype)
        self.params["b"] = np.zeros(d_out, dtype=dtype)
        self.zero_grad()

    def forward(self, x, training=False):
        W = self.params["W"]
        if x.ndim != 2 or x.shape[1] != W.shape[0]:
            raise DimensionError(
                f"Dense: input {x.shape} does not match weight {W.shape}")
        self.cache = x if training else None
        return x @ W + self.params["b"]

    def backward(self, upstream):
        x = self._need_cache()
        self.grads["W"] += x.T @ upstream
        self.grads["b"] += upstream.sum(axis=0)
        return upstream @ self.params["W"].T


class Conv2D(Layer):
    def __init__(self, k, c_in, c_out, stride=1, padding="same", rng=None,
                 dtype=tc.DEFAULT_DTYPE):
        super().__init__()
        if padding not in ("same", "valid"):
            raise ConfigError(f"Conv2D: padding must be 'same' or 'valid', got {padding!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = k * k * c_in
        self.params["K"] = truncated_normal(rng, (k, k, c_in, c_out), np.sqrt(2.0 / fan_in), dtype)
        self.params["b"] = np.zeros(c_out, dtype=dtype)
        self.stride = stride
        self.padding = padding
        self.zero_grad()

    def forward(self, x, training=False):
        out, cache = tc.conv2d(x, self.params["K"], self.params["b"], self.stride,
                               self.padding, return_cache=True)
        self.cache = cache if training else None
        return out

    def backward(self, upstream):
        dx, dk, db = tc.conv2d_backward(self._need_cache(), upstream)
        self.grads["K"] += dk
        self.grads["b"] += db
        return dx


class MaxPool2D(Layer):
    def __init__(self, window=2, stride=2):
        super().__init__()
        self.window = window
        self.stride = stride

    def forward(self, x, training=False):
        out, argmax = tc.maxpool2d(x, self.window, self.stride)
        self.cache = (argmax, x.shape) if training else None
        return out

    def backward(self, upstream):
        argmax, shape = self._need_cache()
        return tc.maxpool2d_backward(argmax, upstream, shape)


class LeakyReLU(Layer):
    def forward(self, x, training=False):
        self.cache = x if training else None
        return tc.leaky_relu(x)

    def backward(self, upstream):
        return upstream * tc.leaky_relu_grad(self._need_cache())


class Dropout(Layer):
    """Inverted dropout; ``keep_prob`` is the probability of keeping a unit."""

    def __init__(self, keep_prob, rng=None):
        super().__init__()
        if not 0 < keep_prob <= 1:
            raise ConfigError(f"Dropout: keep_prob must be in (0, 1], got {keep_prob}")
        self.keep_prob = keep_prob
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def forward(self, x, training=False):
        if not training:
            self.cache = None
            return x
        if self.keep_prob == 1:
            mask = np.ones_like(x)
        else:
            keep = self.rng.random(x.shape) < self.keep_prob
            mask = keep.astype(x.dtype) / x.dtype.type(self.keep_prob)
        self.cache = mask
        return x * mask

    def backward(self, upstream):
        return upstream * self._need_cache()


class Reshape(Layer):
    """Reshape each sample to ``shape``; the batch axis is preserved."""

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(shape)

    def forward(self, x, training=False):
        self.cache = x.shape if training else None
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, upstream):
        return upstream.reshape(self._need_cache())


class Flatten(Reshape):
    def __init__(self):
        super().__init__((-1,))


def flatten(x):
    """Row-major ``(n, h, w, c) -> (n, h*w*c)``."""
    return x.reshape(x.shape[0], -1)


def unflatten(x, shape):
    return x.reshape((x.shape[0],) + tuple(shape))


# -- GRU ---------------------------------------------------------------------

def gru_step(params, h_prev, x_t, return_cache=False):
    """One GRU update.

    Concatenation order is ``[h_prev, x_t]``; weights are (hid + in, hid).
    """
    W_z, W_r, W_h = params["W_z"], params["W_r"], params["W"]
    hid = W_z.shape[1]
    if h_prev.shape[1] != hid or h_prev.shape[1] + x_t.shape[1] != W_z.shape[0]:
        raise DimensionError(
            f"gru_step: h_prev {h_prev.shape} and x_t {x_t.shape} do not fit "
            f"weights {W_z.shape}")
    hx = np.concatenate([h_prev, x_t], axis=1)
    z = tc.sigmoid(hx @ W_z + params["b_z"])
    r = tc.sigmoid(hx @ W_r + params["b_r"])
    rhx = np.concatenate([r * h_prev, x_t], axis=1)
    h_cand = np.tanh(rhx @ W_h + params["b_h"])
    h = (1 - z) * h_prev + z * h_cand
    if return_cache:
        return h, (h_prev, hx, rhx, z, r, h_cand)
    return h


class GRU(Layer):
    """Single GRU layer unrolled over time.

    Input ``(n, T, in)``, output is the full hidden sequence ``(n, T, hid)``
    starting from a zero state. Backward is full BPTT.
    """

    def __init__(self, input_dim, hidden_dim, rng=None, dtype=tc.DEFAULT_DTYPE):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = input_dim + hidden_dim
        for name in ("W_z", "W_r", "W"):
            self.params[name] = glorot_uniform(rng, (fan_in, hidden_dim), fan_in,
                                               hidden_dim, dtype)
        for name in ("b_z", "b_r", "b_h"):
            self.params[name] = np.zeros(hidden_dim, dtype=dtype)
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.zero_grad()

    def forward(self, x, training=False):
        if x.ndim != 3 or x.shape[2] != self.input_dim:
            raise DimensionError(
                f"GRU: expected (n, T, {self.input_dim}) input, got {x.shape}")
        n, T, _ = x.shape
        if T < 1:
            raise InputError("GRU: empty sequence")
        h = np.zeros((n, self.hidden_dim), dtype=self.params["W"].dtype)
        out = np.empty((n, T, self.hidden_dim), dtype=h.dtype)
        steps = []
        for t in range(T):
            h, cache = gru_step(self.params, h, x[:, t, :], return_cache=True)
            out[:, t, :] = h
            if training:
                steps.append(cache)
        self.cache = steps if training else None
        return out

    def backward(self, upstream):
        steps = self._need_cache()
        p, g = self.params, self.grads
        hid = self.hidden_dim
        n, T, _ = upstream.shape
        dx = np.empty((n, T, self.input_dim), dtype=upstream.dtype)
        dh_next = np.zeros((n, hid), dtype=upstream.dtype)
        for t in reversed(range(T)):
            h_prev, hx, rhx, z, r, h_cand = steps[t]
            dh = upstream[:, t, :] + dh_next
            dz = dh * (h_cand - h_prev)
            dh_prev = dh * (1 - z)
            da_h = dh * z * (1 - h_cand * h_cand)
            g["W"] += rhx.T @ da_h
            g["b_h"] += da_h.sum(axis=0)
            drhx = da_h @ p["W"].T
            dh_prev += drhx[:, :hid] * r
            dr = drhx[:, :hid] * h_prev
            da_z = dz * z * (1 - z)
            da_r = dr * r * (1 - r)
            g["W_z"] += hx.T @ da_z
            g["b_z"] += da_z.sum(axis=0)
            g["W_r"] += hx.T @ da_r
            g["b_r"] += da_r.sum(axis=0)
            dhx = da_z @ p["W_z"].T + da_r @ p["W_r"].T
            dh_prev += dhx[:, :hid]
            dx[:, t, :] = dhx[:, hid:] + drhx[:, hid:]
            dh_next = dh_prev
        return dx


class LastStep(Layer):
    """Select the final timestep of a ``(n, T, d)`` sequence."""

    def forward(self, x, training=False):
        self.cache = x.shape if training else None
        return x[:, -1, :]

    def backward(self, upstream):
        shape = self._need_cache()
        dx = np.zeros(shape, dtype=upstream.dtype)
        dx[:, -1, :] = upstream
        return dx


def gru_sequence_forward(stack, x, training=False):
    """Run stacked GRU layers over ``x``; return the top layer's last hidden state."""
    if x.ndim != 3 or x.shape[1] < 1:
        raise InputError(f"gru_sequence_forward: need (n, T>=1, in) input, got {x.shape}")
    for layer in stack:
        x = layer.forward(x, training=training)
    return x[:, -1, :]


def gru_sequence_backward(stack, upstream_last):
    """BPTT through ``stack`` given the gradient of the top layer's last state."""
    top = stack[-1]
    n_steps = len(top._need_cache())
    dseq = np.zeros((upstream_last.shape[0], n_steps, top.hidden_dim),
                    dtype=upstream_last.dtype)
    dseq[:, -1, :] = upstream_last
    for layer in reversed(stack):
        dseq = layer.backward(dseq)
    return dseq
