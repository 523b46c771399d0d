import numpy as np

from .exceptions import ConfigError, DimensionError


class Adam:
    """Bias-corrected Adam over a dict of named parameter arrays.

    Parameters are updated in place. Moments are created lazily with the
    parameter's dtype.
    """

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr < 0:
            raise ConfigError(f"Adam: lr must be >= 0, got {lr}")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ConfigError(f"Adam: betas must be in [0, 1), got {beta1}, {beta2}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        for name, p in params.items():
            if grads[name].shape != p.shape:
                raise DimensionError(
                    f"Adam: gradient for {name!r} has shape {grads[name].shape}, "
                    f"parameter has {p.shape}")
        self.t += 1
        bc1 = 1 - self.beta1 ** self.t
        bc2 = 1 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            if m.shape != p.shape:
                raise DimensionError(f"Adam: moment shape mismatch for {name!r}")
            dt = p.dtype.type
            m *= dt(self.beta1)
            m += dt(1 - self.beta1) * g
            v *= dt(self.beta2)
            v += dt(1 - self.beta2) * (g * g)
            m_hat = m / dt(bc1)
            v_hat = v / dt(bc2)
            p -= dt(self.lr) * m_hat / (np.sqrt(v_hat) + dt(self.eps))
        return params

    def state_dict(self):
        return {
            "hyper": {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                      "eps": self.eps, "t": self.t},
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state):
        h = state["hyper"]
        self.lr, self.beta1, self.beta2, self.eps = h["lr"], h["beta1"], h["beta2"], h["eps"]
        self.t = int(h["t"])
        self.m = {k: np.array(v) for k, v in state["m"].items()}
        self.v = {k: np.array(v) for k, v in state["v"].items()}
