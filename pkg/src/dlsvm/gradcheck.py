"""Central finite-difference checks for whole networks in float64."""
import numpy as np

from .models import ModelSpec, build
from .svm import l2svm_loss, ova_encode

EPS = 1e-5
TOLERANCE = 1e-4


def numerical_gradient(f, x, eps=EPS):
    """Central differences of scalar ``f()`` w.r.t. every element of ``x`` (mutated in place)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        plus = f()
        flat[i] = orig - eps
        minus = f()
        flat[i] = orig
        gflat[i] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.linalg.norm(a) + np.linalg.norm(n)
    if denom < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def mini_spec(kind, seed=0):
    """Small float64-friendly variants of each architecture."""
    common = dict(batch=6, n_classes=3, seed=seed, C=1.0)
    if kind == "cnn-svm":
        return ModelSpec.preset(kind, input_side=8, conv_filters=(2, 2), dense_units=4, **common)
    if kind == "gru-svm":
        return ModelSpec.preset(kind, input_side=4, gru_layers=2, gru_units=4, **common)
    return ModelSpec.preset(kind, input_side=4, mlp_units=(6, 5, 4), **common)


def check_model(model, X, y):
    """Relative error of every parameter gradient; returns ``{param name: error}``.

    Dropout masks are held fixed by restoring the generator state before each
    forward pass.
    """
    dropouts = model.dropout_layers()
    states = [d.rng.bit_generator.state for d in dropouts]
    targets = ova_encode(y, model.n_classes)

    def restore():
        for d, st in zip(dropouts, states):
            d.rng.bit_generator.state = st

    def loss():
        restore()
        s = model.forward(X, training=True)
        return l2svm_loss(model.head, s, targets)[0]

    restore()
    model.loss_and_backward(X, y)
    analytic = {k: g.copy() for k, g in model.gradients().items()}
    errors = {}
    for name, p in model.parameters().items():
        errors[name] = relative_error(analytic[name], numerical_gradient(loss, p))
    return errors


def per_layer(errors):
    out = {}
    for name, err in errors.items():
        layer = name.rsplit(".", 1)[0]
        out[layer] = max(out.get(layer, 0.0), err)
    return out


def run_mini(kind, seed=0, n_samples=6):
    """Build the miniature ``kind`` in float64, check it, return per-layer max errors."""
    spec = mini_spec(kind, seed)
    model = build(spec, dtype=np.float64)
    rng = np.random.default_rng([seed, 99])
    # non-zero biases so the check does not sit on the init point
    for p in model.parameters().values():
        if p.ndim == 1:
            p[...] = rng.normal(0, 0.1, p.shape)
    X = rng.standard_normal((n_samples, spec.input_side ** 2))
    y = rng.integers(0, spec.n_classes, n_samples)
    return per_layer(check_model(model, X, y))
