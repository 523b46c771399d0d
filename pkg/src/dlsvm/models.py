"""CNN-SVM, GRU-SVM and MLP-SVM networks: presets, training, evaluation, checkpoints."""
import csv
import dataclasses
import io
import logging
import time
from dataclasses import dataclass

import numpy as np

from . import serialization
from . import tensor_core as tc
from .exceptions import ConfigError, DimensionError, FormatError, NumericError
from .layers import (GRU, Conv2D, Dense, Dropout, Flatten, LastStep, LeakyReLU,
                     MaxPool2D, Reshape)
from .metrics import classification_report, confusion_matrix
from .optim import Adam
from .svm import SvmHead, l2svm_loss, ova_encode

log = logging.getLogger(__name__)

KINDS = ("cnn-svm", "gru-svm", "mlp-svm")

CHECKPOINT_MAGIC = "DLSVM1"
CHECKPOINT_VERSION = 1

# named random substreams derived from the single run seed
STREAM_INIT, STREAM_SHUFFLE, STREAM_DROPOUT = 0, 1, 2


def substream(seed, stream, *extra):
    return np.random.default_rng([int(seed), stream, *extra])


@dataclass
class ModelSpec:
    """Hyperparameters and architecture of one network.

    Use :meth:`preset` for the published configurations; the architecture
    fields exist so that miniature variants can be built for testing.
    """

    kind: str = "mlp-svm"
    batch: int = 256
    epochs: int = 100
    lr: float = 1e-3
    C: float = 0.5
    keep_prob: float = None
    seed: int = 0
    reduction: str = "sum"
    n_classes: int = 25
    input_side: int = 32
    conv_filters: tuple = (36, 72)
    conv_kernel: int = 5
    pool_stride: int = 2
    dense_units: int = 1024
    gru_units: int = 256
    gru_layers: int = 5
    mlp_units: tuple = (512, 256, 128)
    # MLP input width when it is not input_side ** 2
    input_dim: int = None

    @classmethod
    def preset(cls, kind, **overrides):
        if kind not in PRESETS:
            raise ConfigError(f"unknown model kind {kind!r}; expected one of {KINDS}")
        values = dict(PRESETS[kind])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(kind=kind, **values)

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.batch < 1 or self.epochs < 0:
            raise ConfigError(f"batch must be >= 1 and epochs >= 0, got {self.batch}, {self.epochs}")
        if self.keep_prob is not None and not 0 < self.keep_prob <= 1:
            raise ConfigError(f"keep_prob must be in (0, 1], got {self.keep_prob}")
        if not self.C > 0:
            raise ConfigError(f"C must be positive, got {self.C}")
        if self.reduction not in ("sum", "mean"):
            raise ConfigError(f"reduction must be 'sum' or 'mean', got {self.reduction!r}")
        return self

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["conv_filters"] = list(self.conv_filters)
        d["mlp_units"] = list(self.mlp_units)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["conv_filters"] = tuple(d["conv_filters"])
        d["mlp_units"] = tuple(d["mlp_units"])
        return cls(**d)


PRESETS = {
    "cnn-svm": dict(batch=256, epochs=100, lr=1e-3, C=10.0, keep_prob=0.85),
    "gru-svm": dict(batch=256, epochs=100, lr=1e-3, C=10.0, keep_prob=0.85),
    "mlp-svm": dict(batch=256, epochs=100, lr=1e-3, C=0.5, keep_prob=None),
}


class Network:
    """A stack of named layers feeding an :class:`SvmHead`."""

    def __init__(self, spec, layers, head, dtype=tc.DEFAULT_DTYPE):
        self.spec = spec
        self.layers = layers
        self.head = head
        self.dtype = np.dtype(dtype)
        self.optimizer = Adam(lr=spec.lr)
        self.step = 0
        self.class_names = [str(k) for k in range(head.n_classes)]
        self.mu = None
        self.sigma = None

    @property
    def n_classes(self):
        return self.head.n_classes

    def named_layers(self):
        yield from self.layers
        yield "head", self.head

    def parameters(self):
        """Flat ``{"layer.param": array}`` view; arrays are the live parameters."""
        return {f"{lname}.{pname}": p
                for lname, layer in self.named_layers() for pname, p in layer.params.items()}

    def gradients(self):
        return {f"{lname}.{pname}": layer.grads[pname]
                for lname, layer in self.named_layers() for pname in layer.params}

    def dropout_layers(self):
        return [layer for _, layer in self.layers if isinstance(layer, Dropout)]

    def zero_grad(self):
        for _, layer in self.named_layers():
            layer.zero_grad()

    def forward(self, x, training=False):
        x = np.asarray(x, dtype=self.dtype)
        for _, layer in self.layers:
            x = layer.forward(x, training=training)
        return self.head.forward(x, training=training)

    def decision_function(self, x, batch=None):
        batch = batch or self.spec.batch
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[0] == 0:
            return np.empty((0, self.n_classes), dtype=self.dtype)
        return np.concatenate([self.forward(x[i:i + batch]) for i in range(0, x.shape[0], batch)])

    def predict(self, x, batch=None):
        return np.argmax(self.decision_function(x, batch), axis=1)

    def loss_and_backward(self, x, y):
        """Forward in training mode, accumulate all gradients; returns ``(loss, scores)``."""
        s = self.forward(x, training=True)
        loss, score_grad, reg_grad = l2svm_loss(self.head, s, ova_encode(y, self.n_classes))
        self.zero_grad()
        grad = self.head.backward(score_grad)
        self.head.grads["W"] += reg_grad
        for _, layer in reversed(self.layers):
            grad = layer.backward(grad)
        return loss, s

    def locate_nonfinite(self, x):
        """Name of the first layer producing a non-finite output on ``x``, if any."""
        x = np.asarray(x, dtype=self.dtype)
        for name, layer in self.named_layers():
            if not all(tc.all_finite(p) for p in layer.params.values()):
                return f"{name} (parameters)"
            x = layer.forward(x)
            if not tc.all_finite(x):
                return name
        return None


def build(spec, dtype=tc.DEFAULT_DTYPE):
    """Instantiate the network described by ``spec``; input is always n x side^2."""
    spec.validate()
    init = substream(spec.seed, STREAM_INIT)
    dropout_rng = substream(spec.seed, STREAM_DROPOUT)
    side = spec.input_side
    layers = []
    if spec.kind == "cnn-svm":
        layers.append(("reshape", Reshape((side, side, 1))))
        c_in, h = 1, side
        for i, c_out in enumerate(spec.conv_filters, 1):
            layers.append((f"conv{i}", Conv2D(spec.conv_kernel, c_in, c_out, 1, "same",
                                               rng=init, dtype=dtype)))
            layers.append((f"act{i}", LeakyReLU()))
            layers.append((f"pool{i}", MaxPool2D(2, spec.pool_stride)))
            h = (h - 2) // spec.pool_stride + 1
            c_in = c_out
        layers.append(("flatten", Flatten()))
        layers.append(("fc", Dense(h * h * c_in, spec.dense_units, rng=init, dtype=dtype)))
        layers.append(("fc_act", LeakyReLU()))
        d = spec.dense_units
    elif spec.kind == "gru-svm":
        # each image row is one timestep
        layers.append(("reshape", Reshape((side, side))))
        d_in = side
        for i in range(1, spec.gru_layers + 1):
            layers.append((f"gru{i}", GRU(d_in, spec.gru_units, rng=init, dtype=dtype)))
            d_in = spec.gru_units
        layers.append(("last", LastStep()))
        d = spec.gru_units
    else:
        d = spec.input_dim or side * side
        for i, units in enumerate(spec.mlp_units, 1):
            layers.append((f"fc{i}", Dense(d, units, rng=init, dtype=dtype)))
            layers.append((f"act{i}", LeakyReLU()))
            d = units
    if spec.keep_prob is not None:
        layers.append(("dropout", Dropout(spec.keep_prob, rng=dropout_rng)))
    head = SvmHead(d, spec.n_classes, C=spec.C, reduction=spec.reduction, rng=init, dtype=dtype)
    return Network(spec, layers, head, dtype=dtype)


# -- training ----------------------------------------------------------------

LOG_COLUMNS = ("step", "epoch", "loss", "batch_accuracy", "wall_ms")


class CsvLogSink:
    """Collects per-step records and renders them as CSV.

    ``wall_ms`` is recorded only when ``timing`` is true, otherwise it is 0 so
    that logs of identical runs are byte-identical.
    """

    def __init__(self, timing=False):
        self.timing = timing
        self.records = []

    def __call__(self, record):
        self.records.append(record)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.records:
            w.writerow([r["step"], r["epoch"], repr(float(r["loss"])),
                        repr(float(r["batch_accuracy"])),
                        r["wall_ms"] if self.timing else 0])
        return buf.getvalue()


def train(model, X, y, sink=None, epochs=None, on_epoch_end=None):
    """Minibatch Adam on the L2-SVM objective.

    Training rows are reshuffled every epoch from the run seed. ``sink`` receives
    one dict per step with the keys in ``LOG_COLUMNS``. Returns the list of
    per-step records.
    """
    spec = model.spec
    epochs = spec.epochs if epochs is None else epochs
    X = np.asarray(X, dtype=model.dtype)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] != y.shape[0]:
        raise DimensionError(f"train: {X.shape[0]} rows but {y.shape[0]} labels")
    if X.shape[0] == 0:
        raise DimensionError("train: empty training set")
    if y.min() < 0 or y.max() >= model.n_classes:
        raise ConfigError(f"train: labels outside [0, {model.n_classes})")
    opt = model.optimizer
    params = model.parameters()
    grads = model.gradients()
    records = []
    start_epoch = model.step // max(1, -(-X.shape[0] // spec.batch))
    t0 = time.perf_counter()
    for epoch in range(start_epoch, start_epoch + epochs):
        rng = substream(spec.seed, STREAM_SHUFFLE, epoch)
        order = rng.permutation(X.shape[0])
        for start in range(0, X.shape[0], spec.batch):
            idx = order[start:start + spec.batch]
            xb, yb = X[idx], y[idx]
            loss, s = model.loss_and_backward(xb, yb)
            model.step += 1
            if not np.isfinite(loss):
                where = model.locate_nonfinite(xb) or "loss"
                raise NumericError(f"non-finite loss at step {model.step} (layer: {where})")
            opt.step(params, grads)
            rec = {"step": model.step, "epoch": epoch + 1, "loss": loss,
                   "batch_accuracy": float(np.mean(np.argmax(s, axis=1) == yb)),
                   "wall_ms": int(round((time.perf_counter() - t0) * 1000))}
            records.append(rec)
            if sink is not None:
                sink(rec)
        if on_epoch_end is not None:
            on_epoch_end(epoch + 1, model)
        log.debug("epoch %d done, last loss %.6g", epoch + 1, records[-1]["loss"])
    return records


def train_dataset(model, container, sink=None, epochs=None):
    """Train on the ``train`` split of a :class:`~dlsvm.data.DatasetContainer`."""
    if container.n_classes != model.n_classes:
        raise ConfigError(
            f"dataset has {container.n_classes} classes, model expects {model.n_classes}")
    X, y = container.subset("train")
    model.class_names = list(container.class_names)
    model.mu, model.sigma = container.mu, container.sigma
    return train(model, X, y, sink=sink, epochs=epochs)


def evaluate(model, X, y):
    """Single inference pass; returns an :class:`~dlsvm.metrics.EvalReport`."""
    y = np.asarray(y, dtype=np.int64)
    pred = model.predict(X)
    return classification_report(confusion_matrix(y, pred, model.n_classes))


def evaluate_dataset(model, container, which="test"):
    if container.n_classes != model.n_classes:
        raise ConfigError(
            f"dataset has {container.n_classes} classes, model expects {model.n_classes}")
    X, y = container.subset(which)
    return evaluate(model, X, y)


# -- checkpoints -------------------------------------------------------------

def _rng_state(layer):
    return layer.rng.bit_generator.state


def checkpoint_bytes(model):
    params = model.parameters()
    opt = model.optimizer.state_dict()
    arrays = {}
    for name, p in params.items():
        arrays[f"param/{name}"] = p
    for name in params:
        if name in opt["m"]:
            arrays[f"adam_m/{name}"] = opt["m"][name]
            arrays[f"adam_v/{name}"] = opt["v"][name]
    if model.mu is not None:
        arrays["mu"] = np.asarray(model.mu, dtype=np.float64)
        arrays["sigma"] = np.asarray(model.sigma, dtype=np.float64)
    header = {
        "spec": model.spec.to_dict(),
        "dtype": model.dtype.str[1:],
        "step": int(model.step),
        "optimizer": opt["hyper"],
        "class_names": list(model.class_names),
        "dropout_rng": [_rng_state(d) for d in model.dropout_layers()],
    }
    return serialization.encode(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, header, arrays)


def save_checkpoint(model, path):
    serialization.atomic_write(path, checkpoint_bytes(model))


def model_from_bytes(blob):
    header, arrays = serialization.decode(blob, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    spec = ModelSpec.from_dict(header["spec"])
    model = build(spec, dtype=np.dtype(header["dtype"]))
    params = model.parameters()
    for name, p in params.items():
        key = f"param/{name}"
        if key not in arrays or arrays[key].shape != p.shape:
            raise FormatError(f"checkpoint parameter {name!r} missing or misshapen")
        p[...] = arrays[key]
    state = {"hyper": header["optimizer"],
             "m": {k[7:]: v for k, v in arrays.items() if k.startswith("adam_m/")},
             "v": {k[7:]: v for k, v in arrays.items() if k.startswith("adam_v/")}}
    model.optimizer.load_state_dict(state)
    model.step = header["step"]
    model.class_names = header["class_names"]
    if "mu" in arrays:
        model.mu, model.sigma = arrays["mu"], arrays["sigma"]
    for layer, st in zip(model.dropout_layers(), header["dropout_rng"]):
        layer.rng.bit_generator.state = st
    return model


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
