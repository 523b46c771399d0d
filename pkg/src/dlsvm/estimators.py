"""scikit-learn compatible wrappers around the DL-SVM networks.

Example::

    from sklearn.pipeline import make_pipeline
    from dlsvm import Standardizer, MLPSVMClassifier

    clf = make_pipeline(Standardizer(), MLPSVMClassifier(epochs=20))
    clf.fit(X_train, y_train).score(X_test, y_test)
"""
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import ConfigError
from .models import KINDS, ModelSpec, build, train

_UNSET = "preset"


class DLSVMClassifier(ClassifierMixin, BaseEstimator):
    """Deep network with a one-vs-all L2-SVM output layer.

    Parameters left at ``None`` (or ``"preset"`` for ``keep_prob``) take the
    published defaults for ``kind``. CNN and GRU inputs must be flattened
    square images; the MLP accepts any width. ``arch`` is an optional dict of
    :class:`~dlsvm.models.ModelSpec` overrides such as ``{"mlp_units": (64, 32)}``.
    """

    def __init__(self, kind="mlp-svm", epochs=None, batch_size=None, learning_rate=None,
                 C=None, keep_prob=_UNSET, reduction="sum", random_state=0, arch=None,
                 dtype="float32"):
        self.kind = kind
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.C = C
        self.keep_prob = keep_prob
        self.reduction = reduction
        self.random_state = random_state
        self.arch = arch
        self.dtype = dtype

    def _make_spec(self, n_features, n_classes):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown kind {self.kind!r}; expected one of {KINDS}")
        side = int(round(np.sqrt(n_features)))
        arch = dict(self.arch or {})
        if self.kind == "mlp-svm":
            arch.setdefault("input_dim", n_features)
        elif side * side != n_features:
            raise ConfigError(f"{self.kind} needs square images; got {n_features} features")
        overrides = dict(epochs=self.epochs, batch=self.batch_size, lr=self.learning_rate,
                         C=self.C, reduction=self.reduction, seed=self.random_state,
                         n_classes=n_classes, input_side=side, **arch)
        spec = ModelSpec.preset(self.kind, **overrides)
        if self.keep_prob != _UNSET:
            spec.keep_prob = self.keep_prob
        return spec.validate()

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise ConfigError("need at least two classes to fit")
        y_idx = np.searchsorted(self.classes_, y)
        spec = self._make_spec(X.shape[1], len(self.classes_))
        self.model_ = build(spec, dtype=np.dtype(self.dtype))
        self.history_ = train(self.model_, X, y_idx)
        self.loss_curve_ = [r["loss"] for r in self.history_]
        self.n_iter_ = len(self.history_)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but {type(self).__name__} is expecting "
                f"{self.n_features_in_} features as input")
        return self.model_.decision_function(X).astype(np.float64)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]


class CNNSVMClassifier(DLSVMClassifier):
    def __init__(self, epochs=None, batch_size=None, learning_rate=None, C=None,
                 keep_prob=_UNSET, reduction="sum", random_state=0, arch=None,
                 dtype="float32"):
        super().__init__("cnn-svm", epochs, batch_size, learning_rate, C, keep_prob,
                         reduction, random_state, arch, dtype)


class GRUSVMClassifier(DLSVMClassifier):
    def __init__(self, epochs=None, batch_size=None, learning_rate=None, C=None,
                 keep_prob=_UNSET, reduction="sum", random_state=0, arch=None,
                 dtype="float32"):
        super().__init__("gru-svm", epochs, batch_size, learning_rate, C, keep_prob,
                         reduction, random_state, arch, dtype)


class MLPSVMClassifier(DLSVMClassifier):
    def __init__(self, epochs=None, batch_size=None, learning_rate=None, C=None,
                 keep_prob=_UNSET, reduction="sum", random_state=0, arch=None,
                 dtype="float32"):
        super().__init__("mlp-svm", epochs, batch_size, learning_rate, C, keep_prob,
                         reduction, random_state, arch, dtype)
