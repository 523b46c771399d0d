"""Seeded synthetic datasets for desk-scale convergence runs."""
import numpy as np

from .data import standardize_apply, standardize_fit


def gaussian_blobs(n_samples, n_classes=4, dim=1024, center_scale=0.15, seed=0):
    """Isotropic unit-variance blobs around random class centres.

    Returns ``(X, y)``; the centres depend only on ``seed`` so that train and test
    sets drawn with different ``n_samples`` share them if generated together.
    """
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_classes, dim)) * center_scale
    y = np.arange(n_samples) % n_classes
    rng.shuffle(y)
    X = centers[y] + rng.standard_normal((n_samples, dim))
    return X, y


def _pattern(kind, side, phase, period):
    i, j = np.mgrid[0:side, 0:side]
    if kind == 0:
        v = np.sin(2 * np.pi * (i + phase) / period)
    elif kind == 1:
        v = np.sin(2 * np.pi * (j + phase) / period)
    elif kind == 2:
        v = np.sin(2 * np.pi * (i + j + phase) / period)
    else:
        v = np.sin(2 * np.pi * (i + phase) / period) * np.sin(2 * np.pi * (j + phase) / period)
    return v


def pattern_images(n_samples, n_classes=4, side=32, noise=0.5, seed=0):
    """Texture classes: horizontal, vertical and diagonal stripes, checkerboard.

    Each sample has a random phase and period, plus Gaussian pixel noise.
    Returns flattened images ``(n, side*side)`` and labels.
    """
    if n_classes > 4:
        raise ValueError("pattern_images supports at most 4 classes")
    rng = np.random.default_rng(seed)
    y = np.arange(n_samples) % n_classes
    rng.shuffle(y)
    X = np.empty((n_samples, side * side))
    for n, label in enumerate(y):
        period = rng.uniform(4, 8)
        phase = rng.uniform(0, period)
        img = _pattern(label, side, phase, period) + noise * rng.standard_normal((side, side))
        X[n] = img.reshape(-1)
    return X, y


def row_sequence_images(n_samples, n_classes=4, side=32, noise=0.5, seed=0):
    """Classes defined by which horizontal band of rows is bright.

    Reading rows top to bottom as a sequence, the class is the position of a
    bright band of ``side // n_classes`` rows, so the recurrent model must carry
    information across timesteps.
    """
    rng = np.random.default_rng(seed)
    y = np.arange(n_samples) % n_classes
    rng.shuffle(y)
    band = side // n_classes
    X = noise * rng.standard_normal((n_samples, side, side))
    for n, label in enumerate(y):
        X[n, label * band:(label + 1) * band, :] += 1.0
    return X.reshape(n_samples, -1), y


def standardized_split(X, y, n_train):
    """First ``n_train`` rows train, rest test; standardize with training statistics."""
    mu, sigma = standardize_fit(X[:n_train])
    Z = standardize_apply(X, mu, sigma)
    return Z[:n_train], y[:n_train], Z[n_train:], y[n_train:]
