"""From raw bytes and image folders to standardized, split, batched features."""
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import serialization
from .exceptions import InputError

log = logging.getLogger(__name__)

IMAGE_SIDE = 32
FEATURE_DIM = IMAGE_SIDE * IMAGE_SIDE
SIGMA_FLOOR = 1e-8

# (upper bound in KiB, width) pairs; files at or above the last bound get 1024
WIDTH_TABLE = ((10, 32), (30, 64), (60, 128), (100, 256), (200, 384),
               (500, 512), (1000, 768))
MAX_WIDTH = 1024

DATASET_MAGIC = "DLSVMDS"
DATASET_VERSION = 1

# published per-family sample counts of the Malimg dataset (9339 images)
MALIMG_FAMILY_COUNTS = {
    "Adialer.C": 122, "Agent.FYI": 116, "Allaple.A": 2949, "Allaple.L": 1591,
    "Alueron.gen!J": 198, "Autorun.K": 106, "C2Lop.P": 146, "C2Lop.gen!G": 200,
    "Dialplatform.B": 177, "Dontovo.A": 162, "Fakerean": 381, "Instantaccess": 431,
    "Lolyda.AA1": 213, "Lolyda.AA2": 184, "Lolyda.AA3": 123, "Lolyda.AT": 159,
    "Malex.gen!J": 136, "Obfuscator.AD": 142, "Rbot!gen": 158, "Skintrim.N": 80,
    "Swizzor.gen!E": 128, "Swizzor.gen!I": 132, "VB.AT": 408, "Wintrim.BX": 97,
    "Yuner.A": 800,
}


def _family_key(name):
    return name.replace(" ", "").lower()


def expected_family_count(name):
    """Published Malimg count for a family directory name, or None if unknown."""
    table = {_family_key(k): v for k, v in MALIMG_FAMILY_COUNTS.items()}
    return table.get(_family_key(name))


@dataclass
class MalwareImage:
    pixels: np.ndarray
    label: int = -1
    source_id: str = ""

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 2:
            raise InputError(f"MalwareImage: pixels must be 2-D, got {self.pixels.shape}")


def auto_width(n_bytes):
    kib = n_bytes / 1024
    for bound, width in WIDTH_TABLE:
        if kib < bound:
            return width
    return MAX_WIDTH


def binary_to_image(data, width="auto", label=-1, source_id=""):
    """Lay bytes out row-major at ``width`` columns; a trailing partial row is dropped."""
    buf = np.frombuffer(bytes(data), dtype=np.uint8)
    if buf.size == 0:
        raise InputError(f"binary_to_image: empty input {source_id!r}".rstrip())
    if width == "auto":
        width = auto_width(buf.size)
    width = int(width)
    if width < 1:
        raise InputError(f"binary_to_image: width must be positive, got {width}")
    height = buf.size // width
    if height == 0:
        raise InputError(
            f"binary_to_image: {buf.size} bytes is less than one row of width {width}")
    return MalwareImage(buf[:height * width].reshape(height, width).copy(), label, source_id)


def read_image(path):
    """Decode an image file to an 8-bit grayscale matrix."""
    with Image.open(path) as img:
        if img.mode != "L":
            img = img.convert("L")
        return np.asarray(img, dtype=np.uint8).copy()


def write_image(pixels, path):
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="L").save(path, format="PNG")


def resize_bilinear(src, out_h, out_w):
    """Corner-aligned bilinear resize of a 2-D array.

    Output pixel ``d`` samples source coordinate ``d * (n_src - 1) / (n_dst - 1)``
    (0 when ``n_dst == 1``) and blends its 2x2 neighbourhood linearly.
    """
    src = np.asarray(src, dtype=np.float64)
    h, w = src.shape

    def axis(n_src, n_dst):
        if n_dst > 1:
            pos = np.arange(n_dst) * ((n_src - 1) / (n_dst - 1))
        else:
            pos = np.zeros(1)
        lo = np.minimum(np.floor(pos).astype(np.intp), n_src - 1)
        hi = np.minimum(lo + 1, n_src - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis(h, out_h)
    x0, x1, fx = axis(w, out_w)
    fy = fy[:, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def resize_to_32(image):
    pixels = image.pixels if isinstance(image, MalwareImage) else np.asarray(image)
    return resize_bilinear(pixels, IMAGE_SIDE, IMAGE_SIDE)


def image_features(image):
    """Resize to 32x32 and flatten row-major to a 1024-vector (unstandardized)."""
    return resize_to_32(image).reshape(-1)


# -- standardization ---------------------------------------------------------

def standardize_fit(features):
    """Per-column mean and population standard deviation (tiny sigma -> 1)."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise InputError(f"standardize_fit: need a non-empty 2-D array, got {X.shape}")
    mu = X.mean(axis=0)
    sigma = X.std(axis=0)
    sigma[sigma < SIGMA_FLOOR] = 1.0
    return mu, sigma


def standardize_apply(features, mu, sigma):
    return (np.asarray(features, dtype=np.float64) - mu) / sigma


class Standardizer(TransformerMixin, BaseEstimator):
    """z-score features column by column."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.mean_, self.scale_ = standardize_fit(X)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=np.float64)
        return standardize_apply(X, self.mean_, self.scale_)

    def inverse_transform(self, X):
        check_is_fitted(self, "mean_")
        return np.asarray(X, dtype=np.float64) * self.scale_ + self.mean_


class ImageVectorizer(TransformerMixin, BaseEstimator):
    """Stateless transformer: images (2-D uint8 arrays or MalwareImage) -> n x 1024."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return np.stack([image_features(img) for img in X])


# -- splitting and batching --------------------------------------------------

def split_dataset(n_samples, ratio=0.7, batch=256, seed=0):
    """Shuffle, then carve batch-multiple train and test blocks.

    Not stratified. Returns a dict of index arrays ``train``, ``test``, ``unused``.
    """
    if n_samples < batch:
        raise InputError(f"split_dataset: {n_samples} samples is fewer than one batch of {batch}")
    if not 0 < ratio < 1:
        raise InputError(f"split_dataset: ratio must be in (0, 1), got {ratio}")
    order = np.random.default_rng(seed).permutation(n_samples)
    n_train = int(np.floor(ratio * n_samples + 1e-9)) // batch * batch
    n_test = int(np.floor((1 - ratio) * n_samples + 1e-9)) // batch * batch
    return {
        "train": order[:n_train],
        "test": order[n_train:n_train + n_test],
        "unused": order[n_train + n_test:],
    }


def batch_indices(indices, batch, rng=None):
    """Yield consecutive index blocks; reshuffle first if ``rng`` is given."""
    indices = np.asarray(indices)
    if rng is not None:
        indices = indices[rng.permutation(indices.size)]
    for start in range(0, indices.size, batch):
        yield indices[start:start + batch]


# -- dataset container -------------------------------------------------------

@dataclass
class DatasetContainer:
    features: np.ndarray
    labels: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    split: dict
    class_names: list
    seed: int = 0
    batch: int = 256
    fit_on: str = "train"
    sources: list = field(default_factory=list)

    @property
    def n_classes(self):
        return len(self.class_names)

    def subset(self, which):
        idx = self.split[which]
        return self.features[idx], self.labels[idx]

    def batches(self, which="train", batch=None, epoch_seed=None):
        """Training batches are reshuffled from ``epoch_seed``; test order is fixed."""
        batch = batch or self.batch
        rng = np.random.default_rng(epoch_seed) if which == "train" and epoch_seed is not None else None
        for idx in batch_indices(self.split[which], batch, rng):
            yield self.features[idx], self.labels[idx]

    def to_bytes(self):
        header = {
            "p": int(self.features.shape[0]),
            "feature_dim": int(self.features.shape[1]),
            "seed": int(self.seed),
            "batch": int(self.batch),
            "fit_on": self.fit_on,
            "class_names": list(self.class_names),
            "mu": [float(v) for v in self.mu],
            "sigma": [float(v) for v in self.sigma],
            "split": {k: [int(i) for i in v] for k, v in self.split.items()},
            "sources": list(self.sources),
        }
        arrays = {"features": self.features.astype(np.float32),
                  "labels": self.labels.astype(np.uint8)}
        return serialization.encode(DATASET_MAGIC, DATASET_VERSION, header, arrays)

    def save(self, path):
        serialization.atomic_write(path, self.to_bytes())

    @classmethod
    def load(cls, path):
        header, arrays = serialization.read_file(path, DATASET_MAGIC, DATASET_VERSION)
        return cls(
            features=arrays["features"],
            labels=arrays["labels"].astype(np.int64),
            mu=np.array(header["mu"], dtype=np.float64),
            sigma=np.array(header["sigma"], dtype=np.float64),
            split={k: np.array(v, dtype=np.int64) for k, v in header["split"].items()},
            class_names=header["class_names"],
            seed=header["seed"],
            batch=header["batch"],
            fit_on=header["fit_on"],
            sources=header.get("sources", []),
        )


def load_image_dir(root):
    """Read ``root/<family>/<image>`` files; labels follow sorted family names.

    Returns ``(images, class_names)``. Undecodable files are skipped with a warning.
    """
    if not os.path.isdir(root):
        raise InputError(f"load_image_dir: {root!r} is not a directory")
    class_names = sorted(d for d in os.listdir(root)
                         if os.path.isdir(os.path.join(root, d)))
    images = []
    for label, name in enumerate(class_names):
        family_dir = os.path.join(root, name)
        for fname in sorted(os.listdir(family_dir)):
            path = os.path.join(family_dir, fname)
            if not os.path.isfile(path):
                continue
            try:
                pixels = read_image(path)
            except (UnidentifiedImageError, OSError, ValueError) as exc:
                log.warning("skipping unreadable image %s: %s", path, exc)
                continue
            images.append(MalwareImage(pixels, label, os.path.join(name, fname)))
    if not images:
        raise InputError(f"load_image_dir: no usable images under {root!r}")
    return images, class_names


def build_container(images, class_names, ratio=0.7, batch=256, seed=0, fit_on="train"):
    """Featurize, split and standardize a list of labelled images."""
    if fit_on not in ("train", "all"):
        raise InputError(f"fit_on must be 'train' or 'all', got {fit_on!r}")
    raw = np.stack([image_features(img) for img in images])
    labels = np.array([img.label for img in images], dtype=np.int64)
    split = split_dataset(len(images), ratio, batch, seed)
    fit_rows = raw[split["train"]] if fit_on == "train" else raw
    mu, sigma = standardize_fit(fit_rows)
    features = standardize_apply(raw, mu, sigma).astype(np.float32)
    return DatasetContainer(features, labels, mu, sigma, split, list(class_names),
                            seed=seed, batch=batch, fit_on=fit_on,
                            sources=[img.source_id for img in images])
