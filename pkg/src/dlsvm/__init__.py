"""Deep networks with a linear L2-SVM output layer for malware image classification."""
from .data import (DatasetContainer, ImageVectorizer, MalwareImage, Standardizer,
                   binary_to_image, build_container, load_image_dir, resize_to_32)
from .estimators import (CNNSVMClassifier, DLSVMClassifier, GRUSVMClassifier,
                         MLPSVMClassifier)
from .metrics import EvalReport, classification_report, confusion_matrix
from .models import ModelSpec, build, evaluate, load_checkpoint, save_checkpoint, train
from .svm import SvmHead, l2svm_loss, ova_encode

__version__ = "0.1.0"

__all__ = [
    "CNNSVMClassifier", "DLSVMClassifier", "DatasetContainer", "EvalReport",
    "GRUSVMClassifier", "ImageVectorizer", "MLPSVMClassifier", "MalwareImage",
    "ModelSpec", "Standardizer", "SvmHead", "binary_to_image", "build",
    "build_container", "classification_report", "confusion_matrix", "evaluate",
    "l2svm_loss", "load_checkpoint", "load_image_dir", "ova_encode", "resize_to_32",
    "save_checkpoint", "train",
]
