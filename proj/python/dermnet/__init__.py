"""Python bindings for the dermnet inference and training core."""

import json

from ._dermnet import (
    CLASS_LABELS,
    ImageDecodeError,
    Model,
    ShapeError,
    ValidationError,
    WeightFileError,
    apply_affine,
    classification_report_json,
    classification_report_text,
    confusion_matrix,
    conv2d,
    decode_image,
    depthwise_conv2d,
    encode_png,
    f1_score,
    format_2dp,
    head_gradients,
    resize_bilinear,
    softmax,
    top_k_accuracy,
)

CLASS_CODES = [code for code, _ in CLASS_LABELS]


def classification_report(truth, predicted, num_classes=len(CLASS_LABELS)):
    """Per-class precision/recall/F1 plus micro and weighted averages as a dict."""
    return json.loads(classification_report_json(truth, predicted, num_classes))


def predict_image(model, data):
    """Ranked prediction for encoded PNG or JPEG bytes as a dict."""
    return json.loads(model.predict_bytes(data))


__all__ = [name for name in dir() if not name.startswith("_")]
