"""Heatmap explanations for the image classifiers.

The heatmap follows the gradient-weighted class-activation approach: the
gradient of the target-class logit with respect to the last conv layer's
activations gives per-channel weights (their spatial means); the weighted
channel sum is rectified, upsampled to the image, and scaled so its max is 1.

The overlay colormap is fixed: heat h maps to RGB (h, 0, 1-h), blue at zero
heat to red at full heat.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cnn import CnnModel, Conv, cnn_forward
from .datasets import DamageBox
from .imageops import resize_bilinear

DILATION_PX = 4


@dataclass
class Heatmap:
    """Nonnegative attention map matching the explained image's extents."""

    width: int
    height: int
    values: np.ndarray  # (height, width), floats in [0, 1]
    target_class: int

    def __post_init__(self):
        if self.values.shape != (self.height, self.width):
            raise ValueError("heatmap values must be (height, width)")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ValueError("heatmap values must lie in [0, 1]")


def logit_gradient_at_explanation_layer(model: CnnModel, image: np.ndarray, target_class: int):
    """Forward one image, then d(logit[target]) / d(explanation conv output).

    Returns (activations, gradient), both shaped like the conv output for a
    single-image batch.
    """
    convs = [l for l in model.layers if isinstance(l, Conv) and l.explanation_target]
    if not convs:
        raise ValueError("model has no explanation-target layer")
    target_layer = convs[-1]
    if not 0 <= target_class < len(model.classes):
        raise ValueError(f"target_class {target_class} out of range")

    cnn_forward(model, image[None, ...], training=False)
    target_index = model.layers.index(target_layer)
    logits_dim = model.layers[-2].out_dim
    delta = np.zeros((1, logits_dim), dtype=np.float64)
    delta[0, target_class] = 1.0
    # walk back from the logits (softmax head excluded) to the conv output
    for layer in reversed(model.layers[target_index + 1 : -1]):
        delta = layer.backward(delta)
    return target_layer.output, delta


def grad_cam(model: CnnModel, image: np.ndarray, target_class: int) -> Heatmap:
    """Class-discriminative heatmap for one image at the model's input size."""
    activations, gradient = logit_gradient_at_explanation_layer(model, image, target_class)
    weights = gradient[0].mean(axis=(0, 1))
    cam = np.maximum((activations[0] * weights).sum(axis=-1), 0.0)
    height, width = image.shape[:2]
    # scale into [0,1] before resampling (resize clamps), then rescale so the
    # peak is exactly 1; the all-zero map stays zero
    cam_max = cam.max()
    if cam_max > 0.0:
        cam = cam / cam_max
    upsampled = resize_bilinear(cam[..., None], width, height)[..., 0]
    peak = upsampled.max()
    values = upsampled / peak if peak > 0.0 else upsampled
    return Heatmap(width=width, height=height, values=values, target_class=target_class)


def colormap(values: np.ndarray) -> np.ndarray:
    """Heat in [0,1] to RGB: (h, 0, 1-h)."""
    return np.stack([values, np.zeros_like(values), 1.0 - values], axis=-1)


def overlay(image: np.ndarray, heatmap: Heatmap, alpha: float = 0.4) -> np.ndarray:
    """Blend the colormapped heatmap over the image: (1-a)*image + a*color."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) image, got shape {image.shape}")
    if image.shape[:2] != (heatmap.height, heatmap.width):
        raise ValueError(
            f"extent mismatch: image {image.shape[:2]}, "
            f"heatmap {(heatmap.height, heatmap.width)}"
        )
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return (1.0 - alpha) * image + alpha * colormap(heatmap.values)


def localization_score(heatmap: Heatmap, box: DamageBox) -> float:
    """Fraction of heatmap mass inside the box dilated by 4 px per side."""
    if box.width <= 0 or box.height <= 0:
        raise ValueError("degenerate box: zero area")
    if box.x < 0 or box.y < 0 or box.x + box.width > heatmap.width or box.y + box.height > heatmap.height:
        raise ValueError("box extends outside the heatmap")
    total = float(heatmap.values.sum())
    if total == 0.0:
        return 0.0
    x0 = max(0, box.x - DILATION_PX)
    y0 = max(0, box.y - DILATION_PX)
    x1 = min(heatmap.width, box.x + box.width + DILATION_PX)
    y1 = min(heatmap.height, box.y + box.height + DILATION_PX)
    inside = float(heatmap.values[y0:y1, x0:x1].sum())
    return inside / total
