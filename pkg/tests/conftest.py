"""Shared handcrafted fixtures.

Several suites need models with exactly known behavior rather than
trained ones: a keyword-lookup text classifier and tiny channel-mean
CNNs whose confidence is set by a gain factor.
"""

import numpy as np
import pytest

from delivery_triage.cnn import (
    CnnModel,
    Conv,
    Dense,
    GlobalAveragePool,
    Relu,
    SoftmaxHead,
    save_cnn_model,
)
from delivery_triage.datasets import LabelTaxonomy
from delivery_triage.text_model import TextModel, Vocabulary, save_text_model

# One unmistakable keyword per model class, in class order.
CLASS_KEYWORDS = ("porch", "incorrect", "late", "missing", "partial", "crushed", "charged", "address")

# Flat-color probe images: the detector models read channel means.
RGB_RELEVANT_DAMAGED = (0.8, 0.7, 0.05)
RGB_RELEVANT_INTACT = (0.9, 0.05, 0.2)
RGB_IRRELEVANT = (0.1, 0.1, 0.9)


def make_text_model() -> TextModel:
    vocab = Vocabulary(
        token_to_index={w: i for i, w in enumerate(CLASS_KEYWORDS)},
        document_frequency={w: 1 for w in CLASS_KEYWORDS},
        total_documents=8,
    )
    return TextModel(
        featurizer="tfidf",
        taxonomy=LabelTaxonomy(),
        weights=10.0 * np.eye(8),
        bias=np.zeros(8),
        vocabulary=vocab,
    )


def make_detector_model(
    classes: tuple[str, str], channel_a: int, channel_b: int, gain: float, input_size: int = 20
) -> CnnModel:
    """Fixed CNN whose two logits are gain * mean(channel_a), gain * mean(channel_b)."""
    conv = Conv(3, 2, explanation_target=True)
    w = np.zeros_like(conv.params[0])
    w[1, 1, channel_a, 0] = 1.0
    w[1, 1, channel_b, 1] = 1.0
    conv.params = [w, np.zeros(2)]
    dense = Dense(2, 2)
    dense.params = [gain * np.eye(2), np.zeros(2)]
    layers = [conv, Relu(), GlobalAveragePool(), dense, SoftmaxHead()]
    return CnnModel(layers=layers, classes=classes, input_size=input_size)


def make_relevance_model(gain: float = 10.0, input_size: int = 20) -> CnnModel:
    return make_detector_model(("relevant", "irrelevant"), 0, 2, gain, input_size)


def make_damage_model(gain: float = 10.0, input_size: int = 20) -> CnnModel:
    return make_detector_model(("damaged", "not_damaged"), 1, 2, gain, input_size)


def flat_image(rgb, size: int = 20) -> np.ndarray:
    return np.broadcast_to(np.asarray(rgb, dtype=np.float64), (size, size, 3)).copy()


@pytest.fixture(scope="session")
def model_files(tmp_path_factory):
    """The handcrafted model trio saved to disk, for CLI and API wiring."""
    root = tmp_path_factory.mktemp("models")
    paths = {
        "text": root / "text-model.json",
        "relevance": root / "relevance-model.json",
        "damage": root / "damage-model.json",
    }
    save_text_model(make_text_model(), paths["text"])
    save_cnn_model(make_relevance_model(), paths["relevance"])
    save_cnn_model(make_damage_model(), paths["damage"])
    return paths
