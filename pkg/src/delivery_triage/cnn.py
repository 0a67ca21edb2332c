"""Small convolutional network with hand-written forward and backward passes.

Batches are float64 arrays (n, height, width, channels). Convolution is
valid-padding cross-correlation with stride 1; every layer caches its last
forward activations so the backward pass and the heatmap explainer can read
them. Two binary classifiers share this architecture: photo relevance and
damage detection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imageops import random_augment
from .numerics import AdamState, OptimizerConfig, adam_step, cross_entropy, seeded_rng, softmax

TASK_CLASSES = {
    "relevance": ("relevant", "irrelevant"),
    "damage": ("damaged", "not_damaged"),
}


class Layer:
    """Shared scaffolding: parameter lists, trainable flag, activation cache."""

    kind = "layer"

    def __init__(self):
        self.trainable = True
        self.params: list[np.ndarray] = []
        self.grads: list[np.ndarray] = []
        self.output: np.ndarray | None = None

    def buffers(self) -> list[np.ndarray]:
        return []

    def set_buffers(self, buffers: list[np.ndarray]) -> None:
        if buffers:
            raise ValueError(f"{self.kind} layer has no buffers")

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def state(self) -> list[np.ndarray]:
        return [p.copy() for p in self.params] + [b.copy() for b in self.buffers()]

    def restore(self, state: list[np.ndarray]) -> None:
        n = len(self.params)
        self.params = [p.copy() for p in state[:n]]
        self.set_buffers([b.copy() for b in state[n:]])


class Conv(Layer):
    """Valid-padding 3x3 cross-correlation, stride 1."""

    kind = "conv"

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3,
                 rng: np.random.Generator | None = None, explanation_target: bool = False):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.explanation_target = explanation_target
        rng = rng or seeded_rng(0)
        fan_in = kernel * kernel * in_channels
        weights = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(kernel, kernel, in_channels, out_channels))
        self.params = [weights, np.zeros(out_channels)]
        self._input: np.ndarray | None = None

    def forward(self, x, training):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ValueError(
                f"conv expects (n, h, w, {self.in_channels}), got {x.shape}"
            )
        k = self.kernel
        if x.shape[1] < k or x.shape[2] < k:
            raise ValueError(f"input {x.shape[1]}x{x.shape[2]} smaller than {k}x{k} kernel")
        weights, bias = self.params
        windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
        # windows: (n, oh, ow, c, k, k) -> (n, oh, ow, k, k, c) to match weights
        patches = windows.transpose(0, 1, 2, 4, 5, 3)
        n, oh, ow = patches.shape[:3]
        flat = patches.reshape(n * oh * ow, k * k * self.in_channels)
        out = flat @ weights.reshape(-1, self.out_channels) + bias
        self._input = x
        self.output = out.reshape(n, oh, ow, self.out_channels)
        return self.output

    def backward(self, d_out):
        x = self._input
        weights, _ = self.params
        k = self.kernel
        n, oh, ow, _ = d_out.shape
        d_weights = np.zeros_like(weights)
        d_x = np.zeros_like(x)
        for i in range(k):
            for j in range(k):
                patch = x[:, i : i + oh, j : j + ow, :]
                d_weights[i, j] = np.tensordot(patch, d_out, axes=([0, 1, 2], [0, 1, 2]))
                d_x[:, i : i + oh, j : j + ow, :] += d_out @ weights[i, j].T
        d_bias = d_out.sum(axis=(0, 1, 2))
        self.grads = [d_weights, d_bias]
        return d_x


class Relu(Layer):
    kind = "relu"

    def __init__(self):
        super().__init__()
        self._input = None

    def forward(self, x, training):
        self._input = x
        self.output = np.maximum(x, 0.0)
        return self.output

    def backward(self, d_out):
        return d_out * (self._input > 0.0)


class MaxPool(Layer):
    """2x2 window, stride 2; odd trailing rows/columns are dropped."""

    kind = "maxpool"

    def __init__(self):
        super().__init__()
        self._input_shape = None
        self._argmax = None

    def forward(self, x, training):
        n, h, w, c = x.shape
        oh, ow = h // 2, w // 2
        if oh == 0 or ow == 0:
            raise ValueError(f"input {h}x{w} too small for 2x2 pooling")
        cropped = x[:, : oh * 2, : ow * 2, :]
        windows = cropped.reshape(n, oh, 2, ow, 2, c).transpose(0, 1, 3, 5, 2, 4)
        flat = windows.reshape(n, oh, ow, c, 4)
        self._argmax = flat.argmax(axis=-1)
        self._input_shape = x.shape
        self.output = np.take_along_axis(flat, self._argmax[..., None], axis=-1)[..., 0]
        return self.output

    def backward(self, d_out):
        n, h, w, c = self._input_shape
        oh, ow = h // 2, w // 2
        scatter = np.zeros((n, oh, ow, c, 4), dtype=np.float64)
        np.put_along_axis(scatter, self._argmax[..., None], d_out[..., None], axis=-1)
        block = scatter.reshape(n, oh, ow, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        d_x = np.zeros((n, h, w, c), dtype=np.float64)
        d_x[:, : oh * 2, : ow * 2, :] = block.reshape(n, oh * 2, ow * 2, c)
        return d_x


class GlobalAveragePool(Layer):
    kind = "global_average_pool"

    def __init__(self):
        super().__init__()
        self._input_shape = None

    def forward(self, x, training):
        self._input_shape = x.shape
        self.output = x.mean(axis=(1, 2))
        return self.output

    def backward(self, d_out):
        n, h, w, c = self._input_shape
        return np.broadcast_to(d_out[:, None, None, :], (n, h, w, c)) / (h * w)


class FeatureNorm(Layer):
    """Per-feature standardization with learned scale and shift.

    Batch statistics are used while training; running statistics updated
    with momentum 0.9 take over at inference.
    """

    kind = "feature_norm"

    def __init__(self, dim: int, momentum: float = 0.9, epsilon: float = 1e-5):
        super().__init__()
        self.dim = dim
        self.momentum = momentum
        self.epsilon = epsilon
        self.params = [np.ones(dim), np.zeros(dim)]  # scale, shift
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self._cache = None

    def buffers(self):
        return [self.running_mean, self.running_var]

    def set_buffers(self, buffers):
        self.running_mean, self.running_var = buffers

    def forward(self, x, training):
        scale, shift = self.params
        if training:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        normed = (x - mean) * inv_std
        self._cache = (x, mean, inv_std, normed, training)
        self.output = scale * normed + shift
        return self.output

    def backward(self, d_out):
        x, mean, inv_std, normed, training = self._cache
        scale, _ = self.params
        d_scale = (d_out * normed).sum(axis=0)
        d_shift = d_out.sum(axis=0)
        self.grads = [d_scale, d_shift]
        d_normed = d_out * scale
        if not training:
            return d_normed * inv_std
        n = x.shape[0]
        centered = x - mean
        d_var = (d_normed * centered * -0.5 * inv_std**3).sum(axis=0)
        d_mean = (-d_normed * inv_std).sum(axis=0) + d_var * (-2.0 * centered).mean(axis=0)
        return d_normed * inv_std + d_var * 2.0 * centered / n + d_mean / n


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        rng = rng or seeded_rng(0)
        weights = rng.normal(0.0, np.sqrt(2.0 / in_dim), size=(in_dim, out_dim))
        self.params = [weights, np.zeros(out_dim)]
        self._input = None

    def forward(self, x, training):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"dense expects (n, {self.in_dim}), got {x.shape}")
        self._input = x
        weights, bias = self.params
        self.output = x @ weights + bias
        return self.output

    def backward(self, d_out):
        weights, _ = self.params
        self.grads = [self._input.T @ d_out, d_out.sum(axis=0)]
        return d_out @ weights.T


class SoftmaxHead(Layer):
    """Row-wise softmax; combined with cross-entropy in the backward pass."""

    kind = "softmax_head"

    def forward(self, x, training):
        self.output = softmax(x)
        return self.output

    def backward_from_labels(self, labels: np.ndarray) -> np.ndarray:
        """Gradient of mean cross-entropy w.r.t. the incoming logits."""
        n = self.output.shape[0]
        delta = self.output.copy()
        delta[np.arange(n), labels] -= 1.0
        return delta / n

    def backward(self, d_out):
        raise NotImplementedError("softmax head backward starts from gold labels")


@dataclass
class CnnModel:
    """Ordered layers plus task metadata; the last conv feeds the explainer."""

    layers: list[Layer]
    classes: tuple[str, str]
    input_size: int = 64

    def __post_init__(self):
        convs = [l for l in self.layers if isinstance(l, Conv)]
        targets = [l for l in convs if l.explanation_target]
        if len(targets) != 1 or targets[0] is not convs[-1]:
            raise ValueError("exactly the last conv layer must be the explanation target")
        if not isinstance(self.layers[-1], SoftmaxHead):
            raise ValueError("final layer must be the softmax head")
        self._cached_batch: np.ndarray | None = None

    @property
    def explanation_layer(self) -> Conv:
        return next(l for l in self.layers if isinstance(l, Conv) and l.explanation_target)

    def parameterized_layers(self) -> list[Layer]:
        return [l for l in self.layers if l.params]

    def state(self) -> list[list[np.ndarray]]:
        return [l.state() for l in self.layers]

    def restore(self, state: list[list[np.ndarray]]) -> None:
        for layer, s in zip(self.layers, state):
            layer.restore(s)


@dataclass
class TrainRun:
    """Per-epoch loss traces and where early stopping settled."""

    train_losses: list[float]
    val_losses: list[float]
    best_epoch: int  # 0-based index into the loss traces
    best_validation_loss: float
    stopped_early: bool


@dataclass(frozen=True)
class CnnTrainConfig:
    epochs: int = 100
    patience: int = 5
    batch_size: int = 32
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(learning_rate=1e-3))
    val_fraction: float = 0.2
    seed: int = 0
    freeze_k: int | None = None
    augment_probability: float = 0.5

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")


def default_cnn(classes: tuple[str, str], seed: int = 0, input_size: int = 64) -> CnnModel:
    """conv8-conv16-conv32 trunk, then GAP, feature norm, and a dense head."""
    rng = seeded_rng(seed)
    layers = [
        Conv(3, 8, rng=rng),
        Relu(),
        MaxPool(),
        Conv(8, 16, rng=rng),
        Relu(),
        MaxPool(),
        Conv(16, 32, rng=rng, explanation_target=True),
        Relu(),
        GlobalAveragePool(),
        FeatureNorm(32),
        Dense(32, 16, rng=rng),
        Relu(),
        Dense(16, 2, rng=rng),
        SoftmaxHead(),
    ]
    return CnnModel(layers=layers, classes=classes, input_size=input_size)


def cnn_forward(model: CnnModel, batch: np.ndarray, training: bool = False) -> np.ndarray:
    """Class probabilities (n, 2); every layer keeps its activations cached."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[1:] != (model.input_size, model.input_size, 3):
        raise ValueError(
            f"expected batch of shape (n, {model.input_size}, {model.input_size}, 3), "
            f"got {batch.shape}"
        )
    out = batch
    for layer in model.layers:
        out = layer.forward(out, training)
    model._cached_batch = batch
    return out


def cnn_backward(model: CnnModel, batch: np.ndarray, labels: np.ndarray) -> list[list[np.ndarray]]:
    """Gradients of mean cross-entropy, one list per layer (empty when frozen
    or parameter-free). Requires the forward cache for this exact batch."""
    batch = np.asarray(batch, dtype=np.float64)
    if model._cached_batch is None or not np.array_equal(model._cached_batch, batch):
        raise ValueError("stale cache: run cnn_forward on this batch first")
    labels = np.asarray(labels, dtype=np.int64)
    head = model.layers[-1]
    delta = head.backward_from_labels(labels)
    for layer in reversed(model.layers[:-1]):
        delta = layer.backward(delta)
    out: list[list[np.ndarray]] = []
    for layer in model.layers:
        if layer.params and layer.trainable:
            out.append(list(layer.grads))
        else:
            out.append([])
    return out


def batch_loss(model: CnnModel, batch: np.ndarray, labels: np.ndarray, training: bool = False) -> float:
    probs = cnn_forward(model, batch, training=training)
    return float(np.mean([cross_entropy(probs[i], int(labels[i])) for i in range(len(labels))]))


def freeze_all_but_last(model: CnnModel, k: int) -> None:
    """Mark exactly the last k parameterized layers trainable."""
    parameterized = model.parameterized_layers()
    if k > len(parameterized):
        raise ValueError(f"k={k} exceeds {len(parameterized)} parameterized layers")
    if k < 0:
        raise ValueError("k must be >= 0")
    for layer in parameterized:
        layer.trainable = False
    for layer in parameterized[len(parameterized) - k :]:
        layer.trainable = True


class EarlyStopper:
    """Patience-based stopping on validation loss, tracking the best epoch."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = -1

    def update(self, epoch: int, loss: float) -> bool:
        """Record this epoch's loss; True means stop after this epoch."""
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            return False
        return epoch - self.best_epoch >= self.patience


def _stratified_indices(labels: np.ndarray, val_fraction: float, rng: np.random.Generator):
    val: list[int] = []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        n_val = max(1, int(np.floor(len(members) * val_fraction + 0.5)))
        order = rng.permutation(len(members))
        val.extend(members[order[:n_val]].tolist())
    val_set = set(val)
    train = [i for i in range(len(labels)) if i not in val_set]
    return np.asarray(train), np.asarray(sorted(val_set))


def train_cnn(
    images: np.ndarray,
    labels: list[str],
    task: str,
    config: CnnTrainConfig | None = None,
) -> tuple[CnnModel, TrainRun]:
    """Train a binary classifier for one task with Adam and early stopping.

    Returns the parameters from the best-validation-loss epoch, not the last
    one. Deterministic per config.seed.
    """
    if task not in TASK_CLASSES:
        raise ValueError(f"unknown task {task!r}")
    config = config or CnnTrainConfig()
    classes = TASK_CLASSES[task]
    images = np.asarray(images, dtype=np.float64)
    y = np.asarray([_class_index(classes, l) for l in labels], dtype=np.int64)
    for idx, name in enumerate(classes):
        if int((y == idx).sum()) < 2:
            raise ValueError(f"need at least 2 examples of class {name!r}")

    rng = seeded_rng(config.seed)
    model = default_cnn(classes, seed=config.seed, input_size=images.shape[1])
    if config.freeze_k is not None:
        freeze_all_but_last(model, config.freeze_k)
    if not any(l.trainable and l.params for l in model.layers):
        raise ValueError("no trainable parameters")

    train_idx, val_idx = _stratified_indices(y, config.val_fraction, rng)
    x_train, y_train = images[train_idx], y[train_idx]
    x_val, y_val = images[val_idx], y[val_idx]

    adam_states: dict[tuple[int, int], AdamState] = {}
    for li, layer in enumerate(model.layers):
        for pi, p in enumerate(layer.params):
            adam_states[(li, pi)] = AdamState.zeros(p.shape)

    stopper = EarlyStopper(config.patience)
    best_state = model.state()
    train_losses: list[float] = []
    val_losses: list[float] = []
    stopped_early = False

    for epoch in range(config.epochs):
        order = rng.permutation(len(x_train))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            chunk = order[start : start + config.batch_size]
            batch = np.stack(
                [random_augment(x_train[i], rng, config.augment_probability) for i in chunk]
            )
            batch_labels = y_train[chunk]
            probs = cnn_forward(model, batch, training=True)
            loss = float(
                np.mean([cross_entropy(probs[i], int(batch_labels[i])) for i in range(len(chunk))])
            )
            total += loss * len(chunk)
            grads = cnn_backward(model, batch, batch_labels)
            for li, layer in enumerate(model.layers):
                if not grads[li]:
                    continue
                for pi in range(len(layer.params)):
                    layer.params[pi], adam_states[(li, pi)] = adam_step(
                        layer.params[pi], grads[li][pi], adam_states[(li, pi)], config.optimizer
                    )
        train_losses.append(total / len(order))

        val_loss = batch_loss(model, x_val, y_val, training=False)
        val_losses.append(val_loss)
        if val_loss < stopper.best_loss:
            best_state = model.state()
        if stopper.update(epoch, val_loss):
            stopped_early = True
            break

    model.restore(best_state)
    run = TrainRun(
        train_losses=train_losses,
        val_losses=val_losses,
        best_epoch=stopper.best_epoch,
        best_validation_loss=float(stopper.best_loss),
        stopped_early=stopped_early,
    )
    return model, run


def _class_index(classes: tuple[str, str], label: str) -> int:
    try:
        return classes.index(label)
    except ValueError:
        raise ValueError(f"label {label!r} not in task classes {classes}") from None


def predict_image(model: CnnModel, image: np.ndarray) -> tuple[str, np.ndarray]:
    """Class name and probability pair for a single image."""
    probs = cnn_forward(model, image[None, ...], training=False)[0]
    return model.classes[int(np.argmax(probs))], probs


def evaluate_cnn(model: CnnModel, images: np.ndarray, labels: list[str], batch_size: int = 64):
    """Accuracy and confusion counts over a labeled image set."""
    images = np.asarray(images, dtype=np.float64)
    if len(images) == 0:
        raise ValueError("empty evaluation set")
    y = np.asarray([_class_index(model.classes, l) for l in labels], dtype=np.int64)
    matrix = np.zeros((2, 2), dtype=np.int64)
    for start in range(0, len(images), batch_size):
        batch = images[start : start + batch_size]
        probs = cnn_forward(model, batch, training=False)
        predicted = probs.argmax(axis=1)
        for gold, pred in zip(y[start : start + batch_size], predicted):
            matrix[gold, pred] += 1
    accuracy = float(np.trace(matrix)) / float(matrix.sum())
    return accuracy, matrix


_LAYER_SPECS = {
    "conv": lambda l: {"in_channels": l.in_channels, "out_channels": l.out_channels,
                       "kernel": l.kernel, "explanation_target": l.explanation_target},
    "relu": lambda l: {},
    "maxpool": lambda l: {},
    "global_average_pool": lambda l: {},
    "feature_norm": lambda l: {"dim": l.dim, "momentum": l.momentum, "epsilon": l.epsilon},
    "dense": lambda l: {"in_dim": l.in_dim, "out_dim": l.out_dim},
    "softmax_head": lambda l: {},
}


def _build_layer(kind: str, spec: dict) -> Layer:
    if kind == "conv":
        return Conv(spec["in_channels"], spec["out_channels"], kernel=spec["kernel"],
                    explanation_target=spec["explanation_target"])
    if kind == "relu":
        return Relu()
    if kind == "maxpool":
        return MaxPool()
    if kind == "global_average_pool":
        return GlobalAveragePool()
    if kind == "feature_norm":
        return FeatureNorm(spec["dim"], momentum=spec["momentum"], epsilon=spec["epsilon"])
    if kind == "dense":
        return Dense(spec["in_dim"], spec["out_dim"])
    if kind == "softmax_head":
        return SoftmaxHead()
    raise ValueError(f"unknown layer kind {kind!r}")


def save_cnn_model(model: CnnModel, path) -> None:
    """Persist architecture and parameters to versioned JSON; exact round-trip."""
    layers = []
    for layer in model.layers:
        layers.append(
            {
                "kind": layer.kind,
                "spec": _LAYER_SPECS[layer.kind](layer),
                "trainable": layer.trainable,
                "params": [p.tolist() for p in layer.params],
                "buffers": [b.tolist() for b in layer.buffers()],
            }
        )
    payload = {
        "format": "cnn-model/1",
        "classes": list(model.classes),
        "input_size": model.input_size,
        "layers": layers,
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_cnn_model(path) -> CnnModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != "cnn-model/1":
        raise ValueError(f"{path}: not a cnn model file")
    layers = []
    for entry in payload["layers"]:
        layer = _build_layer(entry["kind"], entry["spec"])
        layer.trainable = entry["trainable"]
        layer.params = [np.asarray(p, dtype=np.float64) for p in entry["params"]]
        if entry["buffers"]:
            layer.set_buffers([np.asarray(b, dtype=np.float64) for b in entry["buffers"]])
        layers.append(layer)
    return CnnModel(
        layers=layers,
        classes=tuple(payload["classes"]),
        input_size=payload["input_size"],
    )
