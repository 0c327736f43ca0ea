"""Feature extractor, prediction heads, and supervised losses.

A model is a plain MLP split in two: the extractor (all hidden layers,
whose final width m is the representation the shift regularizers act on)
and the head (a single linear layer producing class logits or a scalar).
Parameters are Glorot-uniform initialized with zero biases and live in
plain numpy arrays; the forward passes build graph nodes so every loss is
differentiable end to end.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ContractViolation, ShapeError

_CHECKPOINT_FORMAT = "copulashift-params-v1"

_ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh}


@dataclass(frozen=True)
class LayerSpec:
    """Architecture description: hidden widths plus the output task.

    ``task`` is "classification" (with ``n_classes`` >= 2) or "regression"
    (scalar output). The feature dimension m equals the last hidden width.
    """

    hidden: tuple[int, ...]
    task: str = "classification"
    n_classes: int | None = 2
    activation: str = "relu"

    def __post_init__(self):
        hidden = tuple(int(h) for h in self.hidden)
        if not hidden or any(h < 1 for h in hidden):
            raise ContractViolation(
                f"LayerSpec: at least one positive hidden width required, got {self.hidden}")
        object.__setattr__(self, "hidden", hidden)
        if self.task not in ("classification", "regression"):
            raise ContractViolation(f"LayerSpec: unknown task {self.task!r}")
        if self.task == "classification":
            if self.n_classes is None or int(self.n_classes) < 2:
                raise ContractViolation("LayerSpec: classification needs n_classes >= 2")
            object.__setattr__(self, "n_classes", int(self.n_classes))
        else:
            object.__setattr__(self, "n_classes", None)
        if self.activation not in _ACTIVATIONS:
            raise ContractViolation(
                f"LayerSpec: activation must be one of {sorted(_ACTIVATIONS)}")

    @property
    def feature_dim(self) -> int:
        return self.hidden[-1]

    @property
    def output_dim(self) -> int:
        return self.n_classes if self.task == "classification" else 1


@dataclass
class ModelParams:
    """Extractor and head weights; arrays are mutated only by the optimizer."""

    spec: LayerSpec
    input_dim: int
    extractor: list  # [(W, b), ...] per hidden layer
    head: tuple  # (W, b)

    def __post_init__(self):
        widths = [self.input_dim, *self.spec.hidden]
        if len(self.extractor) != len(self.spec.hidden):
            raise ContractViolation("ModelParams: one weight pair per hidden layer required")
        for k, (w, b) in enumerate(self.extractor):
            if w.shape != (widths[k], widths[k + 1]) or b.shape != (1, widths[k + 1]):
                raise ShapeError(f"ModelParams layer {k}", w.shape, (widths[k], widths[k + 1]))
        w, b = self.head
        if w.shape != (self.spec.feature_dim, self.spec.output_dim) \
                or b.shape != (1, self.spec.output_dim):
            raise ShapeError("ModelParams head", w.shape,
                             (self.spec.feature_dim, self.spec.output_dim))

    @property
    def feature_dim(self) -> int:
        return self.spec.feature_dim

    def flat_arrays(self) -> list[np.ndarray]:
        """All parameter arrays in a fixed order (extractor first, then head)."""
        out = []
        for w, b in self.extractor:
            out.extend([w, b])
        out.extend(self.head)
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(self.spec, self.input_dim,
                           [(w.copy(), b.copy()) for w, b in self.extractor],
                           (self.head[0].copy(), self.head[1].copy()))


def init_params(spec: LayerSpec, input_dim: int, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases, fully determined by the seed."""
    if int(input_dim) < 1:
        raise ContractViolation(f"init_params: input_dim must be >= 1, got {input_dim}")
    rng = np.random.default_rng(seed)
    widths = [int(input_dim), *spec.hidden, spec.output_dim]

    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    layers = [(glorot(widths[k], widths[k + 1]), np.zeros((1, widths[k + 1])))
              for k in range(len(widths) - 1)]
    return ModelParams(spec, int(input_dim), layers[:-1], layers[-1])


def extract_features(x, params: ModelParams) -> ad.Node:
    """Forward pass through the extractor: (N, d) -> (N, m) graph node."""
    node = x if isinstance(x, ad.Node) else ad.constant(x)
    if node.shape[1] != params.input_dim:
        raise ShapeError("extract_features", node.shape,
                         (node.shape[0], params.input_dim))
    act = _ACTIVATIONS[params.spec.activation]
    for w, b in params.extractor:
        node = act(ad.add_bias(ad.matmul(node, ad.constant(w)), ad.constant(b)))
    return node


def head_outputs(features: ad.Node, params: ModelParams) -> ad.Node:
    """Apply the linear head: logits for classification, predictions for regression."""
    w, b = params.head
    return ad.add_bias(ad.matmul(features, ad.constant(w)), ad.constant(b))


def predict_proba(x, params: ModelParams) -> np.ndarray:
    """Class probabilities for a raw input batch."""
    if params.spec.task != "classification":
        raise ContractViolation("predict_proba: model head is not a classifier")
    logits = head_outputs(extract_features(x, params), params)
    return ad.softmax_rows(logits).value


def predict_regression(x, params: ModelParams) -> np.ndarray:
    """Scalar predictions (N,) for a raw input batch."""
    if params.spec.task != "regression":
        raise ContractViolation("predict_regression: model head is not a regressor")
    return head_outputs(extract_features(x, params), params).value.ravel()


def cross_entropy_loss(features: ad.Node, labels, params: ModelParams) -> ad.Node:
    """Mean cross-entropy of the softmax head on extracted features.

    ``labels`` are 0-based class indices. Probabilities are floored at
    1e-12 inside the log so an early confident mistake stays finite.
    """
    if params.spec.task != "classification":
        raise ContractViolation("cross_entropy_loss: model head is not a classifier")
    y = np.asarray(labels).ravel()
    if y.shape[0] != features.shape[0]:
        raise ContractViolation(
            f"cross_entropy_loss: {y.shape[0]} labels for {features.shape[0]} rows")
    n_classes = params.spec.n_classes
    if y.size == 0 or not np.issubdtype(y.dtype, np.integer):
        raise ContractViolation("cross_entropy_loss: labels must be integer class indices")
    if y.min() < 0 or y.max() >= n_classes:
        raise ContractViolation(
            f"cross_entropy_loss: labels must lie in [0, {n_classes}), got "
            f"range [{y.min()}, {y.max()}]")
    probs = ad.softmax_rows(head_outputs(features, params))
    onehot = np.zeros((y.size, n_classes))
    onehot[np.arange(y.size), y] = 1.0
    picked = ad.total(ad.log(ad.clamp(probs, lo=1e-12)) * ad.constant(onehot))
    return picked * (-1.0 / y.size)


def mse_loss(features: ad.Node, targets, params: ModelParams) -> ad.Node:
    """Mean squared error of the linear head on extracted features."""
    if params.spec.task != "regression":
        raise ContractViolation("mse_loss: model head is not a regressor")
    t = np.asarray(targets, dtype=np.float64).ravel()
    if t.shape[0] != features.shape[0]:
        raise ContractViolation(
            f"mse_loss: {t.shape[0]} targets for {features.shape[0]} rows")
    pred = head_outputs(features, params)
    resid = pred - ad.constant(t.reshape(-1, 1))
    return ad.mean(resid * resid)


def save_params(params: ModelParams, path, extra: dict | None = None) -> None:
    """Write a versioned JSON checkpoint (shapes + row-major float64 weights).

    ``extra`` is stored verbatim under an "extra" key (e.g. the resolved
    training config) and ignored by load_params.
    """
    record = {
        "format": _CHECKPOINT_FORMAT,
        "spec": {
            "hidden": list(params.spec.hidden),
            "task": params.spec.task,
            "n_classes": params.spec.n_classes,
            "activation": params.spec.activation,
        },
        "input_dim": params.input_dim,
        "layers": [
            {"w": w.tolist(), "b": b.tolist()}
            for w, b in [*params.extractor, params.head]
        ],
    }
    if extra is not None:
        record["extra"] = extra
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh)


def load_params(path) -> ModelParams:
    """Read a checkpoint written by save_params."""
    with open(path, "r", encoding="utf-8") as fh:
        record = json.load(fh)
    if record.get("format") != _CHECKPOINT_FORMAT:
        raise ContractViolation(
            f"load_params: unsupported checkpoint format {record.get('format')!r}")
    spec = LayerSpec(hidden=tuple(record["spec"]["hidden"]),
                     task=record["spec"]["task"],
                     n_classes=record["spec"]["n_classes"],
                     activation=record["spec"]["activation"])
    layers = [(np.array(l["w"], dtype=np.float64), np.array(l["b"], dtype=np.float64))
              for l in record["layers"]]
    return ModelParams(spec, int(record["input_dim"]), layers[:-1], tuple(layers[-1]))
