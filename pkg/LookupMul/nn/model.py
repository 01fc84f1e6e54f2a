from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np

from LookupMul.amm.activations import activate
from LookupMul.amm.linalg import make_rng
from LookupMul.amm.table import AmmOperator
from LookupMul.exceptions import InvalidArgument, ShapeMismatch


@dataclass
class DenseLayer:
    weights: np.ndarray   # D_l x M_l
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeMismatch(f"weights {self.weights.shape} and bias {self.bias.shape} do not match")

    @property
    def in_dim(self) -> int:
        return int(self.weights.shape[0])

    @property
    def out_dim(self) -> int:
        return int(self.weights.shape[1])

    def pre_activation(self, x) -> np.ndarray:
        return x @ self.weights + self.bias

    def apply(self, x) -> np.ndarray:
        return activate(self.pre_activation(x), self.activation)


Layer = Union[DenseLayer, AmmOperator]


def activation_of(layer) -> str:
    return layer.activation if isinstance(layer, DenseLayer) else layer.nonlinearity


@dataclass
class MlpModel:
    layers: List[Layer]
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise InvalidArgument("a model needs at least one layer")
        for i, (prev, nxt) in enumerate(zip(self.layers, self.layers[1:])):
            if prev.out_dim != nxt.in_dim:
                raise ShapeMismatch(f"layer {i} outputs {prev.out_dim} dims, layer {i + 1} expects {nxt.in_dim}")
        for layer in self.layers[:-1]:
            if activation_of(layer) == "softmax":
                raise InvalidArgument("softmax is only allowed on the final layer")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def arch(self) -> List[int]:
        return [self.in_dim] + [layer.out_dim for layer in self.layers]

    def replaced(self) -> List[bool]:
        return [isinstance(layer, AmmOperator) for layer in self.layers]

    @classmethod
    def initialize(cls, arch: Sequence[int], seed: int = 0) -> "MlpModel":
        """He-initialized ReLU MLP with a softmax classifier on top."""
        if len(arch) < 2 or any(int(n) < 1 for n in arch):
            raise InvalidArgument(f"bad architecture {list(arch)}")
        rng = make_rng(seed)
        layers = []
        for i, (d, m) in enumerate(zip(arch, arch[1:])):
            w = rng.normal(0.0, np.sqrt(2.0 / d), size=(d, m))
            act = "softmax" if i == len(arch) - 2 else "relu"
            layers.append(DenseLayer(w, np.zeros(m), act))
        return cls(layers, {"seed": int(seed), "arch": [int(n) for n in arch]})


def forward(model: MlpModel, x) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Output plus the input seen by every layer."""
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != model.in_dim:
        raise ShapeMismatch(f"input has shape {h.shape}, model expects {model.in_dim} columns")
    inputs = []
    for layer in model.layers:
        inputs.append(h)
        h = layer.apply(h)
    return h, inputs


def layer_inputs(model: MlpModel, x, l: int) -> np.ndarray:
    """Activations entering layer ``l`` (0-based), through any replaced layers."""
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != model.in_dim:
        raise ShapeMismatch(f"input has shape {h.shape}, model expects {model.in_dim} columns")
    for layer in model.layers[:l]:
        h = layer.apply(h)
    return h


def predict(model: MlpModel, x, block: int = 8192) -> np.ndarray:
    x = np.asarray(x)
    out = np.empty(x.shape[0], dtype=np.int64)
    for start in range(0, x.shape[0], block):
        probs, _ = forward(model, x[start:start + block])
        out[start:start + block] = np.argmax(probs, axis=1)
    return out


def evaluate(model: MlpModel, data) -> float:
    if data.num_rows == 0:
        return 0.0
    return float(np.mean(predict(model, data.features) == data.labels))
