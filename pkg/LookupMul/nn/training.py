import copy
from dataclasses import asdict, dataclass
from typing import List

import numpy as np

from LookupMul.amm.activations import log_softmax
from LookupMul.amm.linalg import make_rng
from LookupMul.config import Training
from LookupMul.exceptions import InvalidArgument, LayerStateError, NumericalFailure
from LookupMul.nn.model import DenseLayer, MlpModel, layer_inputs
from LookupMul.utils.datasets import LabeledDataset
from LookupMul.utils.logger import logger


@dataclass
class TrainConfig:
    epochs: int = Training.EPOCHS
    batch_size: int = Training.BATCH_SIZE
    learn_rate: float = Training.LEARN_RATE
    momentum: float = Training.MOMENTUM
    decay_every: int = Training.DECAY_EVERY
    decay: float = Training.DECAY
    seed: int = Training.SEED

    def validate(self) -> "TrainConfig":
        if self.epochs < 0 or self.batch_size < 1 or self.learn_rate < 0 or self.decay_every < 1:
            raise InvalidArgument(f"bad training config {self}")
        return self

    @classmethod
    def finetune(cls, seed: int = Training.SEED) -> "TrainConfig":
        return cls(epochs=Training.FINETUNE_EPOCHS, learn_rate=Training.FINETUNE_LEARN_RATE, seed=seed)


def _suffix_loss(layers: List[DenseLayer], h, labels, block: int = 8192) -> float:
    total = 0.0
    for start in range(0, h.shape[0], block):
        z = h[start:start + block]
        for layer in layers[:-1]:
            z = layer.apply(z)
        log_p = log_softmax(layers[-1].pre_activation(z))
        total -= float(np.sum(log_p[np.arange(log_p.shape[0]), labels[start:start + block]]))
    return total / max(h.shape[0], 1)


def _batch_gradients(layers: List[DenseLayer], x, y):
    acts = [x]
    pres = []
    for layer in layers:
        z = layer.pre_activation(acts[-1])
        pres.append(z)
        acts.append(layer.apply(acts[-1]))

    probs = acts[-1].copy()
    probs[np.arange(y.size), y] -= 1.0
    dz = probs / y.size
    grads = []
    for i in range(len(layers) - 1, -1, -1):
        grads.append((acts[i].T @ dz, dz.sum(axis=0)))
        if i == 0:
            break
        da = dz @ layers[i].weights.T
        prev = layers[i - 1].activation
        dz = da * (pres[i - 1] > 0) if prev == "relu" else da
    return grads[::-1]


def _sgd(model: MlpModel, data: LabeledDataset, cfg: TrainConfig, start: int, early_stop: bool) -> MlpModel:
    cfg.validate()
    model = copy.deepcopy(model)
    suffix = model.layers[start:]
    if not suffix:
        return model
    for i, layer in enumerate(suffix, start):
        if not isinstance(layer, DenseLayer):
            raise LayerStateError(f"layer {i} is replaced and cannot be trained")
    if suffix[-1].activation != "softmax":
        raise InvalidArgument("training needs a softmax output layer")

    h = layer_inputs(model, data.features, start)
    labels = data.labels
    rng = make_rng(cfg.seed)
    velocity = [(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in suffix]

    loss = _suffix_loss(suffix, h, labels)
    history = [loss]
    best = (loss, [(l.weights.copy(), l.bias.copy()) for l in suffix])
    logger.info(f"Training layers {start + 1}..{model.num_layers}: initial loss {loss:.4f}")
    for epoch in range(cfg.epochs):
        lr = cfg.learn_rate * cfg.decay ** (epoch // cfg.decay_every)
        order = rng.permutation(h.shape[0])
        for b in range(0, order.size, cfg.batch_size):
            idx = order[b:b + cfg.batch_size]
            grads = _batch_gradients(suffix, h[idx], labels[idx])
            for layer, (vw, vb), (gw, gb) in zip(suffix, velocity, grads):
                vw *= cfg.momentum
                vw -= lr * gw
                vb *= cfg.momentum
                vb -= lr * gb
                layer.weights += vw
                layer.bias += vb
        loss = _suffix_loss(suffix, h, labels)
        if not np.isfinite(loss):
            raise NumericalFailure(f"training loss diverged at epoch {epoch + 1}")
        history.append(loss)
        logger.info(f"Epoch {epoch + 1}/{cfg.epochs}: loss {loss:.4f} (lr {lr:g})")
        if loss <= best[0]:
            best = (loss, [(l.weights.copy(), l.bias.copy()) for l in suffix])
        elif early_stop:
            logger.info(f"Loss went up at epoch {epoch + 1}, stopping early")
            break

    for layer, (w, b) in zip(suffix, best[1]):
        layer.weights = w
        layer.bias = b
    model.metadata["loss_history"] = [float(v) for v in history]
    model.metadata["train_config"] = asdict(cfg)
    return model


def train(model: MlpModel, data: LabeledDataset, cfg: TrainConfig = None) -> MlpModel:
    """Mini-batch SGD with momentum on cross-entropy; keeps the best epoch."""
    return _sgd(model, data, cfg or TrainConfig(), 0, early_stop=False)


def finetune_suffix(model: MlpModel, l: int, data: LabeledDataset, cfg: TrainConfig = None) -> MlpModel:
    """Freeze layers 0..l and train the rest; nothing to do when l is the last layer."""
    if l >= model.num_layers - 1:
        return model
    return _sgd(model, data, cfg or TrainConfig.finetune(), l + 1, early_stop=True)
