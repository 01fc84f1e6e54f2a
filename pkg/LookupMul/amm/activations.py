import numpy as np

from LookupMul.exceptions import InvalidArgument

ACTIVATIONS = ("identity", "relu", "softmax")


def softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def activate(z, kind: str):
    if kind == "identity":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "softmax":
        return softmax(z)
    raise InvalidArgument(f"unknown activation {kind!r}, expected one of {ACTIVATIONS}")
