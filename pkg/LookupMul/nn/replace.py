from typing import List, Optional, Tuple

import numpy as np

from LookupMul.amm.linalg import make_rng
from LookupMul.amm.table import AmmOperator, FitConfig, fit_operator
from LookupMul.exceptions import InvalidArgument, LayerStateError
from LookupMul.nn.model import MlpModel, evaluate, layer_inputs
from LookupMul.nn.training import TrainConfig, finetune_suffix
from LookupMul.utils.datasets import LabeledDataset
from LookupMul.utils.logger import logger


def replace_layer(model: MlpModel, l: int, data, c: int, partition: str,
                  cfg: FitConfig = None, rng=0) -> MlpModel:
    """Swap dense layer ``l`` (0-based) for a lookup operator fit on its inputs."""
    if not 0 <= l < model.num_layers:
        raise InvalidArgument(f"layer {l} out of range for a {model.num_layers}-layer model")
    layer = model.layers[l]
    if isinstance(layer, AmmOperator):
        raise LayerStateError(f"layer {l} is already replaced")
    if c > layer.in_dim:
        raise InvalidArgument(f"{c} codebooks exceed the {layer.in_dim} inputs of layer {l}")
    features = data.features if isinstance(data, LabeledDataset) else data
    cfg = (cfg or FitConfig()).for_layer(layer.activation)

    a = layer_inputs(model, features, l)
    op = fit_operator(a, layer.weights, layer.bias, c, partition, cfg, rng)
    layers = list(model.layers)
    layers[l] = op
    metadata = dict(model.metadata)
    metadata.setdefault("replacements", [])
    metadata["replacements"] = metadata["replacements"] + [
        {"layer": int(l), "codebooks": int(c), "partition": partition, "encoder": cfg.encoder,
         "method": cfg.method, "objective": cfg.objective, "lam": float(cfg.lam)}]
    return MlpModel(layers, metadata)


def incremental_replace_all(model: MlpModel, data: LabeledDataset, c: int, partition: str,
                            fit_cfg: FitConfig = None, train_cfg: TrainConfig = None,
                            finetune: bool = True, eval_data: Optional[LabeledDataset] = None,
                            rng=0) -> Tuple[MlpModel, List[float]]:
    """Replace layers input to output, fine-tuning the exact suffix after each step."""
    if any(model.replaced()):
        raise LayerStateError("incremental replacement starts from an all-dense model")
    seeds = np.random.SeedSequence(int(make_rng(rng).integers(2**63 - 1))).spawn(model.num_layers)
    scored = eval_data if eval_data is not None else data
    accuracies = []
    for l in range(model.num_layers):
        c_l = min(c, model.layers[l].in_dim)
        model = replace_layer(model, l, data, c_l, partition, fit_cfg, seeds[l])
        if finetune:
            model = finetune_suffix(model, l, data, train_cfg or TrainConfig.finetune())
        accuracies.append(evaluate(model, scored))
        logger.info(f"Step {l + 1}/{model.num_layers} (C={c}): accuracy {accuracies[-1]:.4f}")
    return model, accuracies
