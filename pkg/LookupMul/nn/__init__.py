from .model import DenseLayer, MlpModel, forward, layer_inputs, predict, evaluate
from .training import TrainConfig, train, finetune_suffix
from .replace import replace_layer, incremental_replace_all
