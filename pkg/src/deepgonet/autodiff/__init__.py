from .layers import (
    GRUWeights,
    RunningStats,
    batchnorm,
    bce_loss,
    bigru,
    conv1d_same,
    dense,
    dropout,
    embedding,
    gru_cell,
    masked_mean_pool,
)
from .optim import Adam, AdamState
from .tensor import Parameter, Tensor, as_tensor, concat, matmul, relu, sigmoid, tanh

__all__ = [
    "Adam", "AdamState", "GRUWeights", "Parameter", "RunningStats", "Tensor", "as_tensor",
    "batchnorm", "bce_loss", "bigru", "concat", "conv1d_same", "dense", "dropout",
    "embedding", "gru_cell", "masked_mean_pool", "matmul", "relu", "sigmoid", "tanh",
]
