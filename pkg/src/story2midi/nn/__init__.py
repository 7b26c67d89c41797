from .autograd import (NotScalar, ShapeMismatch, Tensor, concat,
                       cross_entropy, embedding_lookup, gelu, layer_norm,
                       masked_attention, masked_fill, matmul, relu, softmax)
from .checkpoint import (CheckpointError, load_checkpoint, save_checkpoint)
from .layers import (Embedding, FeedForward, LayerNorm, Linear,
                     MultiHeadAttention, Parameter, TransformerBlock)
from .optim import Adam, MissingGrad

__all__ = [
    "Tensor", "ShapeMismatch", "NotScalar", "matmul", "softmax", "gelu",
    "relu", "layer_norm", "embedding_lookup", "masked_fill",
    "masked_attention", "cross_entropy", "concat",
    "Parameter", "Linear", "Embedding", "LayerNorm", "MultiHeadAttention",
    "FeedForward", "TransformerBlock",
    "Adam", "MissingGrad",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
]
