from .batch import Batch, build_batch
from .config import ATTENTION_MODES, ModelConfig
from .encoder import (
    Encoded,
    attend,
    attention_scores,
    embed_inputs,
    encode,
    encode_batch,
    sequence_batch,
)
from .params import (
    INIT_STD,
    ModelParams,
    attention_query_names,
    init_params,
    install_entity_aware_queries,
)

__all__ = [
    "ATTENTION_MODES",
    "Batch",
    "Encoded",
    "INIT_STD",
    "ModelConfig",
    "ModelParams",
    "attend",
    "attention_query_names",
    "attention_scores",
    "build_batch",
    "embed_inputs",
    "encode",
    "encode_batch",
    "init_params",
    "install_entity_aware_queries",
    "sequence_batch",
]
