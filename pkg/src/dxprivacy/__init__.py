"""d_chi-privacy text privatization: noise mechanism, privacy analysis, MLM objectives and utility probes."""

__version__ = "0.1.0"

from .embeddings import (
    SPECIAL_TOKENS,
    EmbeddingTable,
    TableFormatError,
    Vocabulary,
    batched_nearest,
    is_special,
    knn,
    load_table,
    lookup,
    nearest_token,
    save_table,
)
from .mechanism import (
    NoiseSample,
    PrivacyParameterError,
    PrivacyParams,
    perturb_embedding,
    privatize_sequence,
    privatize_token,
    privatize_tokens,
    sample_noise,
)
from .rng import RngStream
from .tokenizer import detokenize, tokenize

__all__ = [
    "SPECIAL_TOKENS",
    "EmbeddingTable",
    "NoiseSample",
    "PrivacyParameterError",
    "PrivacyParams",
    "RngStream",
    "TableFormatError",
    "Vocabulary",
    "batched_nearest",
    "detokenize",
    "is_special",
    "knn",
    "load_table",
    "lookup",
    "nearest_token",
    "perturb_embedding",
    "privatize_sequence",
    "privatize_token",
    "privatize_tokens",
    "sample_noise",
    "save_table",
    "tokenize",
]
