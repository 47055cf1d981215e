"""Python access to the factgen core: the CLI plus a few standalone helpers."""

from ._factgen import (
    LoadError,
    ValidationError,
    bleu,
    consistency,
    entities,
    nucleus_filter,
    retrieve,
    richness,
    run,
    split_sentences,
    stance,
    tokenize,
)

__all__ = [
    "LoadError",
    "ValidationError",
    "bleu",
    "consistency",
    "entities",
    "nucleus_filter",
    "retrieve",
    "richness",
    "run",
    "split_sentences",
    "stance",
    "tokenize",
]
