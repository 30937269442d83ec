"""Structured prediction engine for event temporal-relation graphs.

A pairwise neural scorer (fixed word vectors, trainable tag embeddings,
a bidirectional gated recurrent encoder) feeds an exact combinatorial
decoder that enforces symmetry, transitivity, and causal coupling over
a document's relation graph.  Training runs in two stages: local
cross-entropy, then a structured max-margin objective driven by
loss-augmented decoding.
"""

__version__ = "0.1.0"

from .labels import (  # noqa: F401
    CompositionTable,
    LabelScheme,
    build_composition_table,
    classify_pair,
    compose,
    load_scheme,
    reverse_label,
)
