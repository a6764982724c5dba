"""Text-audio relevance scoring with a mixture of experts.

Three embedding-similarity experts and one cross-attention sequence expert
produce per-pair scores; a feature-aware gating network fuses them into a
single relevance score on a configurable range.
"""

__version__ = "0.1.0"
