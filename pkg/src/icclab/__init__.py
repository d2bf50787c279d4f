"""icclab: a desk-scale laboratory for in-context clustering.

Synthetic clustering episodes, a character-level codec, a small causal
transformer trained with next-token prediction, attention-based spectral
clustering, classical baselines, and an evaluation harness.
"""

__version__ = "0.1.0"
