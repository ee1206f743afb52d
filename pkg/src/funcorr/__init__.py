"""Dense functional correspondence toolkit.

Synthetic scene generation, pseudo-label aggregation, ground-truth pair
derivation, a small contrastive embedding head trained with hand-derived
gradients, and correspondence metrics, glued together by a CLI. Everything is
numpy; tensors move between stages through a tiny binary container so feature
producers can be swapped without touching the numerical core.
"""

__version__ = "0.1.0"
