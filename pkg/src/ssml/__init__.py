"""Self-supervised metric learning over a feature dictionary.

Feature-space pipeline for unsupervised re-identification: a moving-average
feature dictionary, positive-label mining (similarity threshold, mutual
top-K rank agreement, neighborhood-distribution distance), a dictionary
triplet objective with hard-negative mining, a small trainable embedding
head, and CMC/mAP retrieval evaluation.

Submodules are imported lazily so the command-line entry point can bound
BLAS thread counts before numpy loads.
"""

__version__ = "0.1.0"

__all__ = [
    "cli",
    "dplm",
    "embedding",
    "errors",
    "evaluation",
    "featurestore",
    "loss",
    "similarity",
    "synthdata",
    "trainer",
]
