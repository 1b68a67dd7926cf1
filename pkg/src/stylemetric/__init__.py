"""Learned visual-style distances over item feature vectors.

The package trains low-rank Mahalanobis metrics (optionally personalized with
per-user weights) on relationship graphs between items, evaluates them as link
predictors, and builds style-space tooling on the learned embedding:
clustering, graph navigation, recommendation, and outfit scoring.
"""

__version__ = "0.1.0"
