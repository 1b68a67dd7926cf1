"""Recommendation, outfit assembly, and outfit-coherence scoring.

Everything here reduces to distances from the shared metric kernels plus the
link probability, so rankings by probability and by ascending distance are
the same ordering.
"""

from dataclasses import dataclass

import numpy as np

from .catalog import DataError, FeatureMatrix, MetricModel
from .metric import link_probability, log_link_probability, model_distances


@dataclass
class OutfitScore:
    items: list
    mean_pair_loglik: float
    pair_count: int


def _distances_to_query(model: MetricModel, features: FeatureMatrix,
                        query_item: str, candidates):
    X = features.normalized(model.feature_norm).values
    q = features.index_of(query_item)
    idx = np.array([features.index_of(c) for c in candidates], dtype=np.int64)
    q_idx = np.full(len(idx), q, dtype=np.int64)
    return model_distances(model, X, q_idx, idx)


def rank_candidates(model: MetricModel, features: FeatureMatrix,
                    query_item: str, candidates):
    """All candidates as (item, distance, probability), nearest first.

    Sorted by ascending distance with ties broken by item id; by sigmoid
    monotonicity this is also descending probability. The query must not be
    among the candidates.
    """
    candidates = list(candidates)
    if not candidates:
        raise DataError("no candidates to rank")
    if query_item in candidates:
        raise DataError("query item must be excluded from the candidate set")
    d = _distances_to_query(model, features, query_item, candidates)
    ranked = sorted(zip(d, candidates), key=lambda pair: (pair[0], pair[1]))
    return [(item, float(dist), float(link_probability(dist, model.threshold)))
            for dist, item in ranked]


def recommend(model: MetricModel, features: FeatureMatrix, query_item: str,
              category_items, n: int):
    """The n candidates most probably related to the query.

    Returns (item, probability) tuples in the rank_candidates order.
    """
    if n < 1:
        raise DataError("n must be >= 1")
    ranked = rank_candidates(model, features, query_item, category_items)
    return [(item, prob) for item, _, prob in ranked[:n]]


def build_outfit(model: MetricModel, features: FeatureMatrix, query_item: str,
                 categories) -> list:
    """Pick the most query-compatible item from each category, independently.

    categories is a sequence of item-id collections, one per wardrobe slot;
    none may contain the query item (a slot for the query's own category makes
    no sense) and none may be empty. Returns one item id per category, in the
    order given.
    """
    picks = []
    for pos, members in enumerate(categories):
        members = list(members)
        if not members:
            raise DataError(f"category {pos} is empty")
        if query_item in members:
            raise DataError(f"category {pos} contains the query item")
        picks.append(rank_candidates(model, features, query_item, members)[0][0])
    return picks


def outfit_coherence(model: MetricModel, features: FeatureMatrix, items,
                     normalize: str = "pairs") -> OutfitScore:
    """Mean log link-likelihood over all unordered pairs of outfit members.

    normalize "pairs" (the default) divides the summed pair log-likelihoods
    by the number of pairs; "components" divides by the number of items
    instead. Both are order-invariant; only "pairs" is size-unbiased.
    """
    items = list(items)
    if len(items) < 2:
        raise DataError("an outfit needs at least 2 items")
    if normalize not in ("pairs", "components"):
        raise DataError(f"unknown normalization: {normalize!r}")
    X = features.normalized(model.feature_norm).values
    idx = np.array([features.index_of(i) for i in items], dtype=np.int64)
    n = len(items)
    ii, jj = np.triu_indices(n, k=1)
    d = model_distances(model, X, idx[ii], idx[jj])
    logliks = log_link_probability(d, model.threshold)
    # Summing in sorted order makes the score exactly invariant to the order
    # the items were listed in, not merely up to rounding.
    total = float(np.sum(np.sort(logliks)))
    denom = len(logliks) if normalize == "pairs" else n
    return OutfitScore(items, total / denom, len(logliks))


def makeover_delta(model: MetricModel, features: FeatureMatrix,
                   before_items, after_items, normalize: str = "pairs") -> float:
    """Coherence change from an outfit makeover; positive means improvement."""
    before = outfit_coherence(model, features, before_items, normalize)
    after = outfit_coherence(model, features, after_items, normalize)
    return after.mean_pair_loglik - before.mean_pair_loglik
