"""Utility-based route comparison from travel-time moments."""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["RouteSummary", "utility", "linear_utility", "select_route",
           "indifference_c"]


@dataclass(frozen=True)
class RouteSummary:
    route_id: int
    mean: float  # s
    std: float  # s

    def __post_init__(self):
        if self.std < 0:
            raise ValueError("std must be nonnegative")


def utility(r: RouteSummary, c: float) -> float:
    """Mean-plus-risk utility mu + c*sigma (lower is better)."""
    if c < 0:
        raise ValueError("risk weight must be nonnegative")
    return r.mean + c * r.std


def linear_utility(r: RouteSummary, terms) -> float:
    """Generalized utility: sum of weight * feature over (feature,
    weight) pairs, features being 'mean' or 'std'."""
    feats = {"mean": r.mean, "std": r.std}
    return sum(w * feats[name] for name, w in terms)


def select_route(routes, c: float) -> int:
    """Route id minimizing mu + c*sigma; ties go to the lowest id."""
    if not routes:
        raise ValueError("empty route list")
    return min(routes, key=lambda r: (utility(r, c), r.route_id)).route_id


def indifference_c(r1: RouteSummary, r2: RouteSummary):
    """Positive risk weight at which the two routes tie, or None if the
    utilities never cross for c > 0 (parallel or dominated)."""
    if r1.std == r2.std:
        return None
    c = (r2.mean - r1.mean) / (r1.std - r2.std)
    return c if c > 0 else None
