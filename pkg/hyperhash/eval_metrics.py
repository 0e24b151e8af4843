"""Retrieval metrics: mAP@K and the spatial-aware mAP@K_r.

AP@k sums precision@i over the relevant positions i <= k and divides by
min(k, total relevant); a query with no relevant item scores 0.

For mAP@K_r, two objects match when they share a class and their centres,
normalised by their own image sizes, lie within distance r. Whether a
retrieved image counts as relevant is decided by a policy over object pairs;
the default accepts an image with at least one matching pair.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Container, FrozenSet, Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InvalidArgumentError, require

logger = logging.getLogger(__name__)

Relevance = Union[Callable[[int], bool], Container[int]]
SpatialObject = Tuple[int, float, float]


@dataclass(frozen=True)
class LabeledItem:
    item_id: int
    class_labels: FrozenSet[int]

    def __post_init__(self):
        object.__setattr__(self, "class_labels", frozenset(int(c) for c in self.class_labels))
        require(len(self.class_labels) > 0, f"item {self.item_id} has no class labels")


@dataclass(frozen=True)
class SpatialAnnotation:
    """Object classes and centre coordinates of one image, in pixels."""

    item_id: int
    objects: Tuple[SpatialObject, ...]
    image_w: float
    image_h: float

    def __post_init__(self):
        require(self.image_w > 0 and self.image_h > 0,
                f"image dimensions must be positive, got {self.image_w}x{self.image_h}")
        objects = tuple((int(label), float(x), float(y)) for label, x, y in self.objects)
        for label, x, y in objects:
            require(0.0 <= x <= self.image_w and 0.0 <= y <= self.image_h,
                    f"object of class {label} at ({x}, {y}) lies outside item {self.item_id}")
        object.__setattr__(self, "objects", objects)

    @property
    def dims(self) -> Tuple[float, float]:
        return self.image_w, self.image_h

    @property
    def class_labels(self) -> FrozenSet[int]:
        return frozenset(label for label, _, _ in self.objects)


def _as_predicate(relevant: Relevance) -> Callable[[int], bool]:
    if callable(relevant):
        return relevant
    return lambda item_id: item_id in relevant


def average_precision(
    ranking: Sequence[int],
    relevant: Relevance,
    k: int,
    n_relevant: Optional[int] = None,
) -> float:
    """
    AP@k of one ranked list.

    Args:
        ranking: Retrieved item ids, best first, no duplicates
        relevant: Predicate or container deciding relevance of an id
        k: Cut-off
        n_relevant: Total relevant items in the corpus; counted over `ranking` when omitted

    Returns:
        AP@k in [0, 1]
    """
    require(int(k) == k and k >= 1, f"k must be a positive integer, got {k}")
    ranking = [int(item_id) for item_id in ranking]
    if len(set(ranking)) != len(ranking):
        raise InvalidArgumentError("ranking contains duplicate ids")
    is_relevant = _as_predicate(relevant)
    flags = np.array([bool(is_relevant(item_id)) for item_id in ranking], dtype=bool)
    total = int(flags.sum()) if n_relevant is None else int(n_relevant)
    if total <= 0:
        return 0.0
    top = flags[:int(k)]
    if not top.any():
        return 0.0
    hits = np.cumsum(top)
    positions = np.arange(1, top.shape[0] + 1)
    precision_sum = float(np.sum((hits / positions)[top]))
    return min(1.0, precision_sum / min(int(k), total))


def map_at_k(queries: Sequence[tuple], k: int) -> float:
    """
    Mean AP@k over queries.

    Args:
        queries: (ranking, relevant) or (ranking, relevant, n_relevant) tuples
        k: Cut-off
    """
    require(len(queries) > 0, "no queries to evaluate")
    scores = [average_precision(*query[:2], k, *query[2:3]) for query in queries]
    return float(np.mean(scores))


def single_label_relevance(query: LabeledItem, corpus: Mapping[int, LabeledItem]) -> Callable[[int], bool]:
    """Relevant iff the single labels are equal (CIFAR-style)."""
    require(len(query.class_labels) == 1, f"item {query.item_id} is not single-label")
    (label,) = tuple(query.class_labels)
    return lambda item_id: corpus[item_id].class_labels == {label}


def label_overlap_relevance(query: LabeledItem, corpus: Mapping[int, LabeledItem]) -> Callable[[int], bool]:
    """Relevant iff the label sets intersect (COCO-style)."""
    return lambda item_id: bool(corpus[item_id].class_labels & query.class_labels)


def spatial_match(
    obj_i: SpatialObject,
    dims_i: Tuple[float, float],
    obj_j: SpatialObject,
    dims_j: Tuple[float, float],
    r: float,
) -> bool:
    """Same class and normalised centres within distance r (boundary inclusive)."""
    require(r > 0, f"radius must be positive, got {r}")
    require(dims_i[0] > 0 and dims_i[1] > 0 and dims_j[0] > 0 and dims_j[1] > 0,
            "image dimensions must be positive")
    label_i, x_i, y_i = obj_i
    label_j, x_j, y_j = obj_j
    if label_i != label_j:
        return False
    dx = x_i / dims_i[0] - x_j / dims_j[0]
    dy = y_i / dims_i[1] - y_j / dims_j[1]
    return dx * dx + dy * dy <= r * r


SpatialPolicy = Callable[[SpatialAnnotation, SpatialAnnotation, float], bool]


def any_object_match(query: SpatialAnnotation, item: SpatialAnnotation, r: float) -> bool:
    """At least one (query object, item object) pair matches."""
    return any(
        spatial_match(q, query.dims, o, item.dims, r)
        for q in query.objects for o in item.objects
    )


def all_query_objects_matched(query: SpatialAnnotation, item: SpatialAnnotation, r: float) -> bool:
    """Every query object finds some matching object in the item."""
    if not query.objects:
        return False
    return all(
        any(spatial_match(q, query.dims, o, item.dims, r) for o in item.objects)
        for q in query.objects
    )


def spatial_relevance(
    query: SpatialAnnotation,
    corpus: Mapping[int, SpatialAnnotation],
    r: float,
    policy: SpatialPolicy = any_object_match,
) -> Callable[[int], bool]:
    def is_relevant(item_id: int) -> bool:
        if item_id not in corpus:
            raise InvalidArgumentError(f"item {item_id} has no spatial annotation")
        return policy(query, corpus[item_id], r)
    return is_relevant


def map_at_k_r(
    queries: Sequence[Tuple[Sequence[int], SpatialAnnotation]],
    corpus: Mapping[int, SpatialAnnotation],
    k: int,
    r: float,
    policy: SpatialPolicy = any_object_match,
) -> float:
    """
    Spatial-aware mAP@k.

    Args:
        queries: (ranking, query annotation) pairs
        corpus: Annotation of every retrievable item, keyed by id
        k: Cut-off
        r: Matching radius in normalised image coordinates
        policy: Image-level relevance rule over object pairs

    Raises:
        InvalidArgumentError: if a ranked id has no annotation
    """
    require(len(queries) > 0, "no queries to evaluate")
    require(r > 0, f"radius must be positive, got {r}")
    scored = []
    for ranking, annotation in queries:
        missing = [item_id for item_id in ranking if item_id not in corpus]
        if missing:
            raise InvalidArgumentError(f"item {missing[0]} has no spatial annotation")
        is_relevant = spatial_relevance(annotation, corpus, r, policy)
        n_relevant = sum(1 for item_id in corpus if is_relevant(item_id))
        scored.append((ranking, is_relevant, n_relevant))
    return map_at_k(scored, k)


def average_precision_reference(flags: Sequence[bool], k: int, n_relevant: int) -> float:
    """Exhaustive AP@k from a relevance pattern, used to check average_precision."""
    if n_relevant <= 0:
        return 0.0
    total = 0.0
    for i in range(min(k, len(flags))):
        if not flags[i]:
            continue
        hits = 0
        for j in range(i + 1):
            if flags[j]:
                hits += 1
        total += hits / (i + 1)
    return total / min(k, n_relevant)


def map_at_k_r_reference(
    queries: Iterable[Tuple[Sequence[int], SpatialAnnotation]],
    corpus: Mapping[int, SpatialAnnotation],
    k: int,
    r: float,
) -> float:
    """Exhaustive pairwise mAP@K_r under the at-least-one-match rule."""
    scores = []
    for ranking, query in queries:
        def relevant(item_id):
            item = corpus[item_id]
            for q_label, q_x, q_y in query.objects:
                for o_label, o_x, o_y in item.objects:
                    if q_label != o_label:
                        continue
                    dx = q_x / query.image_w - o_x / item.image_w
                    dy = q_y / query.image_h - o_y / item.image_h
                    if dx ** 2 + dy ** 2 <= r ** 2:
                        return True
            return False

        flags = [relevant(item_id) for item_id in ranking]
        n_relevant = sum(1 for item_id in corpus if relevant(item_id))
        scores.append(average_precision_reference(flags, k, n_relevant))
    return sum(scores) / len(scores)
