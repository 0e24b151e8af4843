"""Desk-scale experiments: loss ablation, length-scale sweep, conditional retrieval.

Each experiment builds its own corpus from a seed so results are reproducible
without any files on disk.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .errors import require
from .eval_metrics import (
    LabeledItem,
    SpatialAnnotation,
    label_overlap_relevance,
    map_at_k,
    map_at_k_r,
)
from .hamming_index import index_from_codes, pack, query_topk
from .hdc_core import derive_seed, make_rng
from .hyperplane_hasher import (
    LOSS_TERMS,
    HashLossWeights,
    HashModel,
    HashTrainConfig,
    hash_codes,
    hash_init,
    hash_train,
    prepare_inputs,
)
from .spatial_encoder import ObjectPlacement, compose_scene, new_basis

logger = logging.getLogger(__name__)

FULL_VARIANT = "full"
RANDOM_VARIANT = "random-hyperplanes"
NAIVE_VARIANT = "naive"


class RetrievalTask(NamedTuple):
    """A database and query set of prepared scene vectors with per-query relevance."""

    db_ids: np.ndarray
    database: np.ndarray
    queries: np.ndarray
    relevance: List[Tuple[Callable[[int], bool], int]]


def label_task(
    db_ids: Sequence[int],
    db_flat,
    query_flat,
    db_items: Mapping[int, LabeledItem],
    query_items: Sequence[LabeledItem],
) -> RetrievalTask:
    """Task whose relevance is label-set overlap; inputs are row-normalised here."""
    db_ids = np.asarray(db_ids, dtype=np.int64)
    relevance = []
    for item in query_items:
        is_relevant = label_overlap_relevance(item, db_items)
        relevance.append((is_relevant, sum(1 for item_id in db_ids if is_relevant(int(item_id)))))
    return RetrievalTask(db_ids, prepare_inputs(db_flat), prepare_inputs(query_flat), relevance)


def rank_database(model: HashModel, database, db_ids, queries, k: int) -> List[List[int]]:
    """Top-k id lists of every query under the model's codes."""
    index = index_from_codes(db_ids, hash_codes(model, database, normalize=False))
    return [
        [item_id for item_id, _ in query_topk(index, pack(code), k)]
        for code in hash_codes(model, queries, normalize=False)
    ]


def hashed_map(task: RetrievalTask, model: HashModel, k: int) -> float:
    rankings = rank_database(model, task.database, task.db_ids, task.queries, k)
    return map_at_k([(ranking, *relevance) for ranking, relevance in zip(rankings, task.relevance)], k)


def cluster_corpus(
    seed: int,
    n_items: int = 512,
    n_clusters: int = 8,
    dimension: int = 2000,
    noise: float = 1.5,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gaussian clusters in the flattened scene space (width 2 * dimension).

    Returns:
        (flat vectors of shape (n_items, 2 * dimension), cluster labels)
    """
    require(n_clusters >= 2 and n_items >= n_clusters, "need at least two clusters and one item per cluster")
    rng = make_rng(seed)
    centers = rng.standard_normal((n_clusters, 2 * dimension))
    labels = np.arange(n_items) % n_clusters
    flat = centers[labels] + noise * rng.standard_normal((n_items, 2 * dimension))
    return flat, labels


@dataclass(frozen=True)
class AblationRow:
    variant: str
    weights: HashLossWeights
    scores: Tuple[float, ...]

    @property
    def median(self) -> float:
        return float(np.median(self.scores))

    @property
    def terms(self) -> Tuple[str, ...]:
        return tuple(term for term in LOSS_TERMS if getattr(self.weights, f"lambda_{term}") > 0)

    def to_json(self) -> dict:
        return {"variant": self.variant, "terms": list(self.terms),
                "scores": list(self.scores), "median": self.median}


def ablation_study(
    task: RetrievalTask,
    l_bits: int,
    train_config: HashTrainConfig,
    exclusions: Sequence[str] = LOSS_TERMS,
    seeds: Sequence[int] = (0,),
    k: int = 50,
    progress: bool = False,
) -> List[AblationRow]:
    """
    Train one hash per loss variant and score each with mAP@k.

    Rows: the full model, one row per excluded term, and untrained random
    hyperplanes (all coefficients zero). All variants of one seed start from
    the same initial hyperplanes.
    """
    require(len(set(exclusions)) == len(exclusions), f"duplicate exclusions in {list(exclusions)}")
    for term in exclusions:
        require(term in LOSS_TERMS, f"unknown loss term {term!r}; expected one of {LOSS_TERMS}")
    require(len(seeds) >= 1, "at least one seed is required")
    full = train_config.weights
    variants: List[Tuple[str, Optional[HashLossWeights]]] = [(FULL_VARIANT, full)]
    variants += [(f"without-{term}", full.without(term)) for term in exclusions]
    variants.append((RANDOM_VARIANT, None))

    scores: Dict[str, List[float]] = {name: [] for name, _ in variants}
    for seed in tqdm(seeds, desc="ablation", disable=not progress):
        initial = hash_init(derive_seed(seed, "hash-init"), l_bits, task.database.shape[1])
        for name, weights in variants:
            if weights is None:
                model = initial
            else:
                config = replace(train_config, weights=weights, seed=derive_seed(seed, "hash-train"))
                model, _ = hash_train(initial, task.database, config)
            scores[name].append(hashed_map(task, model, k))
            logger.info("ablation seed %d %s: mAP@%d=%.4f", seed, name, k, scores[name][-1])
    return [
        AblationRow(name, weights if weights is not None else HashLossWeights.zero(), tuple(scores[name]))
        for name, weights in variants
    ]


@dataclass(frozen=True)
class SweepRow:
    variant: str
    length_scale: Optional[float]
    map_k: float
    map_k_r: Dict[float, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"variant": self.variant, "length_scale": self.length_scale, "map_k": self.map_k,
                "map_k_r": {repr(r): score for r, score in sorted(self.map_k_r.items())}}


class DuplicateCorpus(NamedTuple):
    global_hvs: np.ndarray
    objects: List[List[Tuple[np.ndarray, float, float]]]
    annotations: Dict[int, SpatialAnnotation]
    labels: Dict[int, LabeledItem]
    query_ids: List[int]
    db_ids: List[int]


def duplicate_corpus(
    seed: int,
    dimension: int = 2000,
    n_templates: int = 30,
    n_classes: int = 10,
    objects_per_scene: int = 3,
    aligned: int = 4,
    shuffled: int = 4,
    jitter: float = 0.02,
    noise: float = 0.3,
) -> DuplicateCorpus:
    """
    Templates of distinct-class objects, each with aligned and position-shuffled copies.

    Every template is a query. Its aligned copies keep the object positions up
    to +-jitter; its shuffled copies resample every position. Copies draw fresh
    feature noise. Coordinates are normalised (unit image size).
    """
    require(objects_per_scene <= n_classes, "more objects per scene than classes")
    rng = make_rng(derive_seed(seed, "duplicate-corpus"))
    prototypes = rng.standard_normal((n_classes, dimension))
    global_hvs, objects, annotations, labels = [], [], {}, {}
    query_ids, db_ids = [], []

    def add_scene(classes, positions, is_query):
        item_id = len(objects)
        hvs = prototypes[classes] + noise * rng.standard_normal((len(classes), dimension))
        global_hvs.append(hvs.mean(axis=0) + noise * rng.standard_normal(dimension))
        objects.append([(hv, float(x), float(y)) for hv, (x, y) in zip(hvs, positions)])
        annotations[item_id] = SpatialAnnotation(
            item_id, tuple((int(c), float(x), float(y)) for c, (x, y) in zip(classes, positions)), 1.0, 1.0
        )
        labels[item_id] = LabeledItem(item_id, frozenset(int(c) for c in classes))
        (query_ids if is_query else db_ids).append(item_id)

    for _ in range(n_templates):
        classes = rng.choice(n_classes, objects_per_scene, replace=False)
        positions = rng.uniform(0.1, 0.9, (objects_per_scene, 2))
        add_scene(classes, positions, True)
        for _ in range(aligned):
            moved = np.clip(positions + rng.uniform(-jitter, jitter, positions.shape), 0.0, 1.0)
            add_scene(classes, moved, False)
        for _ in range(shuffled):
            add_scene(classes, rng.uniform(0.0, 1.0, positions.shape), False)
    return DuplicateCorpus(np.vstack(global_hvs), objects, annotations, labels, query_ids, db_ids)


def _corpus_scenes(corpus: DuplicateCorpus, basis, w: float) -> np.ndarray:
    return np.vstack([
        compose_scene(global_hv, [ObjectPlacement(hv, x, y) for hv, x, y in placed], 1.0, basis, w).flat
        for global_hv, placed in zip(corpus.global_hvs, corpus.objects)
    ])


def _sweep_row(corpus, variant, w, model, vectors, k, radii) -> SweepRow:
    query_ids = np.asarray(corpus.query_ids)
    db_ids = np.asarray(corpus.db_ids)
    rankings = rank_database(model, vectors[db_ids], db_ids, vectors[query_ids], k)
    db_labels = {int(i): corpus.labels[int(i)] for i in db_ids}
    labelled = []
    for ranking, query_id in zip(rankings, query_ids):
        is_relevant = label_overlap_relevance(corpus.labels[int(query_id)], db_labels)
        labelled.append((ranking, is_relevant, sum(1 for i in db_labels if is_relevant(i))))
    db_annotations = {int(i): corpus.annotations[int(i)] for i in db_ids}
    spatial = [(ranking, corpus.annotations[int(q)]) for ranking, q in zip(rankings, query_ids)]
    scores = {float(r): map_at_k_r(spatial, db_annotations, k, r) for r in radii}
    return SweepRow(variant, w, map_at_k(labelled, k), scores)


def length_scale_sweep(
    seed: int,
    length_scales: Sequence[float] = (0.1, 1.0, 10.0),
    dimension: int = 2000,
    l_bits: int = 64,
    k: int = 50,
    radii: Sequence[float] = (0.1, 0.2, 0.3, 0.4),
    include_naive: bool = True,
    hash_config: Optional[HashTrainConfig] = None,
    **corpus_options,
) -> List[SweepRow]:
    """
    mAP@k and mAP@k_r per length scale on a duplicate corpus.

    Scenes are hashed with random hyperplanes, or, given hash_config, with
    hyperplanes trained on each length scale's database scenes. The naive row
    hashes the global hypervectors alone with random hyperplanes, ignoring
    object positions.
    """
    require(len(length_scales) > 0, "no length scales to sweep")
    corpus = duplicate_corpus(seed, dimension=dimension, **corpus_options)
    basis = new_basis(derive_seed(seed, "basis"), dimension)
    model = hash_init(derive_seed(seed, "hash-init"), l_bits, 2 * dimension)
    rows = []
    for w in length_scales:
        vectors = prepare_inputs(_corpus_scenes(corpus, basis, w))
        hashed = model
        if hash_config is not None:
            config = replace(hash_config, seed=derive_seed(seed, "hash-train"))
            hashed, _ = hash_train(model, vectors[np.asarray(corpus.db_ids)], config)
        rows.append(_sweep_row(corpus, f"w={w:g}", float(w), hashed, vectors, k, radii))
        logger.info("length scale %g: mAP@%d=%.4f mAP@%d_r=%s", w, k, rows[-1].map_k, k, rows[-1].map_k_r)
    if include_naive:
        naive = hash_init(derive_seed(seed, "naive-hash"), l_bits, dimension)
        rows.append(_sweep_row(corpus, NAIVE_VARIANT, None, naive, prepare_inputs(corpus.global_hvs), k, radii))
    return rows


class ConditionalResult(NamedTuple):
    target_id: int
    rank_before: int
    rank_after: int


def _rank_of(target: int, query: np.ndarray, corpus: np.ndarray, model: Optional[HashModel]) -> int:
    ids = np.arange(corpus.shape[0])
    if model is None:
        inputs = prepare_inputs(np.vstack([query, corpus]))
        scores = -(inputs[1:] @ inputs[0])
    else:
        codes = hash_codes(model, np.vstack([query, corpus]))
        scores = np.sum(codes[1:] != codes[0], axis=1)
    order = np.lexsort((ids, scores))
    return int(np.nonzero(order == target)[0][0])


def conditional_retrieval_case(
    seed: int,
    dimension: int = 2000,
    w: float = 0.1,
    eta_boost: float = 10.0,
    n_classes: int = 10,
    n_distractors: int = 5,
    n_random: int = 20,
    noise: float = 0.3,
    l_bits: Optional[int] = None,
    hash_config: Optional[HashTrainConfig] = None,
) -> ConditionalResult:
    """
    Rank of a target scene before and after boosting one query object's weight.

    The query holds object A (class a) and object B (class b) at separated
    positions. The target scene contains a class-a object at A's position;
    distractors contain a class-b object at B's position; filler scenes avoid
    class a. Ranking is by cosine on the scene vectors, or by Hamming distance
    under l_bits hyperplanes when l_bits is given; ties go to the lower index.
    With hash_config the hyperplanes are first trained on the corpus scenes.
    """
    require(n_classes >= 4, "need at least four classes")
    rng = make_rng(derive_seed(seed, "conditional-case"))
    basis = new_basis(derive_seed(seed, "basis"), dimension)
    prototypes = rng.standard_normal((n_classes, dimension))
    class_a, class_b = (int(c) for c in rng.choice(n_classes, 2, replace=False))
    others = [c for c in range(n_classes) if c not in (class_a, class_b)]
    pos_a = tuple(rng.uniform(0.1, 0.4, 2))
    pos_b = tuple(rng.uniform(0.6, 0.9, 2))

    def sample(label):
        return prototypes[label] + noise * rng.standard_normal(dimension)

    def scene(placed):
        global_hv = np.mean([hv for hv, _ in placed], axis=0) + noise * rng.standard_normal(dimension)
        return compose_scene(
            global_hv, [ObjectPlacement(hv, x, y) for hv, (x, y) in placed], 1.0, basis, w
        ).flat

    def filler(count, pool):
        labels = rng.choice(pool, count, replace=False)
        return [(sample(int(c)), tuple(rng.uniform(0.0, 1.0, 2))) for c in labels]

    query_objects = [(sample(class_a), pos_a), (sample(class_b), pos_b)]
    query_global = np.mean([hv for hv, _ in query_objects], axis=0)

    corpus = [scene([(sample(class_b), pos_b)] + filler(2, others)) for _ in range(n_distractors)]
    pool = [c for c in range(n_classes) if c != class_a]
    corpus += [scene(filler(3, pool)) for _ in range(n_random)]
    corpus.append(scene([(sample(class_a), pos_a)] + filler(2, others)))
    corpus = np.vstack(corpus)
    target = corpus.shape[0] - 1

    def query(eta_a):
        placements = [ObjectPlacement(hv, x, y, eta) for (hv, (x, y)), eta in zip(query_objects, (eta_a, 1.0))]
        return compose_scene(query_global, placements, 1.0, basis, w).flat

    model = None
    if l_bits:
        model = hash_init(derive_seed(seed, "hash-init"), l_bits, 2 * dimension)
        if hash_config is not None:
            config = replace(hash_config, seed=derive_seed(seed, "hash-train"))
            model, _ = hash_train(model, prepare_inputs(corpus), config)
    before = _rank_of(target, query(1.0), corpus, model)
    after = _rank_of(target, query(eta_boost), corpus, model)
    logger.info("conditional retrieval: target rank %d -> %d", before, after)
    return ConditionalResult(target, before, after)
