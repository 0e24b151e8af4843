"""Hypervector primitives: bundling, binding, permutation, similarity.

Vectors are plain numpy arrays. A hypervector is a finite real 1-D array of
length D; a phase vector is a complex 1-D array whose elements all have
modulus one. Complex vectors are compared through their flattened real form
(real parts followed by imaginary parts), so one similarity serves the whole
pipeline.

Randomness comes from numpy's PCG64 generator. Every seed in a pipeline run is
derived from one root seed with `derive_seed`.
"""

import logging
import zlib
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

from .errors import InvalidArgumentError, UndefinedSimilarityError, require

logger = logging.getLogger(__name__)

DEFAULT_DIMENSION = 10_000
PHASE_TOLERANCE = 1e-9


def make_rng(seed: int) -> np.random.Generator:
    """Return a PCG64 generator seeded with `seed`."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(root_seed: int, label: str) -> int:
    """
    Derive an independent child seed for one pipeline stage.

    Args:
        root_seed: Root seed of the run
        label: Stage name, e.g. "basis" or "hash-train"

    Returns:
        A 63-bit integer seed, identical across platforms for the same inputs
    """
    sequence = np.random.SeedSequence(
        entropy=int(root_seed), spawn_key=(zlib.crc32(label.encode("utf-8")),)
    )
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _as_vector(values, name: str = "vector") -> np.ndarray:
    array = np.asarray(values)
    require(array.ndim == 1, f"{name} must be one-dimensional, got shape {array.shape}")
    return array


def _check_same_length(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise InvalidArgumentError(f"length mismatch: {a.shape[0]} != {b.shape[0]}")


def is_phase_vector(values, tolerance: float = PHASE_TOLERANCE) -> bool:
    """True if every element has modulus 1 within `tolerance`."""
    array = np.asarray(values)
    return bool(np.all(np.abs(np.abs(array) - 1.0) <= tolerance))


def random_gaussian_hv(seed: int, d: int, sigma: float = 1.0) -> np.ndarray:
    """
    Sample a hypervector with i.i.d. N(0, sigma^2) elements.

    Args:
        seed: Generator seed
        d: Dimension
        sigma: Standard deviation

    Returns:
        float64 array of length d
    """
    require(int(d) == d and d >= 1, f"dimension must be a positive integer, got {d}")
    require(sigma > 0, f"sigma must be positive, got {sigma}")
    return make_rng(seed).normal(0.0, sigma, int(d))


def bundle(a, b) -> np.ndarray:
    """Elementwise sum. Bundling phase vectors gives a general complex vector."""
    a, b = _as_vector(a, "a"), _as_vector(b, "b")
    _check_same_length(a, b)
    return a + b


def bind(a, b) -> np.ndarray:
    """Elementwise (complex) product. Two phase vectors bind to a phase vector."""
    a, b = _as_vector(a, "a"), _as_vector(b, "b")
    _check_same_length(a, b)
    return a * b


def permute(a, shift: int) -> np.ndarray:
    """Cyclic rotation by `shift` positions (taken modulo D)."""
    a = _as_vector(a, "a")
    return np.roll(a, int(shift) % a.shape[0])


def flatten_complex(values) -> np.ndarray:
    """Real form of a vector: Re followed by Im along the last axis."""
    array = np.asarray(values)
    return np.concatenate([array.real, array.imag], axis=-1).astype(np.float64)


def _real_pair(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if np.iscomplexobj(a) or np.iscomplexobj(b):
        return flatten_complex(a), flatten_complex(b)
    return a.astype(np.float64), b.astype(np.float64)


def cosine_similarity(a, b) -> float:
    """
    Cosine similarity of two vectors.

    Complex inputs are compared via their flattened real form, which equals the
    normalised real part of the Hermitian inner product.

    Raises:
        UndefinedSimilarityError: if either vector is all zeros
    """
    a, b = _as_vector(a, "a"), _as_vector(b, "b")
    _check_same_length(a, b)
    a, b = _real_pair(a, b)
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise UndefinedSimilarityError("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


def cosine_similarity_matrix(rows) -> np.ndarray:
    """
    Pairwise cosine similarities between the rows of a real matrix.

    Raises:
        UndefinedSimilarityError: if any row is all zeros
    """
    matrix = np.asarray(rows, dtype=np.float64)
    require(matrix.ndim == 2, f"expected a matrix, got shape {matrix.shape}")
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0.0):
        raise UndefinedSimilarityError(
            f"row {int(np.argmin(norms))} is a zero vector; cosine similarity is undefined"
        )
    unit = matrix / norms[:, None]
    return np.clip(unit @ unit.T, -1.0, 1.0)


def nonlinear_encode(features, projection, bias) -> np.ndarray:
    """
    Similarity-preserving nonlinear encoding cos(F B + b) * sin(F B).

    Args:
        features: Feature vector of length n, or an (M, n) batch
        projection: (n, D) matrix
        bias: Length-D phase offsets in [0, 2*pi]

    Returns:
        Hypervector(s) of length D with every element in [-1, 1]
    """
    features = np.asarray(features, dtype=np.float64)
    projection = np.asarray(projection, dtype=np.float64)
    bias = _as_vector(bias, "bias").astype(np.float64)
    require(projection.ndim == 2, f"projection must be a matrix, got shape {projection.shape}")
    require(features.ndim in (1, 2), f"features must be a vector or batch, got shape {features.shape}")
    if features.shape[-1] != projection.shape[0]:
        raise InvalidArgumentError(
            f"shape mismatch: features have {features.shape[-1]} entries, "
            f"projection expects {projection.shape[0]}"
        )
    if bias.shape[0] != projection.shape[1]:
        raise InvalidArgumentError(
            f"shape mismatch: bias has {bias.shape[0]} entries, projection has {projection.shape[1]} columns"
        )
    require(
        bool(np.all((bias >= 0.0) & (bias <= 2.0 * np.pi))),
        "bias entries must lie in [0, 2*pi]",
    )
    projected = features @ projection
    return np.cos(projected + bias) * np.sin(projected)


class NonlinearEncoder:
    """Baseline HDC encoder with a fixed random projection and phase bias."""

    def __init__(self, n_features: int, dimension: int = DEFAULT_DIMENSION, seed: int = 0):
        """
        Initialize the encoder.

        Args:
            n_features: Input feature width n
            dimension: Hypervector dimension D
            seed: Generator seed for the projection and the bias
        """
        require(n_features >= 1, f"n_features must be positive, got {n_features}")
        require(dimension >= 1, f"dimension must be positive, got {dimension}")
        rng = make_rng(seed)
        self.projection = rng.standard_normal((int(n_features), int(dimension)))
        self.bias = rng.uniform(0.0, 2.0 * np.pi, int(dimension))
        self.dimension = int(dimension)

    def encode(self, features) -> np.ndarray:
        return nonlinear_encode(features, self.projection, self.bias)


@dataclass
class ClassMemory:
    """One hypervector per class, updated by bundling and retraining."""

    classes: np.ndarray
    learning_rate: float = 1.0

    def __post_init__(self):
        self.classes = np.asarray(self.classes, dtype=np.float64)
        require(self.classes.ndim == 2, f"classes must be a (c, D) matrix, got {self.classes.shape}")
        require(bool(np.all(np.isfinite(self.classes))), "class hypervectors must be finite")

    @classmethod
    def empty(cls, n_classes: int, dimension: int, learning_rate: float = 1.0) -> "ClassMemory":
        require(n_classes >= 1, f"n_classes must be positive, got {n_classes}")
        return cls(np.zeros((int(n_classes), int(dimension))), learning_rate)

    @property
    def n_classes(self) -> int:
        return self.classes.shape[0]

    def similarities(self, query) -> np.ndarray:
        """Cosine of `query` against every class; zero classes score -inf."""
        query = _as_vector(query, "query").astype(np.float64)
        if query.shape[0] != self.classes.shape[1]:
            raise InvalidArgumentError(
                f"length mismatch: {query.shape[0]} != {self.classes.shape[1]}"
            )
        query_norm = np.linalg.norm(query)
        if query_norm == 0.0:
            raise UndefinedSimilarityError("query is a zero vector")
        norms = np.linalg.norm(self.classes, axis=1)
        scores = np.full(self.n_classes, -np.inf)
        nonzero = norms > 0.0
        scores[nonzero] = (self.classes[nonzero] @ query) / (norms[nonzero] * query_norm)
        return scores


def class_infer(memory: ClassMemory, query) -> int:
    """Most similar class; ties go to the lowest class index."""
    return int(np.argmax(memory.similarities(query)))


def class_train(
    memory: ClassMemory,
    data: Sequence[Tuple[np.ndarray, int]],
    epochs: int = 0,
) -> ClassMemory:
    """
    Bundle class hypervectors from labelled data, then retrain on mistakes.

    Class i starts as the sum of its samples. Each retraining epoch visits the
    samples in order; a mispredicted sample moves its true class towards it and
    the predicted class away from it, both scaled by lr * (1 - similarity to the
    true class). Correct predictions leave the memory untouched.

    Args:
        memory: Memory to train in place (labels index its rows from 0)
        data: (hypervector, label) pairs
        epochs: Number of retraining passes after bundling

    Returns:
        The same memory object
    """
    require(epochs >= 0, f"epochs must be non-negative, got {epochs}")
    require(len(data) > 0, "training data is empty")
    n_classes, dimension = memory.classes.shape
    samples = []
    for vector, label in data:
        vector = _as_vector(vector, "sample").astype(np.float64)
        if vector.shape[0] != dimension:
            raise InvalidArgumentError(f"length mismatch: {vector.shape[0]} != {dimension}")
        if not 0 <= int(label) < n_classes:
            raise InvalidArgumentError(f"label {label} outside [0, {n_classes})")
        samples.append((vector, int(label)))

    counts = np.bincount([label for _, label in samples], minlength=n_classes)
    if np.any(counts == 0):
        missing = [int(i) for i in np.flatnonzero(counts == 0)]
        raise InvalidArgumentError(f"no training samples for classes {missing}")

    classes = np.zeros((n_classes, dimension))
    for vector, label in samples:
        classes[label] += vector
    memory.classes = classes

    for epoch in range(int(epochs)):
        mistakes = 0
        for vector, label in samples:
            predicted = class_infer(memory, vector)
            if predicted == label:
                continue
            mistakes += 1
            true_similarity = _safe_cosine(memory.classes[label], vector)
            step = memory.learning_rate * (1.0 - true_similarity)
            memory.classes[label] += step * vector
            memory.classes[predicted] -= step * vector
        logger.debug("class retraining epoch %d: %d mispredictions", epoch, mistakes)
    return memory


def _safe_cosine(a: np.ndarray, b: np.ndarray) -> float:
    norm = np.linalg.norm(a) * np.linalg.norm(b)
    return float(np.dot(a, b) / norm) if norm > 0.0 else 0.0


def classification_accuracy(memory: ClassMemory, data: Iterable[Tuple[np.ndarray, int]]) -> float:
    """Fraction of samples whose inferred class equals their label."""
    results = [class_infer(memory, vector) == int(label) for vector, label in data]
    return float(np.mean(results)) if results else 0.0
