"""Trainable multilinear hyperplane hashing.

f_h(H) = tanh(H P^T + b) relaxes sign(H P^T + b); the final L-bit code is
sign(f_h(H)) with sign(0) = +1. Training minimises

    L = l_mse * L_mse + l_w * L_w + l_q * L_q + l_u * L_u + l_o * L_o

over minibatches of flattened scene vectors. With s_ij = H'_i H'_j^T / L:

* L_mse: mean over all (i, j) of (cos(H_i, H_j) - s_ij)^2
* L_w:   mean over all (i, j) of (s_ij + 1)^2 (s_ij - 1)^2
* L_u:   mean over rows of (sum of the row)^2
* L_q:   mean over entries of (H'_ij - sign(H'_ij))^2
* L_o:   mean over all (i, j) of (1 - s_ij)^2 on pairs whose rank dropped and
         (1 + s_ij)^2 on pairs whose rank rose, ranks counted per row with
         strict inequalities

Pairwise sums include the diagonal. The rank selector is recomputed every
step and held constant while differentiating.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, List, NamedTuple, Tuple

import numpy as np
from tqdm import tqdm

from .errors import InvalidArgumentError, require
from .hdc_core import cosine_similarity_matrix, make_rng

logger = logging.getLogger(__name__)

DEFAULT_BITS = (16, 32, 64)
LOSS_TERMS = ("mse", "w", "q", "u", "o")


class OrderShift(IntEnum):
    UNCHANGED = 0
    REDUCED = 1
    INCREASED = 2


@dataclass
class HashModel:
    """L hyperplanes in the 2D-dimensional flattened scene space, plus bias."""

    p: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        require(self.p.ndim == 2, f"hyperplanes must be an (L, 2D) matrix, got {self.p.shape}")
        require(self.b.shape == (self.p.shape[0],),
                f"bias must have length {self.p.shape[0]}, got {self.b.shape}")

    @property
    def l_bits(self) -> int:
        return int(self.p.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.p.shape[1])

    def copy(self) -> "HashModel":
        return HashModel(self.p.copy(), self.b.copy())

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.p, dtype="<f8").tobytes())
        digest.update(np.ascontiguousarray(self.b, dtype="<f8").tobytes())
        return digest.hexdigest()[:16]


@dataclass(frozen=True)
class HashLossWeights:
    """Balance coefficients of the five loss terms."""

    lambda_mse: float = 1.0
    lambda_w: float = 0.1
    lambda_q: float = 0.1
    # L_u reaches L**2 on saturated codes
    lambda_u: float = 1e-4
    lambda_o: float = 0.1

    def __post_init__(self):
        for name, value in self.as_dict().items():
            require(value >= 0, f"{name} must be non-negative, got {value}")

    def as_dict(self) -> Dict[str, float]:
        return {f"lambda_{term}": getattr(self, f"lambda_{term}") for term in LOSS_TERMS}

    def without(self, term: str) -> "HashLossWeights":
        """Copy with one term's coefficient set to zero."""
        require(term in LOSS_TERMS, f"unknown loss term {term!r}; expected one of {LOSS_TERMS}")
        values = self.as_dict()
        values[f"lambda_{term}"] = 0.0
        return HashLossWeights(**values)

    @classmethod
    def zero(cls) -> "HashLossWeights":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class HashTrainConfig:
    """Hyperparameters of hash training.

    With normalize_step the update moves the hyperplanes by exactly
    `learning_rate` (Frobenius norm over P and b) along the negative gradient.
    """

    weights: HashLossWeights = field(default_factory=HashLossWeights)
    learning_rate: float = 0.2
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    normalize_step: bool = True

    def validate(self) -> None:
        require(self.learning_rate >= 0, f"learning_rate must be non-negative, got {self.learning_rate}")
        require(self.epochs >= 0, f"epochs must be non-negative, got {self.epochs}")
        require(self.batch_size >= 2, f"batch_size must be at least 2, got {self.batch_size}")


class HashLoss(NamedTuple):
    total: float
    terms: Dict[str, float]


def hash_init(seed: int, l_bits: int, dim2d: int) -> HashModel:
    """Random hyperplanes with i.i.d. N(0, 1) entries and zero bias."""
    require(int(l_bits) == l_bits and l_bits >= 1, f"l_bits must be a positive integer, got {l_bits}")
    require(int(dim2d) == dim2d and dim2d >= 2, f"input dimension must be at least 2, got {dim2d}")
    rng = make_rng(seed)
    return HashModel(rng.standard_normal((int(l_bits), int(dim2d))), np.zeros(int(l_bits)))


def prepare_inputs(flat_scenes) -> np.ndarray:
    """L2-normalise each row; zero rows stay zero. Sign codes are unchanged when b = 0."""
    matrix = np.asarray(flat_scenes, dtype=np.float64)
    require(matrix.ndim == 2, f"expected an (M, 2D) matrix, got shape {matrix.shape}")
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return np.divide(matrix, norms, out=np.zeros_like(matrix), where=norms > 0.0)


def _check_inputs(model: HashModel, inputs) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs[None, :]
    require(inputs.ndim == 2, f"expected an (M, 2D) matrix, got shape {inputs.shape}")
    if inputs.shape[1] != model.input_dim:
        raise InvalidArgumentError(
            f"shape mismatch: inputs have {inputs.shape[1]} columns, model expects {model.input_dim}"
        )
    return inputs


def hash_forward(model: HashModel, inputs) -> np.ndarray:
    """Relaxed codes tanh(H P^T + b), shape (M, L), entries in (-1, 1)."""
    inputs = _check_inputs(model, inputs)
    return np.tanh(inputs @ model.p.T + model.b)


def binarize(codes) -> np.ndarray:
    """Bipolar codes: +1 where the entry is >= 0, else -1 (int8)."""
    codes = np.asarray(codes)
    return np.where(codes >= 0, 1, -1).astype(np.int8)


def _code_similarity(relaxed: np.ndarray) -> np.ndarray:
    return relaxed @ relaxed.T / relaxed.shape[1]


def _as_relaxed(relaxed) -> np.ndarray:
    relaxed = np.asarray(relaxed, dtype=np.float64)
    if relaxed.ndim == 1:
        relaxed = relaxed[None, :]
    require(relaxed.ndim == 2 and relaxed.shape[0] >= 1,
            f"expected an (M, L) code matrix, got shape {relaxed.shape}")
    return relaxed


def _check_pair(inputs, relaxed) -> Tuple[np.ndarray, np.ndarray]:
    inputs = np.asarray(inputs, dtype=np.float64)
    relaxed = _as_relaxed(relaxed)
    require(inputs.ndim == 2, f"expected an (M, 2D) matrix, got shape {inputs.shape}")
    if inputs.shape[0] != relaxed.shape[0]:
        raise InvalidArgumentError(
            f"row mismatch: {inputs.shape[0]} scene rows, {relaxed.shape[0]} code rows"
        )
    return inputs, relaxed


def loss_mse(inputs, relaxed) -> float:
    """Mean squared gap between scene cosine and code inner product / L."""
    inputs, relaxed = _check_pair(inputs, relaxed)
    gap = cosine_similarity_matrix(inputs) - _code_similarity(relaxed)
    return float(np.mean(gap * gap))


def loss_w(relaxed) -> float:
    """W-shaped penalty, zero exactly when every s_ij is -1 or +1."""
    similarity = _code_similarity(_as_relaxed(relaxed))
    return float(np.mean((similarity + 1.0) ** 2 * (similarity - 1.0) ** 2))


def loss_u(relaxed) -> float:
    """Mean squared row sum; zero when every row is balanced."""
    row_sums = _as_relaxed(relaxed).sum(axis=1)
    return float(np.mean(row_sums * row_sums))


def loss_q(relaxed) -> float:
    """Mean squared distance of each entry from its sign."""
    relaxed = _as_relaxed(relaxed)
    gap = relaxed - binarize(relaxed)
    return float(np.mean(gap * gap))


def _rank_counts(similarity: np.ndarray) -> np.ndarray:
    """counts[i, j] = #{k : similarity[i, j] > similarity[i, k]}."""
    return np.sum(similarity[:, :, None] > similarity[:, None, :], axis=2)


def _order_selector(scene_similarity: np.ndarray, code_similarity: np.ndarray) -> np.ndarray:
    code_counts = _rank_counts(code_similarity)
    scene_counts = _rank_counts(scene_similarity)
    selector = np.full(code_counts.shape, OrderShift.UNCHANGED, dtype=np.int8)
    selector[code_counts < scene_counts] = OrderShift.REDUCED
    selector[code_counts > scene_counts] = OrderShift.INCREASED
    return selector


def order_weights(inputs, relaxed) -> np.ndarray:
    """
    Classify every pair (i, j) by how hashing moved j in i's ranking.

    Returns:
        (M, M) int8 matrix of OrderShift values
    """
    inputs, relaxed = _check_pair(inputs, relaxed)
    require(inputs.shape[0] >= 2, "order weights need at least two rows")
    return _order_selector(cosine_similarity_matrix(inputs), _code_similarity(relaxed))


def _order_penalty(selector: np.ndarray, similarity: np.ndarray) -> np.ndarray:
    reduced = selector == OrderShift.REDUCED
    increased = selector == OrderShift.INCREASED
    return reduced * (1.0 - similarity) ** 2 + increased * (1.0 + similarity) ** 2


def loss_o(inputs, relaxed) -> float:
    """Order loss over the pairs whose within-row rank changed."""
    inputs, relaxed = _check_pair(inputs, relaxed)
    require(inputs.shape[0] >= 2, "order loss needs at least two rows")
    similarity = _code_similarity(relaxed)
    selector = _order_selector(cosine_similarity_matrix(inputs), similarity)
    return float(np.mean(_order_penalty(selector, similarity)))


def hash_total_loss(inputs, relaxed, weights: HashLossWeights) -> HashLoss:
    """Weighted sum of the five terms plus the per-term breakdown."""
    inputs, relaxed = _check_pair(inputs, relaxed)
    terms = {
        "mse": loss_mse(inputs, relaxed),
        "w": loss_w(relaxed),
        "q": loss_q(relaxed),
        "u": loss_u(relaxed),
        "o": loss_o(inputs, relaxed) if inputs.shape[0] >= 2 else 0.0,
    }
    total = sum(getattr(weights, f"lambda_{term}") * value for term, value in terms.items())
    return HashLoss(float(total), terms)


def _relaxed_grad(inputs: np.ndarray, relaxed: np.ndarray, weights: HashLossWeights) -> np.ndarray:
    """Gradient of the weighted loss with respect to the relaxed codes."""
    count, bits = relaxed.shape
    similarity = _code_similarity(relaxed)
    # dL/ds_ij for the pairwise terms, each already divided by M^2
    pair_grad = np.zeros_like(similarity)
    if weights.lambda_mse:
        scene_similarity = cosine_similarity_matrix(inputs)
        pair_grad += weights.lambda_mse * -2.0 * (scene_similarity - similarity)
    if weights.lambda_w:
        pair_grad += weights.lambda_w * 4.0 * similarity * (similarity * similarity - 1.0)
    if weights.lambda_o and count >= 2:
        selector = _order_selector(cosine_similarity_matrix(inputs), similarity)
        reduced = selector == OrderShift.REDUCED
        increased = selector == OrderShift.INCREASED
        pair_grad += weights.lambda_o * (
            reduced * -2.0 * (1.0 - similarity) + increased * 2.0 * (1.0 + similarity)
        )
    pair_grad /= count * count
    grad = (pair_grad + pair_grad.T) @ relaxed / bits

    if weights.lambda_u:
        row_sums = relaxed.sum(axis=1, keepdims=True)
        grad += weights.lambda_u * 2.0 * row_sums / count * np.ones_like(relaxed)
    if weights.lambda_q:
        grad += weights.lambda_q * 2.0 * (relaxed - binarize(relaxed)) / (count * bits)
    return grad


def hash_grad(model: HashModel, inputs, weights: HashLossWeights) -> Tuple[np.ndarray, np.ndarray]:
    """
    Analytic gradient of the weighted loss with respect to P and b.

    Returns:
        (dP with shape (L, 2D), db with shape (L,))
    """
    inputs = _check_inputs(model, inputs)
    relaxed = np.tanh(inputs @ model.p.T + model.b)
    d_relaxed = _relaxed_grad(inputs, relaxed, weights)
    d_pre = d_relaxed * (1.0 - relaxed * relaxed)
    return d_pre.T @ inputs, d_pre.sum(axis=0)


def hash_train(
    model: HashModel,
    corpus,
    config: HashTrainConfig,
    progress: bool = False,
) -> Tuple[HashModel, List[HashLoss]]:
    """
    Minibatch gradient descent on the hash loss.

    Rank selectors are computed from the pairs inside each batch. The trace
    holds, per epoch, the mean over batches of the loss measured before each
    update.

    Args:
        model: Initial model (left untouched)
        corpus: (M, 2D) matrix of scene vectors
        config: Training hyperparameters

    Returns:
        (trained model, per-epoch losses)
    """
    config.validate()
    corpus = _check_inputs(model, corpus)
    require(corpus.shape[0] >= 1, "corpus is empty")
    rng = make_rng(config.seed)
    current = model.copy()
    trace: List[HashLoss] = []
    weights = config.weights
    epochs = tqdm(range(config.epochs), desc="hash", disable=not progress)
    for epoch in epochs:
        order = rng.permutation(corpus.shape[0])
        batch_losses = []
        for start in range(0, order.shape[0], config.batch_size):
            batch = corpus[order[start:start + config.batch_size]]
            relaxed = hash_forward(current, batch)
            batch_losses.append(hash_total_loss(batch, relaxed, weights))
            d_p, d_b = hash_grad(current, batch, weights)
            step = config.learning_rate
            if config.normalize_step:
                norm = np.sqrt(np.sum(d_p * d_p) + np.sum(d_b * d_b))
                step = step / norm if norm > 0.0 else 0.0
            current = HashModel(current.p - step * d_p, current.b - step * d_b)
        loss = _mean_loss(batch_losses)
        trace.append(loss)
        logger.debug("hash epoch %d: total=%.6f %s", epoch, loss.total, loss.terms)
    if trace:
        logger.info("trained %d-bit hash for %d epochs, final loss %.6f",
                    current.l_bits, config.epochs, trace[-1].total)
    return current, trace


def _mean_loss(losses: List[HashLoss]) -> HashLoss:
    terms = {term: float(np.mean([loss.terms[term] for loss in losses])) for term in LOSS_TERMS}
    return HashLoss(float(np.mean([loss.total for loss in losses])), terms)


def hash_codes(model: HashModel, flat_scenes, normalize: bool = True) -> np.ndarray:
    """Bipolar codes for a matrix of flattened scenes."""
    inputs = prepare_inputs(flat_scenes) if normalize else flat_scenes
    return binarize(hash_forward(model, inputs))
