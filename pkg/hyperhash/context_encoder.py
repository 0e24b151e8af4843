"""Trainable context-aware HDC encoder.

phi(f) = E_gen(tanh(E_ext(f))) maps a backbone feature vector (width z) through
a bottleneck of width z' to a hypervector of width D. Training minimises

    L = L_c + lambda_rec * L_rec

where L_c is the cross-entropy of softmax(phi(f)^T C) against the pseudo-label
and L_rec the squared error of the affine reconstruction E_rec(phi(f)) against
f. The class matrix C is trained jointly. Gradients are derived by hand.
"""

import hashlib
import logging
from dataclasses import dataclass, fields
from typing import List, NamedTuple, Sequence, Tuple, Union

import numpy as np
from scipy.special import log_softmax, softmax
from tqdm import tqdm

from .errors import InvalidArgumentError, require
from .hdc_core import make_rng

logger = logging.getLogger(__name__)

Batch = Union[Sequence[Tuple[np.ndarray, int]], Tuple[np.ndarray, np.ndarray]]


@dataclass
class EncoderParams:
    """Weights of E_ext, E_gen, E_rec and the class matrix C.

    Shapes: w_ext (z, z'), w_gen (z', D), w_rec (D, z), classes (D, c).
    Gradients are returned in the same structure.
    """

    w_ext: np.ndarray
    b_ext: np.ndarray
    w_gen: np.ndarray
    b_gen: np.ndarray
    w_rec: np.ndarray
    b_rec: np.ndarray
    classes: np.ndarray

    @property
    def z(self) -> int:
        return int(self.w_ext.shape[0])

    @property
    def z_prime(self) -> int:
        return int(self.w_ext.shape[1])

    @property
    def dimension(self) -> int:
        return int(self.w_gen.shape[1])

    @property
    def n_classes(self) -> int:
        return int(self.classes.shape[1])

    def arrays(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def copy(self) -> "EncoderParams":
        return EncoderParams(**{name: array.copy() for name, array in self.arrays().items()})

    def step(self, grads: "EncoderParams", learning_rate: float) -> "EncoderParams":
        """Plain gradient-descent update, returned as new parameters."""
        return EncoderParams(**{
            name: array - learning_rate * getattr(grads, name)
            for name, array in self.arrays().items()
        })

    def global_norm(self) -> float:
        return float(np.sqrt(sum(np.sum(a * a) for a in self.arrays().values())))

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for name, array in self.arrays().items():
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(array, dtype="<f8").tobytes())
        return digest.hexdigest()[:16]

    def validate(self) -> None:
        z, z_prime, dimension = self.z, self.z_prime, self.dimension
        expected = {
            "w_ext": (z, z_prime), "b_ext": (z_prime,),
            "w_gen": (z_prime, dimension), "b_gen": (dimension,),
            "w_rec": (dimension, z), "b_rec": (z,),
            "classes": (dimension, self.n_classes),
        }
        for name, shape in expected.items():
            array = getattr(self, name)
            if array.shape != shape:
                raise InvalidArgumentError(f"{name} has shape {array.shape}, expected {shape}")
            if not np.all(np.isfinite(array)):
                raise InvalidArgumentError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class EncoderTrainConfig:
    """Hyperparameters of encoder training."""

    lambda_rec: float = 1.0
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0

    def validate(self) -> None:
        require(self.lambda_rec >= 0, f"lambda_rec must be non-negative, got {self.lambda_rec}")
        require(self.learning_rate >= 0, f"learning_rate must be non-negative, got {self.learning_rate}")
        require(self.epochs >= 1, f"epochs must be positive, got {self.epochs}")
        require(self.batch_size >= 1, f"batch_size must be positive, got {self.batch_size}")


class EncoderLoss(NamedTuple):
    total: float
    l_c: float
    l_rec: float


def encoder_init(seed: int, z: int, z_prime: int, d: int, c: int) -> EncoderParams:
    """
    Draw initial encoder parameters.

    Weights are N(0, 1/fan_in); biases start at zero.

    Raises:
        InvalidArgumentError: unless z > z_prime >= 1, d >= z and c >= 2
    """
    require(z_prime >= 1, f"z_prime must be positive, got {z_prime}")
    require(z > z_prime, f"bottleneck requires z > z_prime, got z={z}, z_prime={z_prime}")
    require(d >= z, f"hypervector dimension must be at least z, got d={d}, z={z}")
    require(c >= 2, f"at least two classes are required, got {c}")
    rng = make_rng(seed)

    def scaled(fan_in: int, fan_out: int) -> np.ndarray:
        return rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)

    return EncoderParams(
        w_ext=scaled(z, z_prime), b_ext=np.zeros(z_prime),
        w_gen=scaled(z_prime, d), b_gen=np.zeros(d),
        w_rec=scaled(d, z), b_rec=np.zeros(z),
        classes=scaled(d, c),
    )


def _check_features(params: EncoderParams, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] != params.z:
        raise InvalidArgumentError(
            f"feature width {features.shape[-1]} does not match encoder input width z={params.z}"
        )
    return features


def encoder_forward(params: EncoderParams, features) -> np.ndarray:
    """Hypervector(s) phi(f) for one feature vector or an (M, z) batch."""
    features = _check_features(params, features)
    require(features.ndim in (1, 2), f"features must be a vector or batch, got shape {features.shape}")
    hidden = np.tanh(features @ params.w_ext + params.b_ext)
    return hidden @ params.w_gen + params.b_gen


def _as_batch(params: EncoderParams, batch: Batch) -> Tuple[np.ndarray, np.ndarray]:
    if (isinstance(batch, tuple) and len(batch) == 2
            and isinstance(batch[0], np.ndarray) and batch[0].ndim == 2):
        features, labels = batch
    else:
        require(len(batch) > 0, "batch is empty")
        features = np.vstack([np.asarray(f, dtype=np.float64) for f, _ in batch])
        labels = np.array([label for _, label in batch])
    features = _check_features(params, features)
    labels = np.asarray(labels, dtype=np.int64)
    require(features.shape[0] > 0, "batch is empty")
    require(labels.shape == (features.shape[0],), "one label per feature vector is required")
    out_of_range = (labels < 0) | (labels >= params.n_classes)
    if np.any(out_of_range):
        raise InvalidArgumentError(
            f"label {int(labels[out_of_range][0])} outside [0, {params.n_classes})"
        )
    return features, labels


def _forward_cache(params: EncoderParams, features: np.ndarray) -> dict:
    hidden = np.tanh(features @ params.w_ext + params.b_ext)
    hv = hidden @ params.w_gen + params.b_gen
    logits = hv @ params.classes
    reconstruction = hv @ params.w_rec + params.b_rec
    return {"hidden": hidden, "hv": hv, "logits": logits, "reconstruction": reconstruction}


def encoder_loss(params: EncoderParams, batch: Batch, lambda_rec: float = 1.0) -> EncoderLoss:
    """
    Pseudo-label cross-entropy, reconstruction loss and their weighted total.

    Args:
        params: Encoder parameters
        batch: (feature, label) pairs, or a (features, labels) array tuple
        lambda_rec: Weight of the reconstruction term

    Returns:
        EncoderLoss(total, l_c, l_rec)
    """
    features, labels = _as_batch(params, batch)
    cache = _forward_cache(params, features)
    log_probs = log_softmax(cache["logits"], axis=1)
    l_c = float(-np.mean(log_probs[np.arange(labels.shape[0]), labels]))
    residual = features - cache["reconstruction"]
    l_rec = float(np.mean(np.sum(residual * residual, axis=1)))
    return EncoderLoss(l_c + lambda_rec * l_rec, l_c, l_rec)


def encoder_grad(params: EncoderParams, batch: Batch, lambda_rec: float = 1.0) -> EncoderParams:
    """Analytic gradient of the total encoder loss for every parameter block."""
    features, labels = _as_batch(params, batch)
    count = features.shape[0]
    cache = _forward_cache(params, features)
    hidden, hv = cache["hidden"], cache["hv"]

    d_logits = softmax(cache["logits"], axis=1)
    d_logits[np.arange(count), labels] -= 1.0
    d_logits /= count
    d_classes = hv.T @ d_logits
    d_hv = d_logits @ params.classes.T

    d_reconstruction = (2.0 * lambda_rec / count) * (cache["reconstruction"] - features)
    d_w_rec = hv.T @ d_reconstruction
    d_b_rec = d_reconstruction.sum(axis=0)
    d_hv += d_reconstruction @ params.w_rec.T

    d_w_gen = hidden.T @ d_hv
    d_b_gen = d_hv.sum(axis=0)
    d_pre = (d_hv @ params.w_gen.T) * (1.0 - hidden * hidden)
    d_w_ext = features.T @ d_pre
    d_b_ext = d_pre.sum(axis=0)

    return EncoderParams(
        w_ext=d_w_ext, b_ext=d_b_ext, w_gen=d_w_gen, b_gen=d_b_gen,
        w_rec=d_w_rec, b_rec=d_b_rec, classes=d_classes,
    )


def encoder_train(
    params: EncoderParams,
    dataset: Batch,
    config: EncoderTrainConfig,
    progress: bool = False,
) -> Tuple[EncoderParams, List[EncoderLoss]]:
    """
    Minibatch gradient descent with a fixed learning rate.

    Each epoch visits the dataset in an order drawn from config.seed. The loss
    trace holds the full-dataset loss measured after every epoch.

    Returns:
        (trained parameters, per-epoch losses)
    """
    config.validate()
    params.validate()
    features, labels = _as_batch(params, dataset)
    rng = make_rng(config.seed)
    trace: List[EncoderLoss] = []
    current = params.copy()
    epochs = tqdm(range(config.epochs), desc="encoder", disable=not progress)
    for epoch in epochs:
        order = rng.permutation(features.shape[0])
        for start in range(0, order.shape[0], config.batch_size):
            chunk = order[start:start + config.batch_size]
            grads = encoder_grad(current, (features[chunk], labels[chunk]), config.lambda_rec)
            current = current.step(grads, config.learning_rate)
        loss = encoder_loss(current, (features, labels), config.lambda_rec)
        trace.append(loss)
        logger.debug(
            "encoder epoch %d: total=%.6f l_c=%.6f l_rec=%.6f", epoch, loss.total, loss.l_c, loss.l_rec
        )
    logger.info("trained encoder for %d epochs, final loss %.6f", config.epochs, trace[-1].total)
    return current, trace
