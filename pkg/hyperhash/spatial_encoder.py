"""Positional hypervectors and weighted scene composition.

A position (x, y) in the unit square is encoded elementwise as
exp(i * (B_X[j] * x + B_Y[j] * y) / w) with B_X, B_Y ~ N(0, 1). Two such codes
have expected similarity exp(-|dx, dy|^2 / (2 w^2)), so the length scale w
sets how fast spatial similarity decays. A scene is

    H = eta_glob * h_glob + sum_k eta_k * (h_k * p_k)

where h_k is an object's feature hypervector and p_k its position code.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from cachetools import LRUCache, cached

from .errors import InvalidArgumentError, require
from .hdc_core import flatten_complex, make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PositionalBasis:
    """The two axis hypervectors shared by every image and query of a corpus."""

    b_x: np.ndarray
    b_y: np.ndarray
    seed: int

    @property
    def dimension(self) -> int:
        return int(self.b_x.shape[0])


@cached(cache=LRUCache(maxsize=8))
def new_basis(seed: int, d: int) -> PositionalBasis:
    """
    Sample the positional basis for a corpus.

    Results are cached per (seed, d); the arrays are read-only so sharing is safe.

    Args:
        seed: Generator seed
        d: Hypervector dimension

    Returns:
        PositionalBasis with independent N(0, 1) axis vectors
    """
    require(int(d) == d and d >= 1, f"dimension must be a positive integer, got {d}")
    rng = make_rng(seed)
    b_x = rng.standard_normal(int(d))
    b_y = rng.standard_normal(int(d))
    b_x.setflags(write=False)
    b_y.setflags(write=False)
    logger.debug("sampled positional basis (seed=%d, d=%d)", seed, d)
    return PositionalBasis(b_x=b_x, b_y=b_y, seed=int(seed))


def _check_length_scale(w: float) -> None:
    if not w > 0:
        raise InvalidArgumentError(f"length scale must be positive, got {w}")


def encode_axis(axis_basis, coordinate: float, w: float) -> np.ndarray:
    """Single-axis factor exp(i * B * coordinate / w)."""
    _check_length_scale(w)
    return np.exp(1j * np.asarray(axis_basis, dtype=np.float64) * (coordinate / w))


def encode_position(basis: PositionalBasis, x: float, y: float, w: float) -> np.ndarray:
    """
    Phase vector for the position (x, y) at length scale w.

    Equals bind(encode_axis(B_X, x, w), encode_axis(B_Y, y, w)).
    """
    _check_length_scale(w)
    return np.exp(1j * (basis.b_x * x + basis.b_y * y) / w)


def encode_positions(basis: PositionalBasis, xs, ys, w: float) -> np.ndarray:
    """Row-stacked position codes for many positions, shape (N, D)."""
    _check_length_scale(w)
    xs = np.asarray(xs, dtype=np.float64).reshape(-1, 1)
    ys = np.asarray(ys, dtype=np.float64).reshape(-1, 1)
    return np.exp(1j * (xs * basis.b_x + ys * basis.b_y) / w)


def expected_position_kernel(dx: float, dy: float, w: float) -> float:
    """Closed-form expected similarity of two position codes displaced by (dx, dy)."""
    _check_length_scale(w)
    return float(np.exp(-(dx * dx + dy * dy) / (2.0 * w * w)))


@dataclass(frozen=True)
class ObjectPlacement:
    """One object of a scene: feature hypervector, normalised centre, weight."""

    feature_hv: np.ndarray
    x: float
    y: float
    eta: float = 1.0

    def __post_init__(self):
        require(self.eta > 0, f"object weight must be positive, got {self.eta}")
        require(0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0,
                f"object centre ({self.x}, {self.y}) outside the unit square")


@dataclass(frozen=True)
class SceneRep:
    """Complex scene hypervector `h` and its cached real form `flat` (Re then Im)."""

    h: np.ndarray
    flat: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        h = np.array(self.h, dtype=np.complex128)
        require(h.ndim == 1, f"scene must be a vector, got shape {h.shape}")
        h.setflags(write=False)
        flat = flatten_complex(h)
        flat.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "flat", flat)

    @property
    def dimension(self) -> int:
        return int(self.h.shape[0])

    @classmethod
    def from_flat(cls, flat) -> "SceneRep":
        flat = np.asarray(flat, dtype=np.float64)
        require(flat.ndim == 1 and flat.shape[0] % 2 == 0,
                f"flattened scene must have even length, got shape {flat.shape}")
        half = flat.shape[0] // 2
        return cls(flat[:half] + 1j * flat[half:])


def flatten(rep: SceneRep) -> np.ndarray:
    """Real vector of length 2D: real parts followed by imaginary parts."""
    return rep.flat


def _unit(vector: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vector)
    return vector / norm if norm > 0.0 else vector


def compose_scene(
    global_hv,
    objects: Sequence[ObjectPlacement],
    eta_glob: float,
    basis: PositionalBasis,
    w: float,
    normalize: bool = False,
) -> SceneRep:
    """
    Compose the scene hypervector of one image.

    Args:
        global_hv: Global feature hypervector, length D
        objects: Placed objects; may be empty
        eta_glob: Weight of the global term
        basis: Positional basis of the corpus
        w: Length scale
        normalize: L2-normalise every feature hypervector before composing

    Returns:
        SceneRep of eta_glob * global + sum_k eta_k * bind(feature_k, position_k)
    """
    _check_length_scale(w)
    require(eta_glob > 0, f"global weight must be positive, got {eta_glob}")
    global_hv = np.asarray(global_hv, dtype=np.float64)
    dimension = basis.dimension
    if global_hv.shape != (dimension,):
        raise InvalidArgumentError(
            f"length mismatch: global hypervector has shape {global_hv.shape}, basis has D={dimension}"
        )
    if normalize:
        global_hv = _unit(global_hv)
    h = eta_glob * global_hv.astype(np.complex128)
    if not objects:
        return SceneRep(h)

    features = np.empty((len(objects), dimension))
    for index, placement in enumerate(objects):
        feature = np.asarray(placement.feature_hv, dtype=np.float64)
        if feature.shape != (dimension,):
            raise InvalidArgumentError(
                f"length mismatch: object {index} has shape {feature.shape}, basis has D={dimension}"
            )
        features[index] = _unit(feature) if normalize else feature
    etas = np.array([placement.eta for placement in objects], dtype=np.float64)
    positions = encode_positions(
        basis, [p.x for p in objects], [p.y for p in objects], w
    )
    bound = etas[:, None] * features * positions
    for term in bound:
        h = h + term
    return SceneRep(h)


def scene_matrix(scenes: Sequence[SceneRep], dimension: Optional[int] = None) -> np.ndarray:
    """Stack the flattened forms of several scenes into an (M, 2D) matrix."""
    if not scenes:
        width = 2 * dimension if dimension else 0
        return np.zeros((0, width))
    return np.vstack([scene.flat for scene in scenes])
