"""Feature datasets, ground truth files and the synthetic scene generator.

A feature dataset is a directory holding

* ``manifest.jsonl``: a header line ``{"magic": "NHFD", "version": 1, "z": ..,
  "count": .., "rows": .., "blob": "features.f32"}`` followed by one JSON
  record per image: image_id, image_w, image_h, split, global (row offset) and
  objects (bbox [x, y, w, h] in pixels, label, feature row offset);
* ``features.f32``: magic "NHFB", version u16, reserved u16, z u32, rows u32,
  then row-major little-endian float32 vectors of width z.

Any tool that writes this layout can feed the pipeline; features are never
computed from pixels here. Ground truth lives next to it in
``ground_truth.jsonl`` (header magic "NHGT").
"""

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import CorruptFileError, InvalidArgumentError, require
from .eval_metrics import LabeledItem, SpatialAnnotation
from .hdc_core import make_rng

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
BLOB_NAME = "features.f32"
GROUND_TRUTH_NAME = "ground_truth.jsonl"
MANIFEST_MAGIC = "NHFD"
GROUND_TRUTH_MAGIC = "NHGT"
BLOB_MAGIC = b"NHFB"
FORMAT_VERSION = 1
SPLIT_DB = "db"
SPLIT_QUERY = "query"
_BLOB_HEADER = struct.Struct("<4sHHII")


@dataclass(frozen=True)
class ObjectRecord:
    """A detected object: bounding box (x, y, w, h) in pixels, pseudo-label, feature row."""

    bbox: Tuple[float, float, float, float]
    label: int
    feature: int

    @property
    def center(self) -> Tuple[float, float]:
        x, y, w, h = self.bbox
        return x + w / 2.0, y + h / 2.0


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    image_w: float
    image_h: float
    global_feature: int
    objects: Tuple[ObjectRecord, ...] = ()
    split: str = SPLIT_DB

    def normalized_centers(self) -> List[Tuple[float, float]]:
        """Object centres divided by the image size, clamped to [0, 1]."""
        return [
            (min(max(cx / self.image_w, 0.0), 1.0), min(max(cy / self.image_h, 0.0), 1.0))
            for cx, cy in (obj.center for obj in self.objects)
        ]

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "image_w": self.image_w,
            "image_h": self.image_h,
            "split": self.split,
            "global": self.global_feature,
            "objects": [
                {"bbox": list(obj.bbox), "label": obj.label, "feature": obj.feature}
                for obj in self.objects
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "ImageRecord":
        return cls(
            image_id=int(data["image_id"]),
            image_w=float(data["image_w"]),
            image_h=float(data["image_h"]),
            global_feature=int(data["global"]),
            objects=tuple(
                ObjectRecord(tuple(float(v) for v in obj["bbox"]), int(obj["label"]), int(obj["feature"]))
                for obj in data.get("objects", [])
            ),
            split=data.get("split", SPLIT_DB),
        )


@dataclass
class FeatureDataset:
    """Per-image records plus the contiguous feature blob they point into."""

    z: int
    records: List[ImageRecord]
    blob: np.ndarray
    _by_id: Dict[int, ImageRecord] = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        self.blob = np.asarray(self.blob, dtype=np.float32)
        self.records = sorted(self.records, key=lambda record: record.image_id)
        self._by_id = {record.image_id: record for record in self.records}
        self.validate()

    def validate(self) -> None:
        require(self.blob.ndim == 2 and self.blob.shape[1] == self.z,
                f"feature blob has shape {self.blob.shape}, expected width z={self.z}")
        require(len(self._by_id) == len(self.records), "image ids must be unique")
        rows = self.blob.shape[0]
        for record in self.records:
            require(record.image_w > 0 and record.image_h > 0,
                    f"image {record.image_id} has non-positive dimensions")
            require(0 <= record.global_feature < rows,
                    f"image {record.image_id}: global offset {record.global_feature} outside the blob")
            for obj in record.objects:
                require(0 <= obj.feature < rows,
                        f"image {record.image_id}: object offset {obj.feature} outside the blob")
                x, y, w, h = obj.bbox
                require(w >= 0 and h >= 0 and x >= 0 and y >= 0
                        and x + w <= record.image_w and y + h <= record.image_h,
                        f"image {record.image_id}: bbox {obj.bbox} outside the image")
            require(record.split in (SPLIT_DB, SPLIT_QUERY),
                    f"image {record.image_id}: unknown split {record.split!r}")

    def __len__(self) -> int:
        return len(self.records)

    def record(self, image_id: int) -> ImageRecord:
        if image_id not in self._by_id:
            raise InvalidArgumentError(f"image {image_id} is not in the dataset")
        return self._by_id[image_id]

    def global_feature(self, record: ImageRecord) -> np.ndarray:
        return self.blob[record.global_feature].astype(np.float64)

    def object_features(self, record: ImageRecord) -> np.ndarray:
        rows = [obj.feature for obj in record.objects]
        return self.blob[rows].astype(np.float64).reshape(len(rows), self.z)

    def ids(self, split: Optional[str] = None) -> List[int]:
        return [r.image_id for r in self.records if split is None or r.split == split]

    def save(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        header = {
            "magic": MANIFEST_MAGIC, "version": FORMAT_VERSION, "z": self.z,
            "count": len(self.records), "rows": int(self.blob.shape[0]), "blob": BLOB_NAME,
        }
        _write_jsonl(os.path.join(directory, MANIFEST_NAME), header,
                     [record.to_json() for record in self.records])
        with open(os.path.join(directory, BLOB_NAME), "wb") as f:
            f.write(_BLOB_HEADER.pack(BLOB_MAGIC, FORMAT_VERSION, 0, self.z, self.blob.shape[0]))
            f.write(np.ascontiguousarray(self.blob, dtype="<f4").tobytes())
        logger.info("wrote %d images (%d feature rows) to %s", len(self), self.blob.shape[0], directory)

    @classmethod
    def load(cls, directory: str) -> "FeatureDataset":
        manifest_path = os.path.join(directory, MANIFEST_NAME)
        header, rows = _read_jsonl(manifest_path, MANIFEST_MAGIC)
        missing = [key for key in ("z", "rows", "count") if not isinstance(header.get(key), int)]
        if missing:
            raise CorruptFileError("header", f"missing or non-integer header keys {missing}", manifest_path)
        blob_path = os.path.join(directory, header.get("blob", BLOB_NAME))
        with open(blob_path, "rb") as f:
            data = f.read()
        if len(data) < _BLOB_HEADER.size:
            raise CorruptFileError("length", "blob is shorter than its header", blob_path)
        magic, version, _reserved, z, count = _BLOB_HEADER.unpack_from(data)
        if magic != BLOB_MAGIC:
            raise CorruptFileError("magic", f"expected {BLOB_MAGIC!r}, found {magic!r}", blob_path)
        if version != FORMAT_VERSION:
            raise CorruptFileError("version", f"unsupported version {version}", blob_path)
        if z != header["z"] or count != header["rows"]:
            raise CorruptFileError("z", "blob shape disagrees with the manifest header", blob_path)
        if len(data) != _BLOB_HEADER.size + 4 * z * count:
            raise CorruptFileError("length", "blob size does not match its header", blob_path)
        blob = np.frombuffer(data, dtype="<f4", offset=_BLOB_HEADER.size).reshape(count, z)
        if len(rows) != header["count"]:
            raise CorruptFileError("count", f"header says {header['count']} records, found {len(rows)}",
                                   manifest_path)
        try:
            records = [ImageRecord.from_json(row) for row in rows]
        except (KeyError, TypeError, ValueError) as e:
            raise CorruptFileError("record", f"malformed image record: {e}", manifest_path) from e
        return cls(int(z), records, blob.astype(np.float32))


@dataclass
class GroundTruth:
    """Evaluation labels and object positions, keyed by image id."""

    labeled: Dict[int, LabeledItem]
    spatial: Dict[int, SpatialAnnotation]

    def save(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        rows = []
        for item_id in sorted(self.labeled):
            annotation = self.spatial[item_id]
            rows.append({
                "item_id": item_id,
                "labels": sorted(self.labeled[item_id].class_labels),
                "image_w": annotation.image_w,
                "image_h": annotation.image_h,
                "objects": [list(obj) for obj in annotation.objects],
            })
        header = {"magic": GROUND_TRUTH_MAGIC, "version": FORMAT_VERSION, "count": len(rows)}
        _write_jsonl(os.path.join(directory, GROUND_TRUTH_NAME), header, rows)

    @classmethod
    def load(cls, directory: str) -> "GroundTruth":
        path = os.path.join(directory, GROUND_TRUTH_NAME)
        _, rows = _read_jsonl(path, GROUND_TRUTH_MAGIC)
        labeled, spatial = {}, {}
        for row in rows:
            try:
                item_id = int(row["item_id"])
                labeled[item_id] = LabeledItem(item_id, frozenset(row["labels"]))
                spatial[item_id] = SpatialAnnotation(
                    item_id, tuple(tuple(obj) for obj in row["objects"]), row["image_w"], row["image_h"]
                )
            except (KeyError, TypeError, ValueError) as e:
                raise CorruptFileError("record", f"malformed ground truth record {row!r}", path) from e
        return cls(labeled, spatial)


def _write_jsonl(path: str, header: dict, rows: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in [header, *rows]:
            f.write(json.dumps(row, sort_keys=True, separators=(",", ":")))
            f.write("\n")


def _read_jsonl(path: str, magic: str) -> Tuple[dict, List[dict]]:
    with open(path, "r", encoding="utf-8") as f:
        lines = [line for line in f.read().splitlines() if line.strip()]
    if not lines:
        raise CorruptFileError("length", "file is empty", path)
    try:
        parsed = [json.loads(line) for line in lines]
    except json.JSONDecodeError as e:
        raise CorruptFileError("record", str(e), path) from e
    header = parsed[0]
    if header.get("magic") != magic:
        raise CorruptFileError("magic", f"expected {magic!r}, found {header.get('magic')!r}", path)
    if header.get("version") != FORMAT_VERSION:
        raise CorruptFileError("version", f"unsupported version {header.get('version')!r}", path)
    return header, parsed[1:]


class SyntheticCorpus(NamedTuple):
    dataset: FeatureDataset
    ground_truth: GroundTruth
    prototypes: np.ndarray


def synth_generate(
    seed: int,
    n_images: int,
    n_classes: int,
    z: int,
    objects_per_image: Tuple[int, int] = (1, 4),
    noise: float = 0.3,
    global_noise: float = 0.1,
    n_queries: int = 0,
    image_size: Tuple[int, int] = (320, 640),
) -> SyntheticCorpus:
    """
    Generate a clustered scene corpus standing in for detector + backbone output.

    Class prototypes are N(0, I) in R^z. Each object feature is its prototype
    plus `noise` times Gaussian noise; object centres are uniform in the image.
    The global feature is the mean of the object features plus `global_noise`
    times Gaussian noise (a random prototype when an image has no objects).
    The first `n_queries` images form the query split.
    """
    low, high = objects_per_image
    require(n_classes >= 2, f"at least two classes are required, got {n_classes}")
    require(z >= 8, f"feature width must be at least 8, got {z}")
    require(n_images >= 1, f"n_images must be positive, got {n_images}")
    require(0 <= low <= high, f"invalid objects-per-image range {objects_per_image}")
    require(0 <= n_queries <= n_images, f"n_queries must lie in [0, {n_images}], got {n_queries}")
    require(noise >= 0 and global_noise >= 0, "noise scales must be non-negative")
    rng = make_rng(seed)
    prototypes = rng.standard_normal((n_classes, z))

    rows: List[np.ndarray] = []
    records: List[ImageRecord] = []
    labeled: Dict[int, LabeledItem] = {}
    spatial: Dict[int, SpatialAnnotation] = {}
    for image_id in range(n_images):
        width = float(rng.integers(image_size[0], image_size[1] + 1))
        height = float(rng.integers(image_size[0], image_size[1] + 1))
        n_objects = int(rng.integers(low, high + 1))
        labels = rng.integers(0, n_classes, n_objects)
        centers = rng.uniform(0.0, 1.0, (n_objects, 2)) * np.array([width, height])
        extents = rng.uniform(0.05, 0.3, (n_objects, 2)) * np.array([width, height])
        features = prototypes[labels] + noise * rng.standard_normal((n_objects, z))
        if n_objects:
            global_feature = features.mean(axis=0)
        else:
            global_feature = prototypes[int(rng.integers(0, n_classes))].copy()
        global_feature = global_feature + global_noise * rng.standard_normal(z)

        global_row = len(rows)
        rows.append(global_feature)
        objects = []
        annotated = []
        for label, (cx, cy), (ew, eh), feature in zip(labels, centers, extents, features):
            # keep the box strictly inside the image under rounding
            ew = min(ew, 2.0 * min(cx, width - cx) * (1.0 - 1e-9))
            eh = min(eh, 2.0 * min(cy, height - cy) * (1.0 - 1e-9))
            objects.append(ObjectRecord((cx - ew / 2.0, cy - eh / 2.0, ew, eh), int(label), len(rows)))
            rows.append(feature)
            annotated.append((int(label), float(cx), float(cy)))
        split = SPLIT_QUERY if image_id < n_queries else SPLIT_DB
        records.append(ImageRecord(image_id, width, height, global_row, tuple(objects), split))
        class_set = {label for label, _, _ in annotated} or {int(np.argmax(prototypes @ global_feature))}
        labeled[image_id] = LabeledItem(image_id, frozenset(class_set))
        spatial[image_id] = SpatialAnnotation(image_id, tuple(annotated), width, height)

    blob = np.vstack(rows).astype(np.float32)
    dataset = FeatureDataset(z, records, blob)
    logger.info("generated %d synthetic images with %d classes", n_images, n_classes)
    return SyntheticCorpus(dataset, GroundTruth(labeled, spatial), prototypes)


def nearest_prototype_labels(dataset: FeatureDataset, prototypes: np.ndarray) -> Dict[Tuple[int, int], int]:
    """Nearest-prototype class of every object, keyed by (image_id, object index)."""
    result = {}
    for record in dataset.records:
        features = dataset.object_features(record)
        for index, feature in enumerate(features):
            distances = np.sum((prototypes - feature) ** 2, axis=1)
            result[(record.image_id, index)] = int(np.argmin(distances))
    return result
