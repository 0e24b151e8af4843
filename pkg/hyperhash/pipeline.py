"""Batch stages of the retrieval pipeline.

Every stage reads and writes files under an output directory:

    dataset/         FeatureDataset + ground_truth.jsonl   (synth)
    encoder.nhec     context encoder checkpoint           (train-encoder)
    scenes.nhsc      flattened scene matrix               (encode)
    hash.nhhm        hash model checkpoint                (train-hash)
    codes.nhbc       bipolar codes of every image         (hash)
    index.nhix       database-split retrieval index       (build-index)
    *_report.json    machine-readable reports             (eval, ablate, sweep)

Each artifact carries the fingerprint of the settings that produced it;
consumers compare fingerprints before doing any work.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from .artifacts import (
    CODES_MAGIC,
    SCENES_MAGIC,
    check_compatible,
    load_encoder,
    load_hash_model,
    read_artifact,
    require_arrays,
    save_encoder,
    save_hash_model,
    write_artifact,
)
from .context_encoder import EncoderParams, encoder_forward, encoder_init, encoder_train
from .datasets import SPLIT_QUERY, FeatureDataset, GroundTruth, SyntheticCorpus, synth_generate
from .errors import InvalidArgumentError, require
from .eval_metrics import label_overlap_relevance, map_at_k, map_at_k_r
from .experiments import (
    AblationRow,
    SweepRow,
    ablation_study,
    label_task,
    length_scale_sweep,
)
from .hamming_index import RetrievalIndex, index_from_codes, index_load, index_save, pack, query_topk
from .hyperplane_hasher import (
    HashLossWeights,
    HashModel,
    hash_codes,
    hash_init,
    hash_train,
    prepare_inputs,
)
from .spatial_encoder import ObjectPlacement, PositionalBasis, SceneRep, compose_scene, new_basis
from .utilities import PipelineConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
DATASET_DIR = "dataset"
ENCODER_FILE = "encoder.nhec"
SCENES_FILE = "scenes.nhsc"
HASH_FILE = "hash.nhhm"
CODES_FILE = "codes.nhbc"
INDEX_FILE = "index.nhix"
EVAL_REPORT = "eval_report.json"
ABLATION_REPORT = "ablation_report.json"
SWEEP_REPORT = "sweep_report.json"
DEFAULT_FOCUS_MULTIPLIER = 10.0
# fields a query must agree on with the index it searches
QUERY_KEYS = ("basis_seed", "dimension", "encoder", "format_version", "hash", "l_bits", "w")


@dataclass(frozen=True)
class FocusRegion:
    """Axis-aligned rectangle in normalised image coordinates (edges inclusive)."""

    x0: float
    y0: float
    x1: float
    y1: float
    multiplier: float = DEFAULT_FOCUS_MULTIPLIER

    def __post_init__(self):
        require(self.multiplier > 0, f"focus multiplier must be positive, got {self.multiplier}")
        require(self.x0 <= self.x1 and self.y0 <= self.y1, "focus region corners are out of order")

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1


@dataclass(frozen=True, eq=False)
class QuerySpec:
    """
    A retrieval request.

    Either image_id (features looked up in the dataset) or inline features
    (global_feature plus object_features with normalised centers). Object
    weights default to 1; focus_region multiplies the weight of objects whose
    center lies inside it; an explicit object_etas list overrides both.
    eta_glob and w default to the values stored with the index.
    """

    image_id: Optional[int] = None
    global_feature: Optional[np.ndarray] = None
    object_features: Optional[np.ndarray] = None
    centers: Tuple[Tuple[float, float], ...] = ()
    eta_glob: Optional[float] = None
    object_etas: Optional[Tuple[float, ...]] = None
    focus_region: Optional[FocusRegion] = None
    w: Optional[float] = None

    def __post_init__(self):
        inline = self.global_feature is not None
        require(inline != (self.image_id is not None), "give either image_id or inline features")
        require(self.eta_glob is None or self.eta_glob > 0, f"eta_glob must be positive, got {self.eta_glob}")
        require(self.w is None or self.w > 0, f"w must be positive, got {self.w}")
        if self.object_etas is not None:
            require(all(eta > 0 for eta in self.object_etas), "object weights must be positive")

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "QuerySpec":
        region = data.get("focus_region")
        objects = data.get("objects", [])
        global_feature = data.get("global_feature")
        return cls(
            image_id=data.get("image_id"),
            global_feature=None if global_feature is None else np.asarray(global_feature, dtype=np.float64),
            object_features=(np.asarray([obj["feature"] for obj in objects], dtype=np.float64)
                             if objects else None),
            centers=tuple(tuple(obj["center"]) for obj in objects),
            eta_glob=data.get("eta_glob"),
            object_etas=None if data.get("object_etas") is None else tuple(data["object_etas"]),
            focus_region=FocusRegion(**region) if region else None,
            w=data.get("w"),
        )

    @classmethod
    def load(cls, path: str) -> "QuerySpec":
        with open(path, "r", encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise InvalidArgumentError(f"query file {path} is not valid JSON: {e}") from e
        return cls.from_json(data)

    def resolve(self, dataset: Optional[FeatureDataset]) -> Tuple[np.ndarray, np.ndarray, List[Tuple[float, float]]]:
        """(global feature, object features, normalised centers) of the query image."""
        if self.image_id is None:
            z = self.global_feature.shape[-1]
            features = (self.object_features if self.object_features is not None
                        else np.zeros((0, z)))
            require(features.shape[0] == len(self.centers), "one center per inline object is required")
            return self.global_feature, features, list(self.centers)
        require(dataset is not None, "a dataset is required to query by image_id")
        record = dataset.record(int(self.image_id))
        return dataset.global_feature(record), dataset.object_features(record), record.normalized_centers()

    def object_weights(self, centers: Sequence[Tuple[float, float]]) -> List[float]:
        if self.object_etas is not None:
            require(len(self.object_etas) == len(centers),
                    f"{len(self.object_etas)} object weights for {len(centers)} objects")
            return [float(eta) for eta in self.object_etas]
        if self.focus_region is None:
            return [1.0] * len(centers)
        region = self.focus_region
        return [region.multiplier if region.contains(x, y) else 1.0 for x, y in centers]


@dataclass
class SceneSet:
    """Flattened scenes of a dataset, one row per image in id order."""

    ids: np.ndarray
    flat: np.ndarray
    query: np.ndarray
    fingerprint: Dict[str, Any] = field(default_factory=dict)

    def save(self, path: str) -> None:
        write_artifact(path, SCENES_MAGIC, "scenes", self.fingerprint,
                       {"ids": self.ids.astype(np.int64), "flat": self.flat, "query": self.query.astype(bool)})

    @classmethod
    def load(cls, path: str) -> "SceneSet":
        fingerprint, arrays = read_artifact(path, SCENES_MAGIC)
        require_arrays(arrays, ("ids", "flat", "query"), path)
        return cls(arrays["ids"], arrays["flat"], arrays["query"], fingerprint)


@dataclass
class CodeSet:
    """Bipolar codes of a dataset, one row per image in id order."""

    ids: np.ndarray
    codes: np.ndarray
    query: np.ndarray
    fingerprint: Dict[str, Any] = field(default_factory=dict)

    def save(self, path: str) -> None:
        write_artifact(path, CODES_MAGIC, "codes", self.fingerprint,
                       {"ids": self.ids.astype(np.int64), "codes": self.codes.astype(np.int8),
                        "query": self.query.astype(bool)})

    @classmethod
    def load(cls, path: str) -> "CodeSet":
        fingerprint, arrays = read_artifact(path, CODES_MAGIC)
        require_arrays(arrays, ("ids", "codes", "query"), path)
        return cls(arrays["ids"], arrays["codes"], arrays["query"], fingerprint)


def encode_record(
    params: EncoderParams,
    basis: PositionalBasis,
    global_feature: np.ndarray,
    object_features: np.ndarray,
    centers: Sequence[Tuple[float, float]],
    w: float,
    eta_glob: float = 1.0,
    etas: Optional[Sequence[float]] = None,
    normalize: bool = False,
) -> SceneRep:
    """Scene of one image: context-encode every feature, then compose with positions."""
    global_hv = encoder_forward(params, np.asarray(global_feature)[None, :])[0]
    placements = []
    if len(centers):
        hvs = encoder_forward(params, object_features)
        etas = etas if etas is not None else [1.0] * len(centers)
        placements = [ObjectPlacement(hv, x, y, eta) for hv, (x, y), eta in zip(hvs, centers, etas)]
    return compose_scene(global_hv, placements, eta_glob, basis, w, normalize)


def _encode_flat(params, basis, global_feature, object_features, centers, w, eta_glob, normalize):
    return encode_record(params, basis, global_feature, object_features, centers, w,
                         eta_glob=eta_glob, normalize=normalize).flat


def scene_fingerprint(config: PipelineConfig, params: EncoderParams) -> Dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "seed": config.seed,
        "basis_seed": config.derived_seed("basis"),
        "dimension": params.dimension,
        "z": params.z,
        "w": config.length_scale,
        "eta_glob": config.eta_glob,
        "normalize_features": config.normalize_features,
        "encoder": params.fingerprint(),
    }


def encode_dataset(
    dataset: FeatureDataset,
    params: EncoderParams,
    config: PipelineConfig,
    progress: bool = False,
) -> SceneSet:
    """
    Encode every image of a dataset with object weights 1.

    Images are processed in parallel over `config.workers` processes; rows come
    back in image-id order regardless of the worker count.

    Raises:
        InvalidArgumentError: if the checkpoint disagrees with the dataset or config on z or D
    """
    if params.z != dataset.z:
        raise InvalidArgumentError(f"z: encoder expects {params.z}, dataset has {dataset.z}")
    if params.dimension != config.dimension:
        raise InvalidArgumentError(f"dimension: encoder produces {params.dimension}, config has {config.dimension}")
    basis = new_basis(config.derived_seed("basis"), config.dimension)
    records = tqdm(dataset.records, desc="encode", disable=not progress)
    flats = Parallel(n_jobs=config.workers)(
        delayed(_encode_flat)(
            params, basis, dataset.global_feature(record), dataset.object_features(record),
            record.normalized_centers(), config.length_scale, config.eta_glob, config.normalize_features,
        )
        for record in records
    )
    ids = np.array([record.image_id for record in dataset.records], dtype=np.int64)
    query = np.array([record.split == SPLIT_QUERY for record in dataset.records], dtype=bool)
    flat = np.vstack(flats) if flats else np.zeros((0, 2 * config.dimension))
    logger.info("encoded %d scenes at D=%d, w=%g", len(ids), config.dimension, config.length_scale)
    return SceneSet(ids, flat, query, scene_fingerprint(config, params))


def cmd_synth(config: PipelineConfig, out_dir: str) -> SyntheticCorpus:
    """Generate the synthetic corpus into out_dir/dataset."""
    corpus = synth_generate(
        config.derived_seed("synth"), config.synth_images, config.synth_classes, config.synth_z,
        (config.min_objects, config.max_objects), config.noise, config.global_noise, config.synth_queries,
    )
    directory = os.path.join(out_dir, DATASET_DIR)
    corpus.dataset.save(directory)
    corpus.ground_truth.save(directory)
    return corpus


def cmd_train_encoder(dataset_dir: str, config: PipelineConfig, out_path: str,
                      progress: bool = False) -> EncoderParams:
    """Train the context encoder on the objects' pseudo-labels and save the checkpoint."""
    dataset = FeatureDataset.load(dataset_dir)
    if dataset.z != config.z:
        raise InvalidArgumentError(f"z: dataset has {dataset.z}, config has {config.z}")
    features = [dataset.object_features(record) for record in dataset.records]
    labels = [obj.label for record in dataset.records for obj in record.objects]
    require(len(labels) > 0, "the dataset has no objects to train on")
    features = np.vstack(features)
    labels = np.asarray(labels, dtype=np.int64)
    require(int(labels.max()) < config.classes,
            f"classes: pseudo-label {int(labels.max())} needs more than {config.classes} classes")
    params = encoder_init(config.derived_seed("encoder-init"), dataset.z, config.z_prime,
                          config.dimension, config.classes)
    trained, _ = encoder_train(params, (features, labels), config.encoder_train_config(), progress)
    save_encoder(out_path, trained, {"format_version": FORMAT_VERSION, "seed": config.seed})
    return trained


def cmd_encode(dataset_dir: str, encoder_path: str, config: PipelineConfig, out_path: str,
               progress: bool = False) -> SceneSet:
    """Encode every image of the dataset and save the flattened scene matrix."""
    dataset = FeatureDataset.load(dataset_dir)
    params, _ = load_encoder(encoder_path)
    scenes = encode_dataset(dataset, params, config, progress)
    scenes.save(out_path)
    return scenes


def cmd_train_hash(scenes_path: str, config: PipelineConfig, out_path: str,
                   weights: Optional[HashLossWeights] = None, progress: bool = False) -> HashModel:
    """Train the hash on the database split of the scene matrix."""
    scenes = SceneSet.load(scenes_path)
    corpus = prepare_inputs(scenes.flat[~scenes.query])
    require(corpus.shape[0] >= 2, "hash training needs at least two database scenes")
    initial = hash_init(config.derived_seed("hash-init"), config.bits, scenes.flat.shape[1])
    model, _ = hash_train(initial, corpus, config.hash_train_config(weights), progress)
    save_hash_model(out_path, model, scenes.fingerprint)
    return model


def cmd_hash(scenes_path: str, hash_path: str, out_path: str) -> CodeSet:
    """Binary codes of every scene."""
    scenes = SceneSet.load(scenes_path)
    model, fingerprint = load_hash_model(hash_path)
    check_compatible(scenes.fingerprint, fingerprint)
    codes = CodeSet(scenes.ids, hash_codes(model, scenes.flat), scenes.query, dict(fingerprint))
    codes.save(out_path)
    logger.info("hashed %d scenes to %d-bit codes", len(codes.ids), model.l_bits)
    return codes


def build_index(codes: CodeSet) -> RetrievalIndex:
    database = ~codes.query
    return index_from_codes(codes.ids[database], codes.codes[database], dict(codes.fingerprint))


def cmd_build_index(codes_path: str, out_path: str) -> RetrievalIndex:
    """Index the database split of a code set."""
    index = build_index(CodeSet.load(codes_path))
    index_save(index, out_path)
    return index


def query_index(
    index: RetrievalIndex,
    spec: QuerySpec,
    k: int,
    params: EncoderParams,
    model: HashModel,
    config: PipelineConfig,
    dataset: Optional[FeatureDataset] = None,
) -> List[Tuple[int, int]]:
    """
    Conditional retrieval against a loaded index.

    Raises:
        IncompatibleArtifactError: if the index was built under other settings than the query
    """
    expected = {
        "basis_seed": config.derived_seed("basis"),
        "dimension": config.dimension,
        "encoder": params.fingerprint(),
        "format_version": FORMAT_VERSION,
        "hash": model.fingerprint(),
        "l_bits": model.l_bits,
        "w": spec.w if spec.w is not None else index.metadata.get("w"),
    }
    check_compatible(expected, index.metadata, keys=QUERY_KEYS)
    global_feature, object_features, centers = spec.resolve(dataset)
    eta_glob = spec.eta_glob if spec.eta_glob is not None else index.metadata["eta_glob"]
    basis = new_basis(expected["basis_seed"], expected["dimension"])
    scene = encode_record(
        params, basis, global_feature, object_features, centers, expected["w"],
        eta_glob=eta_glob, etas=spec.object_weights(centers),
        normalize=bool(index.metadata.get("normalize_features", False)),
    )
    code = hash_codes(model, scene.flat[None, :])[0]
    return query_topk(index, pack(code), k)


def cmd_query(index_path: str, spec: QuerySpec, k: int, encoder_path: str, hash_path: str,
              config: PipelineConfig, dataset_dir: Optional[str] = None) -> List[Tuple[int, int]]:
    index = index_load(index_path)
    params, _ = load_encoder(encoder_path)
    model, _ = load_hash_model(hash_path)
    dataset = FeatureDataset.load(dataset_dir) if dataset_dir else None
    return query_index(index, spec, k, params, model, config, dataset)


@dataclass(frozen=True)
class EvalReport:
    k: int
    map_k: float
    map_k_r: Dict[float, float]
    n_queries: int
    n_database: int
    l_bits: int

    def to_json(self) -> dict:
        return {
            "k": self.k, "map_k": self.map_k, "n_queries": self.n_queries,
            "n_database": self.n_database, "l_bits": self.l_bits,
            "map_k_r": {repr(r): score for r, score in sorted(self.map_k_r.items())},
        }

    def table(self) -> str:
        rows = [(f"mAP@{self.k}", self.map_k)]
        rows += [(f"mAP@{self.k}_r (r={r:g})", score) for r, score in sorted(self.map_k_r.items())]
        return format_table(("metric", "score"), rows)


def evaluate(
    index: RetrievalIndex,
    codes: CodeSet,
    ground_truth: GroundTruth,
    k: int,
    radii: Sequence[float] = (),
) -> EvalReport:
    """
    mAP@k over the query split (label-set overlap relevance) and mAP@k_r per radius.

    Raises:
        InvalidArgumentError: when a query or indexed item has no ground truth
    """
    query_ids = [int(i) for i in codes.ids[codes.query]]
    require(len(query_ids) > 0, "the code set has no query items")
    db_ids = [int(i) for i in index.ids]
    missing = [i for i in query_ids + db_ids if i not in ground_truth.labeled or i not in ground_truth.spatial]
    if missing:
        raise InvalidArgumentError(f"item {missing[0]} has no ground truth")
    db_labels = {i: ground_truth.labeled[i] for i in db_ids}
    db_spatial = {i: ground_truth.spatial[i] for i in db_ids}

    rankings = []
    for code in codes.codes[codes.query]:
        rankings.append([item_id for item_id, _ in query_topk(index, pack(code), k)])
    labelled = []
    for ranking, query_id in zip(rankings, query_ids):
        is_relevant = label_overlap_relevance(ground_truth.labeled[query_id], db_labels)
        labelled.append((ranking, is_relevant, sum(1 for i in db_ids if is_relevant(i))))
    spatial = [(ranking, ground_truth.spatial[q]) for ranking, q in zip(rankings, query_ids)]
    report = EvalReport(
        k=int(k),
        map_k=map_at_k(labelled, k),
        map_k_r={float(r): map_at_k_r(spatial, db_spatial, k, r) for r in radii},
        n_queries=len(query_ids),
        n_database=len(db_ids),
        l_bits=index.l_bits,
    )
    logger.info("evaluated %d queries against %d items: mAP@%d=%.4f",
                report.n_queries, report.n_database, k, report.map_k)
    return report


def cmd_eval(index_path: str, codes_path: str, ground_truth_dir: str, k: int,
             radii: Sequence[float] = (), report_path: Optional[str] = None) -> EvalReport:
    index = index_load(index_path)
    codes = CodeSet.load(codes_path)
    check_compatible(index.metadata, codes.fingerprint, keys=QUERY_KEYS)
    ground_truth_file = os.path.join(ground_truth_dir, "ground_truth.jsonl")
    if not os.path.exists(ground_truth_file):
        raise InvalidArgumentError(f"missing ground truth: {ground_truth_file}")
    report = evaluate(index, codes, GroundTruth.load(ground_truth_dir), k, radii)
    if report_path:
        write_report(report_path, report.to_json())
    return report


def cmd_ablate(config: PipelineConfig, exclusions: Sequence[str], out_dir: str,
               repeats: int = 1, progress: bool = False) -> List[AblationRow]:
    """
    Loss ablation on the synthetic corpus.

    Regenerates the corpus and encoder under out_dir, then trains one hash per
    variant for each of `repeats` seeds derived from the root seed.
    """
    require(repeats >= 1, f"repeats must be positive, got {repeats}")
    corpus = cmd_synth(config, out_dir)
    dataset_dir = os.path.join(out_dir, DATASET_DIR)
    params = cmd_train_encoder(dataset_dir, config, os.path.join(out_dir, ENCODER_FILE), progress)
    scenes = encode_dataset(corpus.dataset, params, config, progress)
    require(scenes.query.any(), "the ablation needs query images; set [Synth] queries")
    labeled = corpus.ground_truth.labeled
    db_ids = scenes.ids[~scenes.query]
    task = label_task(
        db_ids, scenes.flat[~scenes.query], scenes.flat[scenes.query],
        {int(i): labeled[int(i)] for i in db_ids},
        [labeled[int(i)] for i in scenes.ids[scenes.query]],
    )
    seeds = [config.derived_seed(f"ablation-{repeat}") for repeat in range(repeats)]
    rows = ablation_study(task, config.bits, config.hash_train_config(), exclusions, seeds, config.k, progress)
    write_report(os.path.join(out_dir, ABLATION_REPORT),
                 {"k": config.k, "l_bits": config.bits, "rows": [row.to_json() for row in rows]})
    return rows


def cmd_sweep(config: PipelineConfig, length_scales: Sequence[float], out_dir: str) -> List[SweepRow]:
    """Length-scale sweep on a position-shuffled duplicate corpus."""
    rows = length_scale_sweep(config.seed, length_scales, config.dimension, config.bits, config.k, config.radii,
                              hash_config=config.hash_train_config())
    os.makedirs(out_dir, exist_ok=True)
    write_report(os.path.join(out_dir, SWEEP_REPORT),
                 {"k": config.k, "l_bits": config.bits, "rows": [row.to_json() for row in rows]})
    return rows


def ablation_table(rows: Sequence[AblationRow]) -> str:
    return format_table(("variant", "terms", "median mAP"),
                        [(row.variant, ",".join(row.terms) or "-", row.median) for row in rows])


def sweep_table(rows: Sequence[SweepRow]) -> str:
    radii = sorted({r for row in rows for r in row.map_k_r})
    headers = ("variant", "mAP@K") + tuple(f"r={r:g}" for r in radii)
    return format_table(headers, [(row.variant, row.map_k, *(row.map_k_r[r] for r in radii)) for row in rows])


def format_table(headers: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    cells = [[f"{value:.4f}" if isinstance(value, float) else str(value) for value in row] for row in rows]
    widths = [max(len(str(h)), *(len(row[i]) for row in cells)) for i, h in enumerate(headers)]
    lines = ["  ".join(str(h).ljust(widths[i]) for i, h in enumerate(headers))]
    lines.append("  ".join("-" * width for width in widths))
    lines += ["  ".join(value.ljust(widths[i]) for i, value in enumerate(row)) for row in cells]
    return "\n".join(lines)


def write_report(path: str, report: Mapping[str, Any]) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(report, f, sort_keys=True, indent=2)
        f.write("\n")
    logger.info("wrote report %s", path)


def run_pipeline(config: PipelineConfig, out_dir: str, progress: bool = False) -> EvalReport:
    """synth, train-encoder, encode, train-hash, hash, build-index and eval in one call."""
    cmd_synth(config, out_dir)
    dataset_dir = os.path.join(out_dir, DATASET_DIR)
    paths = {name: os.path.join(out_dir, name)
             for name in (ENCODER_FILE, SCENES_FILE, HASH_FILE, CODES_FILE, INDEX_FILE, EVAL_REPORT)}
    cmd_train_encoder(dataset_dir, config, paths[ENCODER_FILE], progress)
    cmd_encode(dataset_dir, paths[ENCODER_FILE], config, paths[SCENES_FILE], progress)
    cmd_train_hash(paths[SCENES_FILE], config, paths[HASH_FILE], progress=progress)
    cmd_hash(paths[SCENES_FILE], paths[HASH_FILE], paths[CODES_FILE])
    cmd_build_index(paths[CODES_FILE], paths[INDEX_FILE])
    return cmd_eval(paths[INDEX_FILE], paths[CODES_FILE], dataset_dir, config.k, config.radii, paths[EVAL_REPORT])
