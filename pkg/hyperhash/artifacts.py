"""Versioned array containers for checkpoints, scene matrices and code sets.

Layout (little-endian):

    magic       4 bytes (NHEC encoder, NHHM hash model, NHSC scenes, NHBC codes)
    version     u16
    header_len  u32
    header      UTF-8 JSON, keys sorted: kind, fingerprint, arrays
                (arrays = [[name, dtype, shape], ...] in payload order)
    payload     raw array bytes in manifest order
    checksum    u32 CRC-32 of every preceding byte

Identical inputs give byte-identical files.
"""

import io
import json
import logging
import struct
import zlib
from dataclasses import fields
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .context_encoder import EncoderParams
from .errors import CorruptFileError, IncompatibleArtifactError
from .hyperplane_hasher import HashModel

logger = logging.getLogger(__name__)

ARTIFACT_VERSION = 1
ENCODER_MAGIC = b"NHEC"
HASH_MODEL_MAGIC = b"NHHM"
SCENES_MAGIC = b"NHSC"
CODES_MAGIC = b"NHBC"
_PREFIX = struct.Struct("<4sHI")
_CHECKSUM = struct.Struct("<I")
_DTYPES = {"f8": "<f8", "i8": "<i8", "i1": "<i1", "u1": "<u1", "b1": "|b1"}


def _dtype_code(array: np.ndarray) -> str:
    code = f"{array.dtype.kind}{array.dtype.itemsize}"
    if code not in _DTYPES:
        raise TypeError(f"unsupported array dtype {array.dtype}")
    return code


def write_artifact(
    path: str,
    magic: bytes,
    kind: str,
    fingerprint: Mapping[str, Any],
    arrays: Mapping[str, np.ndarray],
) -> None:
    """Serialise named arrays plus a fingerprint dictionary to `path`."""
    manifest = []
    payload = io.BytesIO()
    for name, array in arrays.items():
        array = np.asarray(array)
        code = _dtype_code(array)
        manifest.append([name, code, list(array.shape)])
        payload.write(np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes())
    header = json.dumps(
        {"kind": kind, "fingerprint": dict(fingerprint), "arrays": manifest},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    body = _PREFIX.pack(magic, ARTIFACT_VERSION, len(header)) + header + payload.getvalue()
    with open(path, "wb") as f:
        f.write(body + _CHECKSUM.pack(zlib.crc32(body)))
    logger.debug("wrote %s artifact %s (%d bytes)", kind, path, len(body) + _CHECKSUM.size)


def read_artifact(path: str, magic: bytes) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """
    Read an artifact written by write_artifact.

    Returns:
        (fingerprint, arrays)

    Raises:
        CorruptFileError: on any structural mismatch, naming the field
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _PREFIX.size + _CHECKSUM.size:
        raise CorruptFileError("length", "file is shorter than the header", path)
    found_magic, version, header_len = _PREFIX.unpack_from(data)
    if found_magic != magic:
        raise CorruptFileError("magic", f"expected {magic!r}, found {found_magic!r}", path)
    if version != ARTIFACT_VERSION:
        raise CorruptFileError("version", f"unsupported version {version}", path)
    if len(data) < _PREFIX.size + header_len + _CHECKSUM.size:
        raise CorruptFileError("length", "file ends inside the header", path)
    (stored,) = _CHECKSUM.unpack_from(data, len(data) - _CHECKSUM.size)
    if zlib.crc32(data[:-_CHECKSUM.size]) != stored:
        raise CorruptFileError("checksum", "CRC-32 does not match the contents", path)
    try:
        header = json.loads(data[_PREFIX.size:_PREFIX.size + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptFileError("header", str(e), path) from e

    arrays = {}
    offset = _PREFIX.size + header_len
    end = len(data) - _CHECKSUM.size
    for name, code, shape in header.get("arrays", []):
        if code not in _DTYPES:
            raise CorruptFileError("header", f"array {name} has unknown dtype {code!r}", path)
        dtype = np.dtype(_DTYPES[code])
        count = int(np.prod(shape, dtype=np.int64))
        size = count * dtype.itemsize
        if offset + size > end:
            raise CorruptFileError("length", f"array {name} runs past the end of the file", path)
        arrays[name] = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(shape).copy()
        offset += size
    if offset != end:
        raise CorruptFileError("length", f"{end - offset} unexpected trailing bytes", path)
    return header.get("fingerprint", {}), arrays


def require_arrays(arrays: Mapping[str, np.ndarray], names: Sequence[str], path: str) -> None:
    missing = [name for name in names if name not in arrays]
    if missing:
        raise CorruptFileError("arrays", f"missing arrays {missing}", path)


def check_compatible(expected: Mapping[str, Any], found: Mapping[str, Any],
                     keys: Optional[Sequence[str]] = None) -> None:
    """
    Compare two fingerprints on `keys` (default: keys present in both).

    Raises:
        IncompatibleArtifactError: listing every mismatched field
    """
    keys = keys if keys is not None else sorted(set(expected) & set(found))
    mismatches = [
        (key, expected.get(key), found.get(key))
        for key in keys if expected.get(key) != found.get(key)
    ]
    if mismatches:
        raise IncompatibleArtifactError(mismatches)


def save_encoder(path: str, params: EncoderParams, fingerprint: Mapping[str, Any]) -> None:
    info = dict(fingerprint)
    info.update(z=params.z, z_prime=params.z_prime, dimension=params.dimension,
                classes=params.n_classes, encoder=params.fingerprint())
    write_artifact(path, ENCODER_MAGIC, "encoder", info, params.arrays())


def load_encoder(path: str) -> Tuple[EncoderParams, Dict[str, Any]]:
    fingerprint, arrays = read_artifact(path, ENCODER_MAGIC)
    names = [f.name for f in fields(EncoderParams)]
    require_arrays(arrays, names, path)
    params = EncoderParams(**{name: arrays[name] for name in names})
    params.validate()
    return params, fingerprint


def save_hash_model(path: str, model: HashModel, fingerprint: Mapping[str, Any]) -> None:
    info = dict(fingerprint)
    info.update(l_bits=model.l_bits, input_dim=model.input_dim, hash=model.fingerprint())
    write_artifact(path, HASH_MODEL_MAGIC, "hash-model", info, {"p": model.p, "b": model.b})


def load_hash_model(path: str) -> Tuple[HashModel, Dict[str, Any]]:
    fingerprint, arrays = read_artifact(path, HASH_MODEL_MAGIC)
    require_arrays(arrays, ("p", "b"), path)
    return HashModel(arrays["p"], arrays["b"]), fingerprint
