"""Model artifact container and the on-disk model directory.

Container layout (all integers little-endian)::

    offset 0   4 bytes   magic  b"IPIM"
    offset 4   uint32    container version (1)
    offset 8   uint32    header length H in bytes
    offset 12  H bytes   UTF-8 JSON header
    then       tensor payload, float32 little-endian, C order

The header holds ``kind`` (autoencoder / intent / identity_head), the model
``config``, free-form ``meta`` and a ``tensors`` list of
``{"name", "shape", "offset", "count"}``; ``offset`` is in bytes from the start
of the payload and ``count`` is the number of float32 values. A reader in any
language needs only a JSON parser and a float32 reader.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from . import _nn
from .identity import IdentityHead, MultiHeadLSTMAutoencoder
from .intent import IntentClassifier
from .preprocessing import NormalizationParams
from .taxonomy import class_names

MAGIC = b"IPIM"
CONTAINER_VERSION = 1

AE_FILE = "autoencoder.ipim"
INTENT_FILE = "intent.ipim"
HEAD_FILE = "identity_head.ipim"
NORMALIZER_FILE = "normalizer.json"
CALIBRATION_FILE = "calibration.json"


class ArtifactError(ValueError):
    pass


def write_container(path, kind: str, tensors: dict, config: dict | None = None, meta: dict | None = None) -> str:
    """Write a container; returns the sha256 of the file."""
    entries, blobs, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f4"))
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps(
        {"kind": kind, "config": config or {}, "meta": meta or {}, "tensors": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    data = MAGIC + struct.pack("<II", CONTAINER_VERSION, len(header)) + header + b"".join(blobs)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model artifact not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise ArtifactError(f"{path} is not a model container")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != CONTAINER_VERSION:
        raise ArtifactError(f"unsupported container version {version}")
    header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    payload = raw[12 + hlen :]
    tensors = {}
    for e in header["tensors"]:
        arr = np.frombuffer(payload, dtype="<f4", count=e["count"], offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).copy()
    return header, tensors


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- per-model helpers -------------------------------------------------------

def save_autoencoder(
    ae: MultiHeadLSTMAutoencoder, path, normalizer_ref: str = NORMALIZER_FILE, modalities: str = "IMU+SYS", rate: float = 20.0
) -> str:
    meta = {"input_shape": list(ae.input_shape_), "normalizer": normalizer_ref, "modalities": modalities, "rate": rate}
    return write_container(path, "autoencoder", _nn.state_to_numpy(ae.module_), ae.get_params(), meta)


def load_autoencoder(path) -> MultiHeadLSTMAutoencoder:
    header, tensors = read_container(path)
    _expect(header, "autoencoder", path)
    ae = MultiHeadLSTMAutoencoder(**header["config"])
    ae._build(*header["meta"]["input_shape"])
    _nn.load_numpy_state(ae.module_, tensors)
    ae.module_.eval()
    ae.meta_ = header["meta"]
    return ae


def save_intent(model: IntentClassifier, path, normalizer_ref: str = NORMALIZER_FILE, modalities: str = "INT+APP") -> str:
    meta = {
        "input_shape": list(model.input_shape_),
        "normalizer": normalizer_ref,
        "modalities": modalities,
        "granularity": model.granularity,
        "class_names": list(class_names(model.granularity)) if model.granularity != "binary" else ["safe", "ipi"],
    }
    return write_container(path, "intent", _nn.state_to_numpy(model.module_), model.get_params(), meta)


def load_intent(path) -> IntentClassifier:
    header, tensors = read_container(path)
    _expect(header, "intent", path)
    model = IntentClassifier(**header["config"])
    model._build(*header["meta"]["input_shape"])
    model.classes_ = np.arange(model.n_classes)
    _nn.load_numpy_state(model.module_, tensors)
    model.module_.eval()
    model.meta_ = header["meta"]
    return model


def save_identity_head(head: IdentityHead, path) -> str:
    tensors = {
        "mean": head.mean_,
        "scale": head.scale_,
        "support_vectors": head.support_vectors_,
        "dual_coef": head.dual_coef_,
        "intercept": np.array([head.intercept_]),
    }
    meta = {"gamma": head.gamma_, "provenance": getattr(head, "provenance_", {})}
    return write_container(path, "identity_head", tensors, head.get_params(), meta)


def load_identity_head(path) -> IdentityHead:
    header, t = read_container(path)
    _expect(header, "identity_head", path)
    head = IdentityHead.from_params(
        t["mean"], t["scale"], t["support_vectors"], t["dual_coef"], float(t["intercept"][0]),
        header["meta"]["gamma"], header["config"].get("C", 1.0),
    )
    head.provenance_ = header["meta"].get("provenance", {})
    return head


def _expect(header: dict, kind: str, path) -> None:
    if header.get("kind") != kind:
        raise ArtifactError(f"{path} holds a {header.get('kind')!r} model, expected {kind!r}")


# -- model directory -----------------------------------------------------------

def save_normalizer(params: NormalizationParams, model_dir) -> None:
    params.save(Path(model_dir) / NORMALIZER_FILE)


def load_normalizer(model_dir) -> NormalizationParams:
    path = Path(model_dir) / NORMALIZER_FILE
    if not path.exists():
        raise FileNotFoundError(f"normalizer not found: {path}")
    return NormalizationParams.load(path)


def require(model_dir, *names) -> Path:
    """Check the model directory and the named files exist; errors name the missing path."""
    root = Path(model_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"model directory not found: {model_dir}")
    for n in names:
        if not (root / n).exists():
            raise FileNotFoundError(f"missing model artifact: {root / n}")
    return root


def model_hashes(model_dir) -> dict[str, str]:
    root = Path(model_dir)
    return {n: file_hash(root / n) for n in (NORMALIZER_FILE, AE_FILE, INTENT_FILE, HEAD_FILE) if (root / n).exists()}


def save_calibration(model_dir, threshold: float, k: int, extra: dict | None = None) -> None:
    doc = {"threshold": threshold, "k": k, **(extra or {})}
    (Path(model_dir) / CALIBRATION_FILE).write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")


def load_calibration(model_dir) -> dict:
    path = Path(model_dir) / CALIBRATION_FILE
    if not path.exists():
        raise FileNotFoundError(f"calibration not found: {path}")
    return json.loads(path.read_text(encoding="utf-8"))
