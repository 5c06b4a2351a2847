"""Checkpoints: a JSON manifest plus one little-endian float32 blob."""

import hashlib
import json
import os

import numpy as np

from .arch import NetworkPlan
from .errors import CorruptCheckpointError
from .nn.layers import layer_from_description
from .nn.network import Network

MANIFEST = "manifest.json"
BLOB = "params.bin"
FORMAT_VERSION = 1


def save_checkpoint(network, path, plan=None):
    """Write ``path/manifest.json`` and ``path/params.bin``; returns the manifest dict."""
    plan = plan if plan is not None else network.plan
    os.makedirs(path, exist_ok=True)
    tensors, chunks, offset = [], [], 0
    for name, arr in network.state_items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": "float32", "offset": offset,
                        "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    blob = b"".join(chunks)
    manifest = {
        "format_version": FORMAT_VERSION,
        "byte_order": "little",
        "plan": plan.to_dict() if plan is not None else None,
        "layers": network.describe(),
        "tensors": tensors,
        "blob": BLOB,
        "blob_bytes": len(blob),
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    with open(os.path.join(path, BLOB), "wb") as fh:
        fh.write(blob)
    with open(os.path.join(path, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=1)
    return manifest


def load_checkpoint(path):
    """Returns ``(network, plan)``; raises CorruptCheckpointError on any manifest/blob mismatch."""
    try:
        with open(os.path.join(path, MANIFEST)) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"unreadable manifest in {path}: {exc}") from exc
    try:
        with open(os.path.join(path, manifest.get("blob", BLOB)), "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CorruptCheckpointError(f"missing parameter blob in {path}: {exc}") from exc
    if len(blob) != manifest.get("blob_bytes"):
        raise CorruptCheckpointError(f"blob has {len(blob)} bytes, manifest expects {manifest.get('blob_bytes')}")
    if hashlib.sha256(blob).hexdigest() != manifest.get("blob_sha256"):
        raise CorruptCheckpointError("blob checksum does not match manifest")

    try:
        plan = NetworkPlan.from_dict(manifest["plan"]) if manifest.get("plan") else None
        network = Network([layer_from_description(d) for d in manifest["layers"]], plan)
        expected = {name for name, _ in network.state_items()}
        listed = {t["name"] for t in manifest["tensors"]}
        if expected != listed:
            raise CorruptCheckpointError(f"tensor set mismatch: {sorted(expected ^ listed)}")
        for t in manifest["tensors"]:
            end = t["offset"] + t["nbytes"]
            if end > len(blob) or t["nbytes"] != 4 * int(np.prod(t["shape"], dtype=np.int64)):
                raise CorruptCheckpointError(f"tensor {t['name']} does not fit the blob")
            arr = np.frombuffer(blob, dtype="<f4", count=t["nbytes"] // 4, offset=t["offset"])
            network.set_state(t["name"], arr.reshape(t["shape"]).astype(np.float32))
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptCheckpointError(f"inconsistent manifest in {path}: {exc}") from exc
    return network, plan
