"""Weight archives: a portable, checksummed container for encoder tensors.

An archive is a ZIP file with two members:

* ``manifest.json`` lists every tensor (name, shape, byte offset, byte
  count), the dtype (little-endian float32), and the SHA-256 of the payload.
* ``weights.bin`` is the concatenation of the raw tensor bytes in manifest
  order.

``convert_torch_state_dict`` turns a torch checkpoint of the standard
19-layer convolutional encoder into this format so runs never need network
access.
"""

from __future__ import annotations

import hashlib
import json
import zipfile
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import WeightLoadError

ARCHIVE_FORMAT = "cmdnst-weight-archive"
ARCHIVE_VERSION = 1
_DTYPE = "<f4"

# torchvision-style feature indices of the 16 convolutions in VGG-19
_VGG19_FEATURE_INDEX = {
    0: "conv1_1", 2: "conv1_2",
    5: "conv2_1", 7: "conv2_2",
    10: "conv3_1", 12: "conv3_2", 14: "conv3_3", 16: "conv3_4",
    19: "conv4_1", 21: "conv4_2", 23: "conv4_3", 25: "conv4_4",
    28: "conv5_1", 30: "conv5_2", 32: "conv5_3", 34: "conv5_4",
}


def write_weight_archive(path, tensors: Mapping[str, np.ndarray], architecture: str) -> None:
    """Write named float32 tensors to ``path`` in manifest order."""
    entries = []
    blobs = []
    offset = 0
    for name, array in tensors.items():
        data = np.ascontiguousarray(array, dtype=_DTYPE).tobytes()
        entries.append(
            {"name": name, "shape": list(np.asarray(array).shape), "offset": offset, "nbytes": len(data)}
        )
        blobs.append(data)
        offset += len(data)
    payload = b"".join(blobs)
    manifest = {
        "format": ARCHIVE_FORMAT,
        "version": ARCHIVE_VERSION,
        "architecture": architecture,
        "dtype": _DTYPE,
        "tensors": entries,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=2))
        zf.writestr("weights.bin", payload)


def read_weight_archive(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read an archive, verify its checksum, and return (manifest, tensors)."""
    path = Path(path)
    if not path.exists():
        raise WeightLoadError(f"weight archive not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            payload = zf.read("weights.bin")
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise WeightLoadError(f"unreadable weight archive {path}: {exc}") from exc
    if manifest.get("format") != ARCHIVE_FORMAT:
        raise WeightLoadError(f"{path} is not a {ARCHIVE_FORMAT} file")
    digest = hashlib.sha256(payload).hexdigest()
    if digest != manifest.get("sha256"):
        raise WeightLoadError(
            f"checksum mismatch in {path}: manifest sha256={manifest.get('sha256')}, "
            f"computed sha256={digest}"
        )
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        name = entry["name"]
        start, nbytes = entry["offset"], entry["nbytes"]
        raw = payload[start : start + nbytes]
        if len(raw) != nbytes:
            raise WeightLoadError(f"truncated payload for tensor '{name}' in {path}")
        flat = np.frombuffer(raw, dtype=_DTYPE)
        try:
            tensors[name] = flat.reshape(entry["shape"])
        except ValueError as exc:
            raise WeightLoadError(
                f"tensor '{name}' payload does not match declared shape {entry['shape']}"
            ) from exc
    return manifest, tensors


def convert_torch_state_dict(src_path, dst_path, architecture: str = "VGG19") -> dict:
    """Convert a torch checkpoint (.pth state dict) into a weight archive.

    Accepts either torchvision-style keys (``features.N.weight``) or keys
    already named ``convX_Y.weight``. Returns the written manifest.
    """
    import torch

    src = Path(src_path)
    if not src.exists():
        raise WeightLoadError(f"checkpoint not found: {src}")
    try:
        state = torch.load(src, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise WeightLoadError(f"cannot read torch checkpoint {src}: {exc}") from exc
    if hasattr(state, "state_dict"):
        state = state.state_dict()
    tensors: dict[str, np.ndarray] = {}
    for key, value in state.items():
        name = _canonical_tensor_name(key)
        if name is None:
            continue
        tensors[name] = value.detach().cpu().numpy().astype(np.float32)
    if not tensors:
        raise WeightLoadError(f"no convolution tensors found in {src_path}")
    ordered = {name: tensors[name] for name in sorted(tensors, key=_conv_sort_key)}
    write_weight_archive(dst_path, ordered, architecture=architecture)
    manifest, _ = read_weight_archive(dst_path)
    return manifest


def _canonical_tensor_name(key: str) -> str | None:
    parts = key.split(".")
    if (
        parts[0] == "features"
        and len(parts) == 3
        and parts[1].isdigit()
        and parts[2] in ("weight", "bias")
    ):
        conv = _VGG19_FEATURE_INDEX.get(int(parts[1]))
        return f"{conv}.{parts[2]}" if conv else None
    if len(parts) == 2 and parts[0].startswith("conv") and parts[1] in ("weight", "bias"):
        return key
    return None


def _conv_sort_key(name: str):
    conv, kind = name.split(".")
    block, sub = conv.removeprefix("conv").split("_")
    return (int(block), int(sub), kind != "weight")
