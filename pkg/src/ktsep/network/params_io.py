"""KTP1 parameter container.

Layout: ``b"KTP1"``, a little-endian uint32 JSON length, the UTF-8 JSON
manifest, then the concatenated little-endian float64 payloads. Each
manifest tensor entry gives ``name``, ``shape``, ``dtype`` and ``offset``
(bytes from the start of the payload block).
"""
from __future__ import annotations

import json
import struct

import numpy as np

from ..tensor import TensorFormatError
from .layers import Conv1DLayer
from .model import NetworkParams, PhaseParams

__all__ = ["save_params", "load_params"]

MAGIC = b"KTP1"


def save_params(params: NetworkParams, path) -> None:
    tensors, blobs, offset = [], [], 0
    for name, arr in params.named_arrays():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": "<f8",
                        "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    manifest = {
        "format": "KTP1",
        "K": params.K,
        "spatial_input": params.spatial_input,
        "prior": params.prior,
        "layer_plan": params.layer_plan(),
        "metadata": params.metadata,
        "tensors": tensors,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)


def load_params(path) -> NetworkParams:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise TensorFormatError(f"{path}: not a KTP1 file")
    (n,) = struct.unpack_from("<I", raw, 4)
    manifest = json.loads(raw[8:8 + n].decode("utf-8"))
    base = 8 + n
    arrays = {}
    for t in manifest["tensors"]:
        start = base + t["offset"]
        count = int(np.prod(t["shape"], dtype=np.int64))
        if start + 8 * count > len(raw):
            raise TensorFormatError(f"{path}: payload truncated at {t['name']}")
        arrays[t["name"]] = np.frombuffer(raw, dtype=t["dtype"], count=count,
                                          offset=start).reshape(t["shape"]).astype(np.float64)
    plan = manifest["layer_plan"]
    phases = []
    for k in range(manifest["K"]):
        pre = f"phase{k}."
        stacks = {}
        for s in ("n1", "n2", "n3"):
            stacks[s] = [Conv1DLayer(arrays[f"{pre}{s}.{i}.kernel"], arrays[f"{pre}{s}.{i}.bias"],
                                     bool(relu)) for i, (_, _, _, relu) in enumerate(plan[s])]
        phases.append(PhaseParams(**stacks, theta_raw=arrays[pre + "theta_raw"],
                                  mu1=arrays[pre + "mu1"], mu2=arrays[pre + "mu2"]))
    return NetworkParams(phases, manifest["spatial_input"], manifest["prior"],
                         manifest.get("metadata", {}))
