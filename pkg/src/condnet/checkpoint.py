"""Deterministic single-file model container.

Layout (all integers little-endian):

    bytes 0..7    magic ``b"CONDNET\\x01"`` (includes the format version)
    bytes 8..15   uint64 header length H
    bytes 16..16+H UTF-8 JSON header, keys sorted
    rest          concatenated raw C-order float64 array payloads

The JSON header holds ``meta`` (architecture, hyperparameters, seed,
training record) and ``arrays`` (name, shape, offset, nbytes per array,
offsets relative to the payload start). Writing the same model twice yields
byte-identical files; there are no timestamps.
"""

import json
import struct

import numpy as np

from condnet.network import LayerParams, NetworkParams
from condnet.policy import PolicyParams

MAGIC = b"CONDNET\x01"


def _array_entries(net, policies):
    arrays = []
    for l, layer in enumerate(net.hidden):
        arrays.append((f"hidden{l}.weights", layer.weights))
        arrays.append((f"hidden{l}.bias", layer.bias))
    arrays.append(("out.weights", net.out.weights))
    arrays.append(("out.bias", net.out.bias))
    for l, pol in enumerate(policies or []):
        arrays.append((f"policy{l}.weights", pol.weights))
        arrays.append((f"policy{l}.bias", pol.bias))
    return arrays


def save_checkpoint(path, net, policies, meta):
    """Write the model (and optional policies) plus metadata to ``path``."""
    arrays = _array_entries(net, policies)
    specs = []
    offset = 0
    for name, arr in arrays:
        nbytes = arr.size * 8
        specs.append({"name": name, "shape": list(arr.shape),
                      "offset": offset, "nbytes": nbytes})
        offset += nbytes
    header = {
        "meta": dict(meta,
                     n_hidden_layers=len(net.hidden),
                     block_size=list(net.block_size),
                     activation=net.activation,
                     has_policies=policies is not None),
        "arrays": specs,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype=np.float64).tobytes())


def load_checkpoint(path):
    """Read a container written by :func:`save_checkpoint`.

    Returns ``(net, policies, meta)``; ``policies`` is None when the model
    was saved without them.
    """
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(
                f"{path}: not a condnet checkpoint (magic {magic!r}, "
                f"expected {MAGIC!r})"
            )
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode())
        payload = fh.read()

    fetched = {}
    for spec in header["arrays"]:
        start, nbytes = spec["offset"], spec["nbytes"]
        if start + nbytes > len(payload):
            raise ValueError(f"{path}: truncated payload for array {spec['name']}")
        arr = np.frombuffer(payload[start:start + nbytes], dtype=np.float64)
        fetched[spec["name"]] = arr.reshape(spec["shape"]).copy()

    meta = header["meta"]
    hidden = [
        LayerParams(fetched[f"hidden{l}.weights"], fetched[f"hidden{l}.bias"])
        for l in range(meta["n_hidden_layers"])
    ]
    net = NetworkParams(
        hidden,
        LayerParams(fetched["out.weights"], fetched["out.bias"]),
        list(meta["block_size"]),
        meta["activation"],
    )
    policies = None
    if meta["has_policies"]:
        policies = [
            PolicyParams(fetched[f"policy{l}.weights"], fetched[f"policy{l}.bias"])
            for l in range(meta["n_hidden_layers"])
        ]
    return net, policies, meta
