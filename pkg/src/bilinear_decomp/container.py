"""BLNR weight container and the files built on it.

Layout (all integers little-endian)::

    b"BLNR" | u32 version (=1) | u32 metadata length | metadata JSON (UTF-8)
    | payload of float64 LE, row-major, tensors in metadata order

The metadata lists every tensor as ``{"name", "shape", "dtype", "offset"}``
(offset in bytes from the start of the payload) and carries free-form
``attrs``. JSON is written with sorted keys so equal content gives equal
bytes.
"""
import json
import struct
from pathlib import Path

import numpy as np

from .decompose import DecompileTree, Spectrum, TreeNode
from .errors import (
    BadMagicError,
    DimensionError,
    FormatError,
    ShapeMismatchError,
    TruncatedDataError,
    VersionMismatchError,
)
from .model import BilinearLayer, BilinearModel
from .ngram import TokenWeights

MAGIC = b"BLNR"
VERSION = 1
DTYPE = "<f8"
_PREAMBLE = struct.Struct("<4sII")


def pack(tensors, attrs=None):
    """Serialize an ordered ``name -> array`` mapping to BLNR bytes."""
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=DTYPE)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": DTYPE, "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    meta = json.dumps({"tensors": entries, "attrs": attrs or {}}, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    return _PREAMBLE.pack(MAGIC, VERSION, len(meta)) + meta + b"".join(chunks)


def unpack(data):
    """Inverse of :func:`pack`; returns ``(tensors, attrs)``."""
    data = bytes(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected b'BLNR'")
    if len(data) < _PREAMBLE.size:
        raise TruncatedDataError("BLNR header truncated", _PREAMBLE.size, len(data))
    _, version, meta_len = _PREAMBLE.unpack_from(data)
    if version != VERSION:
        raise VersionMismatchError(f"BLNR version {version}, this reader supports {VERSION}")
    start = _PREAMBLE.size + meta_len
    if len(data) < start:
        raise TruncatedDataError(
            f"BLNR metadata truncated: expected {meta_len} bytes, got {len(data) - _PREAMBLE.size}",
            meta_len, len(data) - _PREAMBLE.size,
        )
    try:
        meta = json.loads(data[_PREAMBLE.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"BLNR metadata is not valid JSON: {exc}") from None
    payload = memoryview(data)[start:]
    expected = 0
    for entry in meta["tensors"]:
        if entry["offset"] != expected or entry["dtype"] != DTYPE:
            raise ShapeMismatchError(f"tensor {entry['name']!r} has inconsistent offset or dtype")
        expected += 8 * int(np.prod(entry["shape"], dtype=np.int64))
    if len(payload) < expected:
        raise TruncatedDataError(
            f"BLNR payload truncated: expected {expected} bytes, got {len(payload)}",
            expected, len(payload),
        )
    if len(payload) > expected:
        raise ShapeMismatchError(
            f"BLNR payload has {len(payload)} bytes but tensors declare {expected}"
        )
    tensors = {}
    for entry in meta["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype=DTYPE, count=count, offset=entry["offset"])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return tensors, meta.get("attrs", {})


def save(path, tensors, attrs=None):
    Path(path).write_bytes(pack(tensors, attrs))


def load(path):
    return unpack(Path(path).read_bytes())


def _kind(attrs, expected):
    kind = attrs.get("kind")
    if kind != expected:
        raise FormatError(f"container holds {kind!r}, expected {expected!r}")


def model_to_bytes(model, config=None):
    topology = {
        "d_input": model.d_input,
        "d_model": model.d_model,
        "n_classes": model.n_classes,
        "layers": [{"projection": layer.P is not None} for layer in model.layers],
    }
    attrs = {"kind": "model", "topology": topology, "config": config or {}, "meta": model.meta}
    return pack(model.parameters(), attrs)


def model_from_bytes(data):
    tensors, attrs = unpack(data)
    _kind(attrs, "model")
    topo = attrs["topology"]
    try:
        layers = []
        for k, spec in enumerate(topo["layers"]):
            P = tensors[f"layers.{k}.P"] if spec["projection"] else None
            layers.append(BilinearLayer(tensors[f"layers.{k}.W"], tensors[f"layers.{k}.V"], P))
        model = BilinearModel(tensors["embed"], layers, tensors["unembed"], attrs.get("meta", {}))
    except (KeyError, DimensionError) as exc:
        raise ShapeMismatchError(f"model tensors are inconsistent: {exc}") from None
    if (model.d_input, model.d_model, model.n_classes) != (topo["d_input"], topo["d_model"], topo["n_classes"]):
        raise ShapeMismatchError("model tensors disagree with the declared topology")
    return model, attrs.get("config", {})


def save_model(path, model, config=None):
    Path(path).write_bytes(model_to_bytes(model, config))


def load_model(path):
    """Returns ``(model, training_config_dict)``."""
    return model_from_bytes(Path(path).read_bytes())


def save_spectrum(path, spectrum, image_shape=None):
    tensors = {"eigenvalues": spectrum.eigenvalues, "eigenvectors": spectrum.eigenvectors, "u": spectrum.u}
    if spectrum.input_features is not None:
        tensors["input_features"] = spectrum.input_features
    attrs = {
        "kind": "spectrum",
        "layer_index": spectrum.layer_index,
        "output_index": spectrum.output_index,
        "image_shape": list(image_shape) if image_shape else None,
    }
    save(path, tensors, attrs)


def load_spectrum(path):
    """Returns ``(spectrum, image_shape or None)``."""
    tensors, attrs = load(path)
    _kind(attrs, "spectrum")
    spec = Spectrum(
        tensors["eigenvalues"], tensors["eigenvectors"], tensors["u"], attrs["layer_index"],
        tensors.get("input_features"), attrs.get("output_index"),
    )
    shape = attrs.get("image_shape")
    return spec, tuple(shape) if shape else None


def save_token_weights(path, tw):
    tensors = {"embed": tw.embed, "unembed": tw.unembed, "W": tw.layer.W, "V": tw.layer.V}
    if tw.layer.P is not None:
        tensors["P"] = tw.layer.P
    if tw.ov is not None:
        tensors["ov"] = tw.ov
    save(path, tensors, {"kind": "token_weights"})


def load_token_weights(path):
    tensors, attrs = load(path)
    _kind(attrs, "token_weights")
    try:
        layer = BilinearLayer(tensors["W"], tensors["V"], tensors.get("P"))
        return TokenWeights(tensors["embed"], tensors["unembed"], layer, tensors.get("ov"))
    except (KeyError, DimensionError) as exc:
        raise ShapeMismatchError(f"token weights are inconsistent: {exc}") from None


def save_matrix(path, name, matrix, kind="matrix"):
    save(path, {name: matrix}, {"kind": kind})


def load_matrix(path, name):
    tensors, _ = load(path)
    if name not in tensors:
        raise FormatError(f"{path} has no tensor named {name!r}")
    return tensors[name]


def _path_key(path):
    return ".".join(str(i) for i in path)


def save_trees(json_path, trees):
    """Write trees as JSON plus a sibling ``.blnr`` holding every vector."""
    json_path = Path(json_path)
    blob_path = json_path.with_suffix(".blnr")
    tensors = {}

    def node_doc(node, c):
        key = f"{c}/{_path_key(node.path)}"
        tensors[f"vector:{key}"] = node.vector
        doc = {"path": list(node.path), "eigenvalue": node.eigenvalue, "layer": node.layer_index,
               "vector": f"vector:{key}"}
        if node.is_leaf:
            tensors[f"input_feature:{key}"] = node.input_feature
            doc["input_feature"] = f"input_feature:{key}"
        else:
            doc["children"] = [node_doc(child, c) for child in node.children]
        return doc

    docs = []
    for c, tree in enumerate(trees):
        key = tree.output_index if tree.output_index is not None else c
        tensors[f"u:{key}"] = tree.u
        docs.append({"class": key, "u": f"u:{key}",
                     "children": [node_doc(n, key) for n in tree.children]})
    doc = {
        "format": "bilinear-decompile-tree",
        "version": VERSION,
        "branching": trees[0].branching if trees else None,
        "n_layers": trees[0].n_layers if trees else None,
        "tensors": blob_path.name,
        "trees": docs,
    }
    save(blob_path, tensors, {"kind": "tree_tensors"})
    json_path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_trees(json_path):
    json_path = Path(json_path)
    doc = json.loads(json_path.read_text())
    tensors, _ = load(json_path.parent / doc["tensors"])

    def node_from(d):
        node = TreeNode(tuple(d["path"]), d["eigenvalue"], tensors[d["vector"]], d["layer"])
        if "input_feature" in d:
            node.input_feature = tensors[d["input_feature"]]
        else:
            node.children = [node_from(child) for child in d["children"]]
        return node

    return [
        DecompileTree(t["class"], tensors[t["u"]], doc["branching"], doc["n_layers"],
                      [node_from(n) for n in t["children"]])
        for t in doc["trees"]
    ]
