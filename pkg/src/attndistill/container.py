"""Versioned binary containers: synthetic image sets and run checkpoints.

Both formats are little-endian with a magic prefix and explicit version,
store tensors as raw bytes in a declared dtype, and detect truncation by
reading exact byte counts. Containers carry no timestamps, so identical
runs produce bit-identical files.
"""

import json
import struct

import numpy as np

from .data import PreprocessRecord, SyntheticDataset
from .errors import ContainerFormatError

SYNSET_MAGIC = b"SYNIMG01"
SYNSET_VERSION = 1
CHECKPOINT_MAGIC = b"DSTLCKP1"
CHECKPOINT_VERSION = 1

_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_OF = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_ORIGIN_TAGS = {"init": 0, "random": 1, "distilled": 2}
_ORIGIN_OF = {v: k for k, v in _ORIGIN_TAGS.items()}
_MODE_TAGS = {"mean-std": 0, "zca": 1}
_MODE_OF = {v: k for k, v in _MODE_TAGS.items()}


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise ContainerFormatError(f"truncated file: expected {n} bytes for {what}")
    return buf


def _write_array(fh, arr, dtype):
    fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def _read_array(fh, count, dtype, what):
    dtype = np.dtype(dtype)
    buf = _read_exact(fh, count * dtype.itemsize, what)
    return np.frombuffer(buf, dtype=dtype).copy()


def _write_preprocess(fh, rec):
    if rec is None:
        fh.write(struct.pack("<B", 0))
        return
    fh.write(struct.pack("<B", 1))
    c = rec.mean.shape[0]
    d = rec.zca_matrix.shape[0] if rec.mode == "zca" else 0
    fh.write(struct.pack("<BdII", _MODE_TAGS[rec.mode], float(rec.zca_eps), c, d))
    _write_array(fh, rec.mean, "<f8")
    _write_array(fh, rec.std, "<f8")
    if rec.mode == "zca":
        _write_array(fh, rec.flat_mean, "<f8")
        _write_array(fh, rec.zca_matrix, "<f8")
        _write_array(fh, rec.zca_inverse, "<f8")


def _read_preprocess(fh):
    (present,) = struct.unpack("<B", _read_exact(fh, 1, "preprocess flag"))
    if not present:
        return None
    mode_tag, eps, c, d = struct.unpack("<BdII", _read_exact(fh, 17, "preprocess header"))
    if mode_tag not in _MODE_OF:
        raise ContainerFormatError(f"unknown preprocess mode tag {mode_tag}")
    mode = _MODE_OF[mode_tag]
    mean = _read_array(fh, c, "<f8", "preprocess mean")
    std = _read_array(fh, c, "<f8", "preprocess std")
    if mode == "mean-std":
        return PreprocessRecord(mode=mode, mean=mean, std=std)
    flat_mean = _read_array(fh, d, "<f8", "zca mean")
    zca = _read_array(fh, d * d, "<f8", "zca matrix").reshape(d, d)
    zca_inv = _read_array(fh, d * d, "<f8", "zca inverse").reshape(d, d)
    return PreprocessRecord(
        mode=mode, mean=mean, std=std, zca_eps=eps,
        flat_mean=flat_mean, zca_matrix=zca, zca_inverse=zca_inv,
    )


def save_synthetic(syn, path):
    dtype = np.dtype(syn.images.dtype)
    if dtype not in _TAG_OF:
        raise ContainerFormatError(f"unsupported image dtype {dtype}")
    n, c, h, w = syn.images.shape
    with open(path, "wb") as fh:
        fh.write(SYNSET_MAGIC)
        fh.write(
            struct.pack(
                "<IBBHIIIIII",
                SYNSET_VERSION,
                _TAG_OF[dtype],
                _ORIGIN_TAGS.get(syn.origin, 0),
                0,
                syn.ipc,
                syn.num_classes,
                n, c, h, w,
            )
        )
        _write_array(fh, syn.labels, "<i8")
        _write_array(fh, syn.images, dtype.newbyteorder("<"))
        _write_preprocess(fh, syn.preprocess)


def load_synthetic(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(SYNSET_MAGIC))
        if magic != SYNSET_MAGIC:
            raise ContainerFormatError(f"{path}: not a synthetic-set container")
        header = struct.unpack("<IBBHIIIIII", _read_exact(fh, 32, "header"))
        version, dtype_tag, origin_tag, _, ipc, k, n, c, h, w = header
        if version != SYNSET_VERSION:
            raise ContainerFormatError(f"{path}: unsupported version {version}")
        if dtype_tag not in _DTYPE_TAGS:
            raise ContainerFormatError(f"{path}: unknown dtype tag {dtype_tag}")
        if n != ipc * k:
            raise ContainerFormatError(f"{path}: header shape {n} != ipc*K = {ipc * k}")
        labels = _read_array(fh, n, "<i8", "labels")
        images = _read_array(fh, n * c * h * w, _DTYPE_TAGS[dtype_tag], "images")
        rec = _read_preprocess(fh)
        if fh.read(1):
            raise ContainerFormatError(f"{path}: trailing bytes")
    return SyntheticDataset(
        images=images.reshape(n, c, h, w),
        labels=labels,
        ipc=ipc,
        preprocess=rec,
        origin=_ORIGIN_OF.get(origin_tag, "init"),
    )


def save_checkpoint(path, meta, images, momentum, labels, preprocess):
    """meta: JSON-able dict (engine version, config hash, iteration, RNG
    and sampler states, ipc, origin)."""
    dtype = np.dtype(images.dtype)
    if dtype not in _TAG_OF:
        raise ContainerFormatError(f"unsupported image dtype {dtype}")
    blob = json.dumps(meta, sort_keys=True).encode()
    n, c, h, w = images.shape
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IBIIIII", CHECKPOINT_VERSION, _TAG_OF[dtype], len(blob), n, c, h, w))
        fh.write(blob)
        _write_array(fh, labels, "<i8")
        _write_array(fh, images, dtype.newbyteorder("<"))
        _write_array(fh, momentum, dtype.newbyteorder("<"))
        _write_preprocess(fh, preprocess)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ContainerFormatError(f"{path}: not a checkpoint file")
        version, dtype_tag, blob_len, n, c, h, w = struct.unpack(
            "<IBIIIII", _read_exact(fh, 25, "header")
        )
        if version != CHECKPOINT_VERSION:
            raise ContainerFormatError(f"{path}: unsupported version {version}")
        if dtype_tag not in _DTYPE_TAGS:
            raise ContainerFormatError(f"{path}: unknown dtype tag {dtype_tag}")
        try:
            meta = json.loads(_read_exact(fh, blob_len, "metadata"))
        except json.JSONDecodeError as e:
            raise ContainerFormatError(f"{path}: corrupt metadata: {e}") from e
        labels = _read_array(fh, n, "<i8", "labels")
        count = n * c * h * w
        images = _read_array(fh, count, _DTYPE_TAGS[dtype_tag], "images").reshape(n, c, h, w)
        momentum = _read_array(fh, count, _DTYPE_TAGS[dtype_tag], "momentum").reshape(
            n, c, h, w
        )
        preprocess = _read_preprocess(fh)
        if fh.read(1):
            raise ContainerFormatError(f"{path}: trailing bytes")
    return meta, images, momentum, labels, preprocess
