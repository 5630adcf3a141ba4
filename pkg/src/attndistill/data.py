"""Dataset ingestion, preprocessing, and synthetic-set bookkeeping.

Real datasets are loaded into preprocessed space (per-channel mean-std,
optionally followed by ZCA whitening) together with the record needed to
invert the transform for image export. The deterministic "toy-fixture"
dataset is generated in memory and is the workhorse for tests and
desk-scale runs: two classes of 8x8 RGB images whose class identity is
carried both by blob location and by which color channel holds the
signal.
"""

import hashlib
import os
import pickle
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DataError,
    DatasetLoadError,
    InsufficientDataError,
    ParameterError,
    UnsupportedDatasetError,
)

DATASET_ROOT_ENV = "ATTNDISTILL_DATA_ROOT"

ZCA_EPS_DEFAULT = 0.1


# ---------------------------------------------------------------- preprocessing


@dataclass
class PreprocessRecord:
    mode: str  # "mean-std" or "zca"
    mean: np.ndarray  # per-channel, float64
    std: np.ndarray
    zca_eps: float = 0.0
    flat_mean: np.ndarray | None = None  # [C*H*W], zca only
    zca_matrix: np.ndarray | None = None  # [C*H*W, C*H*W]
    zca_inverse: np.ndarray | None = None

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(self.mode.encode())
        for a in (self.mean, self.std, self.flat_mean, self.zca_matrix, self.zca_inverse):
            if a is not None:
                h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        h.update(np.float64(self.zca_eps).tobytes())
        return h.hexdigest()

    def matches(self, other):
        return other is not None and self.fingerprint() == other.fingerprint()


def fit_mean_std(images):
    _require_finite(images)
    mean = images.mean(axis=(0, 2, 3), dtype=np.float64)
    std = images.std(axis=(0, 2, 3), dtype=np.float64)
    std = np.maximum(std, 1e-8)
    return PreprocessRecord(mode="mean-std", mean=mean, std=std)


def fit_zca(images, eps=ZCA_EPS_DEFAULT):
    """Whitening matrix W = E (L + eps I)^(-1/2) E^T of the flattened
    pixel covariance, plus its inverse. Data is centered on the flat mean."""
    if eps <= 0:
        raise ParameterError(f"zca eps must be > 0, got {eps}")
    if images.shape[0] < 2:
        raise ParameterError("zca needs at least 2 samples")
    _require_finite(images)
    n = images.shape[0]
    flat = images.reshape(n, -1).astype(np.float64)
    flat_mean = flat.mean(axis=0)
    centered = flat - flat_mean
    cov = centered.T @ centered / n
    evals, evecs = np.linalg.eigh(cov)
    evals = np.maximum(evals, 0.0)  # clip eigh round-off
    scale = 1.0 / np.sqrt(evals + eps)
    w = (evecs * scale) @ evecs.T
    w_inv = (evecs * np.sqrt(evals + eps)) @ evecs.T
    mean = images.mean(axis=(0, 2, 3), dtype=np.float64)
    std = images.std(axis=(0, 2, 3), dtype=np.float64)
    return PreprocessRecord(
        mode="zca",
        mean=mean,
        std=np.maximum(std, 1e-8),
        zca_eps=float(eps),
        flat_mean=flat_mean,
        zca_matrix=w,
        zca_inverse=w_inv,
    )


def fit_preprocess(images, mode, zca_eps=ZCA_EPS_DEFAULT):
    if mode == "mean-std":
        return fit_mean_std(images)
    if mode == "zca":
        return fit_zca(images, zca_eps)
    raise ParameterError(f"unknown preprocess mode {mode!r}")


def apply_preprocess(rec, images):
    _check_images_shape(rec, images)
    dtype = images.dtype
    x = images.astype(np.float64, copy=False)
    if rec.mode == "mean-std":
        out = (x - rec.mean[None, :, None, None]) / rec.std[None, :, None, None]
    else:
        n = x.shape[0]
        flat = x.reshape(n, -1) - rec.flat_mean
        out = (flat @ rec.zca_matrix.T).reshape(images.shape)
    return out.astype(dtype, copy=False) if dtype != np.float64 else out


def invert_preprocess(rec, images):
    _check_images_shape(rec, images)
    dtype = images.dtype
    x = images.astype(np.float64, copy=False)
    if rec.mode == "mean-std":
        out = x * rec.std[None, :, None, None] + rec.mean[None, :, None, None]
    else:
        n = x.shape[0]
        flat = x.reshape(n, -1) @ rec.zca_inverse.T + rec.flat_mean
        out = flat.reshape(images.shape)
    return out.astype(dtype, copy=False) if dtype != np.float64 else out


def _check_images_shape(rec, images):
    if images.ndim != 4:
        raise ParameterError(f"expected [N, C, H, W] images, got shape {images.shape}")
    c = rec.mean.shape[0]
    if images.shape[1] != c:
        raise ParameterError(f"channel count {images.shape[1]} does not match record ({c})")
    if rec.mode == "zca":
        d = rec.zca_matrix.shape[0]
        if images[0].size != d:
            raise ParameterError(
                f"image size {images[0].size} does not match zca dimension {d}"
            )


def _require_finite(images):
    if not np.all(np.isfinite(images)):
        raise DataError("images contain NaN or Inf")


# ---------------------------------------------------------------- labeled sets


@dataclass
class LabeledImageSet:
    images: np.ndarray  # [N, C, H, W] preprocessed
    labels: np.ndarray  # [N] int64 in [0, K)
    num_classes: int
    preprocess: PreprocessRecord | None = None
    name: str = ""
    class_index: list = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not self.class_index:
            self.class_index = [
                np.flatnonzero(self.labels == k) for k in range(self.num_classes)
            ]
        self.validate()

    def validate(self):
        if self.images.ndim != 4:
            raise DataError(f"images must be [N, C, H, W], got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DataError("labels length does not match images")
        if self.labels.min(initial=0) < 0 or self.labels.max(initial=0) >= self.num_classes:
            raise DataError("labels out of range")
        covered = sum(len(ix) for ix in self.class_index)
        if covered != self.images.shape[0]:
            raise DataError("class index does not partition the dataset")
        _require_finite(self.images)

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])

    def images_of(self, k):
        if k < 0 or k >= self.num_classes:
            raise ParameterError(f"class {k} out of range [0, {self.num_classes})")
        return self.images[self.class_index[k]]

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.images).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()


@dataclass
class SyntheticDataset:
    images: np.ndarray  # [K*ipc, C, H, W], the optimization variable
    labels: np.ndarray  # fixed for the whole run
    ipc: int
    preprocess: PreprocessRecord | None = None
    origin: str = "init"  # init | random | distilled

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        counts = np.bincount(self.labels)
        if self.ipc < 1:
            raise ParameterError("ipc must be >= 1")
        if not np.all(counts == self.ipc):
            raise DataError(f"per-class counts {counts.tolist()} != ipc {self.ipc}")

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1

    def class_slice(self, k):
        return np.flatnonzero(self.labels == k)

    def copy(self):
        return SyntheticDataset(
            images=self.images.copy(),
            labels=self.labels.copy(),
            ipc=self.ipc,
            preprocess=self.preprocess,
            origin=self.origin,
        )

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.images).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------- toy fixture

TOY_SEED = 1237
TOY_PER_CLASS_TRAIN = 32
TOY_PER_CLASS_TEST = 32


TOY_MINORITY_FRACTION = 0.28


def _toy_images(rng, n_per_class):
    """Two classes, 8x8 RGB, values in [0, 1].

    Majority samples carry their class in a color channel (class 0:
    channel 0, class 1: channel 2) with the blob wandering anywhere
    central. Minority samples of both classes share the ambiguous
    channel 1 and are distinguishable only by blob position (class 0
    upper-left, class 1 lower-right). One random sample is therefore a
    lossy summary of its class while the full distribution separates.
    """
    h = w = 8
    images = []
    labels = []
    yy, xx = np.mgrid[0:h, 0:w]
    for k in range(2):
        for _ in range(n_per_class):
            minority = rng.random() < TOY_MINORITY_FRACTION
            if minority:
                ch = 1
                cy, cx = (2.0, 2.0) if k == 0 else (5.0, 5.0)
                jy = cy + rng.uniform(-0.7, 0.7)
                jx = cx + rng.uniform(-0.7, 0.7)
            else:
                ch = 0 if k == 0 else 2
                jy = rng.uniform(2.0, 5.0)
                jx = rng.uniform(2.0, 5.0)
            blob = np.exp(-(((yy - jy) ** 2 + (xx - jx) ** 2) / (2 * 1.1**2)))
            img = rng.normal(0.25, 0.10, size=(3, h, w))
            img[ch] += 0.6 * blob
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(k)
    return np.stack(images).astype(np.float32), np.array(labels, dtype=np.int64)


def build_toy_fixture():
    """Deterministic 2-class 8x8 set: 64 train / 64 test images."""
    rng = np.random.default_rng(TOY_SEED)
    xtr, ytr = _toy_images(rng, TOY_PER_CLASS_TRAIN)
    xte, yte = _toy_images(rng, TOY_PER_CLASS_TEST)
    rec = fit_mean_std(xtr)
    train = LabeledImageSet(
        images=apply_preprocess(rec, xtr),
        labels=ytr,
        num_classes=2,
        preprocess=rec,
        name="toy-fixture",
    )
    test = LabeledImageSet(
        images=apply_preprocess(rec, xte),
        labels=yte,
        num_classes=2,
        preprocess=rec,
        name="toy-fixture",
    )
    return train, test


# ---------------------------------------------------------------- real datasets


def _load_cifar(root, name):
    if name == "cifar10":
        d = os.path.join(root, "cifar-10-batches-py")
        train_files = [os.path.join(d, f"data_batch_{i}") for i in range(1, 6)]
        test_files = [os.path.join(d, "test_batch")]
        label_key = b"labels"
        num_classes = 10
    else:
        d = os.path.join(root, "cifar-100-python")
        train_files = [os.path.join(d, "train")]
        test_files = [os.path.join(d, "test")]
        label_key = b"fine_labels"
        num_classes = 100

    def read(files):
        xs, ys = [], []
        for f in files:
            if not os.path.exists(f):
                raise DatasetLoadError(f"missing dataset file {f}")
            try:
                with open(f, "rb") as fh:
                    batch = pickle.load(fh, encoding="bytes")
                xs.append(np.asarray(batch[b"data"], dtype=np.uint8))
                ys.append(np.asarray(batch[label_key], dtype=np.int64))
            except (pickle.UnpicklingError, KeyError, EOFError, OSError) as e:
                raise DatasetLoadError(f"corrupt dataset file {f}: {e}") from e
        x = np.concatenate(xs).reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
        return x, np.concatenate(ys)

    return read(train_files), read(test_files), num_classes


def _load_tinyimagenet(root):
    from PIL import Image

    base = os.path.join(root, "tiny-imagenet-200")
    wnids_path = os.path.join(base, "wnids.txt")
    if not os.path.exists(wnids_path):
        raise DatasetLoadError(f"missing dataset file {wnids_path}")
    with open(wnids_path) as fh:
        wnids = [line.strip() for line in fh if line.strip()]
    class_of = {w: i for i, w in enumerate(wnids)}

    def read_image(path):
        try:
            with Image.open(path) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except OSError as e:
            raise DatasetLoadError(f"corrupt image {path}: {e}") from e
        return arr.transpose(2, 0, 1)

    xs, ys = [], []
    for w in wnids:
        img_dir = os.path.join(base, "train", w, "images")
        if not os.path.isdir(img_dir):
            raise DatasetLoadError(f"missing class directory {img_dir}")
        for fname in sorted(os.listdir(img_dir)):
            xs.append(read_image(os.path.join(img_dir, fname)))
            ys.append(class_of[w])
    xtr = np.stack(xs).astype(np.float32) / 255.0
    ytr = np.array(ys, dtype=np.int64)

    ann = os.path.join(base, "val", "val_annotations.txt")
    if not os.path.exists(ann):
        raise DatasetLoadError(f"missing annotations file {ann}")
    xs, ys = [], []
    with open(ann) as fh:
        for line in fh:
            parts = line.split("\t")
            if len(parts) < 2:
                continue
            path = os.path.join(base, "val", "images", parts[0])
            xs.append(read_image(path))
            ys.append(class_of[parts[1]])
    xte = np.stack(xs).astype(np.float32) / 255.0
    yte = np.array(ys, dtype=np.int64)
    return (xtr, ytr), (xte, yte), len(wnids)


_DEFAULT_PREPROCESS = {
    "cifar10": "zca",
    "cifar100": "zca",
    "tinyimagenet": "mean-std",
    "toy-fixture": "mean-std",
}


def load_dataset(name, root=None, preprocess="auto", zca_eps=ZCA_EPS_DEFAULT, cache_dir=None):
    """Load a dataset pair (train, test) in preprocessed space.

    preprocess "auto" picks ZCA for the CIFARs and mean-std elsewhere.
    cache_dir, when given, caches fitted ZCA statistics keyed by dataset
    and eps so repeat runs skip the eigendecomposition.
    """
    if name == "toy-fixture":
        return build_toy_fixture()
    if name not in _DEFAULT_PREPROCESS:
        raise UnsupportedDatasetError(f"unsupported dataset {name!r}")
    if root is None:
        root = os.environ.get(DATASET_ROOT_ENV, "data")
    if name in ("cifar10", "cifar100"):
        (xtr, ytr), (xte, yte), k = _load_cifar(root, name)
    else:
        (xtr, ytr), (xte, yte), k = _load_tinyimagenet(root)
    mode = _DEFAULT_PREPROCESS[name] if preprocess == "auto" else preprocess
    rec = None
    cache_path = None
    if mode == "zca" and cache_dir is not None:
        cache_path = os.path.join(cache_dir, f"zca_{name}_eps{zca_eps:g}.npz")
        if os.path.exists(cache_path):
            z = np.load(cache_path)
            rec = PreprocessRecord(
                mode="zca",
                mean=z["mean"],
                std=z["std"],
                zca_eps=float(z["eps"]),
                flat_mean=z["flat_mean"],
                zca_matrix=z["zca"],
                zca_inverse=z["zca_inv"],
            )
    if rec is None:
        rec = fit_preprocess(xtr, mode, zca_eps)
        if cache_path is not None:
            os.makedirs(cache_dir, exist_ok=True)
            np.savez(
                cache_path,
                mean=rec.mean,
                std=rec.std,
                eps=rec.zca_eps,
                flat_mean=rec.flat_mean,
                zca=rec.zca_matrix,
                zca_inv=rec.zca_inverse,
            )
    train = LabeledImageSet(
        images=apply_preprocess(rec, xtr), labels=ytr, num_classes=k,
        preprocess=rec, name=name,
    )
    test = LabeledImageSet(
        images=apply_preprocess(rec, xte), labels=yte, num_classes=k,
        preprocess=rec, name=name,
    )
    return train, test


# ---------------------------------------------------------------- synthetic init


def init_synthetic(real, ipc, seed):
    """Seeded copy of ipc distinct real samples per class."""
    if ipc < 1:
        raise ParameterError("ipc must be >= 1")
    rng = np.random.default_rng(seed)
    picks = []
    labels = []
    for k in range(real.num_classes):
        idx = real.class_index[k]
        if len(idx) < ipc:
            raise InsufficientDataError(
                f"class {k} has {len(idx)} samples, fewer than ipc={ipc}"
            )
        chosen = rng.choice(idx, size=ipc, replace=False)
        picks.append(real.images[chosen].copy())
        labels.extend([k] * ipc)
    return SyntheticDataset(
        images=np.concatenate(picks, axis=0),
        labels=np.array(labels, dtype=np.int64),
        ipc=ipc,
        preprocess=real.preprocess,
        origin="init",
    )


def trim_to_synthetic(real):
    """View a real dataset as a frozen SyntheticDataset (for full-data
    reference rankings), trimming every class to the smallest per-class
    count so the fixed-ipc invariant holds."""
    per_class = min(len(ix) for ix in real.class_index)
    picks = []
    labels = []
    for k in range(real.num_classes):
        picks.append(real.images[real.class_index[k][:per_class]].copy())
        labels.extend([k] * per_class)
    return SyntheticDataset(
        images=np.concatenate(picks, axis=0),
        labels=np.array(labels, dtype=np.int64),
        ipc=per_class,
        preprocess=real.preprocess,
        origin="init",
    )


# ---------------------------------------------------------------- batching


class ClassBatchSampler:
    """Per-class epoch-shuffled sampling without replacement; spans epochs
    (reshuffling) when a batch asks for more than remains.

    State (rng + per-class queues) is checkpointable so replay is
    bit-exact across resume boundaries.
    """

    def __init__(self, real, seed):
        self.real = real
        self.rng = np.random.default_rng(seed)
        self._queues = [list() for _ in range(real.num_classes)]

    def sample(self, class_k, batch_size=128):
        if class_k < 0 or class_k >= self.real.num_classes:
            raise ParameterError(f"unknown class {class_k}")
        if batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        idx = self.real.class_index[class_k]
        q = self._queues[class_k]
        picked = []
        while len(picked) < batch_size:
            if not q:
                q.extend(self.rng.permutation(idx).tolist())
            take = min(batch_size - len(picked), len(q))
            picked.extend(q[:take])
            del q[:take]
        return self.real.images[np.array(picked, dtype=np.int64)]

    def get_state(self):
        return {
            "rng": self.rng.bit_generator.state,
            "queues": [list(q) for q in self._queues],
        }

    def set_state(self, state):
        self.rng.bit_generator.state = state["rng"]
        self._queues = [list(q) for q in state["queues"]]
        return self


def sample_class_batch(real, class_k, batch_size, sampler):
    """Operation-style wrapper around ClassBatchSampler.sample."""
    return sampler.sample(class_k, batch_size)
