"""Downstream evaluation: train fresh networks on a distilled set,
report top-1 accuracy on the real test set.

Each of n_models trainings is independently seeded (network init, batch
order, augmentation) and runs SGD with momentum 0.9, weight decay 5e-4,
and step learning-rate decay. Results are aggregated as mean and
unbiased standard deviation in percent.
"""

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .augment import AugmentConfig, apply_aug, sample_aug
from .data import init_synthetic
from .errors import ContractError, ParameterError
from .layers import softmax_cross_entropy
from .nets import ConvNetSpec, Network

EVAL_BATCH = 256


@dataclass
class EvalProtocol:
    n_models: int = 20
    epochs: int = 300
    lr_net: float = 0.01
    net_momentum: float = 0.9
    weight_decay: float = 5e-4
    sched_decay: float = 0.5
    sched_step: int = 15
    depth: int = 3
    width: int = 128
    activation: str = "relu"
    norm: str = "instance"
    pooling: str = "avg"
    batch_cap: int = 256
    augment: bool = True
    aug: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0
    dtype: str = "float32"

    def validate(self):
        if self.n_models < 1:
            raise ParameterError("n_models must be >= 1")
        if not 0 < self.lr_net <= 1:
            raise ParameterError("lr_net must be in (0, 1]")
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        return self

    def spec_for(self, in_shape, num_classes):
        return ConvNetSpec(
            depth=self.depth,
            width=self.width,
            activation=self.activation,
            norm=self.norm,
            pooling=self.pooling,
            in_shape=tuple(in_shape),
            num_classes=num_classes,
        )

    def hash(self, spec=None):
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        if spec is not None:
            blob += spec.canonical()
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class EvalReport:
    mean_acc: float  # percent
    std_acc: float  # percent, unbiased (n-1)
    per_model: list
    seconds_per_model: list
    config_hash: str
    baseline: str = ""

    @property
    def n_models(self):
        return len(self.per_model)


def train_model(syn, spec, proto, seed):
    """Train one network on the synthetic set; seed may be an int or a
    SeedSequence and fully determines the run."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s_init, s_batch, s_aug = ss.spawn(3)
    dtype = np.dtype(proto.dtype)
    net = Network(spec, s_init, dtype=dtype)
    rng_batch = np.random.default_rng(s_batch)
    rng_aug = np.random.default_rng(s_aug)
    x = np.array(syn.images, dtype=dtype, copy=True)
    y = syn.labels
    n = len(y)
    bs = min(proto.batch_cap, n)
    velocity = {name: np.zeros_like(p) for name, p in net.parameters()}
    wd = dtype.type(proto.weight_decay)
    mom = dtype.type(proto.net_momentum)
    for epoch in range(proto.epochs):
        lr = dtype.type(proto.lr_net * proto.sched_decay ** (epoch // proto.sched_step))
        perm = rng_batch.permutation(n)
        for start in range(0, n, bs):
            bidx = perm[start : start + bs]
            xb = x[bidx]
            yb = y[bidx]
            if proto.augment:
                batch_size = len(xb) if proto.aug.per_image else None
                xb = apply_aug(xb, sample_aug(rng_aug, proto.aug, batch_size=batch_size))
            stack, caches = net.forward(xb, train=True, need_caches=True)
            _, dlogits = softmax_cross_entropy(stack.logits, yb)
            _, grads = net.backward(caches, d_logits=dlogits, need_param_grads=True)
            for name, p in net.parameters():
                g = grads[name] + wd * p
                v = velocity[name]
                v *= mom
                v += g
                p -= lr * v
    return net


def accuracy(net, images, labels, batch=EVAL_BATCH):
    """Top-1 accuracy in percent, computed in eval mode without augmentation."""
    correct = 0
    for start in range(0, len(labels), batch):
        xb = images[start : start + batch]
        logits = net.forward(xb, train=False).logits
        correct += int((logits.argmax(axis=1) == labels[start : start + batch]).sum())
    return 100.0 * correct / len(labels)


def evaluate(syn, test, proto, spec=None):
    """Train proto.n_models fresh networks on syn, test each on the real
    test set, and aggregate. The synthetic set is never mutated."""
    proto.validate()
    k = test.num_classes
    counts = np.bincount(syn.labels, minlength=k)
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise ContractError(f"synthetic set is missing classes {missing}")
    if spec is None:
        spec = proto.spec_for(syn.images.shape[1:], k)
    seeds = np.random.SeedSequence(proto.seed).spawn(proto.n_models)
    per_model = []
    seconds = []
    for ss in seeds:
        t0 = time.perf_counter()
        net = train_model(syn, spec, proto, ss)
        per_model.append(accuracy(net, test.images, test.labels))
        seconds.append(time.perf_counter() - t0)
    mean = float(np.mean(per_model))
    std = float(np.std(per_model, ddof=1)) if len(per_model) > 1 else 0.0
    return EvalReport(
        mean_acc=mean,
        std_acc=std,
        per_model=per_model,
        seconds_per_model=seconds,
        config_hash=proto.hash(spec),
        baseline="random" if syn.origin == "random" else "",
    )


def random_baseline(real, ipc, seed):
    """Frozen per-class random selection; same semantics as synthetic
    initialization, never optimized."""
    syn = init_synthetic(real, ipc, seed)
    syn.origin = "random"
    return syn


def evaluate_sets(syns, test, proto, spec=None):
    """The sets-by-models protocol: evaluate each synthetic set with
    proto.n_models networks and aggregate over all models of all sets
    (e.g. 5 sets x 20 models for the 100-model headline numbers)."""
    if not syns:
        raise ParameterError("need at least one synthetic set")
    per_model = []
    seconds = []
    for i, syn in enumerate(syns):
        rep = evaluate(syn, test, replace(proto, seed=proto.seed + i), spec=spec)
        per_model.extend(rep.per_model)
        seconds.extend(rep.seconds_per_model)
    mean = float(np.mean(per_model))
    std = float(np.std(per_model, ddof=1)) if len(per_model) > 1 else 0.0
    return EvalReport(
        mean_acc=mean,
        std_acc=std,
        per_model=per_model,
        seconds_per_model=seconds,
        config_hash=proto.hash(spec),
        baseline="random" if all(s.origin == "random" for s in syns) else "",
    )


def convergence_curve(checkpoints, test, proto, spec=None):
    """Evaluate a series of (iteration, SyntheticDataset) checkpoints.

    Returns [(iteration, mean_acc)] suitable for plotting."""
    if not checkpoints:
        raise ParameterError("need at least one checkpoint")
    out = []
    for it, syn in checkpoints:
        report = evaluate(syn, test, proto, spec=spec)
        out.append((int(it), report.mean_acc))
    return out


def write_convergence_csv(series, path):
    with open(path, "w") as fh:
        fh.write("iteration,mean_acc\n")
        for it, acc in series:
            fh.write(f"{it},{acc:.4f}\n")
