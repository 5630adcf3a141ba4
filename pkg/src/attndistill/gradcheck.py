"""Finite-difference verification of every hand-derived gradient path.

Each suite compares the analytic gradient of a scalar objective with
central finite differences at double precision on tiny fixtures (1-block
nets, 4x4 inputs). The relative error is the max-abs deviation over the
max-abs gradient magnitude. All augmentation ops are checked at a fixed
interior draw.
"""

import numpy as np

from .augment import AugParams, apply_aug, apply_aug_fwd, apply_aug_vjp
from .losses import attention_matching_loss, mmd_term
from .nets import ConvNetSpec, Network

TOLERANCE = 1e-4
FD_STEP = 1e-5

# drawn away from every boundary so interpolation stays interior
_FIXED_DRAWS = {
    "color": {"brightness": 0.17, "saturation": 1.32, "contrast": 1.08},
    "crop": {"uy": 0.37, "ux": 0.61, "pad": 0.125},
    "cutout": {"uy": 0.41, "ux": 0.23, "ratio": 0.5},
    "flip": {"flip": True},
    "scale": {"sy": 1.08, "sx": 0.93},
    "rotate": {"angle_deg": 7.3},
}


def finite_difference(fn, x, h=FD_STEP):
    """Central-difference gradient of scalar fn at x, elementwise."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + h
        fp = fn(x)
        xf[i] = orig - h
        fm = fn(x)
        xf[i] = orig
        flat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic, numeric):
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


def _loss_fixture(seed=7):
    """1-block double-precision net plus fixed real/synthetic batches."""
    rng = np.random.default_rng(seed)
    spec = ConvNetSpec(
        depth=1, width=32, activation="relu", norm="instance", pooling="avg",
        in_shape=(3, 4, 4), num_classes=2,
    )
    net = Network(spec, seed=seed + 1, dtype=np.float64)
    x_real = rng.normal(0.0, 1.0, size=(3, 3, 4, 4))
    x_syn = rng.normal(0.0, 1.0, size=(2, 3, 4, 4))
    stack_real = net.forward(x_real)
    return net, stack_real, x_syn


def check_attention_mode(mode, inject_error=False):
    net, stack_real, x_syn = _loss_fixture()

    def objective(x):
        stack = net.forward(x)
        loss, _ = attention_matching_loss(stack_real, stack, 4.0, 4.0, mode)
        return loss

    stack, caches = net.forward(x_syn, need_caches=True)
    _, _, d_layers = attention_matching_loss(
        stack_real, stack, 4.0, 4.0, mode, want_grads=True
    )
    analytic = net.backward(caches, d_per_layer=d_layers)
    if inject_error:
        analytic = analytic.copy()
        analytic.reshape(-1)[0] += 1e-2
    numeric = finite_difference(objective, x_syn.copy())
    return relative_error(analytic, numeric)


def check_mmd(inject_error=False):
    net, stack_real, x_syn = _loss_fixture()

    def objective(x):
        stack = net.forward(x)
        return mmd_term(stack_real.final_embedding, stack.final_embedding)[0]

    stack, caches = net.forward(x_syn, need_caches=True)
    _, d_embed = mmd_term(stack_real.final_embedding, stack.final_embedding)
    analytic = net.backward(caches, d_embed=d_embed)
    if inject_error:
        analytic = analytic.copy()
        analytic.reshape(-1)[0] += 1e-2
    numeric = finite_difference(objective, x_syn.copy())
    return relative_error(analytic, numeric)


def check_aug_op(op, inject_error=False):
    rng = np.random.default_rng(11)
    x = rng.normal(0.0, 1.0, size=(2, 3, 8, 8))
    params = AugParams(op=op, draws=dict(_FIXED_DRAWS[op]), per_image=False)

    def objective(xv):
        return float(apply_aug(xv, params).sum())

    out, cache = apply_aug_fwd(x, params)
    analytic = apply_aug_vjp(np.ones_like(out), cache)
    if inject_error:
        analytic = analytic.copy()
        analytic.reshape(-1)[0] += 1e-2
    numeric = finite_difference(objective, x.copy())
    return relative_error(analytic, numeric)


def run_suites(inject_error=False):
    """All gradient suites; returns [(name, max_rel_err, passed)]."""
    results = []
    for mode in ("spatial", "channel", "both"):
        err = check_attention_mode(mode, inject_error=inject_error)
        results.append((mode, err, err < TOLERANCE))
    err = check_mmd(inject_error=inject_error)
    results.append(("mmd", err, err < TOLERANCE))
    for op in ("color", "crop", "cutout", "flip", "scale", "rotate"):
        err = check_aug_op(op, inject_error=inject_error)
        results.append((f"dsa-{op}", err, err < TOLERANCE))
    return results
