"""Operator command line: distill / eval / nas / export-images / gradcheck.

Every run writes a manifest (resolved config, dataset fingerprint,
seeds, backend, code version) into its output directory before compute
starts, so a finished directory is self-describing and reproducible.

Exit codes: 0 success, 2 invalid config, 3 diverged run, 4 preprocessing
mismatch or missing preprocess record, 5 gradient check failure.
"""

import argparse
import csv
import datetime
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__, backend
from .config import load_config
from .container import load_synthetic, save_synthetic
from .data import invert_preprocess, load_dataset, trim_to_synthetic
from .engine import distill, resume_checkpoint
from .errors import (
    AttnDistillError,
    ConfigError,
    ContractError,
    DivergenceError,
)
from .evaluate import evaluate
from .gradcheck import TOLERANCE, run_suites
from .nas import desk_search_space, enumerate_search_space, rank_on_proxy, write_nas_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_PREPROCESS = 4
EXIT_GRADCHECK = 5

METRICS_HEADER = ["iter", "attn", "mmd", "total", "step_ms"]


def _write_manifest(out_dir, command, settings, dataset_fp, seeds, outputs, argv=None):
    manifest = {
        "command": command,
        "command_line": argv,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "code_version": __version__,
        "backend": backend.backend_name(),
        "precision": {"run": settings.distill.dtype, "gradcheck": "float64"},
        "config": settings.to_dict(),
        "config_hash": settings.distill.hash(),
        "dataset_fingerprint": dataset_fp,
        "seeds": seeds,
        "outputs": outputs,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def _load_data(settings, out_dir=None):
    cache = os.path.join(out_dir, "cache") if out_dir else None
    return load_dataset(
        settings.dataset,
        settings.root,
        preprocess=settings.preprocess,
        zca_eps=settings.zca_eps,
        cache_dir=cache,
    )


def cmd_distill(args):
    settings = load_config(args.config)
    if args.seed is not None:
        settings.distill.seed = args.seed
    cfg = settings.distill
    os.makedirs(args.out, exist_ok=True)
    ckpt_dir = os.path.join(args.out, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    train, _ = _load_data(settings, args.out)

    syn_path = os.path.join(args.out, "synthetic.bin")
    metrics_path = os.path.join(args.out, "metrics.csv")
    argv = ["attndistill", "distill", "--config", args.config, "--out", args.out,
            "--seed", str(cfg.seed)]
    if args.resume:
        argv += ["--resume", args.resume]
    _write_manifest(
        args.out,
        "distill",
        settings,
        train.fingerprint(),
        {"distill": cfg.seed, "evaluation": settings.eval_proto.seed},
        {"synthetic": syn_path, "metrics": metrics_path, "checkpoints": ckpt_dir},
        argv=argv,
    )

    state = None
    if args.resume:
        state = resume_checkpoint(args.resume, cfg, train)
        print(f"resumed from {args.resume} at iteration {state.iteration}")

    # append-only: resuming into the same run directory keeps earlier rows
    fresh = not (os.path.exists(metrics_path) and os.path.getsize(metrics_path) > 0)
    with open(metrics_path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(METRICS_HEADER)

        def on_step(st, breakdown, step_ms):
            writer.writerow(
                [
                    st.iteration,
                    f"{breakdown.attn:.8e}",
                    f"{breakdown.mmd:.8e}",
                    f"{breakdown.total:.8e}",
                    f"{step_ms:.3f}",
                ]
            )

        syn, metrics = distill(
            cfg, train, state=state, on_step=on_step, checkpoint_dir=ckpt_dir
        )
    save_synthetic(syn, syn_path)
    if metrics:
        last = metrics[-1][1]
        print(
            f"distilled {syn.images.shape[0]} images in {len(metrics)} steps "
            f"(final loss {last.total:.6f}) -> {syn_path}"
        )
    else:
        print(f"iterations=0: wrote initialization unchanged -> {syn_path}")
    return EXIT_OK


def cmd_eval(args):
    settings = load_config(args.config)
    syn = load_synthetic(args.synthetic)
    _, test = _load_data(settings, args.out)
    if syn.preprocess is None or test.preprocess is None or not syn.preprocess.matches(
        test.preprocess
    ):
        print("error: synthetic container and dataset preprocessing differ", file=sys.stderr)
        return EXIT_PREPROCESS
    report = evaluate(syn, test, settings.eval_proto)
    print(
        f"accuracy: {report.mean_acc:.2f} ± {report.std_acc:.2f} % "
        f"over {report.n_models} models"
    )
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        row_path = os.path.join(args.out, "report.csv")
        with open(row_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["acc_mean", "acc_std", "n_models", "baseline"])
            writer.writerow(
                [f"{report.mean_acc:.4f}", f"{report.std_acc:.4f}", report.n_models,
                 report.baseline]
            )
        with open(os.path.join(args.out, "report.json"), "w") as fh:
            json.dump(
                {
                    "mean_acc": report.mean_acc,
                    "std_acc": report.std_acc,
                    "per_model": report.per_model,
                    "seconds_per_model": report.seconds_per_model,
                    "config_hash": report.config_hash,
                    "baseline": report.baseline,
                },
                fh,
                indent=2,
            )
    return EXIT_OK


def cmd_nas(args):
    settings = load_config(args.config)
    proxy = load_synthetic(args.synthetic)
    train, test = _load_data(settings, args.out)
    if proxy.preprocess is None or not proxy.preprocess.matches(test.preprocess):
        print("error: proxy container and dataset preprocessing differ", file=sys.stderr)
        return EXIT_PREPROCESS
    os.makedirs(args.out, exist_ok=True)

    shape = train.image_shape
    k = train.num_classes
    if settings.nas["grid"] == "full":
        specs = enumerate_search_space(shape, k)
    else:
        specs = desk_search_space(shape, k)
    proto = replace(
        settings.eval_proto,
        n_models=settings.nas["n_models"],
        epochs=settings.nas["epochs"] or settings.eval_proto.epochs,
    )

    reference = None
    ref_mode = settings.nas["reference"]
    if ref_mode == "train-real":
        full = trim_to_synthetic(train)
        reference = {}
        for spec in specs:
            reference[spec.canonical()] = evaluate(full, test, proto, spec=spec).mean_acc
    elif ref_mode not in ("", "none"):
        with open(ref_mode) as fh:
            reference = {
                row["spec"]: float(row["acc"]) for row in csv.DictReader(fh)
            }

    result = rank_on_proxy(specs, proxy, test, proto, reference=reference)
    csv_path = os.path.join(args.out, "nas_results.csv")
    write_nas_csv(result, csv_path)
    rho = "n/a" if result.spearman_rho is None else f"{result.spearman_rho:.4f}"
    print(
        f"ranked {len(specs)} specs in {result.total_seconds:.1f}s, "
        f"spearman rho = {rho} -> {csv_path}"
    )
    return EXIT_OK


def _to_uint8(img):
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def _save_png(arr_chw, path):
    from PIL import Image

    c = arr_chw.shape[0]
    if c == 1:
        Image.fromarray(arr_chw[0], mode="L").save(path)
    elif c == 3:
        Image.fromarray(arr_chw.transpose(1, 2, 0), mode="RGB").save(path)
    else:
        raise ContractError(f"cannot export {c}-channel images as PNG")


def cmd_export_images(args):
    syn = load_synthetic(args.synthetic)
    if syn.preprocess is None:
        print("error: container carries no preprocess record", file=sys.stderr)
        return EXIT_PREPROCESS
    os.makedirs(args.out, exist_ok=True)
    raw = np.clip(invert_preprocess(syn.preprocess, syn.images.astype(np.float64)), 0.0, 1.0)
    count = 0
    for k in range(syn.num_classes):
        idx = syn.class_slice(k)
        tiles = []
        for j, i in enumerate(idx):
            img = _to_uint8(raw[i])
            _save_png(img, os.path.join(args.out, f"class{k}_idx{j}.png"))
            tiles.append(img)
            count += 1
        _save_png(_montage(tiles), os.path.join(args.out, f"montage_class{k}.png"))
    print(f"exported {count} images + {syn.num_classes} montages -> {args.out}")
    return EXIT_OK


def _montage(tiles, cols=10, pad=2):
    c, h, w = tiles[0].shape
    cols = min(cols, len(tiles))
    rows = math.ceil(len(tiles) / cols)
    canvas = np.zeros(
        (c, rows * h + (rows - 1) * pad, cols * w + (cols - 1) * pad), dtype=np.uint8
    )
    for i, tile in enumerate(tiles):
        r, col = divmod(i, cols)
        y, x = r * (h + pad), col * (w + pad)
        canvas[:, y : y + h, x : x + w] = tile
    return canvas


def cmd_gradcheck(args):
    results = run_suites(inject_error=args.inject_error)
    failing = []
    for name, err, ok in results:
        print(f"{name:12s} max_rel_err={err:.3e}  tol={TOLERANCE:.0e}  "
              f"{'PASS' if ok else 'FAIL'}")
        if not ok:
            failing.append(name)
    if failing:
        print(f"gradient check FAILED for: {', '.join(failing)}", file=sys.stderr)
        return EXIT_GRADCHECK
    print("all gradient suites passed")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="attndistill",
        description="Attention-matching dataset distillation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("distill", help="learn a synthetic set from a real dataset")
    p.add_argument("--config", required=True, help="INI config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", help="train fresh models on a synthetic set and test")
    p.add_argument("--synthetic", required=True, help="synthetic container path")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="where to write the report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("nas", help="rank the architecture grid on a proxy set")
    p.add_argument("--synthetic", required=True, help="proxy synthetic container")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_nas)

    p = sub.add_parser("export-images", help="export synthetic images as PNGs")
    p.add_argument("--synthetic", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_images)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument(
        "--inject-error",
        action="store_true",
        help="negative control: corrupt one gradient and expect failure",
    )
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as e:
        print(f"run diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except ContractError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PREPROCESS
    except AttnDistillError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
