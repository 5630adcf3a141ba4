"""Architecture search with a distilled proxy set.

Enumerates the ConvNet grid, trains each candidate on the proxy,
ranks by validation accuracy, and scores the ranking against a
reference with Spearman's rank correlation. Failed candidates are
recorded and excluded from the correlation, never ranked.
"""

import csv
import time
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .evaluate import evaluate
from .nets import ACTIVATIONS, DEPTHS, NORMS, POOLINGS, WIDTHS, ConvNetSpec

RANK_TIE_GRANULARITY = 1e-6


def enumerate_search_space(in_shape=(3, 32, 32), num_classes=10):
    """The full 720-point grid in canonical (depth, width, activation,
    norm, pooling) order."""
    specs = []
    for d in DEPTHS:
        for w in WIDTHS:
            for a in ACTIVATIONS:
                for n in NORMS:
                    for p in POOLINGS:
                        specs.append(
                            ConvNetSpec(
                                depth=d, width=w, activation=a, norm=n, pooling=p,
                                in_shape=in_shape, num_classes=num_classes,
                            )
                        )
    return specs


def desk_search_space(in_shape, num_classes):
    """Reduced 8-point grid for desk-scale runs: depth {2,3} x width
    {32,64} x relu x {instance,none} x avg."""
    specs = []
    for d in (2, 3):
        for w in (32, 64):
            for n in ("instance", "none"):
                specs.append(
                    ConvNetSpec(
                        depth=d, width=w, activation="relu", norm=n, pooling="avg",
                        in_shape=in_shape, num_classes=num_classes,
                    )
                )
    return specs


def spearman(rank_a, rank_b):
    """1 - 6 sum(d^2) / (n (n^2 - 1)) over two rank permutations."""
    a = np.asarray(rank_a, dtype=np.int64)
    b = np.asarray(rank_b, dtype=np.int64)
    if a.shape != b.shape:
        raise ParameterError(f"rank length mismatch: {a.shape} vs {b.shape}")
    n = len(a)
    if n < 2:
        raise ParameterError("need at least 2 ranks")
    expected = np.arange(1, n + 1)
    if not np.array_equal(np.sort(a), expected) or not np.array_equal(np.sort(b), expected):
        raise ParameterError("ranks must each be a permutation of 1..n (resolve ties first)")
    d = a - b
    return 1.0 - 6.0 * float(d @ d) / (n * (n * n - 1))


def _dense_ranks(accuracies):
    """Ranks 1..n, best accuracy first; accuracies compared at 1e-6
    granularity with ties broken by list position (canonical order)."""
    keyed = [
        (-round(acc / RANK_TIE_GRANULARITY), i) for i, acc in enumerate(accuracies)
    ]
    order = sorted(range(len(keyed)), key=lambda i: keyed[i])
    ranks = [0] * len(keyed)
    for rank, i in enumerate(order, start=1):
        ranks[i] = rank
    return ranks


@dataclass
class NasResult:
    records: list  # dicts: spec, proxy_acc, ref_acc, rank_proxy, rank_ref, status
    spearman_rho: float | None
    total_seconds: float


def rank_on_proxy(specs, proxy, val, proto, reference=None):
    """Train every spec on the proxy set, rank by accuracy on val, and
    correlate with the reference ranking when reference accuracies
    (dict keyed by canonical spec string) are supplied."""
    if not specs:
        raise ParameterError("empty search space")
    t0 = time.perf_counter()
    records = []
    for spec in specs:
        rec = {
            "spec": spec.canonical(),
            "proxy_acc": None,
            "ref_acc": None,
            "rank_proxy": None,
            "rank_ref": None,
            "status": "ok",
        }
        try:
            report = evaluate(proxy, val, proto, spec=spec)
            rec["proxy_acc"] = report.mean_acc
        except Exception as e:  # record and continue with the rest of the grid
            rec["status"] = f"failed: {e}"
        records.append(rec)

    ok = [r for r in records if r["status"] == "ok"]
    for r, rank in zip(ok, _dense_ranks([r["proxy_acc"] for r in ok])):
        r["rank_proxy"] = rank

    rho = None
    if reference:
        common = [r for r in ok if r["spec"] in reference]
        for r in common:
            r["ref_acc"] = reference[r["spec"]]
        if len(common) >= 2:
            proxy_ranks = _dense_ranks([r["proxy_acc"] for r in common])
            ref_ranks = _dense_ranks([r["ref_acc"] for r in common])
            for r, rp, rr in zip(common, proxy_ranks, ref_ranks):
                r["rank_ref"] = rr
            rho = spearman(proxy_ranks, ref_ranks)
    return NasResult(
        records=records,
        spearman_rho=rho,
        total_seconds=time.perf_counter() - t0,
    )


def write_nas_csv(result, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["spec", "proxy_acc", "ref_acc", "rank_proxy", "rank_ref", "status"])
        for r in result.records:
            writer.writerow(
                [
                    r["spec"],
                    "" if r["proxy_acc"] is None else f"{r['proxy_acc']:.4f}",
                    "" if r["ref_acc"] is None else f"{r['ref_acc']:.4f}",
                    "" if r["rank_proxy"] is None else r["rank_proxy"],
                    "" if r["rank_ref"] is None else r["rank_ref"],
                    r["status"],
                ]
            )
        rho = "" if result.spearman_rho is None else f"{result.spearman_rho:.4f}"
        writer.writerow(["summary", "", "", "", rho, f"total_s={result.total_seconds:.2f}"])
