import numpy as np
import pytest

from attndistill.data import init_synthetic
from attndistill.errors import ParameterError
from attndistill.evaluate import EvalProtocol
from attndistill.nas import (
    desk_search_space,
    enumerate_search_space,
    rank_on_proxy,
    spearman,
    write_nas_csv,
)
from attndistill.nets import ConvNetSpec


def test_search_space_has_720_unique_specs():
    specs = enumerate_search_space()
    assert len(specs) == 720
    assert len({s.canonical() for s in specs}) == 720


def test_search_space_deterministic_order():
    a = [s.canonical() for s in enumerate_search_space()]
    b = [s.canonical() for s in enumerate_search_space()]
    assert a == b
    assert a[0] == "D1-W32-sigmoid-none-none"
    assert a[-1] == "D4-W256-leakyrelu-group-avg"


def test_restricted_grid_cardinality():
    # 2 x 2 x 1 x 1 x 1 cross product
    specs = [
        ConvNetSpec(d, w, "relu", "instance", "avg", (3, 8, 8), 2)
        for d in (2, 3)
        for w in (32, 64)
    ]
    assert len(specs) == 4
    assert len(desk_search_space((3, 8, 8), 2)) == 8


def test_spearman_identity_and_reversal():
    assert spearman([1, 2, 3, 4], [1, 2, 3, 4]) == 1.0
    assert spearman([1, 2], [2, 1]) == -1.0
    assert spearman([1, 2, 3, 4, 5], [5, 4, 3, 2, 1]) == -1.0


def test_spearman_derived_values():
    # brute-force formula: 1 - 6 sum(d^2) / (n (n^2 - 1))
    assert abs(spearman([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) < 1e-12
    assert abs(spearman([1, 2, 3, 4, 5], [2, 1, 4, 3, 5]) - 0.8) < 1e-12


def test_spearman_relabeling_invariance(rng):
    # depends only on rank pairs: applying one permutation to both
    # rankings' positions leaves rho unchanged
    a = rng.permutation(8) + 1
    b = rng.permutation(8) + 1
    rho = spearman(a, b)
    order = rng.permutation(8)
    assert abs(spearman(a[order], b[order]) - rho) < 1e-12


def test_spearman_input_validation():
    with pytest.raises(ParameterError):
        spearman([1, 2, 3], [1, 2])
    with pytest.raises(ParameterError):
        spearman([1], [1])
    with pytest.raises(ParameterError):
        spearman([1, 2, 2], [1, 2, 3])


def _tiny_proto():
    return EvalProtocol(n_models=1, epochs=8, depth=2, width=32, seed=0)


def test_rank_on_proxy_desk_grid(toy):
    train, test = toy
    proxy = init_synthetic(train, ipc=1, seed=0)
    specs = desk_search_space((3, 8, 8), 2)[:4]
    result = rank_on_proxy(specs, proxy, test, _tiny_proto())
    ok = [r for r in result.records if r["status"] == "ok"]
    assert len(ok) == 4
    assert sorted(r["rank_proxy"] for r in ok) == [1, 2, 3, 4]
    # best accuracy got rank 1
    best = max(ok, key=lambda r: r["proxy_acc"])
    assert best["rank_proxy"] == 1


def test_rank_on_proxy_with_reference_identity(toy):
    train, test = toy
    proxy = init_synthetic(train, ipc=1, seed=0)
    specs = desk_search_space((3, 8, 8), 2)[:3]
    first = rank_on_proxy(specs, proxy, test, _tiny_proto())
    reference = {r["spec"]: r["proxy_acc"] for r in first.records}
    second = rank_on_proxy(specs, proxy, test, _tiny_proto(), reference=reference)
    assert second.spearman_rho == 1.0


def test_rank_on_proxy_records_failures(toy):
    train, test = toy
    proxy = init_synthetic(train, ipc=1, seed=0)
    good = desk_search_space((3, 8, 8), 2)[:2]
    bad = ConvNetSpec(2, 32, "relu", "instance", "avg", (3, 16, 16), 2)  # wrong shape
    result = rank_on_proxy(good + [bad], proxy, test, _tiny_proto())
    statuses = [r["status"] for r in result.records]
    assert statuses[0] == "ok" and statuses[1] == "ok"
    assert statuses[2].startswith("failed")
    assert result.records[2]["rank_proxy"] is None
    ranks = [r["rank_proxy"] for r in result.records if r["rank_proxy"] is not None]
    assert sorted(ranks) == [1, 2]


def test_rank_on_proxy_empty_rejected(toy):
    train, test = toy
    proxy = init_synthetic(train, ipc=1, seed=0)
    with pytest.raises(ParameterError):
        rank_on_proxy([], proxy, test, _tiny_proto())


def test_nas_csv_output(toy, tmp_path):
    train, test = toy
    proxy = init_synthetic(train, ipc=1, seed=0)
    specs = desk_search_space((3, 8, 8), 2)[:2]
    result = rank_on_proxy(specs, proxy, test, _tiny_proto())
    path = tmp_path / "nas.csv"
    write_nas_csv(result, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "spec,proxy_acc,ref_acc,rank_proxy,rank_ref,status"
    assert len(lines) == 4  # header + 2 specs + summary
    assert lines[-1].startswith("summary")
