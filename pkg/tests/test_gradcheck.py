import time

from attndistill.gradcheck import TOLERANCE, run_suites


def test_all_suites_pass_under_tolerance():
    t0 = time.perf_counter()
    results = run_suites()
    elapsed = time.perf_counter() - t0
    names = [name for name, _, _ in results]
    assert names == [
        "spatial", "channel", "both", "mmd",
        "dsa-color", "dsa-crop", "dsa-cutout", "dsa-flip", "dsa-scale", "dsa-rotate",
    ]
    for name, err, ok in results:
        assert ok, f"{name}: {err:.3e} >= {TOLERANCE}"
    assert elapsed < 60.0


def test_injected_error_is_detected():
    results = run_suites(inject_error=True)
    assert any(not ok for _, _, ok in results)
