"""Acceptance criteria 1-9, one test each.

Every test prints a ``PASS``/``FAIL``/``BLOCKED`` line and the lines are
repeated in the terminal summary. Criterion 8 needs the MNIST IDX files in the
directory named by ``PDH_MNIST_DIR``; without them it is reported as BLOCKED.
"""
import contextlib
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from pdhash import cli
from pdhash.codec import CodeBook, HashCode, hamming, pack_bits, search_topk
from pdhash.data import find_mnist
from pdhash.evaluation import parse_keyvalue
from pdhash.numerics import SplitMix64
from pdhash.oracle import (
    analytic_posterior,
    bayes_posterior_bruteforce,
    expected_cross_distance_mc,
    ideal_code,
    map_equivalence_scan,
    random_world,
    sample_family,
)
from pdhash.selftest import check_expected_hamming, check_gradients

RESULTS: dict[int, str] = {}


@pytest.fixture
def report(capsys):
    def emit(number: int, passed, detail: str):
        status = passed if isinstance(passed, str) else ("PASS" if passed else "FAIL")
        line = f"criterion {number}: {status}  {detail}"
        RESULTS[number] = line
        with capsys.disabled():
            print(f"\n{line}")
        return passed

    return emit


def test_criterion_1_map_equivalence(report):
    t0 = time.perf_counter()
    off = map_equivalence_scan(0.01)
    tie = map_equivalence_scan(0.01, extra_points=[(0.5, 0.5)])
    secs = time.perf_counter() - t0
    ok = (off == [] and len(tie) == 1 and (tie[0].sigma, tie[0].threshold_diff) == (1, 0) and secs < 1.0)
    assert report(1, ok, f"{len(off)} disagreements on the 0.01 grid; (0.5, 0.5) gives "
                         f"{len(tie)} (sigma=1, diff=0); {secs:.3f}s")


def test_criterion_2_posterior_chain(report):
    t0 = time.perf_counter()
    rng = SplitMix64(2)
    worst, done = 0.0, 0
    while done < 1000:
        n_c = int(rng.integers(7)[0]) + 2
        world, fam = random_world(rng, n_c, 6), sample_family(rng, n_c, 5)
        p, j = int(rng.integers(6)[0]), int(rng.integers(5)[0])
        if fam.alpha0[j] == 0 or fam.alpha1[j] == 0 or world.tables[:, p].sum() == 0:
            continue
        _, q = analytic_posterior(world, fam, p, j)
        worst = max(worst, abs(q - bayes_posterior_bruteforce(world, fam, p, j)))
        done += 1
    secs = time.perf_counter() - t0
    assert report(2, worst <= 1e-12 and secs < 10, f"max |analytic - bayes| = {worst:.2e} over 1000 tuples; {secs:.2f}s")


def test_criterion_3_ideal_distance(report):
    t0 = time.perf_counter()
    rng = SplitMix64(3)
    fam = sample_family(rng, 10, 48)
    same = max(hamming(ideal_code(fam, c), ideal_code(fam, c)) for c in range(10))
    trials = 100_000
    mean = expected_cross_distance_mc(rng, 10, 48, trials)
    tol = 4 * math.sqrt(48 / 4) / math.sqrt(trials)
    secs = time.perf_counter() - t0
    ok = same == 0 and abs(mean - 24) <= tol and secs < 30
    assert report(3, ok, f"same-class 0; cross mean {mean:.4f} (24 +/- {tol:.4f}); {secs:.2f}s")


def test_criterion_4_expected_hamming(report):
    result = check_expected_hamming(pairs=100, draws=100_000, seed=4)
    assert report(4, result.passed, result.detail)


def test_criterion_5_gradients(report):
    t0 = time.perf_counter()
    result = check_gradients(cases=100, seed=5)
    assert report(5, result.passed, f"{result.detail}; 100 configs per preset; {time.perf_counter() - t0:.1f}s")


def test_criterion_6_retrieval(report):
    rng = SplitMix64(6)
    count = 10_000
    bits = rng.bits((count, 48))
    ids = np.arange(count)[np.argsort(rng.uniform(count))]
    book = CodeBook(48, ids, ids % 10, pack_bits(bits))
    mismatches = 0
    for _ in range(20):
        qbits = rng.bits(48)
        naive = (bits != qbits).sum(axis=1)
        oracle = sorted(zip(naive.tolist(), ids.tolist()))
        for k in (1, 10, 100):
            got = [(nb.distance, nb.id) for nb in search_topk(book, HashCode.from_bits(qbits), k)]
            mismatches += got != oracle[:k]
    bad_pop = 0
    for n in (1, 12, 24, 32, 48, 63, 64, 65, 128):
        for _ in range(500):
            a, b = rng.bits(n), rng.bits(n)
            loop = sum(1 for j in range(n) if a[j] != b[j])
            bad_pop += hamming(HashCode.from_bits(a), HashCode.from_bits(b)) != loop
    assert report(6, mismatches == 0 and bad_pop == 0,
                  f"top-k mismatches {mismatches}/60, popcount mismatches {bad_pop}/4500")


@contextlib.contextmanager
def inside(d: Path):
    """Run from ``d`` with relative paths so manifests do not embed the location."""
    d.mkdir(parents=True, exist_ok=True)
    old = os.getcwd()
    os.chdir(d)
    try:
        yield Path(".")
    finally:
        os.chdir(old)


def run_steps(steps):
    for argv in steps:
        assert cli.main([str(a) for a in argv]) == 0


def synth_run(where: Path) -> dict:
    with inside(where) as d:
        return _synth_steps(d)


def _synth_steps(d: Path) -> dict:
    steps = [
        ["synth", "--classes", 10, "--per-class", 200, "--dim", 2, "--spread", 10, "--seed", 1, "--out", d / "train.pdhd"],
        ["synth", "--classes", 10, "--per-class", 50, "--dim", 2, "--spread", 10, "--seed", 2, "--out", d / "test.pdhd"],
        ["train", "--data", d / "train.pdhd", "--arch", "mlp-small", "--bits", 12, "--seed", 0, "--out-model", d / "m.pdhm"],
        ["encode", "--model", d / "m.pdhm", "--data", d / "train.pdhd", "--out-codes", d / "gallery.pdhc"],
        ["encode", "--model", d / "m.pdhm", "--data", d / "test.pdhd", "--out-codes", d / "query.pdhc"],
        ["eval", "--gallery-codes", d / "gallery.pdhc", "--query-codes", d / "query.pdhc",
         "--k-list", "100,200,400,600,800,1000", "--out", d / "report.txt"],
    ]
    run_steps(steps)
    return parse_keyvalue((d / "report.txt").read_text())


@pytest.mark.slow
def test_criterion_7_synth_training(report, tmp_path):
    t0 = time.perf_counter()
    kv = synth_run(tmp_path / "run")
    secs = time.perf_counter() - t0
    m = float(kv["map"])
    assert report(7, m >= 0.95 and secs < 300, f"mAP {m:.4f} (chance 0.10, need >= 0.95); {secs:.1f}s")


def mnist_dir():
    d = os.environ.get("PDH_MNIST_DIR")
    if d and find_mnist(d, "train") and find_mnist(d, "test"):
        return Path(d)
    return None


def mnist_run(src: Path, where: Path) -> dict:
    with inside(where) as d:
        return _mnist_steps(src.resolve(), d)


def _mnist_steps(src: Path, d: Path) -> dict:
    train = ",".join(map(str, find_mnist(src, "train")))
    test = ",".join(map(str, find_mnist(src, "test")))
    steps = [
        ["train", "--data", train, "--per-class", 1000, "--arch", "conv-small", "--bits", 12,
         "--lr", "1e-4", "--momentum", "0.9", "--epochs", 10, "--seed", 0, "--out-model", d / "m.pdhm"],
        ["encode", "--model", d / "m.pdhm", "--data", train, "--per-class", 1000, "--out-codes", d / "gallery.pdhc"],
        ["encode", "--model", d / "m.pdhm", "--data", test, "--per-class", 200, "--out-codes", d / "query.pdhc"],
        ["eval", "--gallery-codes", d / "gallery.pdhc", "--query-codes", d / "query.pdhc",
         "--k-list", "100,200,300,400,500,600,700,800,900,1000", "--out", d / "report.txt"],
    ]
    for argv in steps:
        assert cli.main([str(a) for a in argv]) == 0
    return parse_keyvalue((d / "report.txt").read_text())


@pytest.mark.slow
def test_criterion_8_mnist_subset(report, tmp_path):
    src = mnist_dir()
    if src is None:
        report(8, "BLOCKED", "MNIST IDX files not found; set PDH_MNIST_DIR to a directory holding them")
        pytest.skip("MNIST not available offline (set PDH_MNIST_DIR)")
    t0 = time.perf_counter()
    kv = mnist_run(src, tmp_path / "run")
    secs = time.perf_counter() - t0
    m = float(kv["map"])
    p100 = float(kv["p_at_100"])
    spread = max(abs(float(v) - p100) for k, v in kv.items() if k.startswith("p_at_"))
    ok = m >= 0.85 and spread <= 0.05 and secs < 1800
    assert report(8, ok, f"mAP {m:.4f} (need >= 0.85), max |p@k - p@100| = {spread:.4f}; {secs:.0f}s")


def same_bytes(a: Path, b: Path, names) -> list[str]:
    return [n for n in names if (a / n).read_bytes() != (b / n).read_bytes()]


@pytest.mark.slow
def test_criterion_9_determinism(report, tmp_path):
    names = ["train.pdhd", "m.pdhm", "m.pdhm.loss.txt", "gallery.pdhc", "query.pdhc", "report.txt",
             "m.pdhm.manifest.json", "report.txt.manifest.json"]
    synth_run(tmp_path / "a")
    synth_run(tmp_path / "b")
    diff = same_bytes(tmp_path / "a", tmp_path / "b", names)
    src = mnist_dir()
    scope = "synthetic run"
    if src is not None:
        mnist_run(src, tmp_path / "ma")
        mnist_run(src, tmp_path / "mb")
        diff += same_bytes(tmp_path / "ma", tmp_path / "mb", ["m.pdhm", "gallery.pdhc", "query.pdhc", "report.txt",
                                                                  "m.pdhm.manifest.json"])
        scope = "synthetic and MNIST runs"
    else:
        scope += " (MNIST half blocked)"
    assert report(9, not diff, f"{len(names)} files byte-identical across reruns of the {scope}"
                  if not diff else f"differing files: {diff}")
