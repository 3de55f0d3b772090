"""Property checks run by ``pdhash selftest``.

Each check returns a :class:`Check` carrying the observed statistic so the
report shows *how* a property held, not only that it did.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics
from .codec import HashCode, hamming
from .gradcheck import check_case, check_logit_gradient, random_case
from .loss import expected_hamming
from .oracle import (
    analytic_posterior,
    bayes_posterior_bruteforce,
    expected_cross_distance_mc,
    ideal_code,
    map_equivalence_scan,
    random_world,
    sample_family,
)

LEVELS = {
    "fast": dict(posterior_cases=200, family_trials=10_000, eh_pairs=10, eh_draws=10_000,
                 grad_cases=5, hamming_pairs=1_000),
    "full": dict(posterior_cases=1_000, family_trials=100_000, eh_pairs=100, eh_draws=100_000,
                 grad_cases=100, hamming_pairs=10_000),
}


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<28} {self.detail}  ({self.seconds:.2f}s)"


def check_sigmoid_posterior(cases: int, seed: int, sigmoid: Callable | None = None) -> Check:
    """Posterior from the log-likelihood ratio agrees with brute-force Bayes."""
    sigmoid = numerics.stable_sigmoid if sigmoid is None else sigmoid
    rng = numerics.SplitMix64(seed)
    worst = abs(sigmoid(math.log(3.0)) - 0.25)
    done = 0
    while done < cases:
        n_c = int(rng.integers(6)[0]) + 2
        world = random_world(rng, n_c, 5)
        fam = sample_family(rng, n_c, 4)
        p, j = int(rng.integers(world.n_points)[0]), int(rng.integers(fam.n_bits)[0])
        if fam.alpha0[j] == 0 or fam.alpha1[j] == 0 or world.tables[:, p].sum() == 0:
            continue
        x, _ = analytic_posterior(world, fam, p, j)
        q = 1.0 / (1.0 + math.exp(x)) if math.isinf(x) else float(sigmoid(x))
        worst = max(worst, abs(q - bayes_posterior_bruteforce(world, fam, p, j)))
        done += 1
    return Check("posterior-sigmoid", worst <= 1e-12, f"max |q - bayes| = {worst:.3e} over {cases} cases")


def check_map_equivalence() -> Check:
    off = map_equivalence_scan(0.01)
    tie = map_equivalence_scan(0.01, extra_points=[(0.5, 0.5)])
    ok = not off and len(tie) == 1 and (tie[0].sigma, tie[0].threshold_diff) == (1, 0)
    return Check("map-equivalence", ok,
                 f"{len(off)} disagreements off the tie, {len(tie)} with (0.5, 0.5) added")


def check_ideal_distance(trials: int, seed: int, n_bits: int = 48) -> Check:
    rng = numerics.SplitMix64(seed)
    fam = sample_family(rng, 10, n_bits)
    same = hamming(ideal_code(fam, 3), ideal_code(fam, 3))
    mean = expected_cross_distance_mc(rng, 10, n_bits, trials)
    tol = 4.0 * math.sqrt(n_bits / 4.0) / math.sqrt(trials)
    ok = same == 0 and abs(mean - n_bits / 2) <= tol
    return Check("ideal-distance", ok, f"same-class {same}, cross mean {mean:.4f} (target {n_bits / 2} +/- {tol:.4f})")


def check_expected_hamming(pairs: int, draws: int, seed: int) -> Check:
    """Closed form vs Bernoulli sampling, within 4 standard errors."""
    rng = numerics.SplitMix64(seed)
    worst_z = 0.0
    for _ in range(pairs):
        n = int(rng.integers(48)[0]) + 1
        q, qo = rng.uniform(n), rng.uniform(n)
        exact = expected_hamming(q, qo)
        d = (rng.uniform((draws, n)) < q).astype(np.int8) != (rng.uniform((draws, n)) < qo).astype(np.int8)
        dist = d.sum(axis=1)
        se = dist.std(ddof=1) / math.sqrt(draws)
        worst_z = max(worst_z, abs(dist.mean() - exact) / max(se, 1e-300))
    return Check("expected-hamming-mc", worst_z <= 4.0, f"max |z| = {worst_z:.2f} over {pairs} pairs")


def check_gradients(cases: int, seed: int) -> Check:
    rng = numerics.SplitMix64(seed)
    logit_err = max(check_logit_gradient(rng) for _ in range(cases))
    worst, checked, skipped = 0.0, 0, 0
    for _ in range(cases):
        for arch in ("mlp-small", "conv-small"):
            r = check_case(random_case(rng, arch), rng)
            worst = max(worst, r.max_rel_error)
            checked += r.checked
            skipped += r.kinks_skipped
    ok = worst <= 1e-4 and logit_err <= 1e-4
    return Check("gradients", ok, f"logits {logit_err:.2e}, params {worst:.2e} "
                 f"({checked} coords, {skipped} kink stencils skipped)")


def check_packed_hamming(pairs: int, seed: int) -> Check:
    rng = numerics.SplitMix64(seed)
    bad = 0
    for n in (1, 12, 24, 32, 48, 63, 64, 65, 128):
        a, b = rng.bits((pairs, n)), rng.bits((pairs, n))
        naive = (a != b).sum(axis=1)
        for i in range(pairs):
            bad += hamming(HashCode.from_bits(a[i]), HashCode.from_bits(b[i])) != naive[i]
    return Check("packed-hamming", bad == 0, f"{bad} mismatches over {9 * pairs} pairs")


def run_selftest(level: str = "fast", seed: int = 0, sigmoid: Callable | None = None) -> list[Check]:
    """Run every property at the given level. ``sigmoid`` replaces the posterior map (fault injection)."""
    if level not in LEVELS:
        raise ValueError(f"unknown level {level!r}")
    cfg = LEVELS[level]
    jobs = [
        lambda: check_sigmoid_posterior(cfg["posterior_cases"], seed, sigmoid),
        check_map_equivalence,
        lambda: check_ideal_distance(cfg["family_trials"], seed + 1),
        lambda: check_expected_hamming(cfg["eh_pairs"], cfg["eh_draws"], seed + 2),
        lambda: check_gradients(cfg["grad_cases"], seed + 3),
        lambda: check_packed_hamming(cfg["hamming_pairs"], seed + 4),
    ]
    results = []
    for job in jobs:
        t0 = time.perf_counter()
        result = job()
        result.seconds = time.perf_counter() - t0
        results.append(result)
    return results
