"""Exact, enumerable versions of the probabilistic model behind the hash codes.

Ideal hash families assign every class to side 0 or side 1 of each bit by a
fair coin. On a finite :class:`DiscreteWorld` the class-conditional tables
``D_i(p)`` are known, so the per-bit posterior can be computed both from the
closed-form log-likelihood ratio and by brute-force enumeration of the joint
distribution. These functions are ground truth for the property tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .codec import HashCode, pack_bits
from .numerics import SplitMix64, stable_sigmoid


class EmptyFamilySide(ValueError):
    """A bit's family puts every class on the same side."""


class ZeroProbabilityPoint(ValueError):
    """No class assigns mass to the point."""


@dataclass(frozen=True)
class IdealFamily:
    flags: np.ndarray  # (N_c, n) of 0/1; flags[i, j] == 1 iff class i is on side 1 of bit j

    def __post_init__(self):
        flags = np.asarray(self.flags, dtype=np.uint8)
        if flags.ndim != 2 or np.any(flags > 1):
            raise ValueError("flags must be a 0/1 matrix of shape (N_c, n)")
        object.__setattr__(self, "flags", flags)

    @property
    def n_classes(self) -> int:
        return self.flags.shape[0]

    @property
    def n_bits(self) -> int:
        return self.flags.shape[1]

    @property
    def alpha1(self) -> np.ndarray:
        return self.flags.sum(axis=0).astype(np.int64)

    @property
    def alpha0(self) -> np.ndarray:
        return self.n_classes - self.alpha1

    def empty_sides(self) -> list[int]:
        """Bits whose family leaves one side empty."""
        return [int(j) for j in np.flatnonzero((self.alpha0 == 0) | (self.alpha1 == 0))]


@dataclass(frozen=True)
class DiscreteWorld:
    tables: np.ndarray  # (N_c, |P|); row i is D_i over the finite point set

    def __post_init__(self):
        t = np.asarray(self.tables, dtype=np.float64)
        if t.ndim != 2 or np.any(t < 0):
            raise ValueError("tables must be a nonnegative (N_c, |P|) array")
        if not np.allclose(t.sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise ValueError("each class table must sum to 1")
        object.__setattr__(self, "tables", t)

    @property
    def n_classes(self) -> int:
        return self.tables.shape[0]

    @property
    def n_points(self) -> int:
        return self.tables.shape[1]


def random_world(rng: SplitMix64, n_classes: int, n_points: int, zero_frac: float = 0.2) -> DiscreteWorld:
    """Random class tables; roughly ``zero_frac`` of entries are exact zeros."""
    w = rng.uniform((n_classes, n_points))
    w[rng.uniform((n_classes, n_points)) < zero_frac] = 0.0
    empty = w.sum(axis=1) == 0
    w[empty, 0] = 1.0
    return DiscreteWorld(w / w.sum(axis=1, keepdims=True))


def world_from_mixture(description: dict, points) -> DiscreteWorld:
    """Restrict a Gaussian blob mixture (as written by ``synth``) to a finite point set."""
    centers = np.asarray(description["centers"], dtype=np.float64)
    std = float(description["std"])
    pts = np.asarray(points, dtype=np.float64).reshape(len(points), -1)
    sq = ((pts[None, :, :] - centers[:, None, :]) ** 2).sum(axis=2)
    logd = -sq / (2.0 * std * std)
    logd -= logd.max(axis=1, keepdims=True)
    d = np.exp(logd)
    return DiscreteWorld(d / d.sum(axis=1, keepdims=True))


def sample_family(rng: SplitMix64, n_classes: int, n_bits: int) -> IdealFamily:
    if n_classes < 1 or n_bits < 1:
        raise ValueError("need n_classes >= 1 and n_bits >= 1")
    return IdealFamily(rng.bits((n_classes, n_bits)))


def ideal_code(fam: IdealFamily, class_index: int) -> HashCode:
    """The ideal code of a class (0-based index): bit j is its side for bit j."""
    if not 0 <= class_index < fam.n_classes:
        raise IndexError(f"class {class_index} out of range [0, {fam.n_classes})")
    return HashCode.from_bits(fam.flags[class_index])


def expected_cross_distance_mc(
    rng: SplitMix64, n_classes: int, n_bits: int, trials: int,
    class_a: int = 0, class_b: int = 1, chunk: int = 8192,
) -> float:
    """Monte Carlo mean ideal distance between two classes over fresh families."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not (0 <= class_a < n_classes and 0 <= class_b < n_classes):
        raise IndexError("class index out of range")
    total = 0
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        flags = rng.bits((m, n_classes, n_bits))
        words = pack_bits(flags)  # (m, N_c, words)
        total += int(np.bitwise_count(words[:, class_a] ^ words[:, class_b]).sum())
        done += m
    return total / trials


def _check_bit(world: DiscreteWorld, fam: IdealFamily, point: int, bit: int) -> None:
    if world.n_classes != fam.n_classes:
        raise ValueError("world and family disagree on the number of classes")
    if not 0 <= point < world.n_points:
        raise IndexError(f"point {point} out of range")
    if not 0 <= bit < fam.n_bits:
        raise IndexError(f"bit {bit} out of range")
    if fam.alpha0[bit] == 0 or fam.alpha1[bit] == 0:
        raise EmptyFamilySide(f"bit {bit} has an empty family side")


def analytic_posterior(world: DiscreteWorld, fam: IdealFamily, point: int, bit: int) -> tuple[float, float]:
    """Closed-form log-likelihood ratio ``x`` and posterior ``q = 1/(1+e^x)``.

    ``x = log(alpha1 * sum_{side 0} D) - log(alpha0 * sum_{side 1} D)``; the
    infinite limits give ``q = 0`` or ``q = 1`` exactly.
    """
    _check_bit(world, fam, point, bit)
    d = world.tables[:, point]
    t = fam.flags[:, bit].astype(np.float64)
    num = fam.alpha1[bit] * float(np.sum(d * (1.0 - t)))
    den = fam.alpha0[bit] * float(np.sum(d * t))
    if num == 0.0 and den == 0.0:
        raise ZeroProbabilityPoint(f"point {point} has zero probability under every class")
    if den == 0.0:
        return math.inf, 0.0
    if num == 0.0:
        return -math.inf, 1.0
    x = math.log(num) - math.log(den)
    return x, float(stable_sigmoid(x))


def bayes_posterior_bruteforce(
    world: DiscreteWorld, fam: IdealFamily, point: int, bit: int, bit_prior: str = "half",
) -> float:
    """Pr(h_j = 1 | p) by summing the joint Pr(h_j = u) Pr(class | h_j = u) D_class(p).

    ``bit_prior="half"`` takes Pr(h_j = u) = 1/2, the marginal of a fair-coin
    family, with the class uniform within its side. ``bit_prior="class"``
    instead fixes the family and puts a uniform prior on classes, which makes
    Pr(h_j = u) = alpha_u / N_c and reduces to sum_{side 1} D / sum D. The two
    coincide exactly when alpha0 == alpha1.
    """
    _check_bit(world, fam, point, bit)
    if bit_prior not in ("half", "class"):
        raise ValueError(f"unknown bit prior {bit_prior!r}")
    n_c = fam.n_classes
    alpha = {0: int(fam.alpha0[bit]), 1: int(fam.alpha1[bit])}
    joint = {0: 0.0, 1: 0.0}
    for u in (0, 1):
        prior_u = 0.5 if bit_prior == "half" else alpha[u] / n_c
        for v in range(n_c):
            if fam.flags[v, bit] == u:
                joint[u] += prior_u * (1.0 / alpha[u]) * world.tables[v, point]
    total = joint[0] + joint[1]
    if total == 0.0:
        raise ZeroProbabilityPoint(f"point {point} has zero probability under every class")
    return joint[1] / total


@dataclass(frozen=True)
class Disagreement:
    first: float
    second: float
    sigma: int  # MAP decision from Pr(bits differ) >= 0.5
    threshold_diff: int  # |[q >= 0.5] - [q' >= 0.5]|


def map_equivalence_scan(grid_step: float, extra_points=()) -> list[Disagreement]:
    """Compare the MAP bit-distance decision with thresholded bits on a grid.

    The grid is ``{step, 2*step, ...} ∩ (0, 1)`` with exactly 0.5 removed;
    ``extra_points`` are appended verbatim (e.g. the ``(0.5, 0.5)`` tie).
    """
    if not 0 < grid_step < 0.5:
        raise ValueError("grid_step must lie in (0, 0.5)")
    k = np.arange(1, int(math.floor(1.0 / grid_step)) + 1)
    grid = np.round(k * grid_step, 12)
    grid = grid[(grid > 0) & (grid < 1) & (grid != 0.5)]
    first, second = (a.ravel() for a in np.meshgrid(grid, grid, indexing="ij"))
    if len(extra_points):
        extra = np.asarray(extra_points, dtype=np.float64).reshape(-1, 2)
        first = np.concatenate([first, extra[:, 0]])
        second = np.concatenate([second, extra[:, 1]])
    p_differ = first * (1.0 - second) + (1.0 - first) * second
    sigma = (p_differ >= 0.5).astype(int)
    diff = np.abs((first >= 0.5).astype(int) - (second >= 0.5).astype(int))
    bad = np.flatnonzero(sigma != diff)
    return [Disagreement(float(first[i]), float(second[i]), int(sigma[i]), int(diff[i])) for i in bad]
