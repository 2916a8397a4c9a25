"""Closed-form checks of the robust game on discrete densities.

For fixed worst-case densities the robust value function is an ordinary GAN
value under the mixtures p^lam = (1 - lam) p + lam p'. Everything here works on
finite supports, where every integral is a sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

LOG2 = math.log(2.0)
IDENTITY_TOL = 1e-9
BALANCED_TOL = 1e-12
ORACLE_TOL = 1e-6


class TheoryCheckError(AssertionError):
    """A closed-form identity failed its tolerance."""


@dataclass(frozen=True)
class DiscreteDensity:
    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if support.ndim == 1:
            support = support[:, None]
        if len(support) != len(probs):
            raise ValueError("support and probabilities differ in length")
        if (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be non-negative and sum to 1")
        if len(np.unique(support, axis=0)) != len(support):
            raise ValueError("support points must be distinct")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)

    def same_support(self, other: "DiscreteDensity") -> bool:
        return self.support.shape == other.support.shape and np.array_equal(self.support, other.support)


def _require_same_support(p: DiscreteDensity, q: DiscreteDensity) -> None:
    if not p.same_support(q):
        raise ValueError("densities live on different supports")


def mixture(p: DiscreteDensity, p_worst: DiscreteDensity, lam: float) -> DiscreteDensity:
    _require_same_support(p, p_worst)
    if lam == 0:
        return p
    if lam == 1:
        return p_worst
    return DiscreteDensity(p.support, (1.0 - lam) * p.probs + lam * p_worst.probs)


def optimal_discriminator(p_r_mix: DiscreteDensity, p_g_mix: DiscreteDensity) -> np.ndarray:
    """Pointwise p_r / (p_r + p_g)."""
    _require_same_support(p_r_mix, p_g_mix)
    denom = p_r_mix.probs + p_g_mix.probs
    if (denom <= 0).any():
        raise ValueError("optimal discriminator is undefined where both densities vanish")
    return p_r_mix.probs / denom


def _xlogy(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    live = x > 0
    out[live] = x[live] * np.log(y[live])
    return out


def kl(p: np.ndarray, q: np.ndarray) -> float:
    live = p > 0
    return float(np.sum(p[live] * np.log(p[live] / q[live])))


def jsd(p: DiscreteDensity, q: DiscreteDensity) -> float:
    """Jensen-Shannon divergence in nats."""
    _require_same_support(p, q)
    mid = 0.5 * (p.probs + q.probs)
    return 0.5 * kl(p.probs, mid) + 0.5 * kl(q.probs, mid)


def game_value(p_r_mix: DiscreteDensity, p_g_mix: DiscreteDensity, d: np.ndarray) -> float:
    """sum p_r log d + sum p_g log(1 - d), with 0 log 0 = 0."""
    return float(_xlogy(p_r_mix.probs, d).sum() + _xlogy(p_g_mix.probs, 1.0 - d).sum())


def value_at_optimum(p_r_mix: DiscreteDensity, p_g_mix: DiscreteDensity,
                     discriminator: Optional[Callable] = None) -> float:
    """Game value at the optimal discriminator, checked against -2 log 2 + 2 JSD."""
    disc = optimal_discriminator if discriminator is None else discriminator
    value = game_value(p_r_mix, p_g_mix, disc(p_r_mix, p_g_mix))
    expected = -2.0 * LOG2 + 2.0 * jsd(p_r_mix, p_g_mix)
    if not abs(value - expected) <= IDENTITY_TOL:
        raise TheoryCheckError(f"value {value!r} != -2log2 + 2JSD = {expected!r}")
    return value


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_max(f: Callable[[float], float], lo: float = 0.0, hi: float = 1.0,
                       tol: float = 1e-12, max_iter: int = 200) -> float:
    """Maximizer of a unimodal ``f`` on (lo, hi); endpoints are never evaluated."""
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def pointwise_maximizer(p_r: float, p_g: float) -> float:
    """argmax over d in (0, 1) of p_r log d + p_g log(1 - d), found numerically."""

    def f(d):
        return (p_r * math.log(d) if p_r > 0 else 0.0) + (p_g * math.log1p(-d) if p_g > 0 else 0.0)

    return golden_section_max(f)


def random_density(n: int, rng: np.random.Generator, support: Optional[np.ndarray] = None) -> DiscreteDensity:
    support = np.arange(n, dtype=float) if support is None else support
    w = rng.dirichlet(np.ones(n))
    return DiscreteDensity(support, w / w.sum())


def shifted(p: DiscreteDensity, k: int) -> DiscreteDensity:
    """Worst-case stand-in: the same mass moved k grid cells (cyclically)."""
    return DiscreteDensity(p.support, np.roll(p.probs, k))


def total_variation(p: DiscreteDensity, q: DiscreteDensity) -> float:
    return 0.5 * float(np.abs(p.probs - q.probs).sum())


def random_mixture_pair(rng: np.random.Generator, n: int = 32):
    """Random (p_r^lam, p_g^lam) built from random densities and shifted worst copies."""
    lam = float(rng.uniform())
    p_r, p_g = random_density(n, rng), random_density(n, rng)
    p_r_mix = mixture(p_r, shifted(p_r, int(rng.integers(1, n))), lam)
    p_g_mix = mixture(p_g, shifted(p_g, int(rng.integers(1, n))), lam)
    return p_r_mix, p_g_mix


# ---------------------------------------------------------------- generalization


@dataclass
class GapEstimate:
    train_value: float
    population_value: float
    gap: float
    n: int
    N: int
    seed: int


def generalization_gap(objective: Callable[[np.ndarray], float], train_set: np.ndarray,
                       fresh_set: np.ndarray, seed: int = 0, min_ratio: int = 50) -> GapEstimate:
    """|objective(train) - objective(fresh)| for a fixed discriminator objective."""
    n, N = len(train_set), len(fresh_set)
    if N < min_ratio * n and not (N == n and np.array_equal(train_set, fresh_set)):
        raise ValueError(f"fresh set must be at least {min_ratio}x the training set")
    tv = float(objective(train_set))
    pv = float(objective(fresh_set))
    return GapEstimate(tv, pv, abs(tv - pv), n, N, seed)


# ---------------------------------------------------------------- check runner


@dataclass
class CheckResult:
    name: str
    lhs: float
    rhs: float
    tol: float
    passed: bool
    detail: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)


def run_theory_checks(trials: int = 100, seed: int = 0, n: int = 32,
                      discriminator: Optional[Callable] = None) -> list:
    """Every closed-form check; one CheckResult each (worst case over trials)."""
    disc = optimal_discriminator if discriminator is None else discriminator
    rng = np.random.default_rng(seed)
    results = []

    # optimal discriminator vs numerical maximization
    worst = 0.0
    worst_pair = (0.0, 0.0)
    for _ in range(trials):
        p_r_mix, p_g_mix = random_mixture_pair(rng, n)
        d_star = disc(p_r_mix, p_g_mix)
        for a, b, d in zip(p_r_mix.probs, p_g_mix.probs, d_star):
            oracle = pointwise_maximizer(a, b)
            if abs(d - oracle) > worst:
                worst, worst_pair = abs(d - oracle), (float(d), oracle)
    results.append(CheckResult("optimal_discriminator_vs_golden_section", worst_pair[0], worst_pair[1],
                               ORACLE_TOL, worst <= ORACLE_TOL, f"max |D* - argmax| = {worst:.3e}"))

    # value at optimum equals -2 log 2 + 2 JSD
    worst = 0.0
    worst_pair = (0.0, 0.0)
    for _ in range(trials):
        p_r_mix, p_g_mix = random_mixture_pair(rng, n)
        lhs = game_value(p_r_mix, p_g_mix, disc(p_r_mix, p_g_mix))
        rhs = -2.0 * LOG2 + 2.0 * jsd(p_r_mix, p_g_mix)
        diff = abs(lhs - rhs)
        if math.isnan(diff) or diff >= worst:
            worst, worst_pair = diff, (lhs, rhs)
    ok = worst <= IDENTITY_TOL and not math.isnan(worst)
    results.append(CheckResult("value_at_optimum_identity", worst_pair[0], worst_pair[1], IDENTITY_TOL, ok,
                               f"max |V - (-2log2 + 2JSD)| = {worst:.3e}"))

    # balanced mixtures reach the global minimum
    worst = 0.0
    worst_val = -2.0 * LOG2
    balanced_d_ok = True
    for _ in range(trials):
        p = random_density(n, rng)
        d_star = disc(p, p)
        balanced_d_ok &= bool(np.all(d_star == 0.5))
        v = game_value(p, p, d_star)
        if abs(v + 2.0 * LOG2) >= worst:
            worst, worst_val = abs(v + 2.0 * LOG2), v
    results.append(CheckResult("balanced_global_minimum", worst_val, -2.0 * LOG2, BALANCED_TOL,
                               worst <= BALANCED_TOL and balanced_d_ok,
                               "D* == 0.5 everywhere" if balanced_d_ok else "D* != 0.5 somewhere"))

    # strictness: distinct mixtures sit strictly above the minimum
    lowest = math.inf
    checked = 0
    for _ in range(trials):
        p_r_mix, p_g_mix = random_mixture_pair(rng, n)
        if total_variation(p_r_mix, p_g_mix) < 1e-3:
            continue
        checked += 1
        lowest = min(lowest, game_value(p_r_mix, p_g_mix, disc(p_r_mix, p_g_mix)))
    results.append(CheckResult("distinct_mixtures_above_minimum", lowest, -2.0 * LOG2 + BALANCED_TOL, 0.0,
                               checked > 0 and lowest > -2.0 * LOG2 + BALANCED_TOL, f"{checked} pairs"))

    # JSD symmetry and range
    worst_sym = 0.0
    in_range = True
    for _ in range(trials):
        p, q = random_density(n, rng), random_density(n, rng)
        a, b = jsd(p, q), jsd(q, p)
        worst_sym = max(worst_sym, abs(a - b))
        in_range &= -1e-15 <= a <= LOG2 + 1e-15
    results.append(CheckResult("jsd_symmetry", worst_sym, 0.0, 1e-12, worst_sym <= 1e-12 and in_range,
                               "range [0, log 2] holds" if in_range else "JSD left [0, log 2]"))

    # disjoint supports hit the JSD maximum
    p = DiscreteDensity(np.arange(2.0), [1.0, 0.0])
    q = DiscreteDensity(np.arange(2.0), [0.0, 1.0])
    v = jsd(p, q)
    results.append(CheckResult("jsd_disjoint_is_log2", v, LOG2, 1e-15, abs(v - LOG2) <= 1e-15))
    return results
