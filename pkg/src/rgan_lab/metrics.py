"""Generation metrics: mode coverage, multi-bandwidth RBF MMD, and the
worst-latent-noise stress protocol."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .gan_core import sample_latent
from .robust import PerturbationConfig, worst_latent_perturbation

BANDWIDTH_SCALES = (0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass
class ModeReport:
    covered_modes: int
    high_quality_fraction: float
    hits: np.ndarray
    total_modes: int


def mode_coverage(samples, modes, sigma: float) -> ModeReport:
    """Count modes that capture at least ``max(5, N/(10k))`` samples within 3 sigma.

    Each sample is assigned to its nearest mode.
    """
    x = np.asarray(samples, dtype=float)
    centers = np.asarray(modes, dtype=float)
    n, k = len(x), len(centers)
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    nearest = d2.argmin(axis=1)
    captured = d2[np.arange(n), nearest] <= (3.0 * sigma) ** 2
    hits = np.bincount(nearest[captured], minlength=k)
    min_hits = max(5.0, n / (10.0 * k))
    return ModeReport(
        covered_modes=int((hits >= min_hits).sum()),
        high_quality_fraction=float(captured.mean()) if n else 0.0,
        hits=hits,
        total_modes=k,
    )


def sq_dists(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    xx = np.einsum("ij,ij->i", X, X)
    yy = np.einsum("ij,ij->i", Y, Y)
    return np.maximum(xx[:, None] + yy[None, :] - 2.0 * X @ Y.T, 0.0)


def median_distance(X: np.ndarray, Y: np.ndarray) -> float:
    Z = np.concatenate([X, Y], axis=0)
    d2 = sq_dists(Z, Z)
    iu = np.triu_indices(len(Z), k=1)
    med = float(np.median(np.sqrt(d2[iu])))
    return med if med > 0 else 1.0


def mmd_rbf(X, Y, bandwidths: Optional[Sequence[float]] = None, unbiased: bool = True,
            base: Optional[float] = None) -> float:
    """MMD^2 summed over RBF kernels exp(-|x-y|^2 / (2 h^2)).

    Default bandwidths are ``BANDWIDTH_SCALES`` times the median pairwise
    distance of the pooled sample (or times ``base`` when given). The raw
    estimate is returned; unbiased values can be slightly negative.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n, m = len(X), len(Y)
    if n < 2 or m < 2:
        raise ValueError("MMD needs at least two samples per set")
    if bandwidths is None:
        scale = median_distance(X, Y) if base is None else base
        bandwidths = [c * scale for c in BANDWIDTH_SCALES]
    dxx, dyy, dxy = sq_dists(X, X), sq_dists(Y, Y), sq_dists(X, Y)
    total = 0.0
    for h in bandwidths:
        g = 1.0 / (2.0 * h * h)
        kxx, kyy, kxy = np.exp(-g * dxx), np.exp(-g * dyy), np.exp(-g * dxy)
        if unbiased:
            xx = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
            yy = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
        else:
            xx = kxx.sum() / (n * n)
            yy = kyy.sum() / (m * m)
        total += xx + yy - 2.0 * kxy.sum() / (n * m)
    return float(total)


def reported_mmd(value: float) -> float:
    return max(0.0, value)


@dataclass
class StressReport:
    metric_clean: float
    metric_worst: float
    robustness_gap: float
    clean_std: float = 0.0
    worst_std: float = 0.0
    gap_std: float = 0.0
    repeats: int = 1


def worst_noise_stress(G, D, source, latent_dim: int, perturb: PerturbationConfig, N: int,
                       rng: np.random.Generator, repeats: int = 5) -> StressReport:
    """MMD to the data under clean latents vs. worst-case latents z + eps1 * r.

    Each repeat draws fresh latents and real samples and re-solves the worst
    perturbation; the same bandwidths serve both generations of a repeat.
    """
    eps = perturb.eps1
    clean, worst = [], []
    for _ in range(repeats):
        z = sample_latent(N, latent_dim, rng)
        real = source.sample(N, rng)
        gen = G(z).data
        base = median_distance(real, gen)
        c = mmd_rbf(real, gen, base=base)
        if eps == 0:
            w = c
        else:
            r = worst_latent_perturbation(G, D, z, perturb)
            w = mmd_rbf(real, G(z + eps * r).data, base=base)
        clean.append(c)
        worst.append(w)
    clean, worst = np.array(clean), np.array(worst)
    gaps = worst - clean
    return StressReport(
        metric_clean=float(clean.mean()),
        metric_worst=float(worst.mean()),
        robustness_gap=float(gaps.mean()),
        clean_std=float(clean.std()),
        worst_std=float(worst.std()),
        gap_std=float(gaps.std()),
        repeats=repeats,
    )
