"""Synthetic target distributions standing in for the real-data law."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

KINDS = ("ring_of_gaussians", "two_moons", "grid_of_gaussians", "discrete_1d")


@dataclass(frozen=True)
class DataSource:
    kind: str = "ring_of_gaussians"
    modes: int = 8
    radius: float = 2.0
    sigma: float = 0.05
    grid: int = 5
    spacing: float = 2.0
    noise: float = 0.05
    probs: tuple = (0.5, 0.5)
    train_size: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown data kind {self.kind!r}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.kind == "discrete_1d":
            p = np.asarray(self.probs, dtype=float)
            if (p < 0).any() or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError("discrete_1d probabilities must be non-negative and sum to 1")
        if self.modes < 1 or self.grid < 1 or self.train_size < 0:
            raise ValueError("modes, grid must be positive and train_size non-negative")

    @property
    def dim(self) -> int:
        return 1 if self.kind == "discrete_1d" else 2

    def mode_centers(self) -> Optional[np.ndarray]:
        if self.kind == "ring_of_gaussians":
            angles = 2.0 * np.pi * np.arange(self.modes) / self.modes
            return self.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        if self.kind == "grid_of_gaussians":
            offsets = (np.arange(self.grid) - (self.grid - 1) / 2.0) * self.spacing
            gx, gy = np.meshgrid(offsets, offsets, indexing="ij")
            return np.stack([gx.ravel(), gy.ravel()], axis=1)
        return None

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` i.i.d. points from the population distribution."""
        if self.kind in ("ring_of_gaussians", "grid_of_gaussians"):
            centers = self.mode_centers()
            idx = rng.integers(len(centers), size=n)
            return centers[idx] + self.sigma * rng.standard_normal((n, 2))
        if self.kind == "two_moons":
            t = np.pi * rng.random(n)
            upper = rng.random(n) < 0.5
            pts = np.where(
                upper[:, None],
                np.stack([np.cos(t), np.sin(t)], axis=1),
                np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1),
            )
            return pts + self.noise * rng.standard_normal((n, 2))
        p = np.asarray(self.probs, dtype=float)
        return rng.choice(len(p), size=n, p=p).astype(float)[:, None]


class TrainingData:
    """Batches for training: a fixed finite sample when ``train_size > 0``,
    otherwise fresh population draws."""

    def __init__(self, source: DataSource, seed: int = 0):
        self.source = source
        self.fixed = None
        if source.train_size > 0:
            rng = np.random.default_rng(np.random.SeedSequence([source.seed, seed, 0x7A1D]))
            self.fixed = source.sample(source.train_size, rng)

    def batch(self, m: int, rng: np.random.Generator) -> np.ndarray:
        if self.fixed is None:
            return self.source.sample(m, rng)
        return self.fixed[rng.integers(len(self.fixed), size=m)]
