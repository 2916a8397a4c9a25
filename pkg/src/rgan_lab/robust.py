"""Worst-case perturbation solvers and the robust GAN training step.

Perturbations are solved with the current parameters held constant: the
networks are called without binding their parameters to the tape, so only the
input receives a gradient. Each solver returns per-sample directions with unit
(or exactly zero) L2 norm; callers scale them by eps1 / eps2.

Sign conventions:
  * latent ``r_z`` ascends  log(1 - D(G(z + r))) - lambda_z |r|^2
  * real   ``r1``  descends log D(x + r)         + lambda_d |r|^2
  * fake   ``r2``  descends log(1 - D(G(z) + r)) + lambda_d |r|^2
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .gan_core import (
    GanConfig,
    TrainState,
    baseline_train_step,
    d_objective_terms,
    descend_d,
    descend_g,
    g_loss_baseline,
    g_terms,
    log_d,
    log_one_minus_d,
    sample_latent,
)
from .tensor import Tape

WEIGHTINGS = ("eq11_convex", "algorithm1_additive")
ABLATIONS = ("both", "g_only", "d_only", "random_noise", "none")
UNIT_TOL = 1e-9


@dataclass(frozen=True)
class PerturbationConfig:
    eps1: float = 0.01
    eps2: float = 0.05
    lambda_z: float = 0.0
    lambda_d: float = 0.0
    inner_steps: int = 1
    inner_lr: float = 0.05

    def __post_init__(self):
        for name in ("eps1", "eps2", "lambda_z", "lambda_d"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be at least 1")
        if self.inner_lr <= 0:
            raise ValueError("inner_lr must be positive")


@dataclass(frozen=True)
class RganConfig:
    base: GanConfig = field(default_factory=GanConfig)
    perturb: PerturbationConfig = field(default_factory=PerturbationConfig)
    lam: float = 0.1
    weighting: str = "eq11_convex"
    ablation: str = "both"

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}")


def normalize_rows(g: np.ndarray) -> np.ndarray:
    """Unit-norm rows; rows with zero norm stay zero."""
    norms = np.sqrt(np.einsum("ij,ij->i", g, g))
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms[:, None] > 0, g / safe[:, None], 0.0)


def check_unit_rows(r: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->i", r, r))
    ok = (norms == 0) | (np.abs(norms - 1.0) <= UNIT_TOL)
    if not ok.all():
        raise AssertionError(f"perturbation rows must have norm 0 or 1, got {norms[~ok][:3]}")
    return r


def random_unit_rows(shape: tuple, rng: np.random.Generator) -> np.ndarray:
    """Directions uniformly distributed on the unit sphere."""
    return normalize_rows(rng.standard_normal(shape))


def _radius(eps: float) -> float:
    return eps if eps > 0 else 1.0


def latent_objective(G, D, z: np.ndarray, r: np.ndarray, lambda_z: float) -> np.ndarray:
    """Per-sample log(1 - D(G(z + r))) - lambda_z |r|^2 (no tape)."""
    d = D(G(z + r)).data[:, 0]
    return np.log(np.maximum(1.0 - d, T.LOG_FLOOR)) - lambda_z * np.einsum("ij,ij->i", r, r)


def worst_latent_perturbation(G, D, z_batch, cfg: PerturbationConfig) -> np.ndarray:
    z = np.asarray(T.as_tensor(z_batch).data)
    tape = Tape()
    zl = tape.leaf(z)
    f = T.sum(log_one_minus_d(D(G(zl))))
    r = normalize_rows(tape.backward(f)[zl])
    rho = _radius(cfg.eps1)
    for _ in range(cfg.inner_steps - 1):
        tape = Tape()
        u = tape.leaf(r)
        pert = T.scale(u, rho)
        obj = T.sub(T.sum(log_one_minus_d(D(G(T.add(pert, z))))), T.scale(T.l2_norm_sq(pert), cfg.lambda_z))
        r = normalize_rows(r + cfg.inner_lr * tape.backward(obj)[u])
    return check_unit_rows(r)


def data_objective(D, x: np.ndarray, fake: np.ndarray, r1: np.ndarray, r2: np.ndarray, lambda_d: float):
    """Per-sample (log D(x + r1) + lambda_d|r1|^2, log(1 - D(fake + r2)) + lambda_d|r2|^2)."""
    dr = D(x + r1).data[:, 0]
    df = D(fake + r2).data[:, 0]
    real = np.log(np.maximum(dr, T.LOG_FLOOR)) + lambda_d * np.einsum("ij,ij->i", r1, r1)
    fake_obj = np.log(np.maximum(1.0 - df, T.LOG_FLOOR)) + lambda_d * np.einsum("ij,ij->i", r2, r2)
    return real, fake_obj


def _data_descent_grad(D, base: np.ndarray, u: np.ndarray, m: int, rho: float, lambda_d: float) -> np.ndarray:
    tape = Tape()
    ul = tape.leaf(u)
    pert = T.scale(ul, rho)
    out = D(T.add(pert, base))
    n = out.shape[0]
    obj = T.add(T.sum(log_d(T.rows(out, 0, m))), T.sum(log_one_minus_d(T.rows(out, m, n))))
    obj = T.add(obj, T.scale(T.l2_norm_sq(pert), lambda_d))
    return tape.backward(obj)[ul]


def worst_data_perturbations(G, D, x_batch, z_batch, cfg: PerturbationConfig, fake=None):
    """Descent directions ``(r1, r2)`` for the real batch and the generated batch."""
    x = np.asarray(T.as_tensor(x_batch).data)
    fake = G(z_batch).data if fake is None else np.asarray(T.as_tensor(fake).data)
    m = x.shape[0]
    base = np.concatenate([x, fake], axis=0)
    tape = Tape()
    bl = tape.leaf(base)
    out = D(bl)
    n = out.shape[0]
    obj = T.add(T.sum(log_d(T.rows(out, 0, m))), T.sum(log_one_minus_d(T.rows(out, m, n))))
    r = normalize_rows(-tape.backward(obj)[bl])
    rho = _radius(cfg.eps2)
    for _ in range(cfg.inner_steps - 1):
        r = normalize_rows(r - cfg.inner_lr * _data_descent_grad(D, base, r, m, rho, cfg.lambda_d))
    check_unit_rows(r)
    return r[:m].copy(), r[m:].copy()


def _mix(clean, perturbed, lam: float, weighting: str):
    if weighting == "eq11_convex":
        return T.add(T.scale(clean, 1.0 - lam), T.scale(perturbed, lam))
    return T.add(clean, T.scale(perturbed, lam))


def _unperturbed(eps: float, *rs) -> bool:
    return eps == 0 or not any(np.any(r) for r in rs)


def rgan_d_loss(D, G, x, z, r1, r2, lam: float, eps2: float, weighting: str = "eq11_convex", fake=None):
    """Robust discriminator objective (D ascends it)."""
    x = np.asarray(T.as_tensor(x).data)
    fake = G(z).data if fake is None else np.asarray(T.as_tensor(fake).data)
    if lam == 0 or (weighting == "eq11_convex" and _unperturbed(eps2, r1, r2)):
        # the perturbed terms carry no weight or coincide with the clean ones
        real_term, fake_term = d_objective_terms(D, x, fake)
        return T.add(real_term, fake_term)
    m, k = x.shape[0], fake.shape[0]
    out = D(np.concatenate([x, fake, x + eps2 * r1, fake + eps2 * r2], axis=0))
    bounds = np.cumsum([0, m, k, m, k])
    terms = [T.mean(log_d(T.rows(out, bounds[0], bounds[1]))),
             T.mean(log_one_minus_d(T.rows(out, bounds[1], bounds[2]))),
             T.mean(log_d(T.rows(out, bounds[2], bounds[3]))),
             T.mean(log_one_minus_d(T.rows(out, bounds[3], bounds[4])))]
    return _mix(T.add(terms[0], terms[1]), T.add(terms[2], terms[3]), lam, weighting)


def rgan_g_loss(G, D, z, r_z, lam: float, eps1: float, weighting: str = "eq11_convex",
                variant: str = "minimax"):
    """Robust generator loss (G descends it)."""
    z = np.asarray(T.as_tensor(z).data)
    if lam == 0 or (weighting == "eq11_convex" and _unperturbed(eps1, r_z)):
        return g_loss_baseline(D, z, G, variant)
    m = z.shape[0]
    out = D(G(np.concatenate([z, z + eps1 * r_z], axis=0)))
    clean = g_terms(T.rows(out, 0, m), variant)
    perturbed = g_terms(T.rows(out, m, 2 * m), variant)
    return _mix(clean, perturbed, lam, weighting)


def data_directions(G, D, cfg: RganConfig, x: np.ndarray, fake: np.ndarray, rng: np.random.Generator):
    """``(r1, r2)`` for an ablation arm: solved, random, or zero."""
    if cfg.ablation in ("both", "d_only"):
        return worst_data_perturbations(G, D, x, None, cfg.perturb, fake=fake)
    if cfg.ablation == "random_noise":
        # fake rows first, so their directions do not depend on the real batch size
        r2 = random_unit_rows(fake.shape, rng)
        return random_unit_rows(x.shape, rng), r2
    return np.zeros_like(x), np.zeros_like(fake)


def latent_direction(G, D, cfg: RganConfig, z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if cfg.ablation in ("both", "g_only"):
        return worst_latent_perturbation(G, D, z, cfg.perturb)
    if cfg.ablation == "random_noise":
        return random_unit_rows(z.shape, rng)
    return np.zeros_like(z)


def rgan_train_step(state: TrainState, cfg: RganConfig) -> TrainState:
    """One robust iteration: D ascends the robust objective on perturbed
    real/fake batches, then G descends its loss on a freshly drawn latent batch
    with a freshly solved latent perturbation."""
    base = cfg.base
    if cfg.ablation == "none":
        return baseline_train_step(state, base)
    p = cfg.perturb
    for _ in range(base.d_steps_per_g_step):
        x = state.data.batch(base.m, state.data_rng)
        z = sample_latent(base.m, base.latent_dim, state.latent_rng)
        fake = state.G(z).data
        r1, r2 = data_directions(state.G, state.D, cfg, x, fake, state.noise_rng)
        tape = Tape()
        bd = state.D.on(tape)
        descend_d(state, rgan_d_loss(bd, None, x, None, r1, r2, cfg.lam, p.eps2, cfg.weighting, fake=fake), tape, bd)
    z = sample_latent(base.m, base.latent_dim, state.latent_rng)
    r_z = latent_direction(state.G, state.D, cfg, z, state.noise_rng)
    tape = Tape()
    bg = state.G.on(tape)
    descend_g(state, rgan_g_loss(bg, state.D, z, r_z, cfg.lam, p.eps1, cfg.weighting, base.loss_variant), tape, bg)
    state.step += 1
    return state


def step_fn_for(cfg: RganConfig):
    return lambda s: rgan_train_step(s, cfg)
