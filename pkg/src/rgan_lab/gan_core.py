"""The non-robust GAN: losses, latent sampling and the alternating trainer.

Every experiment's control arm runs through here; the robust trainer reuses
``TrainState`` and ``train`` with its own step function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np

from . import tensor as T
from .data import DataSource, TrainingData
from .models import AdamState, Mlp, adam_step, discriminator_spec, generator_spec, init_params
from .tensor import Tape, Tensor

LOSS_VARIANTS = ("minimax", "non_saturating")


class DivergenceError(RuntimeError):
    """A training loss became non-finite."""


@dataclass(frozen=True)
class GanConfig:
    m: int = 32
    latent_dim: int = 8
    steps: int = 20000
    d_steps_per_g_step: int = 1
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    loss_variant: str = "minimax"
    hidden: tuple = (64, 64)
    activation: str = "leaky_relu"

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("batch size m must be at least 2")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.d_steps_per_g_step < 1:
            raise ValueError("d_steps_per_g_step must be at least 1")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ValueError(f"unknown loss variant {self.loss_variant!r}")


def sample_latent(m: int, latent_dim: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((m, latent_dim))


def log_d(d_out: Tensor) -> Tensor:
    return T.log(d_out)


def log_one_minus_d(d_out: Tensor) -> Tensor:
    return T.log(T.add(T.neg(d_out), 1.0))


def d_objective_terms(D: Callable, real, fake) -> tuple:
    """``(mean log D(real), mean log(1 - D(fake)))`` from one stacked forward."""
    real = T.as_tensor(real)
    fake = T.as_tensor(fake)
    m = real.shape[0]
    out = D(T.concat_rows([real, fake]))
    n = out.shape[0]
    return T.mean(log_d(T.rows(out, 0, m))), T.mean(log_one_minus_d(T.rows(out, m, n)))


def d_loss_baseline(D: Callable, x_batch, z_batch, G: Callable) -> Tensor:
    """S_m = mean log D(x) + mean log(1 - D(G(z))). D ascends this."""
    x_batch = T.as_tensor(x_batch)
    if x_batch.shape[0] != T.as_tensor(z_batch).shape[0]:
        raise ValueError("real and latent batches must have the same size")
    real_term, fake_term = d_objective_terms(D, x_batch, G(z_batch))
    return T.add(real_term, fake_term)


def g_terms(d_fake: Tensor, variant: str) -> Tensor:
    if variant == "minimax":
        return T.mean(log_one_minus_d(d_fake))
    if variant == "non_saturating":
        return T.neg(T.mean(log_d(d_fake)))
    raise ValueError(f"unknown loss variant {variant!r}")


def g_loss_baseline(D: Callable, z_batch, G: Callable, variant: str = "minimax") -> Tensor:
    """Generator loss (descended): mean log(1 - D(G(z))) or -mean log D(G(z))."""
    return g_terms(D(G(z_batch)), variant)


# ---------------------------------------------------------------- training state


def _derived_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


@dataclass
class TrainState:
    G: Mlp
    D: Mlp
    opt_g: AdamState
    opt_d: AdamState
    data: TrainingData
    data_rng: np.random.Generator
    latent_rng: np.random.Generator
    noise_rng: np.random.Generator
    seed: int
    step: int = 0
    last_d_loss: float = float("nan")
    last_g_loss: float = float("nan")


def init_state(cfg: GanConfig, source: DataSource, seed: Optional[int] = None) -> TrainState:
    seed = cfg.seed if seed is None else seed
    gspec = generator_spec(cfg.latent_dim, cfg.hidden, source.dim, cfg.activation)
    dspec = discriminator_spec(source.dim, cfg.hidden, cfg.activation)
    G = Mlp(gspec, init_params(gspec, _derived_seed(seed, 1)))
    D = Mlp(dspec, init_params(dspec, _derived_seed(seed, 2)))
    return TrainState(
        G=G,
        D=D,
        opt_g=AdamState.for_params(G.params, cfg.lr_g, cfg.beta1, cfg.beta2),
        opt_d=AdamState.for_params(D.params, cfg.lr_d, cfg.beta1, cfg.beta2),
        data=TrainingData(source, seed),
        data_rng=np.random.default_rng(_derived_seed(seed, 3)),
        latent_rng=np.random.default_rng(_derived_seed(seed, 4)),
        noise_rng=np.random.default_rng(_derived_seed(seed, 5)),
        seed=seed,
    )


def check_finite(value: float, what: str, state: TrainState) -> float:
    if not math.isfinite(value):
        raise DivergenceError(f"{what} became {value} at step {state.step} (seed {state.seed})")
    return value


def check_params(params, what: str, state: TrainState) -> None:
    if not np.isfinite(params.flat).all():
        raise DivergenceError(f"{what} parameters became non-finite at step {state.step} (seed {state.seed})")


def descend_d(state: TrainState, objective: Tensor, tape: Tape, bound) -> None:
    """One Adam step for D on ``-objective``."""
    loss = T.neg(objective)
    state.last_d_loss = check_finite(loss.item(), "discriminator loss", state)
    adam_step(state.opt_d, state.D.params, bound.grads(tape.backward(loss)))
    check_params(state.D.params, "discriminator", state)


def descend_g(state: TrainState, loss: Tensor, tape: Tape, bound) -> None:
    state.last_g_loss = check_finite(loss.item(), "generator loss", state)
    adam_step(state.opt_g, state.G.params, bound.grads(tape.backward(loss)))
    check_params(state.G.params, "generator", state)


def baseline_train_step(state: TrainState, cfg: GanConfig) -> TrainState:
    for _ in range(cfg.d_steps_per_g_step):
        x = state.data.batch(cfg.m, state.data_rng)
        z = sample_latent(cfg.m, cfg.latent_dim, state.latent_rng)
        tape = Tape()
        bd = state.D.on(tape)
        descend_d(state, d_loss_baseline(bd, x, z, state.G), tape, bd)
    z = sample_latent(cfg.m, cfg.latent_dim, state.latent_rng)
    tape = Tape()
    bg = state.G.on(tape)
    descend_g(state, g_loss_baseline(state.D, z, bg, cfg.loss_variant), tape, bg)
    state.step += 1
    return state


StepFn = Callable[[TrainState], TrainState]
EvalFn = Callable[[TrainState], dict]


def train(state: TrainState, steps: int, step_fn: StepFn, eval_fn: Optional[EvalFn] = None,
          eval_interval: int = 0) -> Iterator[dict]:
    """Run ``steps`` iterations, yielding an evaluation record at step 0,
    every ``eval_interval`` steps, and at the end."""
    if eval_fn is not None:
        yield eval_fn(state)
    for _ in range(steps):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                step_fn(state)
        except T.DomainError as exc:
            raise DivergenceError(f"non-finite values at step {state.step} (seed {state.seed}): {exc}") from exc
        if eval_fn is not None and (
            (eval_interval and state.step % eval_interval == 0) or state.step == steps
        ):
            yield eval_fn(state)


def train_baseline(cfg: GanConfig, source: DataSource, eval_fn: Optional[EvalFn] = None,
                   eval_interval: int = 0):
    """Train the control arm. Returns ``(state, records)``."""
    state = init_state(cfg, source)
    records = list(train(state, cfg.steps, lambda s: baseline_train_step(s, cfg), eval_fn, eval_interval))
    return state, records
