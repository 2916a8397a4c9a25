"""MLP generator/discriminator definitions and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import tensor as T
from .tensor import ContractError, DimensionError, Tape, Tensor

HIDDEN_ACTIVATIONS = ("relu", "leaky_relu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "sigmoid")


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple
    hidden_activation: str = "leaky_relu"
    output_activation: str = "identity"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"need at least 2 positive layer sizes, got {sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if self.output_activation == "sigmoid" and sizes[-1] != 1:
            raise ValueError("a sigmoid-headed discriminator must have one output")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1


def generator_spec(latent_dim: int = 8, hidden: Sequence[int] = (64, 64), data_dim: int = 2,
                   activation: str = "leaky_relu") -> MlpSpec:
    return MlpSpec((latent_dim, *hidden, data_dim), activation, "identity")


def discriminator_spec(data_dim: int = 2, hidden: Sequence[int] = (64, 64),
                       activation: str = "leaky_relu") -> MlpSpec:
    return MlpSpec((data_dim, *hidden, 1), activation, "sigmoid")


class ParamSet:
    """Per-layer weights ``[in x out]`` and biases ``[out]``.

    All arrays are views into one flat buffer (``flat``) so optimizers can
    update every parameter with a handful of vector ops.
    """

    def __init__(self, weights: Sequence, biases: Sequence):
        arrays = []
        for w, b in zip(weights, biases):
            arrays.extend((np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64)))
        if len(weights) != len(biases):
            raise DimensionError("need one bias per weight matrix")
        self.flat = np.concatenate([a.ravel() for a in arrays]) if arrays else np.zeros(0)
        views, offset = [], 0
        for a in arrays:
            views.append(self.flat[offset : offset + a.size].reshape(a.shape))
            offset += a.size
        self.weights = views[0::2]
        self.biases = views[1::2]

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "ParamSet":
        return ParamSet(self.weights, self.biases)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ParamSet)
            and [a.shape for a in self.arrays()] == [a.shape for a in other.arrays()]
            and np.array_equal(self.flat, other.flat)
        )

    def check(self, spec: MlpSpec) -> None:
        if len(self.weights) != spec.n_layers or len(self.biases) != spec.n_layers:
            raise DimensionError("parameter count does not match the layer spec")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            fan_in, fan_out = spec.layer_sizes[i], spec.layer_sizes[i + 1]
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise DimensionError(f"layer {i}: got W{list(w.shape)} b{list(b.shape)}")
        if not np.isfinite(self.flat).all():
            raise ValueError("parameters contain non-finite values")


def init_params(spec: MlpSpec, seed: int) -> ParamSet:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ParamSet(weights, biases)


class BoundParams:
    """A ParamSet registered as differentiable leaves on one tape."""

    def __init__(self, params: ParamSet, tape: Tape):
        self.params = params
        self.tape = tape
        self.weights = [tape.leaf(Tensor(w, _check=False)) for w in params.weights]
        self.biases = [tape.leaf(Tensor(b, _check=False)) for b in params.biases]

    def grads(self, gradients: T.Gradients) -> ParamSet:
        return ParamSet([gradients[w] for w in self.weights], [gradients[b] for b in self.biases])


def watch(params: ParamSet, tape: Tape) -> BoundParams:
    return BoundParams(params, tape)


_HIDDEN = {"relu": T.relu, "leaky_relu": T.leaky_relu, "tanh": T.tanh}


def forward(params: Union[ParamSet, BoundParams], spec: MlpSpec, batch, fused: bool = True) -> Tensor:
    """Layered affine + activation.

    Bound params are differentiated; a bare ParamSet enters as constants, so
    only the batch (if taped) receives gradients. ``fused=False`` records each
    affine map and activation as its own tape node.
    """
    x = T.as_tensor(batch)
    if x.data.ndim != 2 or x.shape[1] != spec.layer_sizes[0]:
        raise DimensionError(f"batch shape {list(x.shape)} does not fit input size {spec.layer_sizes[0]}")
    if isinstance(params, BoundParams):
        ws, bs = params.weights, params.biases
    else:
        ws = [Tensor(w, _check=False) for w in params.weights]
        bs = [Tensor(b, _check=False) for b in params.biases]
    if len(ws) != spec.n_layers:
        raise DimensionError("parameter count does not match the layer spec")
    if fused:
        return T.mlp(x, ws, bs, spec.hidden_activation, spec.output_activation)
    act = _HIDDEN[spec.hidden_activation]
    for i in range(spec.n_layers):
        x = T.affine(x, ws[i], bs[i])
        if i < spec.n_layers - 1:
            x = act(x)
    if spec.output_activation == "sigmoid":
        x = T.sigmoid(x)
    return x


@dataclass
class AdamState:
    """Adam moments over a ParamSet's flat buffer."""

    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None

    @classmethod
    def for_params(cls, params: ParamSet, lr=1e-4, beta1=0.5, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(lr, beta1, beta2, eps, 0, np.zeros_like(params.flat), np.zeros_like(params.flat))

    def copy(self) -> "AdamState":
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.t,
                         None if self.m is None else self.m.copy(),
                         None if self.v is None else self.v.copy())


def flatten_grads(params: ParamSet, grads) -> np.ndarray:
    if isinstance(grads, ParamSet):
        g_arrays = grads.arrays()
    else:
        g_arrays = list(grads)
    p_arrays = params.arrays()
    if len(g_arrays) != len(p_arrays) or any(g is None for g in g_arrays):
        raise ContractError("gradients must cover every parameter")
    for g, p in zip(g_arrays, p_arrays):
        if np.shape(g) != p.shape:
            raise ContractError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")
    return grads.flat if isinstance(grads, ParamSet) else np.concatenate([np.ravel(g) for g in g_arrays])


def adam_step(state: AdamState, params: ParamSet, grads):
    """Bias-corrected Adam update of ``params`` in place. Returns ``(params, state)``."""
    if grads is None:
        raise ContractError("missing gradients")
    g = flatten_grads(params, grads)
    if state.m is None:
        state.m = np.zeros_like(params.flat)
        state.v = np.zeros_like(params.flat)
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (g * g)
    params.flat -= (state.lr / bc1) * state.m / (np.sqrt(state.v / bc2) + state.eps)
    return params, state


class Mlp:
    """A network: spec plus parameters. Calling it treats parameters as constants."""

    def __init__(self, spec: MlpSpec, params: ParamSet):
        params.check(spec)
        self.spec = spec
        self.params = params

    def __call__(self, batch) -> Tensor:
        return forward(self.params, self.spec, batch)

    def on(self, tape: Tape) -> "BoundMlp":
        return BoundMlp(self, tape)


class BoundMlp:
    """An Mlp whose parameters are differentiable leaves on ``tape``."""

    def __init__(self, net: Mlp, tape: Tape):
        self.net = net
        self.bound = watch(net.params, tape)

    def __call__(self, batch) -> Tensor:
        return forward(self.bound, self.net.spec, batch)

    def grads(self, gradients: T.Gradients) -> ParamSet:
        return self.bound.grads(gradients)
