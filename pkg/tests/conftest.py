import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rgan_lab.models import Mlp, MlpSpec, init_params

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def scalar_mlp(params, spec: MlpSpec, row) -> list:
    """Forward one sample with plain Python floats."""
    acts = {
        "relu": lambda v: max(v, 0.0),
        "leaky_relu": lambda v: v if v > 0 else 0.2 * v,
        "tanh": math.tanh,
    }
    h = [float(v) for v in row]
    n = len(params.weights)
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        out = []
        for j in range(w.shape[1]):
            s = float(b[j])
            for i in range(w.shape[0]):
                s += h[i] * float(w[i, j])
            out.append(s)
        if layer < n - 1:
            h = [acts[spec.hidden_activation](v) for v in out]
        elif spec.output_activation == "sigmoid":
            h = [1.0 / (1.0 + math.exp(-v)) for v in out]
        else:
            h = out
    return h


@pytest.fixture
def tiny_nets():
    """A small generator (2 -> 5 -> 2) and discriminator (2 -> 5 -> 1)."""

    def make(seed=0, latent_dim=2, hidden=(5,), activation="tanh"):
        gspec = MlpSpec((latent_dim, *hidden, 2), activation, "identity")
        dspec = MlpSpec((2, *hidden, 1), activation, "sigmoid")
        return Mlp(gspec, init_params(gspec, seed)), Mlp(dspec, init_params(dspec, seed + 1000))

    return make
