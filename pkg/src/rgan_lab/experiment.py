"""Runs (arm x seed) experiments and writes metrics CSVs, checkpoints and
the per-arm summary."""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ARMS, ExperimentConfig, parse_config, serialize_config
from .data import TrainingData
from .gan_core import TrainState, d_objective_terms, g_loss_baseline, init_state, sample_latent, train
from .metrics import mode_coverage, reported_mmd, worst_noise_stress
from .models import AdamState, Mlp, MlpSpec, ParamSet
from .robust import RganConfig, data_directions, latent_direction, rgan_d_loss, rgan_g_loss, rgan_train_step
from .tensor import Tensor
from .theory import generalization_gap

METRIC_COLUMNS = (
    "step",
    "seed",
    "arm",
    "d_loss",
    "g_loss",
    "mode_coverage",
    "high_quality_fraction",
    "mmd",
    "mmd_worst_noise",
    "robustness_gap",
    "gen_gap_d",
)
SUMMARY_COLUMNS = (
    "arm",
    "n_seeds",
    "median_mode_coverage",
    "median_high_quality_fraction",
    "median_mmd",
    "median_mmd_worst_noise",
    "median_robustness_gap",
    "median_gen_gap_d",
    "median_d_loss",
    "median_g_loss",
)
CHECKPOINT_FORMAT = "rgan-lab-checkpoint"
CHECKPOINT_VERSION = 1
EVAL_TAG = 0xE7A1


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------- evaluation


def d_objective_value(G, D, cfg: RganConfig, x: np.ndarray, z: np.ndarray, rng) -> float:
    """The arm's discriminator objective (baseline S or robust V) on given samples."""
    fake = G(z).data
    if cfg.ablation == "none":
        real_term, fake_term = d_objective_terms(D, x, fake)
        return real_term.item() + fake_term.item()
    r1, r2 = data_directions(G, D, cfg, x, fake, rng)
    p = cfg.perturb
    return rgan_d_loss(D, None, x, None, r1, r2, cfg.lam, p.eps2, cfg.weighting, fake=fake).item()


def _snapshot_losses(G, D, cfg: RganConfig, data: TrainingData, rng) -> tuple:
    m = cfg.base.m
    x = data.batch(m, rng)
    z = sample_latent(m, cfg.base.latent_dim, rng)
    d_loss = -d_objective_value(G, D, cfg, x, z, rng)
    z = sample_latent(m, cfg.base.latent_dim, rng)
    if cfg.ablation == "none":
        g_loss = g_loss_baseline(D, z, G, cfg.base.loss_variant).item()
    else:
        r_z = latent_direction(G, D, cfg, z, rng)
        p = cfg.perturb
        g_loss = rgan_g_loss(G, D, z, r_z, cfg.lam, p.eps1, cfg.weighting, cfg.base.loss_variant).item()
    return d_loss, g_loss


def evaluate(G: Mlp, D: Mlp, exp: ExperimentConfig, arm: str, seed: int, step: int,
             data: Optional[TrainingData] = None, n_samples: Optional[int] = None) -> dict:
    """One metrics record for a (G, D) snapshot. Deterministic in (seed, step)."""
    cfg = exp.rgan_config(arm)
    source = exp.data
    data = TrainingData(source, seed) if data is None else data
    ev = exp.eval
    rng = np.random.default_rng(np.random.SeedSequence([seed, step, EVAL_TAG]))
    d_loss, g_loss = _snapshot_losses(G, D, cfg, data, rng)

    n = ev.samples if n_samples is None else n_samples
    centers = source.mode_centers()
    if centers is not None:
        gen = G(sample_latent(n, cfg.base.latent_dim, rng)).data
        report = mode_coverage(gen, centers, source.sigma)
        coverage, hq = float(report.covered_modes), report.high_quality_fraction
    else:
        coverage = hq = float("nan")

    stress = worst_noise_stress(G, D, source, cfg.base.latent_dim, cfg.perturb, ev.mmd_samples, rng,
                                repeats=ev.stress_repeats)

    if data.fixed is not None:
        fresh = source.sample(ev.gap_fresh, rng)
        # the generated side of the objective is the same constant for both
        # sets, so a training-set-sized batch of fixed latents is enough
        z_fixed = sample_latent(len(data.fixed), cfg.base.latent_dim, rng)
        gap_seed = int(rng.integers(2**31))

        def objective(x):
            return d_objective_value(G, D, cfg, x, z_fixed, np.random.default_rng(gap_seed))

        gen_gap = generalization_gap(objective, data.fixed, fresh, seed).gap
    else:
        gen_gap = float("nan")

    return {
        "step": step,
        "seed": seed,
        "arm": arm,
        "d_loss": d_loss,
        "g_loss": g_loss,
        "mode_coverage": coverage,
        "high_quality_fraction": hq,
        "mmd": reported_mmd(stress.metric_clean),
        "mmd_worst_noise": reported_mmd(stress.metric_worst),
        "robustness_gap": stress.robustness_gap,
        "gen_gap_d": gen_gap,
    }


# ---------------------------------------------------------------- CSV


def _cell(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def format_csv(rows, columns=METRIC_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row[c]) for c in columns])
    return buf.getvalue()


def write_csv(path, rows, columns=METRIC_COLUMNS) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(format_csv(rows, columns))


def read_metrics_csv(path) -> list:
    """Parse a metrics CSV; raises ValueError when the header or a row is malformed."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, header row missing") from None
        missing = [c for c in ("step", "arm") if c not in header]
        if missing:
            raise ValueError(f"{path}: header lacks {', '.join(missing)}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            row = {}
            for k, v in zip(header, rec):
                if k == "arm":
                    row[k] = v
                else:
                    try:
                        row[k] = float(v)
                    except ValueError:
                        raise ValueError(f"{path}:{lineno}: {k}={v!r} is not a number") from None
            rows.append(row)
    return rows


# ---------------------------------------------------------------- checkpoints


def _net_to_json(net: Mlp) -> dict:
    s = net.spec
    return {
        "layer_sizes": list(s.layer_sizes),
        "hidden_activation": s.hidden_activation,
        "output_activation": s.output_activation,
        "params": net.params.flat.tolist(),
    }


def _net_from_json(obj: dict) -> Mlp:
    spec = MlpSpec(tuple(obj["layer_sizes"]), obj["hidden_activation"], obj["output_activation"])
    flat = np.asarray(obj["params"], dtype=np.float64)
    weights, biases, offset = [], [], 0
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        weights.append(flat[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out))
        offset += fan_in * fan_out
        biases.append(flat[offset : offset + fan_out])
        offset += fan_out
    if offset != flat.size:
        raise CheckpointError("parameter vector length does not match the layer sizes")
    return Mlp(spec, ParamSet(weights, biases))


def _adam_to_json(a: AdamState) -> dict:
    return {
        "lr": a.lr,
        "beta1": a.beta1,
        "beta2": a.beta2,
        "eps": a.eps,
        "t": a.t,
        "m": a.m.tolist(),
        "v": a.v.tolist(),
    }


def _adam_from_json(o: dict) -> AdamState:
    return AdamState(o["lr"], o["beta1"], o["beta2"], o["eps"], int(o["t"]),
                     np.asarray(o["m"], dtype=np.float64), np.asarray(o["v"], dtype=np.float64))


@dataclass
class Checkpoint:
    arm: str
    seed: int
    step: int
    config: ExperimentConfig
    G: Mlp
    D: Mlp
    opt_g: AdamState
    opt_d: AdamState
    rng_states: dict
    metrics: Optional[dict] = None


def checkpoint_from_state(state: TrainState, exp: ExperimentConfig, arm: str, metrics=None) -> Checkpoint:
    return Checkpoint(
        arm=arm,
        seed=state.seed,
        step=state.step,
        config=exp,
        G=Mlp(state.G.spec, state.G.params.copy()),
        D=Mlp(state.D.spec, state.D.params.copy()),
        opt_g=state.opt_g.copy(),
        opt_d=state.opt_d.copy(),
        rng_states={
            "data": state.data_rng.bit_generator.state,
            "latent": state.latent_rng.bit_generator.state,
            "noise": state.noise_rng.bit_generator.state,
        },
        metrics=metrics,
    )


def checkpoint_to_json(ck: Checkpoint) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "arm": ck.arm,
        "seed": ck.seed,
        "step": ck.step,
        "config": serialize_config(ck.config),
        "generator": _net_to_json(ck.G),
        "discriminator": _net_to_json(ck.D),
        "adam_g": _adam_to_json(ck.opt_g),
        "adam_d": _adam_to_json(ck.opt_d),
        "rng": ck.rng_states,
        "metrics": ck.metrics,
    }
    return json.dumps(doc, indent=1, allow_nan=True) + "\n"


def save_checkpoint(ck: Checkpoint, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(checkpoint_to_json(ck))


def checkpoint_from_json(text: str) -> Checkpoint:
    try:
        doc = json.loads(text)
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError("not an rgan-lab checkpoint")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
        return Checkpoint(
            arm=doc["arm"],
            seed=int(doc["seed"]),
            step=int(doc["step"]),
            config=parse_config(doc["config"], "<checkpoint config>"),
            G=_net_from_json(doc["generator"]),
            D=_net_from_json(doc["discriminator"]),
            opt_g=_adam_from_json(doc["adam_g"]),
            opt_d=_adam_from_json(doc["adam_d"]),
            rng_states=doc["rng"],
            metrics=doc.get("metrics"),
        )
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None


def load_checkpoint(path) -> Checkpoint:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror}") from None
    return checkpoint_from_json(text)


def state_from_checkpoint(ck: Checkpoint) -> TrainState:
    state = init_state(ck.config.gan, ck.config.data, ck.seed)
    state.G, state.D = ck.G, ck.D
    state.opt_g, state.opt_d = ck.opt_g.copy(), ck.opt_d.copy()
    state.data_rng.bit_generator.state = ck.rng_states["data"]
    state.latent_rng.bit_generator.state = ck.rng_states["latent"]
    state.noise_rng.bit_generator.state = ck.rng_states["noise"]
    state.step = ck.step
    return state


# ---------------------------------------------------------------- runs


@dataclass
class RunResult:
    arm: str
    seed: int
    records: list
    checkpoint: Checkpoint
    train_seconds: float
    csv_path: Optional[Path] = None
    checkpoint_path: Optional[Path] = None

    @property
    def final(self) -> dict:
        return self.records[-1]


def run_name(arm: str, seed: int) -> str:
    return f"{arm}_seed{seed}"


def run_one(exp: ExperimentConfig, arm: str, seed: int, out_dir=None, evaluate_fn=evaluate) -> RunResult:
    cfg = exp.rgan_config(arm)
    state = init_state(exp.gan, exp.data, seed)
    steps = exp.gan.steps
    step_fn = lambda s: rgan_train_step(s, cfg)  # noqa: E731
    eval_fn = lambda s: evaluate_fn(s.G, s.D, exp, arm, seed, s.step, s.data)  # noqa: E731
    t0 = time.process_time()
    records = list(train(state, steps, step_fn, eval_fn, exp.eval_interval))
    elapsed = time.process_time() - t0
    ck = checkpoint_from_state(state, exp, arm, metrics=records[-1])
    result = RunResult(arm, seed, records, ck, elapsed)
    if out_dir is not None:
        out = Path(out_dir)
        result.csv_path = out / "metrics" / f"{run_name(arm, seed)}.csv"
        result.checkpoint_path = out / "checkpoints" / f"{run_name(arm, seed)}.json"
        write_csv(result.csv_path, records)
        save_checkpoint(ck, result.checkpoint_path)
    return result


def _run_job(args):
    exp, arm, seed, out_dir = args
    return run_one(exp, arm, seed, out_dir)


def run_experiment(exp: ExperimentConfig, out_dir=None, parallel: bool = False, log=None) -> list:
    """Every (arm x seed) combination, sequentially unless ``parallel``."""
    jobs = [(exp, arm, seed, out_dir) for arm in exp.arms for seed in exp.seeds]
    if parallel and len(jobs) > 1:
        with ProcessPoolExecutor() as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_run_job(job))
            if log is not None:
                r = results[-1]
                log(f"{r.arm} seed={r.seed}: {r.train_seconds:.1f}s cpu, final coverage={r.final['mode_coverage']}")
    if out_dir is not None:
        write_summary(Path(out_dir), exp, results)
    return results


def _median(values) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return statistics.median(vals) if vals else float("nan")


def summarize(exp: ExperimentConfig, results: list) -> list:
    rows = []
    for arm in exp.arms:
        finals = [r.final for r in results if r.arm == arm]
        row = {"arm": arm, "n_seeds": len(finals)}
        for col in SUMMARY_COLUMNS[2:]:
            row[col] = _median([f[col[len("median_"):]] for f in finals])
        rows.append(row)
    return rows


def write_summary(out: Path, exp: ExperimentConfig, results: list) -> None:
    write_csv(out / "summary.csv", summarize(exp, results), SUMMARY_COLUMNS)
    write_csv(out / "runs.csv", [r.final for r in sorted(results, key=lambda r: (list(ARMS).index(r.arm), r.seed))])
    (out / "config.cfg").write_text(serialize_config(exp))
