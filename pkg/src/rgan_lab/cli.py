"""Command-line driver: ``rgan-lab {train,eval,theory-check,plot}``.

Exit codes: 0 success, 1 theory-check failure, 2 input error,
3 numerical divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import theory
from .config import ARMS, SHIPPED_CONFIGS, ConfigError, default_config, load_config
from .experiment import (
    METRIC_COLUMNS,
    CheckpointError,
    evaluate,
    format_csv,
    load_checkpoint,
    read_metrics_csv,
    run_experiment,
)
from .gan_core import DivergenceError, sample_latent
from .plotting import CURVE_METRICS, line_chart, metric_series, scatter_chart
from .robust import worst_latent_perturbation

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INPUT, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("rgan_lab")


def resolve_config(arg):
    """A config file path, or the name of a packaged config."""
    if arg is None:
        return default_config()
    if arg in SHIPPED_CONFIGS and not Path(arg).exists():
        return default_config(arg)
    return load_config(arg)


def cmd_train(args) -> int:
    try:
        exp = resolve_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
    if args.arm is not None:
        if args.arm not in ARMS:
            print(f"error: unknown arm {args.arm!r}; expected one of {', '.join(ARMS)}", file=sys.stderr)
            return EXIT_INPUT
        overrides["arms"] = (args.arm,)
    exp = dataclasses.replace(exp, **overrides)
    out_dir = Path(args.out if args.out is not None else exp.output_dir)
    r = exp.robust
    log.info("arms=%s seeds=%s lambda=%g eps1=%g eps2=%g weighting=%s",
             ",".join(exp.arms), ",".join(map(str, exp.seeds)), r.lam, r.eps1, r.eps2, r.weighting)
    try:
        run_experiment(exp, out_dir, parallel=args.parallel_seeds, log=log.info)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    log.info("wrote %s", out_dir)
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        ck = load_checkpoint(args.checkpoint)
        exp = ck.config
        if args.config:
            exp = dataclasses.replace(exp, data=resolve_config(args.config).data)
    except (CheckpointError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    seed = ck.seed if args.seed is None else args.seed
    record = evaluate(ck.G, ck.D, exp, ck.arm, seed, ck.step, n_samples=args.n)
    text = format_csv([record])
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        body = text if not out.exists() or out.stat().st_size == 0 else text.split("\n", 1)[1]
        with open(out, "a", newline="") as fh:
            fh.write(body)
    return EXIT_OK


def cmd_theory_check(args) -> int:
    results = theory.run_theory_checks(trials=args.trials, seed=args.seed)
    name_w = max(len(r.name) for r in results)
    print(f"{'check':<{name_w}}  {'lhs':>24}  {'rhs':>24}  {'tol':>8}  result")
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{name_w}}  {r.lhs:>24.17g}  {r.rhs:>24.17g}  {r.tol:>8.0e}  {status}  {r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_plot(args) -> int:
    out = Path(args.out)
    try:
        rows = read_metrics_csv(args.metrics) if args.metrics else []
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.metrics:
        for metric in CURVE_METRICS:
            svg = line_chart(metric_series(rows, metric), title=metric.replace("_", " "), ylabel=metric)
            path = out / f"curve_{metric}.svg"
            path.write_text(svg)
            written.append(path)
    if args.checkpoint:
        try:
            ck = load_checkpoint(args.checkpoint)
        except CheckpointError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        exp = ck.config
        rng = np.random.default_rng(np.random.SeedSequence([ck.seed, ck.step, 0x5CA7]))
        z = sample_latent(args.n, exp.gan.latent_dim, rng)
        gen = ck.G(z).data
        real = exp.data.sample(args.n, rng)
        if real.shape[1] == 2:
            path = out / "scatter_real_vs_generated.svg"
            path.write_text(scatter_chart({"real": real, "generated": gen},
                                          title=f"{ck.arm} seed {ck.seed} step {ck.step}"))
            written.append(path)
            perturb = exp.rgan_config(ck.arm).perturb
            r = worst_latent_perturbation(ck.G, ck.D, z, perturb)
            worst = ck.G(z + perturb.eps1 * r).data
            path = out / "scatter_clean_vs_worst_latent.svg"
            path.write_text(scatter_chart({"clean latent": gen, "worst latent": worst},
                                          title=f"worst-case latent noise, eps1 = {perturb.eps1:g}"))
            written.append(path)
    for p in written:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rgan-lab", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train every (arm x seed) run of a config")
    p.add_argument("--config", help=f"config file or packaged config name ({', '.join(SHIPPED_CONFIGS)}); "
                                    "default: ring_default")
    p.add_argument("--seed", type=int, help="run only this seed")
    p.add_argument("--arm", help=f"run only this arm ({', '.join(ARMS)})")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--parallel-seeds", action="store_true", help="run jobs in worker processes")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", help="take the data source from this config (file or packaged name)")
    p.add_argument("--n", type=int, default=None, help="generated samples for mode coverage")
    p.add_argument("--seed", type=int, help="evaluation seed (default: checkpoint seed)")
    p.add_argument("--out", help="append the record to this CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("theory-check", help="verify the closed-form optimal-discriminator identities")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_theory_check)

    p = sub.add_parser("plot", help="render SVG curves and sample scatters")
    p.add_argument("--metrics", help="metrics CSV")
    p.add_argument("--checkpoint", help="checkpoint to draw samples from")
    p.add_argument("--out", default="plots")
    p.add_argument("--n", type=int, default=500, help="points per scatter group")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
