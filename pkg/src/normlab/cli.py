"""``normlab`` command line: mnist, seq-stability, invariance and geometry experiments.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import geometry as geo
from .invariance import default_dataset, full_table
from .mnist import DataError, DivergenceError, RunConfig, load_mnist, train_mnist
from .plotdata import MetricWriter, write_csv
from .stability import RADII, emit_stability, run_seq_stability

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("normlab")


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="normlab", description="Normalization experiments.")
    p.add_argument("experiment", choices=["mnist", "seq-stability", "invariance", "geometry"])
    p.add_argument("--norm", choices=["none", "layer", "batch", "weight"], default=None,
                   help="normalizer (mnist default: layer; geometry default: all four)")
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--epochs", type=int, default=None, help="default 20, or 5 when batch size < 128")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", type=str, default=None, help="directory holding the MNIST IDX files")
    p.add_argument("--out", type=str, default=None, help="output CSV path")
    p.add_argument("--unbiased-variance", action="store_true", help="N-1 batch variance estimator")
    p.add_argument("--record-time", action="store_true", help="fill the wall_time_seconds column")
    p.add_argument("--train-size", type=int, default=55_000)
    g = p.add_argument_group("geometry")
    g.add_argument("--family", choices=list(geo.FAMILIES), default="bernoulli-logistic")
    g.add_argument("--phi", type=float, default=1.0)
    g.add_argument("--hidden", type=int, default=4)
    g.add_argument("--inputs", type=int, default=8)
    g.add_argument("--samples", type=int, default=2048)
    g.add_argument("--delta-scales", type=str, default="1e-1,1e-2,1e-3")
    g.add_argument("--input-scale", type=float, default=10.0)
    s = p.add_argument_group("seq-stability / invariance")
    s.add_argument("--steps", type=int, default=500)
    s.add_argument("--trials", type=int, default=5)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _out(args, default: str) -> Path:
    return Path(args.out if args.out else default)


def run_mnist(args) -> int:
    epochs = args.epochs if args.epochs is not None else (20 if args.batch_size >= 128 else 5)
    cfg = RunConfig("mnist", args.norm or "layer", args.batch_size, epochs, args.lr, args.seed,
                    args.out, args.unbiased_variance, args.data, args.record_time)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not args.data:
        raise ConfigError("--data DIR is required for the mnist experiment")
    data = load_mnist(args.data, split_seed=args.seed, train_size=args.train_size)
    out = _out(args, f"mnist_{cfg.norm}_b{cfg.batch_size}_s{cfg.seed}.csv")
    with MetricWriter(out) as writer:
        _, summary = train_mnist(cfg, data, writer=writer)
    log.info("test nll %.4f, test error %.4f after %d updates -> %s",
             summary.final_test_nll, summary.final_test_error, summary.updates, out)
    return EXIT_OK


def run_stability(args) -> int:
    traces = run_seq_stability(steps=args.steps, radii=RADII, seed=args.seed)
    for path in emit_stability(traces, _out(args, "seq_stability.csv")):
        log.info("wrote %s", path)
    return EXIT_OK


def run_invariance(args) -> int:
    table = full_table(default_dataset(seed=args.seed), trials=args.trials, seed=args.seed)
    out = _out(args, "invariance.csv")
    out.write_text(table.to_csv())
    for line in table.failures:
        log.warning("mismatch: %s", line)
    return EXIT_OK


def geometry_rows(family: str, phi: float, norms, hidden: int, inputs: int, n: int, seed: int,
                  scales, input_scale: float):
    """Rows for the KL sweep CSV and the gain-robustness CSV."""
    fam = geo.ExponentialFamily(family, phi)
    X = geo.make_samples(n, inputs, seed)
    rng = np.random.default_rng(seed + 1)
    kl_rows, gain_rows = [], []
    for norm in norms:
        model = geo.GlmModel.random(hidden, inputs, fam, norm, seed)
        F = geo.fisher(model, X)
        direction = rng.normal(size=model.dim)
        direction /= np.linalg.norm(direction)
        for eps in scales:
            d = eps * direction
            exact, quad = geo.kl_exact(model, d, X), geo.kl_quadratic_form(F, d)
            kl_rows.append((norm, float(eps), exact, quad, exact / quad))
        delta_g = np.ones(hidden)
        for scale in (1.0, input_scale):
            if norm == "none":
                metric = geo.projected_weight_metric(model, delta_g, scale * X)
            else:
                metric = geo.gain_direction_metric(model, delta_g, scale * X)
            gain_rows.append((norm, float(scale), metric))
    return kl_rows, gain_rows


def run_geometry(args) -> int:
    try:
        scales = [float(s) for s in args.delta_scales.split(",") if s.strip()]
        fam = geo.ExponentialFamily(args.family, args.phi)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    norms = [args.norm] if args.norm else list(geo.NORM_KINDS)
    kl_rows, gain_rows = geometry_rows(fam.kind, fam.phi, norms, args.hidden, args.inputs, args.samples,
                                       args.seed, scales, args.input_scale)
    out = _out(args, "geometry.csv")
    write_csv(out, ["norm_kind", "delta_norm", "kl_exact", "kl_quadratic", "ratio"], kl_rows)
    write_csv(out.with_name(f"{out.stem}_gain.csv"), ["norm_kind", "input_scale", "metric"], gain_rows)
    return EXIT_OK


RUNNERS = {"mnist": run_mnist, "seq-stability": run_stability, "invariance": run_invariance,
           "geometry": run_geometry}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return RUNNERS[args.experiment](args)
    except ConfigError as exc:
        print(f"normlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"normlab: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"normlab: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"normlab: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
