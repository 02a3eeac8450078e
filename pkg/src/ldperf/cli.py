"""Command-line entry point: ``ldperf <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .asymptotics import set_threshold_clt, set_threshold_image
from .d3f import TrainConfig, load_weights, save_weights, train_mlp
from .d3f.cnn import CnnD3F, cnn_score
from .harness import StageError, load_config, load_preset, run_experiment
from .harness.config import ExperimentConfig
from .harness.experiment import STAGES
from .harness.io import read_csv, read_values, write_csv
from .lmgf import DEFAULT_GRID, LmgfEstimate, lmgf_direct, scaled_lmgf_direct
from .models import ShiftModel, read_pbm
from .ratefn import rate_curve
from .tilting import (TiltConfig, gaussian_mean_target, iid_target, integrate_phi_prime,
                      tilted_phi_prime_table)

log = logging.getLogger("ldperf")


class CliError(RuntimeError):
    def __init__(self, stage, msg):
        super().__init__(msg)
        self.stage = stage


def _config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise CliError("config", "give either --config or --preset, not both")
    try:
        if args.config:
            cfg = load_config(args.config)
        elif args.preset:
            cfg = load_preset(args.preset)
        else:
            cfg = ExperimentConfig()
    except (OSError, ValueError) as exc:
        raise CliError("config", str(exc)) from exc
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out_dir is not None:
        over["out_dir"] = args.out_dir
    return cfg.with_overrides(**over) if over else cfg


def _grid(args, default=None):
    if args.t_min is None and args.t_max is None:
        return default
    return np.linspace(args.t_min, args.t_max, args.points)


def cmd_train(args):
    if args.data0 or args.data1:
        if not (args.data0 and args.data1):
            raise CliError("train", "--data0 and --data1 go together")
        x0, x1 = read_values(args.data0), read_values(args.data1)
        seed = args.seed if args.seed is not None else 0
        net = train_mlp(x0, x1, TrainConfig(args.lr, args.epochs, args.batch_size, seed))
        out = Path(args.out_dir or ".") / "weights.json"
        out.parent.mkdir(parents=True, exist_ok=True)
        save_weights(net, out)
        print(out)
        return
    cfg = _config(args)
    bundle = run_experiment(cfg, stages=("train",))
    print(bundle.out_dir / "weights.json")


def cmd_score(args):
    model = load_weights(args.weights)
    if isinstance(model, CnnD3F):
        img = read_pbm(args.input)
        s = cnn_score(model, img)
        print(f"{s / args.n if args.n else s:.17g}")
        return
    x = read_values(args.input)
    scores = model.score(x)
    if args.output:
        write_csv(args.output, ("x", "score"), zip(x, scores))
    else:
        for v in np.atleast_1d(scores):
            print(f"{v:.17g}")


def cmd_characterize(args):
    x = read_values(args.input)
    if args.n == 1:
        lm = lmgf_direct(x, _grid(args, DEFAULT_GRID))
    else:
        lm = scaled_lmgf_direct(x, args.n, _grid(args))
    write_csv(args.output, ("t", "phi", "dphi", "d2phi", "ess"), lm.to_rows())
    bad = int(lm.unreliable().sum())
    if bad:
        print(f"warning: {bad} grid points have effective sample size below 30", file=sys.stderr)


def _read_lmgf(path) -> LmgfEstimate:
    header, rows = read_csv(path)
    cols = {h: np.array([float(r[i]) for r in rows]) for i, h in enumerate(header)}
    return LmgfEstimate(cols["t"], cols["phi"], cols["dphi"], cols["d2phi"], 1, 0,
                        cols.get("ess"))


def cmd_rate(args):
    lm = _read_lmgf(args.lmgf)
    if args.gamma_min is None:
        lo, hi = lm.dphi.min(), lm.dphi.max()
        grid = np.linspace(lo, hi, args.points + 2)[1:-1]
    else:
        grid = np.linspace(args.gamma_min, args.gamma_max, args.points)
    rc = rate_curve(lm, grid)
    write_csv(args.output, ("gamma", "I", "t_gamma"), rc.to_rows())
    if rc.skipped:
        print(f"skipped {len(rc.skipped)} gamma values without a saddlepoint", file=sys.stderr)


def cmd_tilt(args):
    if args.family == "gaussian-mean":
        target = gaussian_mean_target(args.n)
    else:
        target = iid_target(ShiftModel(args.family, args.theta0, args.theta1), args.hyp, args.n)
    cfg = TiltConfig(n_mh=args.n, kept=args.kept, burn_in=args.burn_in, thin=args.thin,
                     seed=args.seed if args.seed is not None else 0)
    grid = np.linspace(args.t_min, args.t_max, args.points)
    rows = tilted_phi_prime_table(target, grid, cfg)
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "tilt_phi_prime.csv", ("t", "phi_prime", "se", "acceptance"), rows)
    if grid.min() <= 0 <= grid.max():
        lm = integrate_phi_prime([r[0] for r in rows], [r[1] for r in rows], args.n)
        write_csv(out / "tilt_lmgf.csv", ("t", "phi", "dphi", "d2phi", "ess"), lm.to_rows())


def cmd_threshold(args):
    if args.values:
        x = read_values(args.values)
        mu, sd = float(np.mean(x)), float(np.std(x, ddof=1))
    else:
        mu, sd = args.mu0, args.sigma0
    if args.image:
        g, gn = set_threshold_image(mu, sd, args.alpha, args.n)
        print(f"{g:.17g} {gn:.17g}")
    else:
        print(f"{set_threshold_clt(mu, sd, args.n, args.alpha):.17g}")


def _run_stages(stages):
    def run(args):
        cfg = _config(args)
        bundle = run_experiment(cfg, stages=stages)
        print(bundle.out_dir)
    return run


def cmd_image_demo(args):
    cfg = _config(args)
    if cfg.scenario != "image":
        cfg = load_preset("image").with_overrides(
            seed=cfg.seed, out_dir=cfg.out_dir)
    bundle = run_experiment(cfg)
    print(bundle.out_dir)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ldperf", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir")
        if config:
            sp.add_argument("--config", help="INI experiment file")
            sp.add_argument("--preset", help="name of a shipped preset")
        return sp

    def tgrid(sp, lo=None, hi=None, points=201):
        sp.add_argument("--t-min", type=float, default=lo)
        sp.add_argument("--t-max", type=float, default=hi)
        sp.add_argument("--points", type=int, default=points)

    sp = common(sub.add_parser("train", help="train a decision function"))
    sp.add_argument("--data0", help="H0 training values, one per line")
    sp.add_argument("--data1", help="H1 training values, one per line")
    sp.add_argument("--lr", type=float, default=0.05)
    sp.add_argument("--epochs", type=int, default=200)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("score", help="score values or a PBM image with saved weights")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--output")
    sp.add_argument("--n", type=int, help="normalise an image score by n")
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("characterize", help="LMGF estimate from statistic values")
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--n", type=int, default=1, help="scaling n for T^(n) values")
    tgrid(sp)
    sp.set_defaults(func=cmd_characterize)

    sp = sub.add_parser("rate", help="rate function from an LMGF CSV")
    sp.add_argument("--lmgf", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--gamma-min", type=float)
    sp.add_argument("--gamma-max", type=float)
    sp.add_argument("--points", type=int, default=201)
    sp.set_defaults(func=cmd_rate)

    sp = common(sub.add_parser("tilt", help="tilted-chain estimates of phi'"), config=False)
    sp.add_argument("--family", default="laplace",
                    choices=("laplace", "gaussian", "gaussian-mean"))
    sp.add_argument("--theta0", type=float, default=0.0)
    sp.add_argument("--theta1", type=float, default=2.0)
    sp.add_argument("--hyp", type=int, default=1, choices=(0, 1))
    sp.add_argument("--n", type=int, default=10_000)
    sp.add_argument("--kept", type=int, default=10_000)
    sp.add_argument("--burn-in", type=int)
    sp.add_argument("--thin", type=int, default=10)
    tgrid(sp, -1.0, 1.0, 41)
    sp.set_defaults(func=cmd_tilt)

    sp = sub.add_parser("threshold", help="CLT threshold")
    sp.add_argument("--alpha", type=float, required=True)
    sp.add_argument("--n", type=int, default=1)
    sp.add_argument("--mu0", type=float, default=0.0)
    sp.add_argument("--sigma0", type=float, default=1.0)
    sp.add_argument("--values", help="estimate mu0 and sigma0 from these values")
    sp.add_argument("--image", action="store_true",
                    help="unnormalised image statistic; also prints gamma/n")
    sp.set_defaults(func=cmd_threshold)

    for name, stages, text in (
            ("curves", ("train", "characterize", "rate", "curves"), "error curves"),
            ("simulate", ("train", "characterize", "simulate"), "Monte Carlo errors"),
            ("run", STAGES, "full pipeline")):
        sp = common(sub.add_parser(name, help=text))
        sp.set_defaults(func=_run_stages(stages))

    sp = common(sub.add_parser("image-demo", help="extended-target image experiment"))
    sp.set_defaults(func=cmd_image_demo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except StageError as exc:
        print(f"ldperf: {exc}", file=sys.stderr)
        return 2
    except CliError as exc:
        print(f"ldperf: stage '{exc.stage}' failed: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"ldperf: stage '{args.command}' failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
