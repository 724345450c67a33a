"""Command-line front end: ``run``, ``experiment`` and ``oracle``.

Exit codes: 0 success, 1 experiment verdict FAIL or file error, 2 invalid
configuration, 3 solver abort.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from .config import build_setup, config_hash, resolve_config
from .errors import ConfigError, EncoderConvergenceWarning, SolverAbort, TensorFileError
from .experiments import EXPERIMENTS, run_experiment, trial_rng
from .io import report_to_dict, write_json, write_metrics_csv, write_pgm, write_tensor
from .metrics import psnr, ssim
from .operators import Measurement, add_noise, fbp_reconstruct
from .oracle import gaussian_mixture_posterior, linear_chain, posterior_moments
from .sampler import ReconstructionReport, latent_dps_solve, resample_solve

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3


def _cli_overrides(args) -> list[str]:
    extra = list(args.override or [])
    if args.seed is not None:
        extra.append(f"seed={args.seed}")
    if getattr(args, "solver", None) is not None:
        extra.append(f'solver="{args.solver}"')
    return extra


def _measurement(cfg: dict, setup):
    """Measurement and (when known) the true latent, from the config's data stream."""
    rng = trial_rng(cfg["seed"], 0, 0)
    z_true = np.asarray(cfg["truth"]["z"], dtype=np.float64) if "truth" in cfg else None
    if "measurement" in cfg:
        return Measurement(np.asarray(cfg["measurement"]["y"], dtype=np.float64), cfg["sigma_y"],
                           setup.op.kind), z_true
    if z_true is None:
        z_true = setup.prior.sample(rng)
    y_clean = setup.op.apply(setup.dmap.decode(z_true))
    return add_noise(y_clean, cfg["sigma_y"], rng, setup.op.kind), z_true


def _solve(cfg: dict, setup, meas: Measurement) -> ReconstructionReport:
    rng = trial_rng(cfg["seed"], 0, 1)
    solver = cfg["solver"]
    if solver == "fbp":
        x0 = fbp_reconstruct(setup.op, meas.y)
        rep = ReconstructionReport("fbp", setup.dmap.encode(x0), x0, [])
        r = meas.y - setup.op.apply(x0)
        rep.metrics["residual"] = 0.5 * float(r @ r)
        return rep
    fn = resample_solve if solver == "resample" else latent_dps_solve
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EncoderConvergenceWarning)
        return fn(setup.prior, setup.dmap, setup.op, meas, setup.sampler, rng)


def cmd_run(args) -> int:
    cfg = resolve_config(args.config, _cli_overrides(args))
    setup = build_setup(cfg)
    chash = config_hash(cfg)
    out = Path(args.out or cfg.get("output_dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    meas, z_true = _measurement(cfg, setup)
    try:
        rep = _solve(cfg, setup, meas)
    except SolverAbort as exc:
        trace = [{"t": d.t, "loss_before": d.loss_before, "loss_after": d.loss_after,
                  "resampled": d.resampled, "residual": d.residual} for d in exc.trace or []]
        write_json(out / "abort.json", {"t": exc.t, "message": str(exc), "config_hash": chash,
                                        "diagnostics": trace})
        print(f"solver aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    rep.seed, rep.config = cfg["seed"], {**cfg, "config_hash": chash}
    x_true = None if z_true is None else setup.dmap.decode(z_true)
    if x_true is not None:
        rep.metrics["psnr"] = psnr(rep.x0, x_true)
        shape = setup.image_shape
        if shape is not None and min(shape) >= 11:
            rep.metrics["ssim"] = ssim(rep.x0.reshape(shape), x_true.reshape(shape))
    experiment = f"run:{rep.solver}"
    write_metrics_csv(out / "metrics.csv", [(experiment, k, v, cfg["seed"], chash)
                                            for k, v in sorted(rep.metrics.items())])
    write_json(out / "report.json", report_to_dict(rep))
    write_tensor(out / "z0.f64", rep.z0)
    write_tensor(out / "x0.f64", rep.x0)
    write_tensor(out / "y.f64", meas.y)
    if x_true is not None:
        write_tensor(out / "x_true.f64", x_true)
    if setup.image_shape is not None:
        write_pgm(out / "x0.pgm", rep.x0.reshape(setup.image_shape))
        if x_true is not None:
            write_pgm(out / "x_true.pgm", x_true.reshape(setup.image_shape))
    summary = ", ".join(f"{k}={v:.6g}" for k, v in sorted(rep.metrics.items()))
    print(f"{rep.solver}: {summary} -> {out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    out = Path(args.out) if args.out else Path("out") / args.name
    res = run_experiment(args.name, args.seed if args.seed is not None else 0, out, args.override)
    for metric, value in res.rows:
        if not metric.startswith("trial_"):
            print(f"{metric}: {value}")
    print(f"summary -> {out / 'summary.csv'}")
    return EXIT_OK if res.passed else EXIT_FAIL


def cmd_oracle(args) -> int:
    cfg = resolve_config(args.config, _cli_overrides(args))
    setup = build_setup(cfg)
    if cfg["sigma_y"] <= 0:
        raise ConfigError("the exact posterior needs sigma_y > 0", "/sigma_y")
    try:
        M, c = linear_chain(setup.dmap, setup.op)
    except ValueError as exc:
        raise ConfigError(str(exc), "/latent_map") from exc
    meas, _ = _measurement(cfg, setup)
    post, log_ev = gaussian_mixture_posterior(setup.prior, M, c, meas.y, cfg["sigma_y"])
    mean, cov = posterior_moments(post)
    out = Path(args.out or cfg.get("output_dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "oracle.json", {"weights": post.weights, "means": post.means,
                                     "covariances": post.covariances, "mean": mean, "cov": cov,
                                     "log_evidence": log_ev, "seed": cfg["seed"],
                                     "config_hash": config_hash(cfg)})
    write_tensor(out / "posterior_mean.f64", mean)
    write_tensor(out / "posterior_cov.f64", cov)
    print(f"posterior: {post.K} components, log evidence {log_ev:.6g} -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resample-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config: bool):
        if config:
            p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--override", action="append", metavar="KEY=VALUE",
                       help="dotted key with a JSON value, repeatable")

    run = sub.add_parser("run", help="reconstruct one measurement")
    common(run, True)
    run.add_argument("--solver", choices=("resample", "latent_dps", "fbp"))
    run.set_defaults(func=cmd_run)

    exp = sub.add_parser("experiment", help="run a predefined protocol")
    exp.add_argument("name", choices=sorted(EXPERIMENTS))
    common(exp, False)
    exp.set_defaults(func=cmd_experiment)

    orc = sub.add_parser("oracle", help="exact posterior for a linear decoder and operator")
    common(orc, True)
    orc.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TensorFileError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
