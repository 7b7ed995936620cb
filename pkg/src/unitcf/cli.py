"""Command line interface: simulate | fit | impute | counterfactual | diagnose | bench.

Exit status is 0 on success, 1 on usage or input errors and 2 on numeric
failures. Each subcommand takes ``--config`` (JSON whose keys mirror the long
option names); explicit flags win over the config, and the ``UNITCF_SEED``
environment variable overrides a seed taken from the config.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import DIAGNOSTIC_GIBBS, diagnose
from .errors import GenerationFailure, InvalidArgument, UnitCFError
from .harness import STUDY_GIBBS, ExperimentConfig, run_study
from .imputation import impute_pipeline
from .inference import COUNTERFACTUAL_GIBBS, estimate_counterfactuals
from .model import Bounds, Dataset, Dims
from .optimizer import FitConfig, pgd_fit
from .sampler import SimTruth, simulate_measurement_study
from .serialization import (bounds_from_dict, bounds_to_dict, dims_from_dict, dims_to_dict, joint_from_dict,
                            joint_to_dict, params_from_dict, params_to_dict, read_json, read_mask_csv,
                            read_matrix_csv, write_atomic, write_json, write_mask_csv, write_matrix_csv)

log = logging.getLogger("unitcf")

SEED_ENV = "UNITCF_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _load_config(path):
    if path is None:
        return {}
    cfg = read_json(path)
    if not isinstance(cfg, dict):
        raise InvalidArgument(f"{path}: config must be a JSON object")
    return cfg


def _opt(args, cfg, name, default=None):
    """Flag value, else config value, else ``default``."""
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(name, default)


def _seed(args, cfg):
    if args.seed is not None:
        return int(args.seed)
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV}={env!r} is not an integer") from None
    return int(cfg.get("seed", 0))


def _bounds_file(path):
    d = read_json(path)
    b = bounds_from_dict(d)
    return b, float(d.get("support", b.x_max))


def _dataset(data_path, dims_path, support):
    X, _ = read_matrix_csv(data_path)
    if dims_path:
        dims = dims_from_dict(read_json(dims_path))
    else:
        dims = Dims(0, 0, X.shape[1])
    return Dataset(X, dims, support)


# -- subcommands -----------------------------------------------------------


def cmd_simulate(args, cfg):
    seed = _seed(args, cfg)
    missing = [k for k in ("p", "p_v", "n") if _opt(args, cfg, k) is None]
    if missing:
        raise UsageError(f"simulate needs {', '.join(missing)} (flag or config)")
    p, p_v, n = (int(_opt(args, cfg, k)) for k in ("p", "p_v", "n"))
    bounds = Bounds(**cfg["bounds"]) if "bounds" in cfg else Bounds(6.0, 4.0, 1.0)
    if args.bounds:
        bounds = _bounds_file(args.bounds)[0]
    gibbs = STUDY_GIBBS.replace(**{**cfg.get("gibbs", {}), "seed": seed})
    curvature = float(_opt(args, cfg, "curvature", -1.0))
    data, truth = simulate_measurement_study(p, p_v, n, bounds, seed=seed,
                                             target_kappa=float(cfg.get("target_kappa", 0.15)),
                                             gibbs=gibbs, curvature=curvature)
    out = Path(args.out_dir)
    write_matrix_csv(out / "data.csv", data.X)
    write_mask_csv(out / "mask.csv", truth.clean_mask)
    write_json(out / "bounds.json", {**bounds_to_dict(bounds), "support": data.x_max})
    write_json(out / "dims.json", dims_to_dict(data.dims))
    write_json(out / "truth.json", {**joint_to_dict(truth.joint), "delta_v": truth.delta_v.tolist(),
                                    "kappa": truth.kappa, "unit_fields": truth.unit_fields.tolist()})
    write_json(out / "provenance.json", {"command": "simulate", "seed": seed, "p": p, "p_v": p_v, "n": n,
                                         "curvature": curvature, "gibbs": gibbs.to_dict(),
                                         "version": __version__})
    log.info("simulated n=%d p=%d (kappa=%.4g) into %s", n, p, truth.kappa, out)
    return 0


def cmd_fit(args, cfg):
    bounds, support = _bounds_file(args.bounds)
    data = _dataset(args.data, args.dims, support)
    fit_cfg = FitConfig.from_dict({**cfg.get("fit", {}), "seed": _seed(args, cfg.get("fit", {}))})
    params, report = pgd_fit(data, bounds, fit_cfg, x_max=bounds.x_max)
    write_json(args.out, params_to_dict(params))
    report_path = args.report or str(Path(args.out).with_name(Path(args.out).stem + "_report.json"))
    write_json(report_path, report.to_dict())
    log.info("fit: %d iterations, loss %.6g, stop %s", report.iterations, report.final_loss, report.stop_reason)
    return 0


def cmd_impute(args, cfg):
    bounds, support = _bounds_file(args.bounds)
    data = _dataset(args.data, args.dims, support)
    mask = read_mask_csv(args.mask)
    fit_cfg = FitConfig.from_dict({**cfg.get("fit", {}), "seed": _seed(args, cfg.get("fit", {}))})
    truth = None
    if args.truth:
        t = read_json(args.truth)
        truth = SimTruth(joint_from_dict(t), np.array(t["delta_v"], dtype=float).reshape(data.n, -1), mask)
    result = impute_pipeline(data, mask, bounds, fit_cfg, truth=truth,
                             kappa_threshold=float(_opt(args, cfg, "kappa_threshold", 0.05)),
                             centering=_opt(args, cfg, "centering", "shifted"))
    out = Path(args.out_dir)
    write_json(out / "fit.json", params_to_dict(result.extended_params()))
    write_matrix_csv(out / "delta_v.csv", result.delta_v_hat, prefix="dv")
    write_json(out / "metrics.json", {k: float(v) for k, v in result.metrics.items()})
    return 0


def cmd_counterfactual(args, cfg):
    bounds, support = _bounds_file(args.bounds)
    data = _dataset(args.data, args.dims, support)
    params = params_from_dict(read_json(args.fit))
    alt, _ = read_matrix_csv(args.alt)
    v_override = None
    if args.delta_v:
        dv, _ = read_matrix_csv(args.delta_v)
        v_override = data.V - dv
    mc = COUNTERFACTUAL_GIBBS.replace(**{**cfg.get("gibbs", {}), "seed": _seed(args, cfg.get("gibbs", {}))})
    mu = estimate_counterfactuals(params, data, alt, nodes=int(_opt(args, cfg, "nodes", 64)), mc=mc,
                                  n_samples=int(_opt(args, cfg, "samples", 2_000)), v_override=v_override,
                                  x_max=bounds.x_max)
    write_matrix_csv(args.out, mu, prefix="mu")
    return 0


def cmd_diagnose(args, cfg):
    bounds, _ = _bounds_file(args.bounds)
    params = params_from_dict(read_json(args.fit))
    mc = DIAGNOSTIC_GIBBS.replace(**{**cfg.get("gibbs", {}), "seed": _seed(args, cfg.get("gibbs", {}))})
    units = _opt(args, cfg, "units")
    rep = diagnose(params, bounds, units=units, method=_opt(args, cfg, "method"), mc=mc,
                   n_samples=int(_opt(args, cfg, "samples", 20_000)))
    write_json(args.out, rep.to_dict())
    return 0


def cmd_bench(args, cfg):
    if not cfg:
        raise UsageError("bench needs --config with a study description")
    cfg = dict(cfg)
    cfg["seed"] = _seed(args, cfg)
    exp = ExperimentConfig.from_dict(cfg)
    result = run_study(exp, workers=int(args.workers))
    write_atomic(args.out, result.to_csv())
    prov = args.provenance or str(Path(args.out).with_name("provenance.json"))
    write_json(prov, result.provenance)
    if args.plot_dir:
        from .plotting import save_figures
        save_figures(result, args.plot_dir, stem=exp.study)
    if result.provenance["failures"]:
        log.warning("%d cells failed; see %s", len(result.provenance["failures"]), prov)
    return 0


def build_parser():
    parser = _Parser(prog="unitcf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.set_defaults(func=func)
        return sp

    sp = add("simulate", cmd_simulate, "simulate a measurement-error dataset")
    sp.add_argument("--p", type=int)
    sp.add_argument("--p-v", dest="p_v", type=int)
    sp.add_argument("--n", type=int)
    sp.add_argument("--curvature", type=float)
    sp.add_argument("--bounds", help="bounds.json (default alpha=6, beta=4, x_max=1)")
    sp.add_argument("--out-dir", required=True)

    sp = add("fit", cmd_fit, "fit the interaction matrix and unit fields")
    sp.add_argument("--data", required=True)
    sp.add_argument("--bounds", required=True)
    sp.add_argument("--dims")
    sp.add_argument("--out", required=True)
    sp.add_argument("--report")

    sp = add("impute", cmd_impute, "recover measurement errors from clean units")
    sp.add_argument("--data", required=True)
    sp.add_argument("--mask", required=True)
    sp.add_argument("--bounds", required=True)
    sp.add_argument("--dims", required=True)
    sp.add_argument("--truth")
    sp.add_argument("--centering", choices=("shifted", "nominal"))
    sp.add_argument("--kappa-threshold", dest="kappa_threshold", type=float)
    sp.add_argument("--out-dir", required=True)

    sp = add("counterfactual", cmd_counterfactual, "counterfactual outcome means")
    sp.add_argument("--fit", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--alt", required=True)
    sp.add_argument("--dims", required=True)
    sp.add_argument("--bounds", required=True)
    sp.add_argument("--delta-v", dest="delta_v", help="use v - delta_v instead of the observed covariates")
    sp.add_argument("--nodes", type=int)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--out", required=True)

    sp = add("diagnose", cmd_diagnose, "assumption diagnostics for a fit")
    sp.add_argument("--fit", required=True)
    sp.add_argument("--bounds", required=True)
    sp.add_argument("--units", type=int, nargs="+")
    sp.add_argument("--method", choices=("quadrature", "monte-carlo"))
    sp.add_argument("--samples", type=int)
    sp.add_argument("--out", required=True)

    sp = add("bench", cmd_bench, "run an error-scaling study")
    sp.add_argument("--out", required=True)
    sp.add_argument("--provenance")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--plot-dir", help="also write figures here")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        cfg = _load_config(args.config)
        return int(args.func(args, cfg) or 0)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ArithmeticError, GenerationFailure, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except (UnitCFError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
