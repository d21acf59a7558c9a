"""Command-line interface: estimate, simulate, truetau, validate.

All file I/O is plain CSV plus a JSON manifest sidecar for simulation runs;
numbers print with 6 significant digits unless --raw asks for full
precision.  The CARLATE_SEED environment variable supplies the default seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .data import DataError, index_strata, read_csv
from .estimators import ALL_METHODS, EstimationError, estimate, wald
from .adjustments import AdjustmentError
from .randomization import ConfigError, make_scheme
from .simulation import (DGP_IDS, DgpSpec, SimulationError, default_pi,
                         run_mc, true_tau)

SIM_CSV_HEADER = ("dgp", "scheme", "n", "method", "size", "power",
                  "ci_ratio", "reps", "failures")
EST_CSV_HEADER = ("method", "n", "tau_hat", "se", "ci_lo", "ci_hi",
                  "statistic", "p_value", "tau0", "level")


def _fmt(value, raw: bool) -> str:
    if isinstance(value, float):
        if not np.isfinite(value):
            return "nan"
        return repr(value) if raw else f"{value:.6g}"
    return str(value)


def _default_seed() -> int:
    env = os.environ.get("CARLATE_SEED")
    return int(env) if env else 0


def _parse_pi(text: str | None, dgp: int | None = None):
    if text is None:
        return None if dgp is None else default_pi(dgp)
    return np.array([float(v) for v in text.split(",")])


def _emit(lines, out_path):
    text = "\n".join(lines) + "\n"
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_estimate(args) -> int:
    data = read_csv(args.data)
    est = estimate(data, args.method, regressors=args.regressors)
    if est.sigma_hat > 0.0:
        test = wald(est, args.tau0, args.level)
        se, ci_lo, ci_hi = est.sigma_hat / np.sqrt(est.n), test.ci_lo, test.ci_hi
        statistic, p_value = test.statistic, test.p_value
    else:
        # degenerate sample (zero estimated variance): report the point
        se, ci_lo, ci_hi = 0.0, est.tau_hat, est.tau_hat
        statistic, p_value = float("nan"), float("nan")
    record = {
        "method": est.method, "n": est.n, "tau_hat": est.tau_hat,
        "se": se, "ci_lo": ci_lo, "ci_hi": ci_hi, "statistic": statistic,
        "p_value": p_value, "tau0": args.tau0, "level": args.level,
    }
    if args.format == "json":
        payload = {k: (v if not isinstance(v, float) else float(_fmt(v, args.raw)))
                   for k, v in record.items()}
        _emit([json.dumps(payload)], args.out)
    else:
        _emit([",".join(EST_CSV_HEADER),
               ",".join(_fmt(record[k], args.raw) for k in EST_CSV_HEADER)], args.out)
    return 0


def cmd_validate(args) -> int:
    data = read_csv(args.data)
    idx = index_strata(data)
    print(f"{args.data}: n={data.n}, covariates={data.k}, strata={data.n_strata}")
    for s in range(data.n_strata):
        print(f"  stratum {data.s_labels[s]!r}: n={idx.n_of[s]}, "
              f"treated={idx.n1_of[s]}, control={idx.n0_of[s]}, "
              f"pi_hat={idx.pi_hat[s]:.4f}")
    empty = [data.s_labels[s] for s in range(data.n_strata)
             if idx.n1_of[s] == 0 or idx.n0_of[s] == 0]
    if empty:
        print(f"warning: strata with an empty arm (estimation will fail): {empty}")
    return 0


def _config_digest(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


def cmd_simulate(args) -> int:
    config = _load_config(args.config) if args.config else {}
    dgp = int(config.get("dgp", args.dgp))
    n = int(config.get("n", args.n))
    scheme = str(config.get("scheme", args.scheme))
    methods = str(config.get("methods", args.methods)).split(",")
    reps = int(config.get("reps", args.reps))
    seed = int(config.get("seed", args.seed))
    tau0 = config.get("tau0", args.tau0)
    tau0 = float(tau0) if tau0 is not None else None
    pi = _parse_pi(config.get("pi", args.pi), dgp)

    spec = DgpSpec(dgp=dgp, n=n, pi=pi, seed=seed)
    cfg = make_scheme(scheme, pi=spec.pi, n_strata=4, bcd_lambda=args.bcd_lambda)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    report = run_mc(spec, cfg, methods, reps, tau0=tau0, level=args.level,
                    threads=args.threads, oracle_n=args.oracle_n,
                    oracle_reps=args.oracle_reps)
    lines = [",".join(SIM_CSV_HEADER)]
    for row in report.rows:
        lines.append(",".join([
            str(report.dgp), report.scheme, str(report.n), row.method,
            _fmt(row.size, args.raw), _fmt(row.power, args.raw),
            _fmt(row.ci_ratio, args.raw), str(row.reps), str(row.failures),
        ]))
    _emit(lines, args.out)
    if args.out:
        payload = {"dgp": dgp, "n": n, "scheme": scheme, "methods": methods,
                   "reps": reps, "seed": seed, "tau0": report.tau0,
                   "level": args.level, "pi": list(map(float, spec.pi))}
        manifest = {
            "command": "simulate",
            "argv": sys.argv[1:],
            "config_digest": _config_digest(payload),
            "seed": seed,
            "versions": {"carlate": __version__, "numpy": np.__version__},
            "started": started,
            "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }
        with open(args.out + ".manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def cmd_truetau(args) -> int:
    spec = DgpSpec(dgp=args.dgp, n=args.oracle_n, pi=_parse_pi(args.pi, args.dgp),
                   seed=args.seed)
    result = true_tau(spec, oracle_n=args.oracle_n, oracle_reps=args.oracle_reps,
                      seed=args.seed)
    print(json.dumps({"dgp": result.dgp, "tau0": result.value,
                      "mc_se": result.mc_se, "oracle_n": result.oracle_n,
                      "oracle_reps": result.oracle_reps, "seed": result.seed}))
    return 0


def _load_config(path: str) -> dict:
    """Parse a key = value config file; '#' starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="carlate",
        description="LATE estimation and Monte Carlo studies under "
                    "covariate-adaptive randomization with imperfect compliance.")
    sub = parser.add_subparsers(dest="command", required=True)

    method_choices = [m.lower() for m in ALL_METHODS]

    p_est = sub.add_parser("estimate", help="estimate a LATE from a CSV dataset")
    p_est.add_argument("--data", required=True, help="CSV with header y,d,a,s,x1..xk")
    p_est.add_argument("--method", required=True, choices=method_choices)
    p_est.add_argument("--regressors", default="raw", choices=["raw", "sieve"])
    p_est.add_argument("--tau0", type=float, default=0.0, help="null value tested")
    p_est.add_argument("--level", type=float, default=0.05)
    p_est.add_argument("--out", default=None)
    p_est.add_argument("--format", default="csv", choices=["csv", "json"])
    p_est.add_argument("--raw", action="store_true", help="full-precision numbers")
    p_est.set_defaults(func=cmd_estimate)

    p_sim = sub.add_parser("simulate", help="run a size/power study")
    p_sim.add_argument("--dgp", type=int, default=1, choices=list(DGP_IDS))
    p_sim.add_argument("--n", type=int, default=400)
    p_sim.add_argument("--scheme", default="srs", choices=["srs", "wei", "bcd", "sbr"])
    p_sim.add_argument("--methods", default="na,l", help="comma-separated method tags")
    p_sim.add_argument("--reps", type=int, default=1000)
    p_sim.add_argument("--seed", type=int, default=_default_seed())
    p_sim.add_argument("--pi", default=None, help="per-stratum targets, e.g. 0.2,0.2,0.2,0.5")
    p_sim.add_argument("--lambda", dest="bcd_lambda", type=float, default=0.75)
    p_sim.add_argument("--tau0", type=float, default=None, help="override the oracle value")
    p_sim.add_argument("--level", type=float, default=0.05)
    p_sim.add_argument("--oracle-n", type=int, default=10_000)
    p_sim.add_argument("--oracle-reps", type=int, default=1_000)
    p_sim.add_argument("--threads", type=int, default=1)
    p_sim.add_argument("--out", default=None)
    p_sim.add_argument("--raw", action="store_true")
    p_sim.add_argument("--config", default=None, help="key = value config file")
    p_sim.set_defaults(func=cmd_simulate)

    p_tau = sub.add_parser("truetau", help="Monte Carlo oracle for the true effect")
    p_tau.add_argument("--dgp", type=int, required=True, choices=list(DGP_IDS))
    p_tau.add_argument("--oracle-n", type=int, default=10_000)
    p_tau.add_argument("--oracle-reps", type=int, default=1_000)
    p_tau.add_argument("--seed", type=int, default=None)
    p_tau.add_argument("--pi", default=None)
    p_tau.set_defaults(func=cmd_truetau)

    p_val = sub.add_parser("validate", help="lint a CSV dataset")
    p_val.add_argument("--data", required=True)
    p_val.set_defaults(func=cmd_validate)
    return parser




def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, ConfigError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (EstimationError, AdjustmentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
