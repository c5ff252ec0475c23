"""Command-line runner: ``risfl {optimize,train,validate,sweep}``.

Every run writes CSV and JSON into ``--out``. CSV bodies depend only on
the config and seed; wall-clock data goes into the JSON summaries.
Failures print a JSON error object to stderr and exit nonzero.
"""
import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import __version__, experiment, objective, validation
from .channel import LOS_MODEL, InvalidInputError
from .config import ConfigError, load, with_overrides
from .flsim import TRACE_COLUMNS, design_d_value, monte_carlo
from .gibbs import default_threads, gibbs_optimize, mask_key

EXIT_CONFIG = 2
EXIT_RUNTIME = 1

# sweepable parameters: CLI name -> (section, key, type)
SWEEP_PARAMS = {
    "L": ("system", "num_ris_elements", int),
    "N": ("system", "num_antennas", int),
    "M": ("system", "num_devices", int),
    "noise_power": ("system", "noise_power", float),
    "max_power": ("system", "max_power", float),
    "phase_bits": ("optimizer", "phase_bits", int),
    "j_max": ("optimizer", "j_max", int),
}


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return [[float(z.real), float(z.imag)] for z in obj.ravel()]
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _finite_or_none(x):
    x = float(x)
    return x if np.isfinite(x) else None


def resolve_threads(flag):
    if flag is not None:
        if flag < 1:
            raise InvalidInputError("--threads must be at least 1")
        return flag
    return default_threads()


def _summary(args, cfg, seed, threads, started, **fields):
    out = {"command": args.command, "seed": seed, "threads": threads, "version": __version__,
           "config": cfg.to_dict(), "los_model": LOS_MODEL, "started": started,
           "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
    out.update(fields)
    return out


def cmd_optimize(args, cfg, seed, threads, outdir, started):
    sc = experiment.build_scenario(cfg, seed)
    res = gibbs_optimize(sc.realization, sc.counts, sc.params,
                         experiment.gibbs_config(cfg, threads), experiment.stream(seed, experiment.DESIGN))
    theta = res.theta
    bits = cfg["optimizer"]["phase_bits"]
    if bits:
        from .gibbs import project_phases
        theta = project_phases(theta, bits)
    d_cont = objective.d_value(res.mask, res.f, res.theta, sc.realization, sc.counts, sc.params)
    d_final = objective.d_value(res.mask, res.f, theta, sc.realization, sc.counts, sc.params)
    write_csv(os.path.join(outdir, "gibbs_log.csv"), ("iteration", "beta", "mask", "value", "incumbent"),
              [(r["iteration"], r["beta"], r["mask"], r["value"], r["incumbent"]) for r in res.log])
    write_json(os.path.join(outdir, "optimize_summary.json"), _summary(
        args, cfg, seed, threads, started, mask=mask_key(res.mask), J=_finite_or_none(res.value),
        d_continuous=_finite_or_none(d_cont), d=_finite_or_none(d_final), phase_bits=bits,
        sample_counts=sc.counts, f=res.f, theta=theta))
    return 0


def _train(cfg, seed, threads):
    sc = experiment.build_scenario(cfg, seed)
    task = experiment.build_task(cfg, sc.counts, seed)
    src = experiment.policy_source(cfg, threads)
    run = cfg["run"]
    n = run["trajectories"]
    seeds = [int(s) for s in np.random.SeedSequence([seed, experiment.NOISE]).generate_state(n)]
    traces = monte_carlo(task, src, run["rounds"], sc.params, sc.schedule, seeds,
                         lam=run["learning_rate"] or None, batch_size=cfg["task"]["batch_size"] or None,
                         design_seed=seed, record_sample_grads=task.kind == "ridge")
    return sc, task, traces


def _mean_rows(traces):
    T = traces[0].rounds.size
    cols = {c: np.mean([getattr(t, c) for t in traces], axis=0) for c in TRACE_COLUMNS[1:]}
    for t in range(T):
        yield (t,) + tuple(cols[c][t] if c not in ("selected",) else int(round(cols[c][t]))
                           for c in TRACE_COLUMNS[1:])


def cmd_train(args, cfg, seed, threads, outdir, started):
    sc, task, traces = _train(cfg, seed, threads)
    write_csv(os.path.join(outdir, "trace.csv"), TRACE_COLUMNS, _mean_rows(traces))
    finals = np.array([t.final_gap for t in traces])
    extra = {}
    if task.kind == "ridge" and np.all(np.isfinite(finals)):
        sample = np.concatenate([t.max_sample_grad_norm2 for t in traces])[:, np.newaxis]
        glob = np.concatenate([t.grad_norm2 for t in traces])
        a1, a2 = objective.estimate_a4_constants(sample, glob, 2.0)
        consts = task.constants(a1, a2)
        d = float(traces[0].d_value[0])
        extra = {"alpha1": a1, "alpha2": a2,
                 "final_bound": _finite_or_none(objective.loss_bound(
                     cfg["run"]["rounds"], d, consts, traces[0].gap[0])),
                 "asymptotic_gap": objective.asymptotic_gap(d, consts),
                 "bound_limit": objective.bound_limit(d, consts)}
    write_json(os.path.join(outdir, "train_summary.json"), _summary(
        args, cfg, seed, threads, started, policy=cfg["run"]["policy"],
        final_gap=_finite_or_none(np.mean(finals)), final_gaps=[_finite_or_none(g) for g in finals],
        d=_finite_or_none(traces[0].d_value[0]), mu=task.mu, omega=task.omega,
        sample_counts=sc.counts, **extra))
    return 0


def cmd_validate(args, cfg, seed, threads, outdir, started):
    suite = args.suite
    if suite == "lemma2":
        report = validation.lemma2(seed)
    elif suite == "mse":
        report = validation.mse(experiment.build_scenario(cfg, seed), seed)
    elif suite == "gibbs-dist":
        report = validation.gibbs_dist(seed)
    elif suite == "sca-oracle":
        report = validation.sca_oracle(seed)
    else:
        report = validation.bound(experiment.build_scenario(cfg, seed), seed)
    report.update(started=started, config=cfg.to_dict(), los_model=LOS_MODEL, version=__version__)
    curve = report.pop("trace", None)
    if curve is not None:
        write_csv(os.path.join(outdir, "bound_trace.csv"), ("round", "empirical_gap", "bound"), curve)
    write_json(os.path.join(outdir, f"{suite.replace('-', '_')}_report.json"), report)
    return 0 if report["passed"] else EXIT_RUNTIME


def cmd_sweep(args, cfg, seed, threads, outdir, started):
    if args.param not in SWEEP_PARAMS:
        raise ConfigError(f"cannot sweep {args.param!r}; choose from {', '.join(SWEEP_PARAMS)}", "--param")
    section, key, kind = SWEEP_PARAMS[args.param]
    try:
        values = [kind(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad value list: {exc}", "--values") from exc
    if not values:
        raise ConfigError("empty value list", "--values")
    rows = []
    for v in values:
        sub = with_overrides(cfg, **{section: {key: v}})
        _, _, traces = _train(sub, seed, threads)
        finals = [t.final_gap for t in traces]
        rows.append((v, np.mean(finals), traces[0].d_value[0], traces[0].selected[0]))
    write_csv(os.path.join(outdir, "sweep.csv"), (args.param, "final_gap", "d_value", "selected"), rows)
    write_json(os.path.join(outdir, "sweep_summary.json"), _summary(
        args, cfg, seed, threads, started, param=args.param, values=values,
        final_gaps=[_finite_or_none(r[1]) for r in rows], d_values=[_finite_or_none(r[2]) for r in rows]))
    return 0


COMMANDS = {"optimize": cmd_optimize, "train": cmd_train, "validate": cmd_validate, "sweep": cmd_sweep}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--threads", type=int,
                        help="worker threads (default: $RISFL_THREADS or 1)")
    p = argparse.ArgumentParser(prog="risfl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("optimize", parents=[common], help="device selection and beamforming on one channel draw")
    sub.add_parser("train", parents=[common], help="federated training with the configured policy")
    v = sub.add_parser("validate", parents=[common], help="oracle and property checks")
    v.add_argument("suite", choices=validation.SUITES)
    s = sub.add_parser("sweep", parents=[common], help="train over a grid of one parameter")
    s.add_argument("--param", required=True, help=f"one of {', '.join(SWEEP_PARAMS)}")
    s.add_argument("--values", required=True, help="comma-separated values")
    return p


def _fail(kind, exc, code):
    payload = {"error": kind, "message": str(exc)}
    if isinstance(exc, ConfigError):
        payload.update(field=exc.field, line=exc.line)
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    try:
        cfg = load(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["run"] = {"seed": args.seed}
        if args.out is not None:
            overrides["output"] = {"dir": args.out}
        if overrides:
            cfg = with_overrides(cfg, **overrides)
        threads = resolve_threads(args.threads)
        outdir = cfg["output"]["dir"]
        os.makedirs(outdir, exist_ok=True)
    except (ConfigError, InvalidInputError) as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except OSError as exc:
        return _fail("io", exc, EXIT_RUNTIME)
    try:
        return COMMANDS[args.command](args, cfg, cfg["run"]["seed"], threads, outdir, started)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except (InvalidInputError, ArithmeticError, ValueError, RuntimeError, OSError) as exc:
        return _fail(type(exc).__name__, exc, EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())
