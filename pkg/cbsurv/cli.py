"""
Command line interface.

    cbsurv simulate --rates 0.1 --n 2000 --output data.csv
    cbsurv sample --input data.csv --ratio 100 --output moments.csv
    cbsurv fit --input moments.csv --model "time=log; terms=trt" --output model.yml
    cbsurv risk --model model.yml --grid 0:10:101 --output risk.csv

Every subcommand writes its artifacts plus `<output>.run.yml` with the seed,
the package version and fingerprints of the inputs. Errors end the run with
a single `error: <Class>: <message>` line on stderr.
"""

import os
import sys
from argparse import ArgumentParser
from datetime import datetime, timezone

import numpy as np
import pandas as pd
import yaml

from cbsurv import __version__
from cbsurv.config import apply_overrides, build, load_config, section_defaults
from cbsurv.dataset import ColumnSchema, SurvivalDataset, load_dataset, read_table, write_table
from cbsurv.errors import CaseBaseError, DataError, UsageError
from cbsurv.eval import compare_models, frame_table, print_summary
from cbsurv.fit import FAMILIES, LAMBDA_CHOICES, FitContext
from cbsurv.model import hazard_ratio_curve, wald_ci
from cbsurv.rep import load_model, save_model, spec_from_str
from cbsurv.risk import DEFAULT_REFINEMENT, DEFAULT_SAMPLES, METHODS, cumulative_incidence, parse_grid
from cbsurv.sampling import (
    DEFAULT_RATIO,
    PersonMomentTable,
    is_person_moment_frame,
    sample_base_series,
)
from cbsurv.simulate import Bernoulli, Exponential, TruthSpec, simulate_dataset
from cbsurv.slogging import Logger
from cbsurv.utils import DEFAULT_SEED, fingerprint_file
from cbsurv.vis import plot_hazard_ratio, plot_risk, poptime_layout, render_svg


def _sep(value):
    return "\t" if value in ("tab", "\\t", "\t") else value


def _add_common(parser):
    parser.add_argument("--config", help="YAML config file, one section per subcommand")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", help="override a config value"
    )
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--sep", default=",", help="delimiter, `tab` for tabs")
    parser.add_argument("--log-file", default=None)
    parser.add_argument("--verbose", action="store_true")


def _add_schema(parser):
    parser.add_argument("--time-column", default="followup_time")
    parser.add_argument("--event-column", default="event_type")
    parser.add_argument("--id-column", default=None)
    parser.add_argument("--categorical", default="", help="comma-separated categorical columns")
    parser.add_argument("--ref", default="", help="reference levels, name:level,...")
    parser.add_argument("--tau", type=float, default=None)
    parser.add_argument("--causes", type=int, default=None)


class CommandParser(ArgumentParser):
    """Reports bad flags as a UsageError instead of exiting"""

    def error(self, message):
        raise UsageError(message)


def create_parser():
    parser = CommandParser(
        prog="cbsurv",
        description="Smooth-in-time hazard models fitted by case-base sampling",
    )
    parser.add_argument("--version", action="version", version=f"cbsurv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a dataset with known truth")
    _add_common(p)
    p.add_argument("--truth", default=None, help="set from a !TruthSpec in the config")
    p.add_argument("--rates", default="0.1", help="comma-separated exponential cause rates")
    p.add_argument("--log-hr", type=float, default=None, help="effect of a Bernoulli(0.5) `trt`")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--sim-tau", type=float, default=10.0)
    p.add_argument("--censoring-rate", type=float, default=None)
    p.add_argument("--output", required=True)

    p = sub.add_parser("sample", help="draw the base series of a dataset")
    _add_common(p)
    _add_schema(p)
    p.add_argument("--input", required=True)
    p.add_argument("--ratio", type=float, default=DEFAULT_RATIO)
    p.add_argument("--output", required=True)

    p = sub.add_parser("fit", help="fit a hazard model")
    _add_common(p)
    _add_schema(p)
    p.add_argument("--input", required=True, help="person-moment table or dataset")
    p.add_argument("--model", default="time=constant")
    p.add_argument("--family", choices=FAMILIES, default="auto")
    p.add_argument("--ratio", type=float, default=DEFAULT_RATIO)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--n-lambda", type=int, default=100)
    p.add_argument("--min-ratio", type=float, default=1e-4)
    p.add_argument("--penalty-factor", action="append", default=[], metavar="COLUMN=W")
    p.add_argument("--cv-folds", type=int, default=5)
    p.add_argument("--lambda-choice", choices=LAMBDA_CHOICES, default="min")
    p.add_argument("--no-standardize", action="store_true")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--coef-output", default=None)
    p.add_argument("--path-output", default=None)
    p.add_argument("--output", required=True)

    p = sub.add_parser("risk", help="cumulative incidence curves")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--profiles", default=None, help="CSV of covariate rows")
    p.add_argument("--profile", action="append", default=[], metavar="NAME=VALUE,...")
    p.add_argument("--grid", default="0:10:101", help="start:stop:count")
    p.add_argument("--method", choices=METHODS, default="trapezoid")
    p.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)
    p.add_argument("--refinement", type=int, default=DEFAULT_REFINEMENT)
    p.add_argument("--svg", default=None)
    p.add_argument("--output", required=True)

    p = sub.add_parser("hr", help="hazard ratio over time between two profiles")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--profile-a", required=True, metavar="NAME=VALUE,...")
    p.add_argument("--profile-b", required=True, metavar="NAME=VALUE,...")
    p.add_argument("--grid", default="0:10:101")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--cause", type=int, default=1)
    p.add_argument("--svg", default=None)
    p.add_argument("--output", required=True)

    p = sub.add_parser("poptime", help="population-time plot")
    _add_common(p)
    _add_schema(p)
    p.add_argument("--input", required=True)
    p.add_argument("--exposure", default=None)
    p.add_argument("--base", default=None, help="person-moment table to overlay")
    p.add_argument("--output", required=True, help=".svg for the plot, .csv for the layout")

    p = sub.add_parser("compare", help="analysis of deviance over several models")
    _add_common(p)
    _add_schema(p)
    p.add_argument("--input", required=True)
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--ratio", type=float, default=DEFAULT_RATIO)
    p.add_argument("--output", required=True)

    parser.commands = dict(sub.choices)
    return parser


def _names(text):
    return [v.strip() for v in (text or "").split(",") if v.strip()]


def _schema(args) -> ColumnSchema:
    reference = {}
    for pair in _names(args.ref):
        name, _, level = pair.partition(":")
        reference[name] = level
    return ColumnSchema(
        args.time_column,
        args.event_column,
        args.id_column,
        frozenset(_names(args.categorical)) | frozenset(reference),
        reference,
    )


def _read_input(args):
    """A person-moment table when the file has its signature columns, a dataset otherwise"""
    frame = read_table(args.input, sep=_sep(args.sep))
    if is_person_moment_frame(frame):
        return PersonMomentTable.load(args.input, sep=_sep(args.sep))
    return SurvivalDataset.from_frame(frame, _schema(args), args.causes, args.tau)


def _value(text, categorical):
    if categorical:
        return text
    try:
        return float(text)
    except ValueError:
        return text


def parse_profile(text, spec) -> pd.DataFrame:
    row = {}
    for pair in _names(text):
        name, sep, value = pair.partition("=")
        if not sep:
            raise UsageError(f"profile entry {pair!r} must look like name=value")
        row[name] = _value(value, name in spec.levels)
    return pd.DataFrame([row]) if row else pd.DataFrame(index=[0])


def _profiles(args, model) -> pd.DataFrame:
    if args.profiles:
        frame = read_table(args.profiles, sep=_sep(args.sep))
        for name in model.spec.levels:
            if name in frame.columns:
                frame[name] = frame[name].astype(str)
        return frame
    if args.profile:
        return pd.concat([parse_profile(p, model.spec) for p in args.profile], ignore_index=True)
    return parse_profile("", model.spec)


def _write_svg(data, path):
    try:
        with open(path, "wb") as f:
            f.write(data)
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from e


def _metadata(args, inputs, outputs):
    return {
        "command": args.command,
        "version": __version__,
        "seed": args.seed,
        "inputs": {p: fingerprint_file(p) for p in inputs if p and os.path.exists(p)},
        "outputs": [p for p in outputs if p],
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }


def _simulate(args):
    if args.truth is not None:
        truth = build(args.truth)
        if not isinstance(truth, TruthSpec):
            raise UsageError("truth must be a !TruthSpec")
    else:
        effects = {"trt": args.log_hr} if args.log_hr is not None else {}
        covariates = {"trt": Bernoulli(0.5)} if effects else {}
        causes = [Exponential(float(r), dict(effects)) for r in _names(args.rates)]
        truth = TruthSpec(causes, covariates, args.sim_tau, args.censoring_rate, args.n, args.seed)

    dataset = simulate_dataset(truth, threads=args.threads)
    write_table(dataset, args.output, sep=_sep(args.sep))

    sidecar = args.output + ".truth.yml"
    with open(sidecar, "w") as f:
        yaml.safe_dump(truth.to_dict(), f, sort_keys=False)

    Logger.info("SAMPLE", f"simulated n={len(dataset)} events={dataset.n_events()}")
    return [], [args.output, sidecar], truth.seed


def _sample(args):
    dataset = load_dataset(args.input, _schema(args), args.causes, args.tau, _sep(args.sep))
    table = sample_base_series(dataset, args.ratio, args.seed, threads=args.threads)
    table.save(args.output, sep=_sep(args.sep))
    return [args.input], [args.output], args.seed


def _penalty_factors(items):
    out = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"penalty factor {item!r} must look like column=w")
        out[name] = float(value)
    return out


def _fit(args):
    spec = spec_from_str(args.model)
    context = FitContext(
        spec,
        family=args.family,
        ratio=args.ratio,
        seed=args.seed,
        alpha=args.alpha,
        n_lambda=args.n_lambda,
        min_ratio=args.min_ratio,
        penalty_factors=_penalty_factors(args.penalty_factor),
        folds=args.cv_folds,
        lambda_choice=args.lambda_choice,
        standardize=not args.no_standardize,
        threads=args.threads,
    )
    outcome = context(_read_input(args))
    model = outcome.model

    save_model(model, args.output)
    print_summary(model)

    if args.coef_output:
        if model.covariance is not None and model.fit.converged:
            write_table(wald_ci(model, args.level), args.coef_output, sep=_sep(args.sep))
        else:
            coefs = pd.DataFrame(model.coefficients, columns=model.column_names)
            coefs.insert(0, "cause", np.arange(1, model.causes + 1))
            write_table(coefs, args.coef_output, sep=_sep(args.sep))

    if args.path_output and outcome.path is not None:
        path = outcome.path.to_frame()
        if outcome.cv is not None:
            path.insert(3, "cv_deviance", outcome.cv.cv_deviance)
            path.insert(4, "cv_se", outcome.cv.cv_se)
        write_table(path, args.path_output, sep=_sep(args.sep))

    return [args.input], [args.output, args.coef_output, args.path_output], args.seed


def _risk(args):
    model = load_model(args.model)
    grid = parse_grid(args.grid)
    profiles = _profiles(args, model)

    curve = cumulative_incidence(
        model,
        profiles,
        grid,
        method=args.method,
        n_samples=args.samples,
        seed=args.seed,
        refinement=args.refinement,
        threads=args.threads,
    )

    frame = curve.to_frame()
    if curve.mc_meta is not None:
        se = curve.mc_meta["se"]
        for k, name in enumerate(list(frame.columns[1:])):
            p, j = divmod(k, curve.causes)
            frame[name + ".se"] = se[:, p, j]

    write_table(frame, args.output, sep=_sep(args.sep))
    if args.svg:
        _write_svg(plot_risk(curve), args.svg)

    return [args.model, args.profiles], [args.output, args.svg], args.seed


def _hr(args):
    model = load_model(args.model)
    grid = parse_grid(args.grid)

    frame = hazard_ratio_curve(
        model,
        parse_profile(args.profile_a, model.spec),
        parse_profile(args.profile_b, model.spec),
        grid,
        level=args.level,
        cause=args.cause,
    )
    write_table(frame, args.output, sep=_sep(args.sep))
    if args.svg:
        _write_svg(plot_hazard_ratio(frame), args.svg)

    return [args.model], [args.output, args.svg], args.seed


def _poptime(args):
    dataset = load_dataset(args.input, _schema(args), args.causes, args.tau, _sep(args.sep))
    base = PersonMomentTable.load(args.base, sep=_sep(args.sep)) if args.base else None

    layout = poptime_layout(dataset, args.exposure, base, args.seed)
    if args.output.endswith(".csv"):
        write_table(layout, args.output, sep=_sep(args.sep))
    else:
        _write_svg(render_svg(layout), args.output)

    return [args.input, args.base], [args.output], args.seed


def _compare(args):
    data = _read_input(args)
    if isinstance(data, SurvivalDataset):
        data = sample_base_series(data, args.ratio, args.seed, threads=args.threads)

    frame = compare_models(data, [spec_from_str(m) for m in args.models])
    Logger.table(frame_table(frame, "Analysis of deviance"))
    write_table(frame, args.output, sep=_sep(args.sep))
    return [args.input], [args.output], args.seed


COMMANDS = {
    "simulate": _simulate,
    "sample": _sample,
    "fit": _fit,
    "risk": _risk,
    "hr": _hr,
    "poptime": _poptime,
    "compare": _compare,
}


def parse_args(argv):
    """
    Flags over config values over built-in defaults. The config file and
    `--set` overrides only apply to the chosen subcommand's section.
    """
    parser = create_parser()

    early = CommandParser(add_help=False)
    early.add_argument("--config")
    early.add_argument("--set", action="append", default=[])
    found, _ = early.parse_known_args(argv)

    command = argv[0] if argv and argv[0] in parser.commands else None
    if found.config and command:
        subparser = parser.commands[command]
        known = {a.dest for a in subparser._actions} - {"help", "config", "set"}

        config = load_config(found.config)
        defaults = apply_overrides(section_defaults(config, command, known), found.set)

        subparser.set_defaults(**defaults)
        for action in subparser._actions:
            if action.dest in defaults:
                action.required = False
    elif found.set:
        raise UsageError("--set needs a --config file")

    return parser.parse_args(argv)


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)

    try:
        try:
            args = parse_args(argv)
        except SystemExit as e:
            return int(e.code or 0)

        if args.log_file:
            Logger.init(
                os.path.dirname(args.log_file) or ".",
                os.path.basename(args.log_file),
                overwrite=True,
                verbose=args.verbose,
            )
        elif args.verbose:
            Logger.verbose = True

        inputs, outputs, seed = COMMANDS[args.command](args)
        args.seed = seed

        with open(args.output + ".run.yml", "w") as f:
            yaml.safe_dump(_metadata(args, inputs, outputs), f, sort_keys=False)
        return 0

    except CaseBaseError as e:
        sys.stderr.write(f"error: {type(e).__name__}: {e}\n")
        return e.exit_code
    except OSError as e:
        sys.stderr.write(f"error: DataError: {e}\n")
        return DataError.exit_code
    finally:
        Logger.close()


def main():
    sys.exit(run())
