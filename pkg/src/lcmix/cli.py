"""Command-line entry point.

Subcommands: estimate, predict, cv, simulate, profile, gradcheck.
Options may come from a key-value config file (--config) with the same
names as the flags (underscores for dashes); explicit flags win.  Every
command is deterministic given its config and seed, and the primary output
files are byte-identical across reruns.

Exit codes: 0 success, 2 config/validation error, 3 estimation failure,
4 I/O error.
"""

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import em, kv, metrics, mnl, modelfile, optim
from .errors import EstimationError, ValidationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ESTIMATION = 3
EXIT_IO = 4

_SCHEMA_KEYS = ("person_col", "situation_col", "alt_col", "chosen_col",
                "attr_cols", "cont_cols", "bin_cols", "avail_col")


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings for one estimation-style command."""

    data: str
    schema: data_mod.DatasetSchema
    model: str = "mnl"
    classes: int = 1
    structure: str = "full"
    init: str = "table"
    restarts: int = 5
    tol: float = 1e-7
    max_iter: int = 500
    seed: int = 0
    threads: int = 1
    out: str = "."
    standardize: tuple = ()
    fix_zero: tuple = ()
    folds: int = 5
    se: bool = False


def _load_config_mapping(path):
    if path is None:
        return {}
    return kv.read(path)


def _resolve(args, key, mapping, default, convert=str):
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in mapping:
        return convert(mapping[key])
    return default


def _build_run_config(args):
    mapping = _load_config_mapping(getattr(args, "config", None))
    data_path = _resolve(args, "data", mapping, None)
    if not data_path:
        raise ValidationError("no dataset given (use --data or the config file)")
    schema_path = _resolve(args, "schema", mapping, None)
    if schema_path:
        schema = data_mod.DatasetSchema.from_file(schema_path)
    elif any(k in mapping for k in _SCHEMA_KEYS):
        schema = data_mod.DatasetSchema.from_mapping(mapping, source="config")
    else:
        raise ValidationError("no schema given (use --schema or put the column "
                              "mapping in the config file)")
    fix_zero = _resolve(args, "fix_zero", mapping, (), kv.parse_strings)
    if isinstance(fix_zero, str):
        fix_zero = kv.parse_strings(fix_zero)
    if fix_zero:
        unknown = [c for c in fix_zero if c not in schema.attr_cols]
        if unknown:
            raise ValidationError(
                f"fix_zero names unknown attribute column(s): {', '.join(unknown)}")
        kept = tuple(c for c in schema.attr_cols if c not in fix_zero)
        schema = data_mod.DatasetSchema(
            person_col=schema.person_col, situation_col=schema.situation_col,
            alt_col=schema.alt_col, chosen_col=schema.chosen_col,
            attr_cols=kept, cont_cols=schema.cont_cols, bin_cols=schema.bin_cols,
            avail_col=schema.avail_col,
        )
    standardize = _resolve(args, "standardize", mapping, (), kv.parse_strings)
    if isinstance(standardize, str):
        standardize = kv.parse_strings(standardize)
    return RunConfig(
        data=data_path,
        schema=schema,
        model=_resolve(args, "model", mapping, "mnl"),
        classes=int(_resolve(args, "classes", mapping, 1, int)),
        structure=_resolve(args, "structure", mapping, "full"),
        init=_resolve(args, "init", mapping, "table"),
        restarts=int(_resolve(args, "restarts", mapping, 5, int)),
        tol=float(_resolve(args, "tol", mapping, 1e-7, float)),
        max_iter=int(_resolve(args, "max_iter", mapping, 500, int)),
        seed=int(_resolve(args, "seed", mapping, 0, int)),
        threads=int(_resolve(args, "threads", mapping, 1, int)),
        out=_resolve(args, "out", mapping, "."),
        standardize=tuple(standardize),
        fix_zero=tuple(fix_zero),
        folds=int(_resolve(args, "folds", mapping, 5, int)),
        se=bool(getattr(args, "se", False)),
    )


def _standardize_indices(config):
    indices = []
    for label in config.standardize:
        if label not in config.schema.cont_cols:
            raise ValidationError(
                f"standardize names unknown continuous column: {label!r}")
        indices.append(config.schema.cont_cols.index(label))
    return tuple(indices)


def _model_spec(config):
    if config.init == "table":
        incremental = config.classes > 1 and config.model != "mnl"
    elif config.init in ("random", "kmeans", "zero"):
        incremental = False
    else:
        raise ValidationError(f"unknown --init strategy {config.init!r}")
    return em.ModelSpec(
        model=config.model,
        n_classes=config.classes,
        structure=config.structure,
        tol=config.tol,
        max_iter=config.max_iter,
        standardize=_standardize_indices(config),
        n_trials=config.restarts,
        incremental=incremental,
    )


def _fit_for_config(ds, config):
    spec = _model_spec(config)
    if config.init == "table" or config.model == "mnl":
        return em.estimate(ds, spec, seed=config.seed, threads=config.threads)
    # single-strategy plan
    record = None
    if spec.standardize:
        ds, record = data_mod.standardize(ds, spec.standardize)
    mnl.check_identification(ds)
    plan = tuple(
        em.RestartSpec(init=config.init, seed=config.seed + i)
        for i in range(config.restarts)
    )
    fit = em.run_restarts(
        ds, config.model, config.classes, plan, structure=config.structure,
        tol=config.tol, max_iter=config.max_iter, threads=config.threads,
    )
    return fit, record


def _write_convergence_log(path, fit):
    lines = ["# iteration  log_likelihood  seconds"]
    seconds = fit.iter_seconds or (0.0,) * len(fit.ll_trace)
    for i, (ll, sec) in enumerate(zip(fit.ll_trace, seconds), start=1):
        lines.append(f"{i}  {repr(float(ll))}  {sec:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_estimate(args):
    config = _build_run_config(args)
    ds = data_mod.load_dataset(config.data, config.schema)
    fit, record = _fit_for_config(ds, config)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    labels = modelfile.ModelLabels.from_schema(config.schema)
    modelfile.save_model(out / "model.kv", fit, ds.alt_count, labels=labels,
                         standardization=record)
    summary = metrics.summarize_fit(fit, ds)
    table = metrics.render_summary_table([summary])
    (out / "summary.txt").write_text(table, encoding="utf-8")
    kv.write(out / "summary.kv", metrics.summary_to_kv(summary))
    _write_convergence_log(out / "convergence.log", fit)
    if config.se:
        ds_fit = ds
        if record is not None:
            ds_fit = data_mod.apply_standardization(ds, record)
        se_table = metrics.standard_errors(ds_fit, fit.params, fit.model,
                                           attr_labels=labels.attr)
        (out / "params.txt").write_text(metrics.render_standard_errors(se_table),
                                        encoding="utf-8")
        sys.stdout.write(metrics.render_standard_errors(se_table))
    sys.stdout.write(table)
    return EXIT_OK


def _check_prediction_schema(model, schema):
    got = modelfile.ModelLabels.from_schema(schema)
    if (model.labels.attr and got.attr != model.labels.attr) \
            or (model.labels.cont and got.cont != model.labels.cont) \
            or (model.labels.bin and got.bin != model.labels.bin):
        raise ValidationError(
            "schema mismatch: the model was trained with "
            f"attrs={list(model.labels.attr)}, cont={list(model.labels.cont)}, "
            f"bin={list(model.labels.bin)}"
        )


def cmd_predict(args):
    model = modelfile.load_model(args.model_file)
    mapping = _load_config_mapping(getattr(args, "config", None))
    schema_path = _resolve(args, "schema", mapping, None)
    if schema_path:
        schema = data_mod.DatasetSchema.from_file(schema_path)
    elif any(k in mapping for k in _SCHEMA_KEYS):
        schema = data_mod.DatasetSchema.from_mapping(mapping, source="config")
    else:
        raise ValidationError("no schema given for the holdout file")
    _check_prediction_schema(model, schema)
    ds = data_mod.load_dataset(args.data, schema)
    if model.standardization is not None:
        ds = data_mod.apply_standardization(ds, model.standardization)
    pred_ll, probs = em.predict(model.params, ds)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    packed = ds.packed
    with open(out / "probabilities.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["person_id", "situation",
                         *[f"prob_{j}" for j in range(ds.alt_count)]])
        situation_in_person = {}
        for s in range(probs.shape[0]):
            person = ds.persons[packed.person_of[s]]
            t = situation_in_person.get(person.id, 0)
            situation_in_person[person.id] = t + 1
            writer.writerow([person.id, t, *[repr(float(v)) for v in probs[s]]])
    kv.write(out / "predict.kv", {
        "predictive_ll": pred_ll,
        "situations": probs.shape[0],
        "persons": ds.n_persons,
    })
    sys.stdout.write(f"predictive log-likelihood: {pred_ll:.6f}\n")
    return EXIT_OK


def cmd_cv(args):
    config = _build_run_config(args)
    if config.folds < 2:
        raise ValidationError("cross-validation needs at least 2 folds")
    ds = data_mod.load_dataset(config.data, config.schema)
    spec = _model_spec(config)
    result = metrics.cross_validate(ds, spec, config.folds, config.seed,
                                    threads=config.threads)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    items = {"folds": config.folds, "seed": config.seed,
             "mean_pred_ll": result.mean_pred_ll}
    lines = [f"{config.folds}-fold cross-validation (seed {config.seed})"]
    for i, ll in enumerate(result.fold_pred_lls):
        items[f"fold.{i}.pred_ll"] = ll if ll is not None else "failed"
        items[f"fold.{i}.persons"] = result.fold_sizes[i]
        shown = f"{ll:.6f}" if ll is not None else f"FAILED ({result.failures[i]})"
        lines.append(f"  fold {i} ({result.fold_sizes[i]} persons): {shown}")
    lines.append(f"  mean predictive LL: {result.mean_pred_ll:.6f}")
    kv.write(out / "cv.kv", items)
    report = "\n".join(lines) + "\n"
    (out / "cv.txt").write_text(report, encoding="utf-8")
    sys.stdout.write(report)
    return EXIT_ESTIMATION if result.n_failed else EXIT_OK


def cmd_simulate(args):
    model = modelfile.load_model(args.params)
    if model.model != "gbm-lccm":
        raise ValidationError("simulation needs a gbm-lccm parameter file")
    if args.persons < 1:
        raise ValidationError("need at least one person")
    if args.situations < 1:
        raise ValidationError("need at least one situation per person")
    sampler = data_mod.UniformAttributeSampler(
        alt_count=model.alt_count,
        attr_count=model.params.betas.shape[1],
        low=args.attr_low,
        high=args.attr_high,
    )
    ds = data_mod.simulate_dataset(model.params, args.persons, args.situations,
                                   sampler, seed=args.seed)
    schema = None
    if model.labels.attr:
        schema = data_mod.DatasetSchema(
            attr_cols=model.labels.attr, cont_cols=model.labels.cont,
            bin_cols=model.labels.bin, avail_col="available",
        )
    data_mod.save_dataset(ds, args.out, schema=schema)
    sys.stdout.write(
        f"wrote {ds.n_persons} persons x {args.situations} situations to {args.out}\n")
    return EXIT_OK


def cmd_profile(args):
    model = modelfile.load_model(args.model_file)
    if model.model == "mnl":
        raise ValidationError("the plain logit has no latent classes to profile")
    if model.model == "gbm-lccm":
        profile = metrics.class_profile(
            model.params, standardization=model.standardization,
            cont_labels=model.labels.cont or None,
            bin_labels=model.labels.bin or None,
        )
        text = metrics.render_class_profile(profile)
    else:
        # Logit membership: report the coefficient rows (last class is the base).
        lines = ["membership coefficients (last class normalized to zero)"]
        cols = ["const", *model.labels.cont, *model.labels.bin]
        if len(cols) != model.params.gamma.shape[1]:
            cols = [f"z{i}" for i in range(model.params.gamma.shape[1])]
        lines.append("  class  " + "  ".join(f"{c:>12}" for c in cols))
        for k in range(model.params.gamma.shape[0]):
            row = "  ".join(f"{v:12.4f}" for v in model.params.gamma[k])
            lines.append(f"  {k + 1:>5}  {row}")
        text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(args):
    config = _build_run_config(args)
    ds = data_mod.load_dataset(config.data, config.schema)
    rng = np.random.default_rng(config.seed)
    beta = rng.normal(scale=0.5, size=ds.attr_count)
    weights = np.ones(ds.n_persons)

    def objective(b):
        return mnl.weighted_panel_loglik(ds, b, weights)

    error = optim.check_gradient(objective, beta, step=args.step)
    sys.stdout.write(f"max relative gradient error: {error:.3e} "
                     f"(tolerance {args.grad_tol:.1e})\n")
    return EXIT_OK if error < args.grad_tol else EXIT_ESTIMATION


def _add_common_options(parser, include_model=True):
    parser.add_argument("--config", help="key-value config file; flags override it")
    parser.add_argument("--data", help="long-format CSV dataset")
    parser.add_argument("--schema", help="key-value schema file (column mapping)")
    if include_model:
        parser.add_argument("--model", choices=["mnl", "lccm", "gbm-lccm"])
        parser.add_argument("--classes", type=int)
        parser.add_argument("--structure",
                            choices=["full", "tied", "diagonal", "spherical"])
        parser.add_argument("--init",
                            help="table (default), random, kmeans, or zero (lccm)")
        parser.add_argument("--restarts", type=int,
                            help="trials per initialization strategy")
        parser.add_argument("--tol", type=float)
        parser.add_argument("--max-iter", dest="max_iter", type=int)
        parser.add_argument("--standardize",
                            help="comma list of continuous columns to standardize")
        parser.add_argument("--fix-zero", dest="fix_zero",
                            help="attribute columns whose coefficients are fixed to 0")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--out", help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lcmix",
        description="Latent class choice models with mixture-model class membership.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="fit a model with the restart protocol")
    _add_common_options(p)
    p.add_argument("--se", action="store_true",
                   help="also compute finite-difference standard errors")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("predict", help="holdout predictive log-likelihood")
    p.add_argument("--model-file", dest="model_file", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--schema")
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("cv", help="k-fold cross-validation")
    _add_common_options(p)
    p.add_argument("--folds", type=int)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("simulate", help="draw a synthetic dataset from a model file")
    p.add_argument("--params", required=True, help="gbm-lccm model file")
    p.add_argument("--persons", type=int, required=True)
    p.add_argument("--situations", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--attr-low", dest="attr_low", type=float, default=-1.0)
    p.add_argument("--attr-high", dest="attr_high", type=float, default=1.0)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("profile", help="class membership profile of a fitted model")
    p.add_argument("--model-file", dest="model_file", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("gradcheck", help="verify the analytic likelihood gradient")
    _add_common_options(p, include_model=False)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--grad-tol", dest="grad_tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EstimationError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
