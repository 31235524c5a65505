"""Command-line interface.

Exit status is 0 on success, 1 for invalid input and 2 when a numerical
routine fails.  Global flags may appear before or after the subcommand.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import gp
from .dataset_io import ScalingInfo, load_dataset, standardize
from .errors import NumericalError, ValidationError
from .gain import InterventionConstraints, Transformation, rank_candidates
from .harness import SimConfig, resolve_sem, run_sem_study, run_simulation, sim_config_preset
from .optimize import OptimizerSettings, forward_stepwise_covfix, personalized_intervention, sparse_shift

log = logging.getLogger("intervene")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def read_config(path) -> dict:
    """JSON object, or ``key = value`` / ``key: value`` lines with ``#`` comments."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such config file: {path}")
    text = path.read_text()
    if text.lstrip().startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(obj, dict):
            raise ValidationError(f"{path}: config must be an object")
        return obj
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise ValidationError(f"{path}: line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split(sep, 1))
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out


def _read_json(path) -> object:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None


def _emit(args, name: str, payload: dict) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(json.dumps(payload, indent=2))
    print(json.dumps(payload, indent=2))
    return path


def _settings(args) -> OptimizerSettings:
    cfg = dict(args.config_values)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return OptimizerSettings.from_mapping(cfg)


def _fit_config(args) -> gp.FitConfig:
    restarts = int(args.config_values.get("fit_restarts", 5))
    return gp.FitConfig(restarts=restarts, seed=0 if args.seed is None else args.seed,
                        ard=getattr(args, "kernel", "ard") == "ard")


def _load_model(path):
    """Model file -> (model, standardized data, raw data, scaling)."""
    obj = _read_json(path)
    try:
        data_path = Path(obj["data_path"])
        outcome = obj["outcome"]
    except (KeyError, TypeError):
        raise ValidationError(f"{path}: not a model file (needs data_path and outcome)") from None
    if not data_path.is_absolute():
        data_path = Path(path).parent / data_path
    raw = load_dataset(data_path, outcome)
    std, info = standardize(raw)
    if "scaling" in obj:
        stored = ScalingInfo.from_dict(obj["scaling"])
        if not (np.allclose(stored.means, info.means) and np.allclose(stored.scales, info.scales)):
            raise ValidationError("training data scaling differs from the model file")
    return gp.model_from_dict(obj, std), std, raw, info


def _constraints(args, raw, info, k=None) -> InterventionConstraints:
    d = raw.d
    bound = np.full(d, float(args.bound))
    immutable = np.zeros(d, dtype=bool)
    for name in filter(None, (args.immutable or "").split(",")):
        immutable[raw.column_index(name.strip())] = True
    k = args.k if k is None else k
    return InterventionConstraints.box(d, bound / info.covariate_scales, k, args.alpha, immutable)


def _row(args, raw) -> np.ndarray:
    if args.row is not None:
        try:
            x = np.array([float(v) for v in args.row.split(",")])
        except ValueError:
            raise ValidationError(f"--row must be comma-separated numbers: {args.row!r}") from None
        if x.size != raw.d:
            raise ValidationError(f"--row has {x.size} values, expected {raw.d}")
        return x
    if not 0 <= args.row_index < raw.n:
        raise ValidationError(f"--row-index must be in [0, {raw.n})")
    return np.array(raw.covariates[args.row_index])


def cmd_fit(args) -> int:
    raw = load_dataset(args.data, args.outcome)
    std, info = standardize(raw)
    model = gp.fit(std, _fit_config(args))
    payload = gp.model_to_dict(model, info, str(Path(args.data).resolve()))
    payload["outcome"] = args.outcome
    payload["columns"] = list(raw.column_names)
    payload["log_marginal_likelihood"] = gp.log_marginal_likelihood(std, model.hyperparams)
    _emit(args, "model.json", payload)
    return EXIT_OK


def cmd_personalize(args) -> int:
    model, std, raw, info = _load_model(args.model)
    x = _row(args, raw)
    c = _constraints(args, raw, info)
    x_std = (x - info.covariate_means) / info.covariate_scales
    t, J = personalized_intervention(model, x_std, c, _settings(args))
    delta = t.shift * info.covariate_scales
    t_orig = Transformation.shift_by(delta)
    payload = {"transformation": t_orig.to_dict(raw.column_names), "x": x.tolist(),
               "x_new": (x + delta).tolist(), "objective": J * info.outcome_scale,
               "alpha": args.alpha, "intervene": bool(J > 0)}
    _emit(args, "personalized.json", payload)
    return EXIT_OK


def _population(args, raw, info):
    if args.data is None:
        return None
    pop = load_dataset(args.data, raw.outcome_name) if args.outcome is None \
        else load_dataset(args.data, args.outcome)
    if pop.column_names != raw.column_names:
        raise ValidationError("population columns differ from the training columns")
    return (pop.covariates - info.covariate_means) / info.covariate_scales


def cmd_shift(args) -> int:
    model, std, raw, info = _load_model(args.model)
    pop = _population(args, raw, info)
    c = _constraints(args, raw, info)
    res = sparse_shift(model, std if pop is None else pop, c, _settings(args))
    payload = res.to_dict(raw.column_names, info.covariate_scales)
    payload["objective_value"] = res.objective_value * info.outcome_scale
    payload["alpha"] = args.alpha
    _emit(args, "shift.json", payload)
    return EXIT_OK


def cmd_covfix(args) -> int:
    model, std, raw, info = _load_model(args.model)
    pop = _population(args, raw, info)
    ctx = std.covariates if pop is None else pop
    lo, hi = std.covariates.min(axis=0), std.covariates.max(axis=0)
    k = raw.d if args.k is None else args.k
    res = forward_stepwise_covfix(model, ctx, k, np.column_stack([lo, hi]), args.alpha,
                                  _settings(args))
    idx = list(res.fix_set)
    values = np.asarray(res.values) * info.covariate_scales[idx] + info.covariate_means[idx]
    payload = {"fix_set": idx, "fix_names": [raw.column_names[i] for i in idx],
               "values": values.tolist(), "objective_value": res.objective_value * info.outcome_scale,
               "trace": [[int(s), J * info.outcome_scale] for s, J in res.trace],
               "alpha": args.alpha}
    _emit(args, "covfix.json", payload)
    return EXIT_OK


def _to_standard(t: Transformation, info) -> Transformation:
    if t.kind == "shift":
        return Transformation.shift_by(t.shift / info.covariate_scales, t.label)
    idx = list(t.fix_indices)
    z = (t.fix_values - info.covariate_means[idx]) / info.covariate_scales[idx]
    return Transformation.fix(idx, z, t.label)


def cmd_rank(args) -> int:
    model, std, raw, info = _load_model(args.model)
    obj = _read_json(args.candidates)
    items = obj.get("candidates") if isinstance(obj, dict) else obj
    if not isinstance(items, list):
        raise ValidationError("candidate file must hold a list of transformations")
    cands = [Transformation.from_dict(c, raw.column_names) for c in items]
    for t in cands:
        if t.kind == "shift" and t.shift.size != raw.d:
            raise ValidationError(f"shift candidate has length {t.shift.size}, expected {raw.d}")
    scaled = [_to_standard(t, info) for t in cands]
    original = {id(t): orig for t, orig in zip(scaled, cands)}
    ranking = []
    for r in rank_candidates(model, std, scaled, args.alpha):
        ranking.append({"candidate": original[id(r.candidate)].to_dict(raw.column_names),
                        "score": r.score * info.outcome_scale,
                        "gain_mean": r.gain.mean * info.outcome_scale,
                        "gain_sd": float(np.sqrt(r.gain.variance)) * info.outcome_scale,
                        "recommended": r.recommended})
    _emit(args, "ranking.json", {"alpha": args.alpha, "ranking": ranking})
    return EXIT_OK


def cmd_simulate(args) -> int:
    mapping = {}
    if args.preset:
        mapping.update(sim_config_preset(args.preset))
    if args.sim_config:
        mapping.update(read_config(args.sim_config))
    for key in ("trials", "k"):
        if getattr(args, key, None) is not None:
            mapping[key] = getattr(args, key)
    if args.seed is not None:
        mapping["seed"] = args.seed
    if args.alpha_given:
        mapping["alphas"] = [args.alpha]
    config = SimConfig.from_mapping(mapping)
    report = run_simulation(config, _settings(args))
    csv_path, json_path = report.write(args.out, args.name)
    print(json.dumps({"csv": str(csv_path), "summary": report.summary}, indent=2))
    return EXIT_OK


def cmd_sem_study(args) -> int:
    spec = _read_json(args.sem_spec)
    resolve_sem(spec, 0)
    report = run_sem_study(spec, tuple(args.n), args.trials, args.bound_sd,
                           0 if args.seed is None else args.seed, (args.alpha,),
                           settings=_settings(args))
    csv_path, json_path = report.write(args.out, args.name)
    print(json.dumps({"csv": str(csv_path), "summary": report.summary}, indent=2))
    return EXIT_OK


def _global_flags(p: argparse.ArgumentParser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--alpha", type=float, default=d(0.05),
                   help="posterior quantile level (default 0.05)")
    p.add_argument("--k", type=int, default=d(None), help="maximum number of covariates to change")
    p.add_argument("--seed", type=int, default=d(None), help="random seed for restarts and fits")
    p.add_argument("--config", default=d(None), help="key-value or JSON run configuration")
    p.add_argument("--out", default=d("."), help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="intervene", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        p.set_defaults(func=func)
        return p

    def model_args(p, bound=True):
        p.add_argument("--model", required=True, help="model file written by `fit`")
        if bound:
            p.add_argument("--bound", type=float, default=1.0,
                           help="per-covariate shift bound in original units (default 1)")
            p.add_argument("--immutable", default="", help="comma-separated covariates to keep")

    p = add("fit", cmd_fit, "fit a GP to a CSV file")
    p.add_argument("--data", required=True)
    p.add_argument("--outcome", required=True, help="outcome column name")
    p.add_argument("--kernel", choices=("ard", "iso"), default="ard",
                   help="one lengthscale per covariate (ard) or a shared one (iso)")

    p = add("personalize", cmd_personalize, "best shift for one individual")
    model_args(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--row", help="comma-separated covariate values")
    g.add_argument("--row-index", type=int, help="row of the training data")

    p = add("shift", cmd_shift, "best sparse population shift")
    model_args(p)
    p.add_argument("--data", help="population CSV (default: training data)")
    p.add_argument("--outcome", help="outcome column of --data, if it differs")

    p = add("covfix", cmd_covfix, "best sparse covariate fixing")
    model_args(p, bound=False)
    p.add_argument("--data", help="population CSV (default: training data)")
    p.add_argument("--outcome", help="outcome column of --data, if it differs")

    p = add("rank", cmd_rank, "rank candidate interventions")
    model_args(p, bound=False)
    p.add_argument("--candidates", required=True, help="JSON list of transformations")

    p = add("simulate", cmd_simulate, "run a simulation suite")
    p.add_argument("sim_config", nargs="?", help="simulation config file")
    p.add_argument("--preset", help="named configuration to start from")
    p.add_argument("--trials", type=int)
    p.add_argument("--name", default="simulation", help="report file stem")

    p = add("sem-study", cmd_sem_study, "SEM misspecification study")
    p.add_argument("sem_spec", help="SEM JSON or random spec {d, density, seed}")
    p.add_argument("--n", type=int, nargs="+", default=[500])
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--bound-sd", type=float, default=1.0)
    p.add_argument("--name", default="sem_study", help="report file stem")
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return EXIT_INVALID
        args.alpha_given = any(a == "--alpha" or a.startswith("--alpha=") for a in argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if not 0.0 < args.alpha <= 0.5:
            raise ValidationError(f"--alpha must lie in (0, 0.5], got {args.alpha}")
        args.config_values = read_config(args.config) if args.config else {}
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
