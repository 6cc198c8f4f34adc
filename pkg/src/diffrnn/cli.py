"""Command-line interface.

Subcommands: ``gen-data``, ``train``, ``eval``, ``grad-check``, ``demo-smooth``.

Every subcommand accepts ``--config FILE``, a flat ``key = value`` file whose
keys are option names (dashes or underscores). Values from the file override
values given as flags. Commands that write outputs also write the fully
resolved configuration as ``config.txt`` next to them; passing that file back
with ``--config`` reproduces the run.

Exit codes: 0 success, 1 a check failed (grad-check), 2 configuration error,
3 data/file error, 4 numeric divergence.
"""

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .activations import DiffusedActivation
from .cost import mse
from .exceptions import ConfigError, DataFormatError, DivergenceError, DomainError, NumericError
from .grad import fd_check, gradient, gradient_reference
from .model import Dims, init_params, load_params, save_params
from .optimizer import (
    ContinuationSchedule,
    StepRule,
    ackley,
    continuation_train,
    grid_diffuse_demo,
    sgd_train,
)
from .tasks import gen_adding, load_dataset, save_dataset, split

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

# keys that describe the invocation rather than the experiment
_NOT_CONFIG = {"config", "func"}


def parse_bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def float_list(text):
    text = str(text).strip()
    if not text:
        return []
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from err


def int_list(text):
    text = str(text).strip()
    try:
        return [int(v) for v in text.split(",")] if text else []
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from err


def optional_float(text):
    text = str(text).strip().lower()
    return None if text in ("", "none") else float(text)


def optional_int(text):
    text = str(text).strip().lower()
    return None if text in ("", "none") else int(text)


def _format_value(value):
    if isinstance(value, (list, tuple)):
        return ",".join(_format_value(v) for v in value)
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    entries = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from err
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        entries[key.replace("-", "_")] = value
    return entries


def apply_config(parser, args, entries):
    """Overwrite ``args`` with config entries, converted like the matching flag."""
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help",)}
    for key, raw in entries.items():
        if key == "command":
            if raw != args.command:
                raise ConfigError(f"config was written for {raw!r}, not {args.command!r}")
            continue
        if key not in actions or key in _NOT_CONFIG:
            raise ConfigError(f"unknown config key {key!r} for {args.command}")
        action = actions[key]
        convert = action.type or str
        try:
            value = convert(raw)
        except (argparse.ArgumentTypeError, ValueError) as err:
            raise ConfigError(f"bad value for {key}: {raw!r} ({err})") from err
        if action.choices is not None and value not in action.choices:
            raise ConfigError(f"{key} must be one of {sorted(action.choices)}, got {value!r}")
        setattr(args, key, value)
    return args


def resolved_config(args):
    items = {"command": args.command}
    for key, value in sorted(vars(args).items()):
        if key not in _NOT_CONFIG and key != "command":
            items[key] = value
    return items


def write_config(args, directory):
    path = Path(directory) / "config.txt"
    lines = [f"{k} = {_format_value(v)}" for k, v in resolved_config(args).items()]
    path.write_text("\n".join(lines) + "\n")
    return path


def _activation(args):
    try:
        return DiffusedActivation(args.activation, args.sharpness)
    except ValueError as err:
        raise ConfigError(str(err)) from err


def _out_dir(path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------- commands
def cmd_gen_data(args):
    if args.length < 2:
        raise ConfigError(f"length must be at least 2, got {args.length}")
    if args.n_train < 0 or args.n_test < 0 or args.n_train + args.n_test < 1:
        raise ConfigError("n_train and n_test must be nonnegative with a positive sum")
    data = gen_adding(args.n_train + args.n_test, args.length, args.seed, supervision=args.supervision)
    train, test = split(data, args.n_train, args.n_test, args.seed)
    out = _out_dir(args.out_dir)
    save_dataset(train, out / "train.bin")
    save_dataset(test, out / "test.bin")
    write_config(args, out)
    print(f"wrote {len(train)} train and {len(test)} test sequences to {out}")
    return EXIT_OK


def _schedule(args):
    if args.sigmas:
        sigmas = tuple(args.sigmas)
        budget = [args.stage_epochs] * (len(sigmas) - 1)
    else:
        sigmas = tuple(args.sigma0 * args.gamma**k for k in range(args.n_stages)) + (0.0,)
        budget = [args.stage_epochs] * args.n_stages
    final = args.stage_epochs if args.final_epochs is None else args.final_epochs
    return ContinuationSchedule(sigmas, budget + [final], args.grad_tol, args.batch_size)


def cmd_train(args):
    act = _activation(args)
    train = load_dataset(args.train)
    test = load_dataset(args.test) if args.test else None
    if args.supervision != "file":
        train.supervision = args.supervision
    dims = Dims(train.input_dim, args.hidden, train.output_dim)
    params0 = init_params(dims, args.init, args.init_scale, args.seed)
    try:
        if args.method == "diffusion":
            schedule = _schedule(args)
            rule = StepRule(args.eta, args.normalize, args.floor)
            params, log = continuation_train(
                params0, train, act, schedule, rule, args.lam, args.seed, test, args.stop_at
            )
        else:
            batch = len(train) if args.batch_size is None else args.batch_size
            params, log = sgd_train(params0, train, act, batch, args.lr, args.epochs, args.seed, test, args.stop_at)
    except DomainError as err:
        raise ConfigError(str(err)) from err
    out = _out_dir(args.out_dir)
    save_params(params, out / "model.bin")
    log.to_csv(out / "log.csv")
    write_config(args, out)
    last = log.rows[-1] if len(log) else None
    summary = {
        "epochs": len(log),
        "final_train_cost": None if last is None else last.train_cost,
        "final_test_mse": None if last is None or math.isnan(last.test_mse) else last.test_mse,
        "epochs_to_target": log.epochs_to(args.stop_at) if args.stop_at is not None else None,
    }
    print(json.dumps(summary))
    return EXIT_OK


def cmd_eval(args):
    act = _activation(args)
    params = load_params(args.checkpoint)
    data = load_dataset(args.data)
    if data.input_dim != params.dims.X or data.output_dim != params.dims.Y:
        raise DataFormatError("checkpoint and dataset dimensions disagree")
    value = mse(params, data, act, args.step)
    print(json.dumps({"mse": value, "n_sequences": len(data), "step": args.step}))
    return EXIT_OK


def cmd_grad_check(args):
    act = _activation(args)
    rows = []
    for seed in args.seeds:
        params = init_params(Dims(2, args.hidden, 1), "gaussian", args.init_scale, seed)
        data = gen_adding(args.n_sequences, args.length, seed)
        for sigma in args.sigma:
            for lam in args.lam:
                grad = gradient(params, data, act, sigma, lam)
                if args.fault == "sign-flip":
                    grad = grad * -1.0
                report = fd_check(params, data, act, sigma, lam, args.step, seed, grad=grad)
                row = json.loads(report.to_json())
                try:
                    ref = gradient_reference(params, data, act, sigma, lam).to_vector()
                    g = grad.to_vector()
                    scale = max(np.max(np.abs(g)), np.max(np.abs(ref)), 1e-300)
                    row["reference_rel_err"] = float(np.max(np.abs(g - ref)) / scale)
                except DomainError:
                    row["reference_rel_err"] = None
                row["seed"] = seed
                row["passed"] = bool(
                    row["passed"] and (row["reference_rel_err"] is None or row["reference_rel_err"] <= 1e-10)
                )
                rows.append(row)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
    else:
        for row in rows:
            print(json.dumps(row))
    ok = all(r["passed"] for r in rows)
    worst = max(r["max_rel_err"] for r in rows)
    print(f"{'PASS' if ok else 'FAIL'} max_rel_err={worst:.3e} checks={len(rows)}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _read_table(path):
    try:
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as err:
        raise DataFormatError(f"cannot read tabulated function {path}: {err}") from err
    if table.shape[1] != 2:
        raise DataFormatError(f"{path}: expected two columns x,value")
    x, values = table[:, 0], table[:, 1]
    spacing = np.diff(x)
    if x.size < 3 or not np.allclose(spacing, spacing[0], rtol=1e-9, atol=0):
        raise DataFormatError(f"{path}: x must be a uniform grid with at least 3 points")
    return [x], values, float(spacing[0])


def cmd_demo_smooth(args):
    if args.input:
        axes, values, spacing = _read_table(args.input)
    else:
        if args.dim not in (1, 2) or args.points < 3 or not args.hi > args.lo:
            raise ConfigError("demo grid needs dim in {1,2}, points >= 3 and hi > lo")
        grid = np.linspace(args.lo, args.hi, args.points)
        spacing = float(grid[1] - grid[0])
        if args.dim == 1:
            axes, values = [grid], ackley(grid[:, None])
        else:
            X, Y = np.meshgrid(grid, grid, indexing="ij")
            axes, values = [grid, grid], ackley(np.stack([X, Y], axis=-1))
    try:
        smoothed = grid_diffuse_demo(values, args.sigmas, spacing)
    except DomainError as err:
        raise ConfigError(str(err)) from err
    out = _out_dir(args.out_dir)
    for sigma, surface in zip(args.sigmas, smoothed):
        path = out / f"smooth_sigma_{sigma:g}.csv"
        with open(path, "w") as fh:
            if surface.ndim == 1:
                fh.write("x,value\n")
                for x, v in zip(axes[0], surface):
                    fh.write(f"{float(x)!r},{float(v)!r}\n")
            else:
                fh.write("x,y,value\n")
                for i, x in enumerate(axes[0]):
                    for j, y in enumerate(axes[1]):
                        fh.write(f"{float(x)!r},{float(y)!r},{float(surface[i, j])!r}\n")
    write_config(args, out)
    print(f"wrote {len(smoothed)} surfaces to {out}")
    return EXIT_OK


# ------------------------------------------------------------------ parser
def _add_activation(p):
    p.add_argument("--activation", default="erf", choices=["erf", "sign", "tanh", "relu"])
    p.add_argument("--sharpness", type=float, default=1.0, help="slope a of the erf activation")


def build_parser():
    parser = argparse.ArgumentParser(prog="diffrnn", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate adding-problem train/test files")
    p.add_argument("--out-dir", default="data")
    p.add_argument("--n-train", type=int, default=1000)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--length", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--supervision", default="all", choices=["all", "last"])
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train by continuation or plain SGD")
    p.add_argument("--train", default="data/train.bin")
    p.add_argument("--test", default="data/test.bin", help="scored every epoch; empty to skip")
    p.add_argument("--out-dir", default="run")
    p.add_argument("--method", default="diffusion", choices=["diffusion", "sgd"])
    p.add_argument("--hidden", type=int, default=10)
    _add_activation(p)
    p.add_argument("--supervision", default="file", choices=["file", "all", "last"],
                   help="override the training file's supervision mode")
    p.add_argument("--sigmas", type=float_list, default=[], help="explicit bandwidth ladder, e.g. 2,1,0.5,0")
    p.add_argument("--sigma0", type=float, default=2.0)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--n-stages", type=int, default=6, help="positive bandwidths before the final 0")
    p.add_argument("--stage-epochs", type=int, default=50)
    p.add_argument("--final-epochs", type=optional_int, default=None)
    p.add_argument("--grad-tol", type=float, default=1e-4)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--floor", type=float, default=1e-3)
    p.add_argument("--normalize", type=parse_bool, default=True)
    p.add_argument("--batch-size", type=optional_int, default=50)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--init", default="uniform", choices=["uniform", "gaussian", "zeros"])
    p.add_argument("--init-scale", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stop-at", type=optional_float, default=None, help="stop once test MSE reaches this")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="unsmoothed test MSE of a checkpoint")
    p.add_argument("--checkpoint", default="run/model.bin")
    p.add_argument("--data", default="data/test.bin")
    p.add_argument("--step", default="last", choices=["last", "all"])
    _add_activation(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grad-check", help="analytic gradient vs finite differences")
    p.add_argument("--seeds", type=int_list, default=[0, 1, 2, 3, 4])
    p.add_argument("--sigma", type=float_list, default=[0.0, 0.01, 0.1, 1.0, 2.0])
    p.add_argument("--lam", type=float_list, default=[0.0, 1.0])
    p.add_argument("--hidden", type=int, default=3)
    p.add_argument("--length", type=int, default=4)
    p.add_argument("--n-sequences", type=int, default=2)
    p.add_argument("--init-scale", type=float, default=0.5)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--fault", default="none", choices=["none", "sign-flip"],
                   help="corrupt the analytic gradient to confirm the check can fail")
    p.add_argument("--out", default="", help="JSON-lines report path (stdout if empty)")
    _add_activation(p)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("demo-smooth", help="Gaussian smoothing of Ackley's function on a grid")
    p.add_argument("--sigmas", type=float_list, default=[0.0, 0.25, 0.5, 1.0, 2.0])
    p.add_argument("--dim", type=int, default=1, choices=[1, 2])
    p.add_argument("--lo", type=float, default=-5.0)
    p.add_argument("--hi", type=float, default=5.0)
    p.add_argument("--points", type=int, default=1001)
    p.add_argument("--input", default="", help="CSV with header and columns x,value instead of Ackley")
    p.add_argument("--out-dir", default="demo")
    p.set_defaults(func=cmd_demo_smooth)

    for p in sub.choices.values():
        p.add_argument("--config", default="", help="key = value file; its values override flags")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[args.command]
    try:
        if args.config:
            apply_config(sub, args, read_config(args.config))
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, OSError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, NumericError) as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
