"""``killsde <subcommand> [--config FILE] [--seed S] [--threads N] [--out DIR] ...``"""

from __future__ import annotations

import argparse
import json
import sys

from .config import KINDS, ConfigError, ExperimentConfig

DEFAULTS: dict[str, dict] = {
    "survival": {"domain": {"kind": "half_space", "normal": [1.0]}, "grid": {"dt": 1e-3, "horizon": 1.0}},
    "gradient": {"domain": {"kind": "half_space", "normal": [1.0]}, "grid": {"dt": 1e-3, "horizon": 1.0}},
    "metrics": {"domain": {"kind": "half_space", "normal": [1.0]}},
    "ddsde": {"domain": {"kind": "half_space", "normal": [1.0]},
              "coefficients": {"preset": "mean-field-attraction", "params": {}},
              "grid": {"dt": 0.01, "horizon": 1.0}, "params": {"initial": {"dirac": [1.0]}}},
    "bound-scan": {"domain": {"kind": "half_space", "normal": [1.0]}, "grid": {"dt": 1e-3, "horizon": 1.0}},
    "oracle": {"domain": {"kind": "half_space", "normal": [1.0]}},
    "validate": {"domain": {"kind": "half_space", "normal": [1.0]}},
}


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _payoff_arg(text: str):
    """``name`` or a JSON object such as ``{"name": "indicator", "lo": 0, "hi": 2}``."""
    text = text.strip()
    if text.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise argparse.ArgumentTypeError(f"--f: invalid JSON ({exc})") from None
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="killsde", description="Killed diffusions: simulation and gradient estimates.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", help="output directory (default: the config's output field)")
    common.add_argument("--paths", type=int, help="ensemble size N")
    common.add_argument("--dt", type=float)
    common.add_argument("--horizon", type=float)
    common.add_argument("--bridge", choices=("on", "off"))

    p = sub.add_parser("survival", parents=[common], help="survival probability against the exact value")
    p.add_argument("--x0", type=_floats)
    p.add_argument("--times", type=_floats)

    p = sub.add_parser("gradient", parents=[common], help="Bismut gradient estimate at one point")
    p.add_argument("--x", type=_floats)
    p.add_argument("--v", type=_floats)
    p.add_argument("--t", type=float)
    p.add_argument("--f", type=_payoff_arg, help="payoff name or JSON object")
    p.add_argument("--p", type=float)
    p.add_argument("--n-mollify", type=int)

    p = sub.add_parser("metrics", parents=[common], help="TV and truncated W1 between two cloud files")
    p.add_argument("--mu")
    p.add_argument("--nu")
    p.add_argument("--bin-width", type=float)

    p = sub.add_parser("ddsde", parents=[common], help="distribution-dependent SDE by Picard iteration or particles")
    p.add_argument("--preset")
    p.add_argument("--initial", help="initial cloud file")
    method = p.add_mutually_exclusive_group()
    method.add_argument("--picard", dest="method", action="store_const", const="picard")
    method.add_argument("--particles", dest="method", action="store_const", const="particles")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("bound-scan", parents=[common], help="normalized gradient table over (x, t)")
    p.add_argument("--p", type=float)
    p.add_argument("--f", type=_payoff_arg)

    p = sub.add_parser("oracle", parents=[common], help="tabulate exact semigroups and gradients")
    p.add_argument("--sigma", type=float)
    p.add_argument("--ts", type=_floats)
    p.add_argument("--xs", type=_floats)
    p.add_argument("--f", type=_payoff_arg)

    sub.add_parser("validate", parents=[common], help="run the invariant suite")
    return parser


PARAM_FLAGS = {"x0": "x0", "times": "times", "x": "x", "v": "v", "t": "t", "f": "f", "p": "p",
               "n_mollify": "n_mollify", "mu": "mu", "nu": "nu", "bin_width": "bin_width", "initial": "initial",
               "method": "method", "lam": "lambda", "iters": "iters", "tol": "tol", "sigma": "sigma", "ts": "ts",
               "xs": "xs"}


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    kind = args.command
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        if cfg.kind != kind:
            raise ConfigError(f"kind: config describes a {cfg.kind!r} experiment, not {kind!r}")
        data = cfg.to_dict()
    else:
        data = {"kind": kind, **json.loads(json.dumps(DEFAULTS[kind]))}
    for flag, key in (("seed", "seed"), ("threads", "threads"), ("paths", "paths"), ("out", "output")):
        if getattr(args, flag) is not None:
            data[key] = getattr(args, flag)
    grid = dict(data.get("grid", {"dt": 1e-3, "horizon": 1.0}))
    if args.dt is not None:
        grid["dt"] = args.dt
    if args.horizon is not None:
        grid["horizon"] = args.horizon
    data["grid"] = grid
    if args.bridge is not None:
        data["bridge"] = args.bridge == "on"
    params = dict(data.get("params", {}))
    for attr, key in PARAM_FLAGS.items():
        value = getattr(args, attr, None)
        if value is not None:
            params[key] = value
    data["params"] = params
    if getattr(args, "preset", None) is not None:
        data["coefficients"] = {"preset": args.preset, "params": {}}
    return ExperimentConfig.from_dict(data)


def main(argv: list[str] | None = None) -> int:
    from .experiments import run

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        manifest, status = run(cfg)
    except ConfigError as exc:
        print(f"killsde: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"killsde: {exc}", file=sys.stderr)
        return 2
    for name, ok in manifest["gates"].items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"wrote {len(manifest['files'])} file(s) and manifest.json to {cfg.output}")
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

assert set(DEFAULTS) == set(KINDS)
