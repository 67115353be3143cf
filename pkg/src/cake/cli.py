"""Command line entry point: ``cake <subcommand> [flags]``.

Subcommands generate phantoms and masks, sense a scene, reconstruct from
sensed data, check Gram/RIP statistics, and run experiment tables.  Arrays
are exchanged as CAKE1 files; ``sense`` writes a ``.meta`` sidecar next to
its output so ``reconstruct`` can rebuild the operator without repeating the
flags.  A ``--config`` file holds flat ``key = value`` lines; flags given on
the command line win over the file.

Exit status is 0 on success, 1 for usage errors and 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .core import (
    PHANTOM_KINDS,
    VIDEO_PHANTOM_KINDS,
    CakeError,
    DomainError,
    ShapeError,
    UnsupportedParameterError,
    make_phantom,
    make_video_phantom,
    rmse,
)
from .io import read_cake1, read_sidecar, write_cake1, write_pgm16, write_sidecar

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

MASK_CHOICES = ("bs", "us", "gs", "up")
DOWNSAMPLE_CHOICES = ("sub", "int", "randsum", "demod", "randrows")
PENALTY_CHOICES = ("l1", "l1-haar", "tv-iso", "tv-aniso", "video")
PENALTY_KINDS = {"l1": "l1-pixel", "l1-haar": "l1-transform", "tv-iso": "tv-iso", "tv-aniso": "tv-aniso"}

# defaults shared by every subcommand; a config file replaces them, flags replace both
DEFAULTS = {
    "mask": "bs",
    "downsample": "sub",
    "d1": 2,
    "d2": 2,
    "B": 1,
    "n1": 64,
    "n2": 64,
    "N": 28,
    "s": 10,
    "kind": "",
    "penalty": "tv-aniso",
    "tau": None,
    "tau_tv": None,
    "tau_l1": None,
    "max_iter": 2000,
    "tol": 1e-3,
    "seed": 1,
    "implementable": False,
    "precondition": True,
    "truth": "",
}
_TYPES = {"d1": int, "d2": int, "B": int, "n1": int, "n2": int, "N": int, "s": int, "max_iter": int, "seed": int,
          "tol": float, "tau": float, "tau_tv": float, "tau_l1": float}
_BOOLS = ("implementable", "precondition")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p, *names):
    opt = {
        "mask": lambda: p.add_argument("--mask", choices=MASK_CHOICES, default=argparse.SUPPRESS),
        "downsample": lambda: p.add_argument("--downsample", choices=DOWNSAMPLE_CHOICES, default=argparse.SUPPRESS),
        "penalty": lambda: p.add_argument("--penalty", choices=PENALTY_CHOICES, default=argparse.SUPPRESS),
    }
    for name in names:
        if name in opt:
            opt[name]()
        elif name in _BOOLS:
            p.add_argument(f"--{name.replace('_', '-')}", action=argparse.BooleanOptionalAction,
                           default=argparse.SUPPRESS)
        else:
            flag = "--B" if name == "B" else "--N" if name == "N" else f"--{name.replace('_', '-')}"
            p.add_argument(flag, dest=name, type=_TYPES.get(name, str), default=argparse.SUPPRESS)
    p.add_argument("--config", default=None, help="flat key = value file; flags override it")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = _Parser(prog="cake", description="Coded-aperture keyed-exposure imaging toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", help="write a synthetic scene or video")
    _common(p, "kind", "n1", "n2", "N", "s", "seed")
    p.add_argument("--out", required=True, help="CAKE1 file (or .pgm for a single image)")

    p = sub.add_parser("mask", help="write a mask (or a B-frame mask sequence)")
    _common(p, "mask", "n1", "n2", "d1", "d2", "B", "seed", "implementable")
    p.add_argument("--out", required=True)

    p = sub.add_parser("sense", help="simulate coded measurements of a scene")
    _common(p, "mask", "downsample", "d1", "d2", "B", "seed", "implementable")
    p.add_argument("--in", dest="input", required=True, help="scene as CAKE1 (n1 x n2 or N x n1 x n2)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("reconstruct", help="recover a scene from sensed data")
    _common(p, "mask", "downsample", "d1", "d2", "B", "n1", "n2", "seed", "implementable", "penalty", "tau",
            "tau_tv", "tau_l1", "max_iter", "tol", "precondition", "truth")
    p.add_argument("--in", dest="input", required=True, help="data written by 'sense'")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ripcheck", help="Gram statistics, exact delta_s and the Gershgorin bound")
    _common(p, "mask", "downsample", "d1", "d2", "n1", "n2", "s", "seed", "implementable")
    p.add_argument("--out", default="-", help="CSV path, '-' for stdout")

    p = sub.add_parser("experiment", help="run a static or video experiment table")
    _common(p, "mask", "downsample", "d1", "d2", "B", "n1", "n2", "penalty", "max_iter", "tol", "seed")
    p.add_argument("--out", default="-", help="CSV path, '-' for stdout")
    return parser


def _read_config(path):
    text = Path(path).read_text(encoding="utf-8")
    mapping = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        mapping[key.strip().replace("-", "_")] = value.strip()
    return mapping


def _coerce(key, value):
    if value is None or value == "":
        return None if key in ("tau", "tau_tv", "tau_l1") else value
    if key in _BOOLS:
        return str(value).strip().lower() in ("1", "true", "yes", "on")
    return _TYPES.get(key, str)(value)


def resolve(args, extra=None):
    """Merge defaults, sidecar/config values and explicit flags (last wins)."""
    opts = dict(DEFAULTS)
    for k, v in (extra or {}).items():
        if k in opts:
            opts[k] = _coerce(k, v)
    if getattr(args, "config", None):
        for k, v in _read_config(args.config).items():
            if k in opts:
                opts[k] = _coerce(k, v)
    for k, v in vars(args).items():
        if k in opts:
            opts[k] = v
    return opts


def _check_dims(o):
    for n, d in (("n1", "d1"), ("n2", "d2")):
        if o[d] < 1 or o[n] % o[d]:
            raise UsageError(f"{n}={o[n]} is not divisible by {d}={o[d]}")


def _down(o):
    from .operators import Downsampler

    return Downsampler(o["downsample"], o["n1"], o["n2"], o["d1"], o["d2"], seed=o["seed"])


def _masks(o, B):
    from .masks import _implementable_values, gen_mask_sequence

    seq = gen_mask_sequence(o["mask"].upper(), o["n1"], o["n2"], o["d1"] * o["d2"], B, o["seed"])
    masks = seq.masks
    if o["implementable"]:
        masks = np.stack([_implementable_values(h) for h in masks])
    return masks


def _operator(o):
    from .operators import CakeOperator, Sensing

    masks = _masks(o, o["N"] if o["B"] > 1 else 1)
    if o["B"] > 1:
        return CakeOperator(masks, o["B"], _down(o))
    return Sensing(masks[0], _down(o))


def _write_array(path, array):
    if str(path).lower().endswith(".pgm"):
        if np.ndim(array) != 2:
            raise UsageError("PGM output needs a single 2-D image")
        write_pgm16(path, array)
    else:
        write_cake1(path, array)


def cmd_phantom(o, args):
    kind = o["kind"] or "neuron-like"
    if kind in VIDEO_PHANTOM_KINDS:
        out = make_video_phantom(kind, o["n1"], o["n2"], o["N"], o["seed"])
    elif kind in PHANTOM_KINDS:
        out = make_phantom(kind, o["n1"], o["n2"], o["s"], o["seed"])
    else:
        raise UsageError(f"unknown phantom kind {kind!r}; choose from {PHANTOM_KINDS + VIDEO_PHANTOM_KINDS}")
    _write_array(args.out, out)
    return EXIT_OK


def cmd_mask(o, args):
    _check_dims(o)
    masks = _masks(o, o["B"])
    _write_array(args.out, masks[0] if o["B"] == 1 else masks)
    return EXIT_OK


_OPERATOR_KEYS = ("mask", "downsample", "d1", "d2", "B", "n1", "n2", "N", "seed", "implementable")


def cmd_sense(o, args):
    scene = read_cake1(args.input)
    if scene.ndim == 3:
        o["N"], o["n1"], o["n2"] = scene.shape
        if o["B"] < 2:
            raise UsageError("video input needs --B of at least 2")
        if o["N"] % o["B"]:
            raise UsageError(f"N={o['N']} frames are not divisible by B={o['B']}")
    elif scene.ndim == 2:
        o["n1"], o["n2"] = scene.shape
        o["B"] = 1
    else:
        raise UsageError("scene must be 2-D or 3-D")
    _check_dims(o)
    y = _operator(o).apply(scene)
    write_cake1(args.out, y)
    write_sidecar(str(args.out) + ".meta", {k: o[k] for k in _OPERATOR_KEYS})
    return EXIT_OK


def cmd_reconstruct(o, args):
    from .precond import PreconditionedSystem
    from .solvers import Penalty, SolverConfig, solve, solve_video

    _check_dims(o)
    y = read_cake1(args.input)
    A = _operator(o)
    if y.shape != A.out_shape:
        raise UsageError(f"data shape {y.shape} does not match operator output {A.out_shape}")
    config = SolverConfig(max_iterations=o["max_iter"], tol=o["tol"], init="zero" if o["B"] > 1 else "cg")
    sys_ = PreconditionedSystem(A, y) if o["precondition"] else None
    op, data = (sys_.A0, sys_.y0) if sys_ else (A, y)
    centre = 1e-2 * float(np.max(np.abs(op.adjoint(data))))
    if o["penalty"] == "video" or o["B"] > 1:
        if o["B"] < 2:
            raise UsageError("the video penalty needs --B of at least 2")
        tau_tv = o["tau_tv"] if o["tau_tv"] is not None else centre
        tau_l1 = o["tau_l1"] if o["tau_l1"] is not None else centre
        res = solve_video(A, y, tau_tv, tau_l1, config=config, precondition=o["precondition"])
    else:
        tau = o["tau"] if o["tau"] is not None else centre
        res = solve(sys_ if sys_ else A, y, Penalty(PENALTY_KINDS[o["penalty"]], tau=tau), config)
    _write_array(args.out, res.estimate)
    line = f"iterations={res.iterations} converged={int(res.converged)} objective={res.objective[-1]:.9g}"
    if o["truth"]:
        line += f" rmse_percent={rmse(res.estimate, read_cake1(o['truth'])):.6f}"
    print(line)
    return EXIT_OK


def cmd_ripcheck(o, args):
    from .ripcheck import MAX_S, rip_profile, write_rip_csv

    _check_dims(o)
    if not 1 <= o["s"] <= MAX_S:
        raise UsageError(f"--s must lie in [1, {MAX_S}]")
    A = _operator(dict(o, B=1))
    report, estimates = rip_profile(A, list(range(1, o["s"] + 1)))
    target = sys.stdout if args.out == "-" else args.out
    write_rip_csv(target, estimates, report)
    return EXIT_OK


_EXPERIMENT_FLAGS = {"mask": "masks", "downsample": "downsamplers", "penalty": "penalties", "max_iter": "max_iterations"}


def cmd_experiment(o, args):
    from .experiments import ExperimentConfig, run_experiment
    from .operators import canonical_kind

    mapping = _read_config(args.config) if args.config else {}
    for key, value in vars(args).items():
        if key in ("command", "config", "verbose", "out"):
            continue
        if key == "mask":
            value = value.upper()
        elif key == "downsample":
            value = canonical_kind(value)
        elif key == "penalty" and value == "video":
            raise UsageError("experiment penalties are l1-haar, tv-aniso and tv-iso")
        mapping[_EXPERIMENT_FLAGS.get(key, key)] = value
    if args.out != "-":
        mapping["out"] = args.out
    config = ExperimentConfig.from_mapping(mapping)
    _, text = run_experiment(config)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text, encoding="utf-8")
    return EXIT_OK


COMMANDS = {
    "phantom": cmd_phantom,
    "mask": cmd_mask,
    "sense": cmd_sense,
    "reconstruct": cmd_reconstruct,
    "ripcheck": cmd_ripcheck,
    "experiment": cmd_experiment,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"cake: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        sidecar = {}
        if args.command == "reconstruct":
            meta = Path(str(args.input) + ".meta")
            if meta.exists():
                sidecar = read_sidecar(meta)
        o = resolve(args, sidecar)
        return COMMANDS[args.command](o, args)
    except (UsageError, ShapeError, DomainError, UnsupportedParameterError) as exc:
        parser.print_usage(sys.stderr)
        print(f"cake: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CakeError, OSError, RuntimeError, ValueError) as exc:
        print(f"cake: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
