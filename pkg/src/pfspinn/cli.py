"""Command-line entry point: ``pfspinn {gen-data, train, eval, simulate}``.

Every command writes a JSON sidecar next to its main output that echoes the
resolved parameters and the PRNG identity.  Exit codes: 0 success,
2 validation, 3 numerical failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (
    Dataset,
    SnapshotPair,
    export_curve,
    params_from_document,
    read_dataset,
    read_model_document,
    write_dataset,
    write_json,
    write_model,
)
from .errors import DatasetFormatError, ModelSchemaError, UnsupportedDiagnosticError
from .grid import make_grid
from .mlp import PRNG_NAME
from .model import (
    DEFAULT_STABILIZER,
    DoubleWell,
    FloryHuggins,
    MobilityKind,
    ModelSpec,
    free_energy,
    total_mass,
)
from .spinn import LossVariant, TrainConfig, evaluate_f, train
from .stepper import (
    SCHEMES,
    SimulationPlan,
    TanhDisk,
    UniformRandom,
    default_generator_scheme,
    generate_dataset,
    initial_condition,
    simulate,
)

log = logging.getLogger("pfspinn")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

MODEL_CHOICES = {"ac-dw": ("ac", DoubleWell), "ac-fh": ("ac", FloryHuggins), "ch-dw": ("ch", DoubleWell)}
TRUTHS = {"double-well": DoubleWell, "flory-huggins": FloryHuggins, "none": None}


class UsageError(ValueError):
    """A flag combination that argparse cannot reject on its own."""


# flag parsing helpers


def positive_float(text: str) -> float:
    v = float(text)
    if not (np.isfinite(v) and v > 0):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def nonneg_float(text: str) -> float:
    v = float(text)
    if not (np.isfinite(v) and v >= 0):
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return v


def positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def even_int(text: str) -> int:
    v = positive_int(text)
    if v % 2:
        raise argparse.ArgumentTypeError(f"grid size must be even, got {v}")
    return v


def float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def float_range(text: str) -> tuple[float, float]:
    parts = text.split(":")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}")
    lo, hi = float(parts[0]), float(parts[1])
    if not lo <= hi:
        raise argparse.ArgumentTypeError(f"need lo <= hi, got {text!r}")
    return lo, hi


def sample_range(text: str) -> tuple[float, float, int]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected lo:hi:npoints, got {text!r}")
    lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    if not (lo < hi and n >= 2):
        raise argparse.ArgumentTypeError(f"need lo < hi and npoints >= 2, got {text!r}")
    return lo, hi, n


def init_spec(text: str):
    kind, _, rest = text.partition(":")
    args = [float(a) for a in rest.split(":")] if rest else []
    if kind == "random" and len(args) in (1, 2) and args[0] >= 0:
        return UniformRandom(*args)
    if kind == "tanhdisk" and len(args) == 1 and args[0] > 0:
        return ("tanhdisk", args[0])
    raise argparse.ArgumentTypeError(f"expected random:amp[:offset] or tanhdisk:radius, got {text!r}")


def stabilizer_spec(text: str) -> tuple[float, ...]:
    coeffs = {}
    for item in text.split(","):
        key, sep, value = item.strip().partition("=")
        if not sep or len(key) < 2 or key[0] != "s" or not key[1:].isdigit():
            raise argparse.ArgumentTypeError(f"expected s0=..[,s1=..[,s2=..]], got {text!r}")
        coeffs[int(key[1:])] = float(value)
    if max(coeffs) > 4:
        raise argparse.ArgumentTypeError("stabilizer degree is limited to 4")
    return tuple(coeffs.get(i, 0.0) for i in range(max(coeffs) + 1))


def format_stabilizer(coeffs) -> str:
    return ",".join(f"s{i}={c:g}" for i, c in enumerate(coeffs) if c != 0) or "s0=0"


# model construction


def build_model(name: str, eps: float, mobility: float) -> ModelSpec:
    kind, bulk = MODEL_CHOICES[name]
    return ModelSpec(eps, MobilityKind(kind, mobility), bulk())


def model_from_description(desc: dict, stabilizer=None) -> ModelSpec:
    """Rebuild the known parts of a model from ``ModelSpec.describe()`` output."""
    try:
        mob = MobilityKind(desc["mobility"]["kind"], float(desc["mobility"]["M"]))
        eps = float(desc["eps"])
        lg = tuple(desc.get("lg_poly") or (0.0, -(eps**2)))
    except (KeyError, TypeError) as exc:
        raise UsageError(f"dataset metadata does not describe a model ({exc})") from exc
    stab = stabilizer if stabilizer is not None else DEFAULT_STABILIZER[mob.kind]
    return ModelSpec(eps, mob, DoubleWell(), stab, lg)


# commands


def cmd_gen_data(args) -> int:
    model = build_model(args.model, args.eps, args.mobility)
    init = args.init
    if isinstance(init, tuple):
        init = TanhDisk(init[1], args.eps)
    if isinstance(init, TanhDisk) and model.mobility.kind == "ch":
        log.warning("tanhdisk initial data with a Cahn-Hilliard model is not one of the reference setups")
    grid = make_grid(args.grid, args.grid, args.domain, args.domain)

    if args.t_random is not None:
        # separate Philox stream so start times do not reuse the initial-condition draws
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([args.seed, 1])))
        lo, hi = args.t_random
        starts = [round(t / args.fine_dt) * args.fine_dt for t in rng.uniform(lo, hi, args.pairs)]
    else:
        starts = _broadcast(args.t_start, args.pairs, "--t-start")
    deltas = _broadcast(args.delta, args.pairs, "--delta")
    pairs = list(zip(starts, deltas))

    ds = generate_dataset(grid, model, init, args.fine_dt, pairs, args.seed, args.scheme, args.fine_stab)
    write_dataset(args.out, ds)
    write_json(
        _sidecar(args.out),
        {
            "command": "gen-data",
            "version": __version__,
            "prng": PRNG_NAME,
            "args": _args_dict(args),
            "pairs": [{"t_start": t, "delta": d} for t, d in pairs],
            "meta": ds.meta,
            "phi_range": list(ds.phi_range()),
        },
    )
    print(f"wrote {len(ds)} pairs on a {grid.nx}x{grid.ny} grid to {args.out}")
    return EXIT_OK


def _broadcast(values, n, flag):
    if len(values) == 1:
        return values * n
    if len(values) != n:
        raise UsageError(f"{flag} needs 1 or {n} values, got {len(values)}")
    return list(values)


def cmd_train(args) -> int:
    data = read_dataset(args.data)
    if not data.pairs:
        raise UsageError(f"{args.data} holds no snapshot pairs")
    desc = data.meta.get("generator", {}).get("model")
    if args.equation is not None:
        eps = args.eps if args.eps is not None else (desc or {}).get("eps")
        M = args.mobility if args.mobility is not None else ((desc or {}).get("mobility") or {}).get("M")
        if eps is None or M is None:
            raise UsageError("--equation needs --eps and --mobility when the dataset does not record them")
        desc = {"eps": eps, "mobility": {"kind": args.equation, "M": M}}
    elif desc is None:
        raise UsageError("dataset metadata has no model; pass --equation, --eps and --mobility")
    else:
        desc = dict(desc, mobility=dict(desc["mobility"]))
        if args.eps is not None:
            desc["eps"] = args.eps
            desc.pop("lg_poly", None)
        if args.mobility is not None:
            desc["mobility"]["M"] = args.mobility
    model = model_from_description(desc, args.stab)

    mu = args.anchor_mu if args.anchor_mu is not None else (0.0 if model.mobility.kind == "ac" else 1e3)
    config = TrainConfig(
        variant=LossVariant(args.loss, args.k, mu),
        adam_iters=args.adam_iters,
        adam_lr=args.lr,
        lbfgs_enabled=args.lbfgs,
        lbfgs_max_iters=args.lbfgs_iters,
        seed=args.seed,
    )

    def progress(it, value):
        if it % 100 == 0:
            print(f"iter {it:6d}  loss {value:.6e}", flush=True)

    t0 = time.perf_counter()
    report = train(data, model, config, progress=progress)
    final = report.loss_history[-1] if report.loss_history else None
    meta = {
        "command": "train",
        "version": __version__,
        "prng": PRNG_NAME,
        "args": _args_dict(args),
        "config": config.describe(),
        "model": model.describe(),
        "stabilizer": format_stabilizer(model.stabilizer),
        "dataset": {"path": str(args.data), "pairs": len(data), "meta": data.meta},
        "data_phi_range": list(data.phi_range()),
        "final_loss": final,
        "adam_iters_run": report.adam_iters_run,
        "lbfgs_iters_run": report.lbfgs_iters_run,
        "lbfgs_message": report.lbfgs_message,
    }
    write_model(args.out, report.final_params, meta)
    write_json(_sidecar(args.out), dict(meta, loss_history=report.loss_history))
    if final is not None:
        print(f"final loss {final:.6e} after {len(report.loss_history)} iterations ({time.perf_counter() - t0:.1f} s)")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    doc = read_model_document(args.model_file)
    params = params_from_document(doc)
    data_range = (doc.get("meta") or {}).get("data_phi_range")
    truth_cls = TRUTHS[args.truth]
    truth = truth_cls() if truth_cls is not None else None
    report = evaluate_f(params, truth, args.range, tuple(data_range) if data_range else None)
    export_curve(args.out, report.phi, report.learned, report.truth)
    write_json(
        _sidecar(args.out),
        {"command": "eval", "version": __version__, "args": _args_dict(args), "metrics": report.summary()},
    )
    if report.linf is not None:
        print(f"Linf {report.linf:.6e}")
        print(f"L2   {report.l2:.6e}")
    if data_range:
        print(f"data phi-range [{data_range[0]:.6g}, {data_range[1]:.6g}]")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    model = build_model(args.model, args.eps, args.mobility)
    if args.stab is not None:
        model = ModelSpec(model.eps, model.mobility, model.bulk, args.stab, model.lg_poly)
    grid = make_grid(args.grid, args.grid, args.domain, args.domain)
    init = args.init
    if isinstance(init, tuple):
        init = TanhDisk(init[1], args.eps)
    scheme = args.scheme or default_generator_scheme(model)
    snap_steps = sorted({int(round(t / args.dt)) for t in args.snapshots})
    for t, n in zip(sorted(args.snapshots), snap_steps):
        if abs(n * args.dt - t) > 1e-12 * max(1.0, abs(t)):
            raise UsageError(f"snapshot time {t} is not a multiple of --dt {args.dt}")
    n_steps = int(round(args.t_end / args.dt))
    if snap_steps and snap_steps[-1] >= n_steps:
        n_steps = snap_steps[-1] + 1
    diag_steps = set(range(0, n_steps + 1, args.diag_every)) | {n_steps}
    # each snapshot file pairs the state with the state one step later
    record = diag_steps | set(snap_steps) | {n + 1 for n in snap_steps}
    phi0 = initial_condition(grid, init, args.seed)
    out = simulate(grid, SimulationPlan(phi0, args.dt, n_steps, scheme, record), model)
    by_step = {int(round(t / args.dt)): phi for t, phi in out}

    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    files = []
    for n in snap_steps:
        path = outdir / f"snapshot_{n:08d}.spnn"
        meta = {"t_start": [n * args.dt], "generator": {"model": model.describe(), "init": init.describe(),
                "seed": args.seed, "prng": PRNG_NAME, "fine_dt": args.dt, "scheme": scheme}}
        write_dataset(path, Dataset(grid, [SnapshotPair(by_step[n], by_step[n + 1], args.dt)], meta))
        files.append(str(path))
    diag = outdir / "diagnostics.csv"
    with open(diag, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "energy", "mass"])
        for n in sorted(diag_steps):
            phi = by_step[n]
            try:
                energy = repr(free_energy(grid, phi, model))
            except UnsupportedDiagnosticError:
                energy = "nan"
            writer.writerow([repr(n * args.dt), energy, repr(total_mass(grid, phi))])
    write_json(
        outdir / "simulate.json",
        {
            "command": "simulate",
            "version": __version__,
            "prng": PRNG_NAME,
            "args": _args_dict(args),
            "scheme": scheme,
            "n_steps": n_steps,
            "model": model.describe(),
            "init": init.describe(),
            "snapshots": files,
        },
    )
    print(f"{n_steps} {scheme} steps; wrote {len(files)} snapshot files and {diag}")
    return EXIT_OK


# parser


def _sidecar(path) -> str:
    return f"{path}.json"


def _args_dict(args) -> dict:
    out = {}
    for k, v in vars(args).items():
        if k == "func":
            continue
        if isinstance(v, (UniformRandom, TanhDisk)):
            v = v.describe()
        elif isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


def _add_physics(p, defaults=True):
    p.add_argument("--model", choices=sorted(MODEL_CHOICES), default="ac-dw")
    p.add_argument("--eps", type=positive_float, default=0.02)
    p.add_argument("--mobility", type=positive_float, default=10.0)
    p.add_argument("--grid", type=even_int, default=128, help="nodes per side (even)")
    p.add_argument("--domain", type=positive_float, default=2.0, help="side length L of [-L/2, L/2]^2")
    p.add_argument("--init", type=init_spec, default=UniformRandom(0.25), help="random:amp[:offset] or tanhdisk:radius")
    p.add_argument("--seed", type=nonneg_int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pfspinn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="simulate a trajectory and cut snapshot pairs from it")
    _add_physics(p)
    p.add_argument("--fine-dt", type=positive_float, default=1e-4)
    p.add_argument("--pairs", type=positive_int, default=1)
    times = p.add_mutually_exclusive_group()
    times.add_argument("--t-start", type=float_list, default=[0.0], help="comma-separated start times")
    times.add_argument("--t-random", type=float_range, default=None, help="lo:hi, start times drawn uniformly")
    p.add_argument("--delta", type=float_list, default=[0.05], help="comma-separated pair spacings")
    p.add_argument("--scheme", choices=SCHEMES, default=None, help="fine solver (default: rk4 for AC, pc for CH)")
    p.add_argument("--fine-stab", type=stabilizer_spec, default=(0.0,), help="fine-solver stabilizer (default none)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit the bulk network to a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--loss", choices=("linear", "rk4"), default="linear")
    p.add_argument("--k", type=positive_int, default=1, help="recursion depth")
    p.add_argument("--stab", type=stabilizer_spec, default=None, help='e.g. "s0=2" or "s1=-2"')
    p.add_argument("--anchor-mu", type=nonneg_float, default=None, help="default 0 for AC, 1e3 for CH")
    p.add_argument("--adam-iters", type=nonneg_int, default=10000)
    p.add_argument("--lr", type=positive_float, default=1e-3)
    p.add_argument("--lbfgs", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--lbfgs-iters", type=nonneg_int, default=5000)
    p.add_argument("--equation", choices=("ac", "ch"), default=None, help="override the dataset's equation")
    p.add_argument("--eps", type=positive_float, default=None, help="override the dataset's eps")
    p.add_argument("--mobility", type=positive_float, default=None, help="override the dataset's mobility")
    p.add_argument("--seed", type=nonneg_int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="sample a trained network against a reference bulk function")
    p.add_argument("--model-file", required=True)
    p.add_argument("--truth", choices=sorted(TRUTHS), default="double-well")
    p.add_argument("--range", type=sample_range, default=(-1.0, 1.0, 201), help="lo:hi:npoints")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="forward simulation with a known bulk function")
    _add_physics(p)
    p.add_argument("--dt", type=positive_float, default=1e-4)
    p.add_argument("--t-end", type=nonneg_float, default=0.1)
    p.add_argument("--scheme", choices=SCHEMES, default=None)
    p.add_argument("--snapshots", type=float_list, default=[], help="comma-separated times to save")
    p.add_argument("--stab", type=stabilizer_spec, default=None, help="stabilizer (default s0=2 for AC, s1=-2 for CH)")
    p.add_argument("--diag-every", type=positive_int, default=10, help="steps between diagnostics rows")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)
    return parser


# flags whose values may start with a minus sign, e.g. --range -1:1:201
_SIGNED_VALUE_FLAGS = ("--range", "--t-random", "--t-start", "--delta", "--snapshots", "--stab", "--fine-stab")


def _attach_signed_values(argv: list[str]) -> list[str]:
    out, i = [], 0
    while i < len(argv):
        if argv[i] in _SIGNED_VALUE_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(_attach_signed_values(list(sys.argv[1:] if argv is None else argv)))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, DatasetFormatError, ModelSchemaError) as exc:
        print(f"pfspinn: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ArithmeticError as exc:
        print(f"pfspinn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"pfspinn: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
