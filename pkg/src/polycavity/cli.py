"""Command-line front end: ``polycavity <command> [flags]``.

Exit codes: 0 success, 1 comparison threshold exceeded, 2 usage error,
3 infeasible instance, 4 I/O failure or invalid input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from polycavity import density as dn
from polycavity.cavity import MpConfig, run_mp
from polycavity.experiments import (
    SCALE_HEADER,
    SHIFT_HEADER,
    compare_marginals,
    scale_experiment,
    shift_experiment,
    write_rows,
)
from polycavity.generate import gen_network
from polycavity.hitandrun import HarConfig, sample_marginals
from polycavity.model import InfeasibleError, InstanceError, load_instance, save_instance
from polycavity.oracle import grid_quadrature
from polycavity.support import run_support_bp, write_support_csv

logger = logging.getLogger("polycavity")

EXIT_OK = 0
EXIT_THRESHOLD = 1
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_IO = 4

DEFAULT_B_VALUES = (1.0, 0.6, 0.3, 0.12, 0.1)
DEFAULT_SHIFT_VAR = 19


class UsageError(Exception):
    pass


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _jsonable(x):
    """Replace non-finite floats by None so reports stay strict JSON."""
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (float, np.floating)):
        return float(x) if np.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def _float_list(text: str) -> list[float]:
    """Comma-separated floats, or ``start:stop:step`` for an arithmetic grid."""
    try:
        if ":" in text:
            start, stop, step = (float(t) for t in text.split(":"))
            if step <= 0:
                raise ValueError
            n = int(np.ceil((stop - start) / step - 1e-9))
            return [round(start + k * step, 12) for k in range(max(n, 0))]
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a float list or start:stop:step grid: {text!r}")


# --- commands ----------------------------------------------------------------


def cmd_gen(args) -> int:
    inst = gen_network(args.n, args.m, args.kvar, args.kcons, seed=args.seed)
    path = Path(args.out)
    if path.is_dir() or not path.suffix:
        path.mkdir(parents=True, exist_ok=True)
        path = path / "instance.json"
    save_instance(inst, path)
    logger.info("wrote %s (N=%d, M=%d, %d nonzeros)", path, inst.n_vars, inst.n_cons, len(inst.xi))
    return EXIT_OK


def _mp_config(args) -> MpConfig:
    return MpConfig(
        bins=args.bins,
        samples_per_update=args.samples,
        max_sweeps=args.sweeps,
        tol=args.tol,
        damping=args.damping,
        seed=args.seed,
    )


def cmd_mp(args) -> int:
    inst = load_instance(args.instance)
    res = run_mp(inst, _mp_config(args))
    out = _outdir(args)
    dn.write_densities_csv(out / "marginals.csv", dn.densities_by_index(res.marginals))
    _write_json(out / "report.json", _jsonable(res.report))
    logger.info("mp: %d sweeps, final delta %.3g, converged=%s", res.report["sweeps"],
                res.report["final_delta"], res.report["converged"])
    return EXIT_OK


def cmd_har(args) -> int:
    inst = load_instance(args.instance)
    cfg = HarConfig(
        n_samples=args.nsamples, burn_in=args.burnin, thin=args.thin,
        chains=args.chains, seed=args.seed, bins=args.bins,
    )
    sup = run_support_bp(inst)
    if not sup.feasible:
        raise InfeasibleError("support propagation found an empty domain")
    res = sample_marginals(inst, cfg, supports=sup.intervals)
    out = _outdir(args)
    dn.write_densities_csv(out / "marginals.csv", dn.densities_by_index(res.marginals))
    _write_json(out / "diagnostics.json", _jsonable(res.diagnostics))
    logger.info("har: %d kept samples, max spread %.3g", res.diagnostics["kept"], res.diagnostics["max_spread"])
    return EXIT_OK


def cmd_oracle(args) -> int:
    inst = load_instance(args.instance)
    res = grid_quadrature(inst, args.res)
    out = _outdir(args)
    dn.write_densities_csv(out / "marginals.csv", dn.densities_by_index(res.marginals))
    _write_json(out / "report.json", {"volume_fraction": res.volume_fraction, "grid_res": res.grid_res})
    logger.info("oracle: volume fraction %.6g", res.volume_fraction)
    return EXIT_OK


def cmd_support(args) -> int:
    inst = load_instance(args.instance)
    res = run_support_bp(inst)
    out = _outdir(args)
    write_support_csv(out / "support.csv", res.intervals)
    _write_json(out / "support_report.json", {"feasible": res.feasible, "sweeps": res.sweeps})
    if not res.feasible:
        logger.error("instance is infeasible: support propagation emptied a domain")
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_compare(args) -> int:
    a = dn.read_densities_csv(args.a)
    b = dn.read_densities_csv(args.b)
    try:
        rep = compare_marginals(a, b)
    except ValueError as exc:
        raise InstanceError(str(exc))
    out = _outdir(args)
    _write_json(out / "compare.json", _jsonable(rep))
    if not args.quiet:
        print(f"mean_tv {rep['mean_tv']:.6f} max_tv {rep['max_tv']:.6f}")
    failed = args.tv_max is not None and rep["mean_tv"] > args.tv_max
    failed |= args.tv_each is not None and rep["max_tv"] > args.tv_each
    return EXIT_THRESHOLD if failed else EXIT_OK


def cmd_exp_scale(args) -> int:
    inst = load_instance(args.instance)
    for b in args.b:
        if not 0 < b <= 1:
            raise UsageError(f"b values must lie in (0, 1], got {b}")
    rows, summary = scale_experiment(inst, args.b, _mp_config(args), args.vars)
    out = _outdir(args)
    write_rows(out / "scale.csv", SCALE_HEADER, rows)
    _write_json(out / "scale_report.json", _jsonable({repr(b): s for b, s in summary.items()}))
    for b, s in summary.items():
        logger.info("b=%g: %s", b, s["status"])
    return EXIT_OK


def cmd_exp_shift(args) -> int:
    inst = load_instance(args.instance)
    for a in args.a_grid:
        if not 0 <= a < 1:
            raise UsageError(f"a values must lie in [0, 1), got {a}")
    if not 0 <= args.var < inst.n_vars:
        raise UsageError(f"--var must be a variable index in [0, {inst.n_vars})")
    res = shift_experiment(inst, args.a_grid, args.var)
    out = _outdir(args)
    write_rows(out / "shift.csv", SHIFT_HEADER, res.rows)
    _write_json(out / "shift_report.json", _jsonable({
        "variable": args.var,
        "a_star": res.a_star,
        "bracket": list(res.bracket) if res.bracket else None,
    }))
    logger.info("exp-shift: a* = %s for variable %d", res.a_star, args.var)
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--out", default=".", help="output directory (gen: instance file or directory)")
    common.add_argument("--quiet", action="store_true", help="only log warnings and errors")

    mp_flags = argparse.ArgumentParser(add_help=False)
    mp_flags.add_argument("--bins", type=_positive_int, default=dn.DEFAULT_BINS)
    mp_flags.add_argument("--samples", type=_positive_int, default=MpConfig.samples_per_update,
                          help="weighted passes per message update")
    mp_flags.add_argument("--sweeps", type=_positive_int, default=MpConfig.max_sweeps)
    mp_flags.add_argument("--tol", type=float, default=MpConfig.tol)
    mp_flags.add_argument("--damping", type=float, default=MpConfig.damping)

    p = argparse.ArgumentParser(prog="polycavity", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a random planted instance")
    g.add_argument("--n", type=_positive_int, default=25, help="number of variables")
    g.add_argument("--m", type=_positive_int, default=10, help="number of constraints")
    g.add_argument("--kvar", type=float, default=1.5, help="mean variable degree")
    g.add_argument("--kcons", type=float, default=3.75, help="mean constraint degree")
    g.set_defaults(func=cmd_gen)

    m = sub.add_parser("mp", parents=[common, mp_flags], help="weighted message-passing marginals")
    m.add_argument("instance")
    m.set_defaults(func=cmd_mp)

    h = sub.add_parser("har", parents=[common], help="Hit-and-Run reference marginals")
    h.add_argument("instance")
    h.add_argument("--nsamples", type=_positive_int, default=HarConfig.n_samples, help="kept samples in total")
    h.add_argument("--burnin", type=int, default=HarConfig.burn_in)
    h.add_argument("--thin", type=_positive_int, default=HarConfig.thin)
    h.add_argument("--chains", type=_positive_int, default=HarConfig.chains)
    h.add_argument("--bins", type=_positive_int, default=dn.DEFAULT_BINS)
    h.set_defaults(func=cmd_har)

    o = sub.add_parser("oracle", parents=[common], help="grid-quadrature volume and marginals (N <= 4)")
    o.add_argument("instance")
    o.add_argument("--res", type=int, default=201, help="odd grid resolution per axis")
    o.set_defaults(func=cmd_oracle)

    s = sub.add_parser("support", parents=[common], help="support intervals by interval propagation")
    s.add_argument("instance")
    s.set_defaults(func=cmd_support)

    c = sub.add_parser("compare", parents=[common], help="total variation between two marginals CSVs")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--tv-max", type=float, default=None, help="fail (exit 1) if mean TV exceeds this")
    c.add_argument("--tv-each", type=float, default=None, help="fail (exit 1) if any TV exceeds this")
    c.set_defaults(func=cmd_compare)

    e = sub.add_parser("exp-scale", parents=[common, mp_flags], help="marginals on boxes [0, b]^N")
    e.add_argument("instance")
    e.add_argument("--b", type=_float_list, default=list(DEFAULT_B_VALUES), help="comma-separated b values")
    e.add_argument("--vars", type=lambda t: [int(v) for v in t.split(",")], default=None,
                   help="comma-separated variable indices (default all)")
    e.set_defaults(func=cmd_exp_scale)

    x = sub.add_parser("exp-shift", parents=[common], help="support intervals on boxes [a, 1]^N")
    x.add_argument("instance")
    x.add_argument("--a-grid", type=_float_list, default=_float_list("0:1:0.01"),
                   help="comma-separated a values or start:stop:step (default 0:1:0.01)")
    x.add_argument("--var", type=int, default=DEFAULT_SHIFT_VAR, help="variable whose meet point is refined (0-based)")
    x.set_defaults(func=cmd_exp_shift)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except InfeasibleError as exc:
        logger.error("infeasible: %s", exc)
        return EXIT_INFEASIBLE
    except (OSError, InstanceError, json.JSONDecodeError) as exc:
        logger.error("%s", exc)
        return EXIT_IO
    except ValueError as exc:
        logger.error("invalid input: %s", exc)
        return EXIT_IO
    logger.info("%s finished in %.1f s", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
