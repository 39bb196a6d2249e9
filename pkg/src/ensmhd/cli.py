"""Command-line driver for the verification and benchmark experiments.

Subcommands: converge-space, converge-time, energy, cavity, channel,
validate-mms.  Global flags select the output directory, the random seed,
deterministic-grid viscosity sampling and paper-scale resolutions; a TOML
or JSON config file can override the experiment parameters.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments

logger = logging.getLogger(__name__)


def load_config(path) -> dict:
    """Read a TOML or JSON config file into a flat dict."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return json.loads(text)
    try:
        import tomllib
    except ImportError:  # pragma: no cover - py3.10
        import tomli as tomllib
    return tomllib.loads(text)


def _common_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=str, default=None, help="TOML or JSON config file")
    parser.add_argument("--out", type=str, default="out", help="output directory")
    parser.add_argument("--seed", type=int, default=0, help="viscosity sampling seed")
    parser.add_argument(
        "--deterministic-grid",
        action="store_true",
        help="use the evenly spaced viscosity grid instead of random draws",
    )
    parser.add_argument(
        "--paper-scale",
        action="store_true",
        help="run at the full reference resolutions (slow)",
    )


def _gather(args, config_keys):
    """Merge config-file values under CLI defaults; CLI flags win."""
    opts = {}
    if args.config:
        raw = load_config(args.config)
        aliases = {"s": "coupling", "T": "t_end", "J": "num_members", "eps": "eps"}
        for key, value in raw.items():
            opts[aliases.get(key, key)] = value
    opts = {k: v for k, v in opts.items() if k in config_keys}
    return opts


def _mesh_n(opts) -> dict:
    mesh = opts.pop("mesh", None)
    if isinstance(mesh, dict) and "n" in mesh:
        opts["n"] = int(mesh["n"])
    return opts


def cmd_converge_space(args):
    keys = {"eps", "sample", "num_members", "t_end", "mu", "mesh"}
    opts = _mesh_n(_gather(args, keys))
    opts.pop("n", None)
    eps_list = [args.eps] if args.eps is not None else [opts.pop("eps", 0.0)]
    samples = [args.sample] if args.sample is not None else [1, 2]
    for eps in eps_list:
        for sample in samples:
            table = experiments.run_spatial_convergence(
                eps=float(eps),
                sample=sample,
                seed=args.seed,
                deterministic_grid=args.deterministic_grid,
                paper_scale=args.paper_scale,
                out_dir=args.out,
                **opts,
            )
            _print_table(table)
    return 0


def cmd_converge_time(args):
    keys = {"eps", "sample", "num_members", "t_end", "mu", "mesh"}
    opts = _mesh_n(_gather(args, keys))
    eps_list = [args.eps] if args.eps is not None else [opts.pop("eps", 0.0)]
    samples = [args.sample] if args.sample is not None else [1, 2]
    for eps in eps_list:
        for sample in samples:
            table = experiments.run_temporal_convergence(
                eps=float(eps),
                sample=sample,
                seed=args.seed,
                deterministic_grid=args.deterministic_grid,
                paper_scale=args.paper_scale,
                out_dir=args.out,
                **opts,
            )
            _print_table(table)
    return 0


def cmd_energy(args):
    keys = {"eps", "sample", "num_members", "dt", "t_end", "mu", "mesh"}
    opts = _mesh_n(_gather(args, keys))
    result = experiments.run_energy_test(
        seed=args.seed,
        deterministic_grid=args.deterministic_grid,
        out_dir=args.out,
        **opts,
    )
    increases = (result.report.energy[1:] > result.report.energy[:-1]).sum()
    print(f"energy: E0={result.report.energy[0]:.6e} ET={result.report.energy[-1]:.6e} "
          f"increasing steps: {increases}")
    print(f"stability bound holds for all members: {result.stability.holds}")
    return 0


def cmd_cavity(args):
    keys = {"coupling", "dt", "t_end", "eps", "num_members", "mu", "mesh"}
    opts = _mesh_n(_gather(args, keys))
    if args.reynolds is not None:
        opts["reynolds"] = args.reynolds
    if args.coupling is not None:
        opts["coupling"] = args.coupling
    if args.members is not None:
        opts["num_members"] = args.members
    result = experiments.run_cavity(
        seed=args.seed,
        deterministic_grid=args.deterministic_grid,
        out_dir=args.out,
        **opts,
    )
    print(f"cavity: final energy {result.report.energy[-1]:.6e}, "
          f"max divergence {max(result.report.div_v.max(), result.report.div_w.max()):.3e}")
    return 0


def cmd_channel(args):
    keys = {"coupling", "dt", "t_end", "num_members", "mu", "h_target"}
    opts = _gather(args, keys)
    if args.coupling is not None:
        opts["coupling"] = args.coupling
    eps_list = tuple(args.eps_list) if args.eps_list else (0.1, 0.01, 0.0)
    result = experiments.run_step_channel(
        eps_list=eps_list,
        seed=args.seed,
        deterministic_grid=args.deterministic_grid,
        paper_scale=args.paper_scale,
        out_dir=args.out,
        **opts,
    )
    for eps, dist in result.distances:
        print(f"channel eps={eps:g}: |<u> - u_single|_L2 = {dist:.6e}")
    return 0


def cmd_validate_mms(args):
    worst = experiments.validate_mms(
        num_points=args.points, num_members=args.members_checked, seed=args.seed
    )
    ok = worst <= 1e-10
    print(f"validate-mms: max residual {worst:.3e} ({'PASS' if ok else 'FAIL'} at 1e-10)")
    return 0 if ok else 1


def _print_table(table):
    print(table.label)
    print(f"{table.variable:>12}  {'err_v':>12} {'rate':>6}  {'err_w':>12} {'rate':>6}")
    for row in table.rows:
        rv = "" if row.rate_v is None else f"{row.rate_v:.2f}"
        rw = "" if row.rate_w is None else f"{row.rate_w:.2f}"
        print(f"{row.step:>12.6g}  {row.err_v:>12.4e} {rv:>6}  {row.err_w:>12.4e} {rw:>6}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ensmhd",
        description="Ensemble MHD solver: verification and benchmark experiments",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("converge-space", help="spatial convergence study (MMS)")
    _common_flags(p)
    p.add_argument("--eps", type=float, default=None, help="perturbation size (default 0)")
    p.add_argument("--sample", type=int, choices=(1, 2), default=None, help="viscosity sample (default both)")
    p.set_defaults(func=cmd_converge_space)

    p = sub.add_parser("converge-time", help="temporal convergence study (MMS)")
    _common_flags(p)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--sample", type=int, choices=(1, 2), default=None)
    p.set_defaults(func=cmd_converge_time)

    p = sub.add_parser("energy", help="zero-forcing energy decay test")
    _common_flags(p)
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("cavity", help="regularized lid-driven cavity")
    _common_flags(p)
    p.add_argument("--reynolds", type=float, default=None)
    p.add_argument("--coupling", type=float, default=None)
    p.add_argument("--members", type=int, default=None, help="ensemble size (1 = single run)")
    p.set_defaults(func=cmd_cavity)

    p = sub.add_parser("channel", help="channel flow past a step")
    _common_flags(p)
    p.add_argument("--coupling", type=float, default=None)
    p.add_argument("--eps-list", type=float, nargs="+", default=None)
    p.set_defaults(func=cmd_channel)

    p = sub.add_parser("validate-mms", help="forcing residual gate")
    _common_flags(p)
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--members-checked", type=int, default=3)
    p.set_defaults(func=cmd_validate_mms)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
