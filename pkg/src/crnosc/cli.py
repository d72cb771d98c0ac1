"""Command-line front end.

Exit codes:
    0  success
    1  unreadable input, parse error or invalid flags
    2  integration failure
    3  no periodic orbit found (reason printed)
    4  added reactions fail the rank condition
    5  verify: an orbit was found but it is not nondegenerate-stable
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .inheritance import (ExtensionError, RankDeficient, build_extension, extended_network,
                          synthesize_rates, verify_inheritance)
from .model import Network, NetworkParseError, parse_network, read_network, serialize_network
from .odeint import IntegrationError, IntegratorConfig, integrate, write_trajectory_csv
from .orbit import (STABLE, FloquetError, OrbitSearchConfig, OrbitSearchError, dump_json,
                    find_periodic_orbit, write_samples_csv)
from .kinetics import compile_system
from .stoich import conservation_laws

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INTEGRATION = 2
EXIT_NO_ORBIT = 3
EXIT_RANK = 4
EXIT_NOT_STABLE = 5


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"crnosc: {msg}", file=sys.stderr)


def parse_state(text: str, species: Sequence[str], what: str = "--x0") -> np.ndarray:
    """``1,1,1`` in species order, or ``X=1,Y=1,Z=1`` in any order."""
    items = [s.strip() for s in text.split(",") if s.strip()]
    if any("=" in s for s in items):
        values = {}
        for item in items:
            name, _, val = item.partition("=")
            name = name.strip()
            if name not in species:
                raise UsageError(f"{what}: unknown species {name!r}")
            values[name] = _float(val, what)
        missing = [s for s in species if s not in values]
        if missing:
            raise UsageError(f"{what}: missing value for species {', '.join(missing)}")
        out = np.array([values[s] for s in species])
    else:
        if len(items) != len(species):
            missing = list(species[len(items):])
            detail = f"missing value for species {', '.join(missing)}" if missing else "too many values"
            raise UsageError(f"{what}: expected {len(species)} values ({', '.join(species)}); {detail}")
        out = np.array([_float(v, what) for v in items])
    return out


def _float(text: str, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise UsageError(f"{what}: {text.strip()!r} is not a number") from None


def _load(path: str, **kw) -> Network:
    try:
        return read_network(path, **kw)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except NetworkParseError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _integrator(args) -> IntegratorConfig:
    try:
        return IntegratorConfig(rtol=args.rtol, atol=args.atol)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _orbit_config(args) -> OrbitSearchConfig:
    try:
        return OrbitSearchConfig(burn_in=args.burn_in, max_returns=args.max_returns, n_samples=args.n_samples,
                                 integrator=_integrator(args))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _positive_state(net: Network, text: Optional[str]) -> np.ndarray:
    if not text:
        return np.ones(net.n_species)
    x0 = parse_state(text, net.species)
    if np.any(x0 <= 0):
        raise UsageError("--x0: initial concentrations must be strictly positive")
    return x0


# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    net = _load(args.network)
    x0 = _positive_state(net, args.x0)
    if args.t_end < 0:
        raise UsageError("--t-end must be nonnegative")
    field, _ = compile_system(net)
    traj = integrate(field, x0, args.t_end, _integrator(args))
    write_trajectory_csv(args.out, traj, net.species)
    L = conservation_laws(net.stoichiometric_matrix()).L
    drift = float(np.abs((traj.states - x0) @ L.T).max(initial=0.0))
    print(f"wrote {len(traj)} rows to {args.out}")
    print(f"conservation laws: {L.shape[0]}; max drift {drift:.3e}")
    return EXIT_OK


def _find_orbit(args):
    net = _load(args.network)
    x0 = _positive_state(net, args.x0)
    return find_periodic_orbit(net, x0, _orbit_config(args))


def _print_multipliers(orbit) -> None:
    print(f"period {orbit.period:.12g}")
    for i, mu in enumerate(orbit.multipliers_relative):
        tag = "  (trivial)" if i == 0 else ""
        print(f"  mu_{i} = {mu.real:+.10e} {mu.imag:+.10e}i   |mu| = {abs(mu):.10e}{tag}")
    print(f"classification: {orbit.classification}")


def cmd_orbit(args) -> int:
    orbit = _find_orbit(args)
    if args.samples_csv:
        write_samples_csv(args.samples_csv, orbit)
    report = orbit.report(args.samples_csv)
    if args.out:
        dump_json(report, args.out)
    print(f"orbit found: period {orbit.period:.12g}, classification {orbit.classification}")
    return EXIT_OK


def cmd_floquet(args) -> int:
    orbit = _find_orbit(args)
    _print_multipliers(orbit)
    if args.out:
        dump_json(orbit.report(), args.out)
    return EXIT_OK


def _extension(args):
    base = _load(args.network)
    try:
        text = Path(args.add).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {args.add}: {exc.strerror}") from None
    try:
        added = parse_network(text, require_rates=False, symbols={"eps": args.eps, "eta": args.eta})
    except NetworkParseError as exc:
        raise UsageError(f"{args.add}: {exc}") from None
    return base, build_extension(base, added)


def _describe(ext) -> None:
    print("beta (rows " + ", ".join(ext.new_species) + "):")
    for name, row in zip(ext.new_species, ext.beta):
        print(f"  {name:>6} " + " ".join(f"{v:3d}" for v in row))
    print(f"rank {ext.rank_beta} (m = {ext.m})")
    print("pivot species: " + ", ".join(ext.new_species[: ext.m]))


def cmd_extend(args) -> int:
    _, ext = _extension(args)
    _describe(ext)
    sched = synthesize_rates(ext, args.eps, args.eta)
    net = extended_network(ext, sched)
    for rxn, (sf, sb) in zip(ext.added, sched.symbolic()):
        print(f"  {rxn.reactant} <-> {rxn.product}: kf = {sf}, kr = {sb}")
    Path(args.out).write_text(serialize_network(net), encoding="utf-8")
    print(f"wrote {args.out}")
    return EXIT_OK


def _sweep_path(out: str, eps: float) -> str:
    p = Path(out)
    return str(p.with_name(f"{p.stem}_eps{eps:g}{p.suffix}"))


def _report_code(rep) -> int:
    if rep.orbit is None:
        return EXIT_INTEGRATION if rep.failure and rep.failure["reason"] in _INTEGRATION_REASONS else EXIT_NO_ORBIT
    return EXIT_OK if rep.orbit.classification == STABLE else EXIT_NOT_STABLE


_INTEGRATION_REASONS = {"integration-failure", "step-limit", "left-positive-orthant", "stiffness"}


def cmd_verify(args) -> int:
    base, ext = _extension(args)
    y0 = parse_state(args.y0, ext.new_species, "--y0")
    if np.any(y0 < 0):
        raise UsageError("--y0: concentrations must be nonnegative")
    x0 = _positive_state(base, args.x0)
    cfg = _orbit_config(args)
    try:
        base_orbit = find_periodic_orbit(base, x0, cfg)
    except OrbitSearchError as exc:
        if args.out:
            dump_json({"schema": 1, "base_orbit": {"status": "failed", "reason": exc.reason, "message": str(exc)},
                       "rank_check": ext.rank_report(), "permutation": list(ext.new_species)}, args.out)
        _err(f"base network: no periodic orbit: {exc}")
        return EXIT_NO_ORBIT
    if base_orbit.classification != STABLE:
        _err(f"base orbit is {base_orbit.classification}; verification needs {STABLE}")
        return EXIT_NOT_STABLE

    if args.eps_list:
        eps_values = [_float(v, "--eps-list") for v in args.eps_list.split(",") if v.strip()]
        if any(v <= 0 for v in eps_values):
            raise UsageError("--eps-list: values must be positive")
        etas = [args.eta if args.eta_given else v for v in eps_values]
        with ProcessPoolExecutor(max_workers=min(len(eps_values), args.jobs)) as pool:
            futures = [pool.submit(verify_inheritance, base_orbit, ext, e, h, y0, cfg) for e, h in zip(eps_values, etas)]
            reports = [f.result() for f in futures]
        outs = [_sweep_path(args.out, e) if args.out else None for e in eps_values]
    else:
        reports = [verify_inheritance(base_orbit, ext, args.eps, args.eta, y0, cfg)]
        outs = [args.out]

    codes = []
    for rep, out in zip(reports, outs):
        csv_path = None
        if out and rep.orbit is not None and args.samples_csv:
            csv_path = str(Path(out).with_suffix(".samples.csv"))
            write_samples_csv(csv_path, rep.orbit)
        if out:
            dump_json(rep.to_json(csv_path), out)
        code = _report_code(rep)
        codes.append(code)
        head = f"eps={rep.epsilon:g} eta={rep.eta:g}:"
        if rep.orbit is None:
            print(f"{head} no orbit ({rep.failure['reason']})")
            continue
        ranges = ", ".join(f"{k} {v['peak_to_peak']:.3g}" for k, v in rep.new_species_ranges.items())
        print(f"{head} {rep.orbit.classification}, period {rep.orbit.period:.8g}, "
              f"hausdorff {rep.hausdorff_old_species:.4g}, ranges [{ranges}], drift {rep.conservation_drift:.2e}")
        if rep.conserved_combination:
            print(f"  conserved combination {rep.conserved_combination['initial']} "
                  f"(drift {rep.conserved_combination['max_drift']:.2e})")
    return max(codes)


# ---------------------------------------------------------------------------

def _add_integrator_flags(p) -> None:
    p.add_argument("--rtol", type=float, default=1e-9)
    p.add_argument("--atol", type=float, default=1e-11)


def _add_orbit_flags(p) -> None:
    p.add_argument("--x0", default=None, help="initial state, '1,1,1' or 'X=1,Y=1,Z=1' (default: all ones)")
    p.add_argument("--burn-in", type=float, default=150.0)
    p.add_argument("--max-returns", type=int, default=30)
    p.add_argument("--n-samples", type=int, default=512)
    _add_integrator_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crnosc", description="Oscillations in mass-action reaction networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate a network and write a trajectory CSV")
    p.add_argument("network")
    p.add_argument("--x0", required=True)
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--out", required=True)
    _add_integrator_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("orbit", help="locate a periodic orbit and write its report")
    p.add_argument("network")
    _add_orbit_flags(p)
    p.add_argument("--out", help="orbit report JSON")
    p.add_argument("--samples-csv", help="write one period of samples here")
    p.set_defaults(func=cmd_orbit)

    p = sub.add_parser("floquet", help="print relative Floquet multipliers and the classification")
    p.add_argument("network")
    _add_orbit_flags(p)
    p.add_argument("--out", help="orbit report JSON")
    p.set_defaults(func=cmd_floquet)

    for name, func, hlp in (("extend", cmd_extend, "write the extended network"),
                            ("verify", cmd_verify, "check that the extended network keeps a stable orbit")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("network", help="base network file")
        p.add_argument("--add", required=True, help="file of reversible reactions on new species")
        p.add_argument("--eps", type=float, default=0.2)
        p.add_argument("--eta", type=float, default=None, help="default 0.2; in a sweep, equal to each eps")
        if name == "extend":
            p.add_argument("--out", required=True, help="extended network file")
        else:
            p.add_argument("--y0", required=True, help="new-species initial values, e.g. 'U=0,V=0,W=1'")
            _add_orbit_flags(p)
            p.add_argument("--out", help="inheritance report JSON")
            p.add_argument("--samples-csv", action="store_true", help="also write orbit samples next to --out")
            p.add_argument("--eps-list", help="comma-separated eps values run concurrently")
            p.add_argument("--jobs", type=int, default=4)
        p.set_defaults(func=func)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; keep 2 for integration failures
        return EXIT_INPUT if exc.code else EXIT_OK
    if hasattr(args, "eta"):
        args.eta_given = args.eta is not None
        if args.eta is None:
            args.eta = 0.2
        if not (args.eps > 0 and args.eta > 0):
            _err("--eps and --eta must be positive")
            return EXIT_INPUT
    try:
        return args.func(args)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_INPUT
    except RankDeficient as exc:
        _err(f"rank condition fails: {exc}")
        return EXIT_RANK
    except ExtensionError as exc:
        _err(str(exc))
        return EXIT_INPUT
    except OrbitSearchError as exc:
        _err(f"no periodic orbit: {exc}")
        return EXIT_NO_ORBIT
    except FloquetError as exc:
        _err(f"no periodic orbit (floquet): {exc}")
        return EXIT_NO_ORBIT
    except IntegrationError as exc:
        _err(f"integration failed ({exc.reason}) at t={exc.t:.6g}: {exc}")
        return EXIT_INTEGRATION


if __name__ == "__main__":
    sys.exit(main())
