"""Command-line front end.

Subcommands: certify, simulate, reproduce, sweep-mu, scan.  Exit codes are a
stable contract: 0 success/certified, 1 input error, 2 no certificate,
3 simulation failure, 4 reproduction mismatch.  All numbers print with 12
significant digits.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import bounds as bounds_mod
from .config import RunConfig, load_config
from .errors import (CertificationError, ConfigError, DomainError,
                     NoCertificateError, SimulationError, SlipboundError)
from .frequency import TransferFunction, popov_value
from .model import PllSpec, pll_to_volterra
from .search import min_certified_k, mu_sweep
from .simulator import count_slipped_cycles, detect_convergence, integrate

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NO_CERTIFICATE = 2
EXIT_SIMULATION = 3
EXIT_MISMATCH = 4

# the published example: r0 per detuning at T=0.1, s=0.4, h0=1
_REPRODUCE_ROWS = (("pll_beta090.ini", 0.9, 1),
                   ("pll_beta092.ini", 0.92, 2),
                   ("pll_beta095.ini", 0.95, 5))


def g12(x) -> str:
    return f"{x:.12g}"


def _load(path: str) -> RunConfig:
    return load_config(path)


def cmd_certify(args) -> int:
    cfg = _load(args.config)
    cs = cfg.certificate
    theorem = args.theorem or cs.theorem
    strategy = args.strategy or cs.strategy
    k_cap = args.k_cap if args.k_cap is not None else cs.k_cap
    try:
        cert = min_certified_k(cfg.spec, theorem=theorem, strategy=strategy,
                               k_cap=k_cap, budget=cs.budget, restarts=cs.restarts,
                               seed=args.seed, mu_tilde=cs.mu_tilde,
                               delta_bar=cs.delta_bar)
    except NoCertificateError as exc:
        print(f"no certificate: {exc}", file=sys.stderr)
        for key, val in exc.diagnostics.items():
            print(f"  {key} = {val}", file=sys.stderr)
        return EXIT_NO_CERTIFICATE
    print(cert.report())
    if args.record:
        Path(args.record).parent.mkdir(parents=True, exist_ok=True)
        Path(args.record).write_text(cert.record() + "\n", encoding="utf-8")
        print(f"record written to {args.record}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args.config)
    sim = cfg.simulation
    mu = args.mu if args.mu is not None else sim.mu
    dt = args.dt if args.dt is not None else sim.dt
    horizon = args.horizon if args.horizon is not None else sim.horizon
    spec = cfg.spec
    vol = pll_to_volterra(spec) if isinstance(spec, PllSpec) else spec
    try:
        traj = integrate(vol, mu=mu, dt=dt, horizon=horizon)
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    conv = detect_convergence(traj, vol.nonlinearity, sim.tol_rate, sim.tol_residual)
    count = count_slipped_cycles(traj, vol.nonlinearity.period, convergence=conv)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        traj.to_csv(out)
    print(f"slips={count.k} sup_dev={g12(count.sup_dev)} converged={count.converged}")
    return EXIT_OK


def _reproduce_rows(seed: int):
    rows = []
    for name, beta, expected in _REPRODUCE_ROWS:
        cfg_path = resources.files("slipbound.data").joinpath(name)
        with resources.as_file(cfg_path) as p:
            cfg = _load(str(p))
        pll = cfg.pll
        q = bounds_mod.pll_q(pll.T, pll.s, pll.beta, pll.h0)
        cert = min_certified_k(pll, theorem="T3", strategy="recipe",
                               k_cap=cfg.certificate.k_cap, seed=seed)
        rows.append({"beta": beta, "q": q, "r0": cert.slipped_cycles_bound,
                     "expected_r0": expected, "k": cert.k})
    return rows


def cmd_reproduce(args) -> int:
    rows = _reproduce_rows(args.seed)
    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        print(f"{'beta':>6} {'q':>16} {'r0':>4} {'expected':>9}")
        for row in rows:
            print(f"{g12(row['beta']):>6} {g12(row['q']):>16} {row['r0']:>4d} "
                  f"{row['expected_r0']:>9d}")
    bad = [row for row in rows if row["r0"] != row["expected_r0"]]
    if bad:
        for row in bad:
            print(f"mismatch: beta={g12(row['beta'])} gives r0={row['r0']}, "
                  f"published value is {row['expected_r0']}", file=sys.stderr)
        return EXIT_MISMATCH
    return EXIT_OK


def cmd_sweep_mu(args) -> int:
    cfg = _load(args.config)
    cs = cfg.certificate
    try:
        cert = min_certified_k(cfg.spec, theorem="T4", strategy=cs.strategy,
                               k_cap=cs.k_cap, budget=cs.budget, restarts=cs.restarts,
                               seed=args.seed, mu_tilde=cs.mu_tilde,
                               delta_bar=cs.delta_bar)
    except NoCertificateError as exc:
        print(f"no certificate: {exc}", file=sys.stderr)
        return EXIT_NO_CERTIFICATE
    mus = np.linspace(args.mu_min, args.mu_max, args.count)
    rows = mu_sweep(cfg.spec, cert, [float(m) for m in mus],
                    dt=cfg.simulation.dt, horizon=cfg.simulation.horizon)
    lines = ["mu,q_mu,pd_ok,sim_slips"]
    lines += [f"{g12(r.mu)},{g12(r.q_mu)},{int(r.pd_ok)},{r.sim_slips}" for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        print(f"sweep written to {args.out} (k = {cert.k}, mu_max = {g12(cert.mu_max)})")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_scan(args) -> int:
    cfg = _load(args.config)
    spec = cfg.spec
    if isinstance(spec, PllSpec):
        vol = pll_to_volterra(spec)
        tf = TransferFunction.from_pll(spec.T, spec.s, spec.h)
    else:
        vol = spec
        tf = TransferFunction.from_system(spec)
    nl = vol.nonlinearity

    params = cfg.certificate.multipliers()
    if params is None:
        if isinstance(spec, PllSpec):
            from .search import pll_recipe

            params = pll_recipe(spec.T, spec.s, spec.h0)
        else:
            raise ConfigError("scan on a [system] config needs explicit "
                              "[certificate] multipliers theta/eps/delta/tau")
    omegas = np.linspace(0.0, args.omega_max, args.points)
    vals = popov_value(tf, params, nl.alpha1, nl.alpha2, omegas)
    lines = ["omega,pi_value"]
    lines += [f"{g12(w)},{g12(v)}" for w, v in zip(omegas, vals)]
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        print(f"scan written to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slipbound",
        description="Certified upper bounds on cycle slipping in delayed "
                    "phase-synchronization loops, cross-validated by simulation.")
    parser.add_argument("--seed", type=int, default=0, help="search determinism seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", help="find the smallest certified cycle bound")
    p.add_argument("config")
    p.add_argument("--theorem", choices=["T3", "T4"], default=None)
    p.add_argument("--strategy", choices=["recipe", "search", "auto"], default=None)
    p.add_argument("--k-cap", type=int, default=None)
    p.add_argument("--record", default=None, help="write the machine-readable record here")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("simulate", help="integrate the loop and count slipped cycles")
    p.add_argument("config")
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--out", default=None, help="trajectory CSV path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reproduce", help="re-derive the published example table")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("sweep-mu", help="table of bound and simulation across mu")
    p.add_argument("config")
    p.add_argument("--mu-min", type=float, required=True)
    p.add_argument("--mu-max", type=float, required=True)
    p.add_argument("--count", type=int, default=9)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep_mu)

    p = sub.add_parser("scan", help="CSV scan of the frequency inequality value")
    p.add_argument("config")
    p.add_argument("--omega-max", type=float, default=30.0)
    p.add_argument("--points", type=int, default=600)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_scan)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except (CertificationError, NoCertificateError) as exc:
        print(f"no certificate: {exc}", file=sys.stderr)
        return EXIT_NO_CERTIFICATE
    except SlipboundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
