"""Configuration files: INI sections [pll] or [system], [certificate], [simulation].

Quantities are in the problem's abstract units (phase in radians, time in
units of the loop).  The schema is documented in the README; every
validation error names the section and key it came from.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError, DomainError
from .model import (DecayEnvelope, ExponentialSum, ExpTerm, History,
                    PllSpec, SystemSpec, pll_spec, sine_nonlinearity)


@dataclass
class CertificateSettings:
    theorem: str = "T3"
    k_cap: int = 64
    strategy: str = "auto"
    budget: int = 2000
    restarts: int = 8
    mu_tilde: Optional[float] = None
    delta_bar: Optional[float] = None
    # optional explicit multipliers (used by the scan subcommand);
    # all four must be given together
    theta: Optional[float] = None
    eps: Optional[float] = None
    delta: Optional[float] = None
    tau: Optional[float] = None
    a: float = 1.0

    def multipliers(self):
        vals = (self.theta, self.eps, self.delta, self.tau)
        if all(v is None for v in vals):
            return None
        if any(v is None for v in vals):
            raise ConfigError("[certificate] theta, eps, delta, tau must be "
                              "given together")
        from .certificates import CertificateParams

        try:
            return CertificateParams(theta=self.theta, eps=self.eps,
                                     delta=self.delta, tau=self.tau, a=self.a)
        except DomainError as exc:
            raise ConfigError(f"[certificate] {exc}") from exc


@dataclass
class SimulationSettings:
    dt: Optional[float] = None
    horizon: Optional[float] = None
    mu: Optional[float] = None
    tol_rate: float = 1e-6
    tol_residual: float = 1e-6


@dataclass
class RunConfig:
    pll: Optional[PllSpec] = None
    system: Optional[SystemSpec] = None
    certificate: CertificateSettings = field(default_factory=CertificateSettings)
    simulation: SimulationSettings = field(default_factory=SimulationSettings)

    @property
    def spec(self):
        return self.pll if self.pll is not None else self.system


def _get_float(sec, section: str, key: str, default=None, required=False):
    if key not in sec:
        if required:
            raise ConfigError(f"[{section}] is missing required key '{key}'")
        return default
    raw = sec[key]
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a number") from exc


def _get_int(sec, section: str, key: str, default=None):
    if key not in sec:
        return default
    raw = sec[key]
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not an integer") from exc


def _parse_terms(raw: str, section: str, key: str) -> ExponentialSum:
    terms = []
    for chunk in raw.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) not in (2, 3):
            raise ConfigError(f"[{section}] {key}: term {chunk!r} is not coeff:rate[:onset]")
        try:
            coeff = float(parts[0])
            rate = float(parts[1])
            onset = float(parts[2]) if len(parts) == 3 else 0.0
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: term {chunk!r} has a non-numeric field") from exc
        try:
            terms.append(ExpTerm(coeff=coeff, rate=rate, onset=onset))
        except DomainError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from exc
    return ExponentialSum(tuple(terms))


def _parse_pll(sec) -> PllSpec:
    T = _get_float(sec, "pll", "t", required=True)
    s = _get_float(sec, "pll", "s", required=True)
    beta = _get_float(sec, "pll", "beta", required=True)
    if "h" in sec and "h0" in sec:
        raise ConfigError("[pll] give either h or h0, not both")
    if "h0" in sec:
        h = _get_float(sec, "pll", "h0") * T
    else:
        h = _get_float(sec, "pll", "h", default=0.0)

    try:
        probe = pll_spec(T, s, beta, h)
    except DomainError as exc:
        raise ConfigError(f"[pll] {exc}") from exc

    raw_sigma0 = sec.get("sigma0", "stable-root").strip()
    if raw_sigma0 == "stable-root":
        sigma0 = probe.stable_root()
    elif raw_sigma0 == "unstable-root":
        sigma0 = probe.unstable_root()
    else:
        try:
            sigma0 = float(raw_sigma0)
        except ValueError as exc:
            raise ConfigError(f"[pll] sigma0 = {raw_sigma0!r} is not a number "
                              f"or root name") from exc

    raw_rate = sec.get("sigma_dot0", "default").strip()
    if raw_rate == "default":
        sigma_dot0 = T * beta
    else:
        try:
            sigma_dot0 = float(raw_rate)
        except ValueError as exc:
            raise ConfigError(f"[pll] sigma_dot0 = {raw_rate!r} is not a number") from exc

    raw_hist = sec.get("history", "constant").strip()
    if raw_hist == "constant":
        history = History.constant(sigma0, h)
    elif raw_hist.startswith("linear:"):
        try:
            slope = float(raw_hist.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"[pll] history = {raw_hist!r}: bad slope") from exc
        history = History.linear(sigma0, slope, h)
    else:
        raise ConfigError(f"[pll] history = {raw_hist!r} (use constant or linear:<slope>)")

    try:
        return pll_spec(T, s, beta, h, sigma0=sigma0, sigma_dot0=sigma_dot0,
                        history=history)
    except DomainError as exc:
        raise ConfigError(f"[pll] {exc}") from exc


def _parse_system(sec) -> SystemSpec:
    rho = _get_float(sec, "system", "rho", required=True)
    h = _get_float(sec, "system", "h", default=0.0)
    kernel = _parse_terms(sec.get("kernel", ""), "system", "kernel")
    forcing = _parse_terms(sec.get("forcing", ""), "system", "forcing")

    raw_nl = sec.get("nonlinearity", "").strip()
    if not raw_nl.startswith("sine:"):
        raise ConfigError("[system] nonlinearity must be 'sine:<beta>' "
                          "(general characteristics go through the API)")
    try:
        beta = float(raw_nl.split(":", 1)[1])
        nl = sine_nonlinearity(beta)
    except (ValueError, DomainError) as exc:
        raise ConfigError(f"[system] nonlinearity = {raw_nl!r}: {exc}") from exc

    M = _get_float(sec, "system", "m_envelope", required=True)
    r = _get_float(sec, "system", "r_envelope", required=True)
    sigma0 = _get_float(sec, "system", "sigma0", required=True)
    sigma_dot0 = _get_float(sec, "system", "sigma_dot0", default=0.0)
    mu = _get_float(sec, "system", "mu", default=None)

    try:
        spec = SystemSpec(rho=rho, h=h, kernel=kernel, forcing=forcing,
                          nonlinearity=nl, envelope=DecayEnvelope(M=M, r=r),
                          history=History.constant(sigma0, h), sigma0=sigma0,
                          sigma_dot0=sigma_dot0, mu=mu)
        spec.validate()
    except DomainError as exc:
        raise ConfigError(f"[system] {exc}") from exc
    return spec


def _parse_certificate(sec) -> CertificateSettings:
    out = CertificateSettings()
    out.theorem = sec.get("theorem", out.theorem).strip().upper()
    if out.theorem not in ("T1", "T2", "T3", "T4"):
        raise ConfigError(f"[certificate] theorem = {out.theorem!r} "
                          f"(expected one of T1..T4)")
    out.k_cap = _get_int(sec, "certificate", "k_cap", out.k_cap)
    out.strategy = sec.get("strategy", out.strategy).strip()
    if out.strategy not in ("recipe", "search", "auto"):
        raise ConfigError(f"[certificate] strategy = {out.strategy!r}")
    out.budget = _get_int(sec, "certificate", "budget", out.budget)
    out.restarts = _get_int(sec, "certificate", "restarts", out.restarts)
    out.mu_tilde = _get_float(sec, "certificate", "mu_tilde", out.mu_tilde)
    out.delta_bar = _get_float(sec, "certificate", "delta_bar", out.delta_bar)
    out.theta = _get_float(sec, "certificate", "theta", out.theta)
    out.eps = _get_float(sec, "certificate", "eps", out.eps)
    out.delta = _get_float(sec, "certificate", "delta", out.delta)
    out.tau = _get_float(sec, "certificate", "tau", out.tau)
    out.a = _get_float(sec, "certificate", "a", out.a)
    return out


def _parse_simulation(sec) -> SimulationSettings:
    out = SimulationSettings()
    out.dt = _get_float(sec, "simulation", "dt", out.dt)
    out.horizon = _get_float(sec, "simulation", "horizon", out.horizon)
    out.mu = _get_float(sec, "simulation", "mu", out.mu)
    out.tol_rate = _get_float(sec, "simulation", "tol_rate", out.tol_rate)
    out.tol_residual = _get_float(sec, "simulation", "tol_residual", out.tol_residual)
    return out


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc

    cfg = RunConfig()
    has_pll = parser.has_section("pll")
    has_system = parser.has_section("system")
    if has_pll == has_system:
        raise ConfigError("config needs exactly one of the sections [pll] or [system]")
    if has_pll:
        cfg.pll = _parse_pll(parser["pll"])
    else:
        cfg.system = _parse_system(parser["system"])
    if parser.has_section("certificate"):
        cfg.certificate = _parse_certificate(parser["certificate"])
    if parser.has_section("simulation"):
        cfg.simulation = _parse_simulation(parser["simulation"])
    return cfg
