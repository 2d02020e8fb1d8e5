"""Command line front end: analytic / simulated sweeps, validation and ESF curves.

Configuration comes from an INI file (sections ``system``, ``sweep``,
``simulation``, ``tolerances``) overridden by flags.  Every run writes CSV with
the resolved configuration echoed as ``#`` comment lines so that a file is
reproducible on its own.

Exit codes: 0 success, 2 configuration error, 3 quadrature did not converge,
4 validation failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .analytic import AnalyticContext
from .core import ConfigError, Protocol, SystemConfig, parse_blockage
from .quadrature import ConvergenceError
from .simulator import DEFAULT_SINR_DB, SimulationConfig, compute_esf, run_campaign

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_VALIDATION = 4

DEFAULT_TOLERANCES = {
    "p_cs": 0.02,
    "p_co": 0.02,
    "eta_ia": 0.02,
    "dl_ccdf": 0.03,
    "upt_rel": 0.05,
}
VALIDATED_METRICS = ("p_cs", "p_co", "eta_ia", "dl_ccdf_0", "dl_ccdf_10", "dl_ccdf_20", "upt_bps")


@dataclass
class SweepSpec:
    protocols: list = field(default_factory=lambda: ["baseline"])
    blockages: list = field(default_factory=lambda: ["losball:100:1"])
    m_values: list = field(default_factory=lambda: list(range(4, 49, 4)))
    m_cs_coarse: int = 4

    def validate(self, cfg: SystemConfig):
        if not self.protocols:
            raise ConfigError("sweep.protocols: empty protocol list")
        if not self.blockages:
            raise ConfigError("sweep.blockages: empty blockage list")
        if not self.m_values:
            raise ConfigError("sweep.m_range: empty M grid")
        for m in self.m_values:
            if m < 1 or m % cfg.n_antennas:
                raise ConfigError(f"sweep.m_range: M={m} is not a multiple of N={cfg.n_antennas}")
        for name in self.protocols:
            for m in self.m_values:
                Protocol.build(name, m, cfg.n_antennas, self.m_cs_coarse)
        for b in self.blockages:
            parse_blockage(b)

    def points(self, cfg: SystemConfig):
        for name in self.protocols:
            for label in self.blockages:
                model = parse_blockage(label)
                for m in self.m_values:
                    c = cfg.with_(m_antennas=m)
                    yield c, model, Protocol.build(name, m, cfg.n_antennas, self.m_cs_coarse)


def parse_m_range(text: str) -> list[int]:
    parts = text.split(":")
    try:
        if len(parts) == 1:
            return [int(parts[0])]
        if len(parts) == 3:
            a, b, step = (int(p) for p in parts)
            if step <= 0 or b < a:
                raise ValueError
            return list(range(a, b + 1, step))
    except ValueError:
        pass
    raise ConfigError(f"m_range: expected A:B:STEP or a single M, got {text!r}")


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.replace("\n", ",").split(",") if t.strip()]


def _coerce(name, raw, kind):
    try:
        if kind is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


@dataclass
class ResolvedConfig:
    system: SystemConfig
    sweep: SweepSpec
    sim: SimulationConfig
    tolerances: dict

    def header_lines(self, verb: str) -> list[str]:
        lines = [f"mmwave-ia {__version__} {verb}"]
        for f in SystemConfig.input_fields():
            lines.append(f"system.{f} = {getattr(self.system, f)!r}")
        lines.append("sweep.protocols = " + ",".join(self.sweep.protocols))
        lines.append("sweep.blockages = " + ",".join(self.sweep.blockages))
        lines.append("sweep.m_values = " + ",".join(str(m) for m in self.sweep.m_values))
        lines.append(f"sweep.m_cs_coarse = {self.sweep.m_cs_coarse}")
        for f in dataclasses.fields(SimulationConfig):
            if f.name == "workers":
                continue
            lines.append(f"simulation.{f.name} = {getattr(self.sim, f.name)!r}")
        for k in sorted(self.tolerances):
            lines.append(f"tolerance.{k} = {self.tolerances[k]!r}")
        return lines


def resolve(args) -> ResolvedConfig:
    parser = configparser.ConfigParser()
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"--config: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"--config: {exc}") from None
    known = {"system", "sweep", "simulation", "tolerances"}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown config section [{section}]")

    sys_kwargs = {}
    fields = {f.name: f.type for f in dataclasses.fields(SystemConfig) if f.init}
    if parser.has_section("system"):
        for key, raw in parser.items("system"):
            if key not in fields:
                raise ConfigError(f"system.{key}: unknown key")
            kind = int if key in ("n_pa", "m_antennas", "n_antennas") else float
            sys_kwargs[key] = _coerce(f"system.{key}", raw, kind)
    try:
        system = SystemConfig(**sys_kwargs)
    except ConfigError as exc:
        raise ConfigError(f"system: {exc}") from None

    sweep = SweepSpec()
    if parser.has_section("sweep"):
        sec = parser["sweep"]
        for key in sec:
            if key not in ("protocols", "blockages", "m_range", "m_cs_coarse"):
                raise ConfigError(f"sweep.{key}: unknown key")
        if "protocols" in sec:
            sweep.protocols = _split(sec["protocols"])
        if "blockages" in sec:
            sweep.blockages = _split(sec["blockages"])
        if "m_range" in sec:
            sweep.m_values = parse_m_range(sec["m_range"])
        if "m_cs_coarse" in sec:
            sweep.m_cs_coarse = _coerce("sweep.m_cs_coarse", sec["m_cs_coarse"], int)
    if args.protocol:
        sweep.protocols = list(args.protocol)
    if args.blockage:
        sweep.blockages = list(args.blockage)
    if args.m_range:
        sweep.m_values = parse_m_range(args.m_range)
    sweep.validate(system)
    system = system.with_(m_antennas=sweep.m_values[0])

    sim_kwargs = {}
    sim_types = {"area_km": float, "n_bs_draws": int, "n_user_draws": int, "seed": int,
                 "interior_margin_km": float, "desk_scale": bool, "workers": int}
    if parser.has_section("simulation"):
        for key, raw in parser.items("simulation"):
            if key not in sim_types:
                raise ConfigError(f"simulation.{key}: unknown key")
            sim_kwargs[key] = _coerce(f"simulation.{key}", raw, sim_types[key])
    if args.seed is not None:
        sim_kwargs["seed"] = args.seed
    if args.desk_scale:
        sim_kwargs["desk_scale"] = True
    try:
        sim = SimulationConfig(**sim_kwargs)
    except ConfigError as exc:
        raise ConfigError(f"simulation: {exc}") from None

    tol = dict(DEFAULT_TOLERANCES)
    if parser.has_section("tolerances"):
        for key, raw in parser.items("tolerances"):
            tol[key] = _coerce(f"tolerances.{key}", raw, float)
    for item in args.tolerance or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--tolerance: expected KEY=VAL, got {item!r}")
        tol[key.strip()] = _coerce(f"--tolerance {key}", raw, float)
    for key, val in tol.items():
        if key not in DEFAULT_TOLERANCES:
            raise ConfigError(f"tolerance.{key}: unknown key")
        if not val >= 0:
            raise ConfigError(f"tolerance.{key}: must be >= 0")
    return ResolvedConfig(system, sweep, sim, tol)


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def write_csv(stream, header_lines, columns, rows):
    for line in header_lines:
        stream.write(f"# {line}\n")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row[c]) for c in columns])


def _point_columns(cfg, model, proto):
    return {"protocol": proto.name.value, "blockage": model.label, "m": proto.m,
            "beamwidth_deg": 360.0 / proto.m}


ANALYTIC_COLUMNS = ["engine", "protocol", "blockage", "m", "beamwidth_deg", "p_cs_sector", "p_cs",
                    "p_co", "eta_ia", "never_connects", "delay_ms", "overhead", "sched_prob",
                    "upt_mbps", "dl_ccdf_0db", "dl_ccdf_10db", "dl_ccdf_20db", "pdf_mass_error",
                    "upt_tail_estimate"]


def analytic_row(cfg, model, proto):
    ctx = AnalyticContext(cfg, model, proto)
    m = ctx.metrics()
    ccdf = ctx.dl_sinr_ccdf(10.0 ** (np.asarray(DEFAULT_SINR_DB) / 10.0)) \
        if m.eta_ia > 0 else np.zeros(len(DEFAULT_SINR_DB))
    row = {"engine": "analytic", **_point_columns(cfg, model, proto),
           "p_cs_sector": m.p_cs_sector, "p_cs": m.p_cs, "p_co": m.p_co, "eta_ia": m.eta_ia,
           "never_connects": m.eta_ia <= 0,
           # an access that never succeeds has no delay value
           "delay_ms": m.delay_s * 1e3 if m.eta_ia > 0 else None,
           "overhead": m.overhead, "sched_prob": m.sched_prob,
           "upt_mbps": m.upt_bps / 1e6, "pdf_mass_error": m.pdf_mass_error,
           "upt_tail_estimate": m.upt_tail_bound}
    for thr, v in zip(DEFAULT_SINR_DB, ccdf):
        row[f"dl_ccdf_{thr:g}db"] = float(v)
    return row


SIM_METRICS = [("p_cs_sector", 1.0), ("p_cs", 1.0), ("p_co", 1.0), ("eta_ia", 1.0),
               ("delay_ms", 1e3), ("sched_prob", 1.0), ("upt_mbps", 1e-6)]


def simulate_columns():
    cols = ["engine", "protocol", "blockage", "m", "beamwidth_deg", "n_realizations",
            "never_connects"]
    names = [n for n, _ in SIM_METRICS] + [f"dl_ccdf_{t:g}db" for t in DEFAULT_SINR_DB]
    for n in names:
        cols += [n, f"{n}_ci_low", f"{n}_ci_high"]
    return cols


def simulate_row(rep, cfg, model, proto):
    row = {"engine": "simulated", **_point_columns(cfg, model, proto),
           "n_realizations": rep.n_realizations, "never_connects": not rep.eta_ia.mean > 0}
    source = {"delay_ms": rep.delay_s, "upt_mbps": rep.upt_bps}
    for name, scale in SIM_METRICS:
        est = source.get(name) or getattr(rep, name)
        vals = [v * scale if math.isfinite(v) else None for v in (est.mean, est.ci_low, est.ci_high)]
        row[name], row[f"{name}_ci_low"], row[f"{name}_ci_high"] = vals
    for t in DEFAULT_SINR_DB:
        est = rep.dl_ccdf[float(t)]
        key = f"dl_ccdf_{t:g}db"
        row[key], row[f"{key}_ci_low"], row[f"{key}_ci_high"] = est.mean, est.ci_low, est.ci_high
    return row


@dataclass
class ValidationRow:
    protocol: str
    blockage: str
    m: int
    metric: str
    analytic: float
    mc_mean: float
    ci_low: float
    ci_high: float
    tolerance: float
    passed: bool


def validation_rows(cfg, model, proto, sim, tol) -> list[ValidationRow]:
    ctx = AnalyticContext(cfg, model, proto)
    am = ctx.metrics()
    rep = run_campaign(cfg, model, proto, sim)
    gammas = 10.0 ** (np.asarray(DEFAULT_SINR_DB) / 10.0)
    ccdf = ctx.dl_sinr_ccdf(gammas) if am.eta_ia > 0 else np.zeros(gammas.size)
    pairs = [("p_cs", am.p_cs, rep.p_cs, tol["p_cs"]),
             ("p_co", am.p_co, rep.p_co, tol["p_co"]),
             ("eta_ia", am.eta_ia, rep.eta_ia, tol["eta_ia"])]
    for t, v in zip(DEFAULT_SINR_DB, ccdf):
        pairs.append((f"dl_ccdf_{t:g}db", float(v), rep.dl_ccdf[float(t)], tol["dl_ccdf"]))
    pairs.append(("upt_mbps", am.upt_bps / 1e6, _scaled(rep.upt_bps, 1e-6),
                  tol["upt_rel"] * abs(rep.upt_bps.mean) / 1e6))
    out = []
    for name, a, est, t in pairs:
        out.append(ValidationRow(proto.name.value, model.label, proto.m, name, a, est.mean,
                                 est.ci_low, est.ci_high, t, bool(est.contains(a, t))))
    return out


def _scaled(est, k):
    return dataclasses.replace(est, mean=est.mean * k, ci_low=est.ci_low * k, ci_high=est.ci_high * k)


# --------------------------------------------------------------------------
# verbs
# --------------------------------------------------------------------------

def cmd_analytic(rc: ResolvedConfig, out):
    rows = [analytic_row(*pt) for pt in rc.sweep.points(rc.system)]
    write_csv(out, rc.header_lines("analytic"), ANALYTIC_COLUMNS, rows)
    return EXIT_OK


def cmd_simulate(rc: ResolvedConfig, out):
    rows = []
    for cfg, model, proto in rc.sweep.points(rc.system):
        rep = run_campaign(cfg, model, proto, rc.sim)
        rows.append(simulate_row(rep, cfg, model, proto))
    write_csv(out, rc.header_lines("simulate"), simulate_columns(), rows)
    return EXIT_OK


def cmd_validate(rc: ResolvedConfig, out):
    rows = []
    for cfg, model, proto in rc.sweep.points(rc.system):
        rows.extend(validation_rows(cfg, model, proto, rc.sim, rc.tolerances))
    cols = [f.name for f in dataclasses.fields(ValidationRow)]
    write_csv(out, rc.header_lines("validate"), cols, [dataclasses.asdict(r) for r in rows])
    failed = [r for r in rows if not r.passed]
    for r in failed:
        print(f"FAIL {r.protocol} {r.blockage} M={r.m} {r.metric}: analytic={r.analytic:.6g} "
              f"mc={r.mc_mean:.6g} ci=[{r.ci_low:.6g}, {r.ci_high:.6g}] tol={r.tolerance:.3g}",
              file=sys.stderr)
    return EXIT_VALIDATION if failed else EXIT_OK


def cmd_esf(rc: ResolvedConfig, out, r_max_m=100.0, n_points=51, n_boot=200):
    rows = []
    r_grid = np.linspace(0.0, r_max_m, n_points)
    for cfg, model, proto in rc.sweep.points(rc.system):
        rep = run_campaign(cfg, model, proto, rc.sim, keep_esf=True)
        density = cfg.lambda_u * rep.eta_ia.mean
        curve = compute_esf([r.esf_distances for r in rep.records], r_grid, density,
                            n_boot=n_boot, seed=rc.sim.seed)
        for i, r in enumerate(curve.r):
            rows.append({"engine": "simulated", **_point_columns(cfg, model, proto),
                         "r_m": r, "esf": curve.empirical[i], "esf_ci_low": curve.ci_low[i],
                         "esf_ci_high": curve.ci_high[i], "fitted_ppp": curve.fitted[i],
                         "defined": curve.defined})
    cols = ["engine", "protocol", "blockage", "m", "beamwidth_deg", "r_m", "esf", "esf_ci_low",
            "esf_ci_high", "fitted_ppp", "defined"]
    write_csv(out, rc.header_lines("esf"), cols, rows)
    return EXIT_OK


VERBS = {"analytic": cmd_analytic, "simulate": cmd_simulate, "validate": cmd_validate,
         "esf": cmd_esf}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmwave-ia",
                                description="Initial access performance of mmWave cellular networks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb, help_text in (("analytic", "stochastic-geometry metrics"),
                            ("simulate", "Monte Carlo metrics with 95% CIs"),
                            ("validate", "compare analytic values with Monte Carlo"),
                            ("esf", "empty space function of IA-successful users")):
        s = sub.add_parser(verb, help=help_text)
        s.add_argument("--config", metavar="PATH")
        s.add_argument("--out", metavar="PATH", help="CSV output (default: stdout)")
        s.add_argument("--seed", type=int, metavar="U64")
        s.add_argument("--protocol", action="append", metavar="NAME",
                       help="baseline | fast_ra | fast_cs | omni_rx (repeatable)")
        s.add_argument("--blockage", action="append", metavar="SPEC",
                       help="losball:RC:P or exp:MU (repeatable)")
        s.add_argument("--m-range", metavar="A:B:STEP")
        s.add_argument("--desk-scale", action="store_true",
                       help="10 x 10 realizations instead of the configured counts")
        s.add_argument("--tolerance", action="append", metavar="KEY=VAL",
                       help="validation tolerance override (repeatable)")
        if verb == "esf":
            s.add_argument("--r-max", type=float, default=100.0, metavar="METRES")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        rc = resolve(args)
        buf = io.StringIO()
        if args.verb == "esf":
            code = cmd_esf(rc, buf, r_max_m=args.r_max)
        else:
            code = VERBS[args.verb](rc, buf)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return code


if __name__ == "__main__":
    sys.exit(main())
