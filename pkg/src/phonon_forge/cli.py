"""Command-line front end.

Subcommands: wigner, marginal, variance, simulate, budget, characterize.
All inputs come from an optional JSON config (strict schema, unknown keys
rejected) plus per-command flags; defaults reproduce the laboratory
parameter set, so running any command with no config reproduces the
headline numbers.  Exit codes: 0 success, 2 configuration error,
3 numerical-validity error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import budget as budget_mod
from . import dynamics, phase_space, simulator
from .errors import ConfigError, NumericsError, PhononForgeError
from .params import SpadConfig, default_params, default_spad

_SYSTEM_KEYS = {"kappa1", "kappa1_ext", "kappa2", "kappa2_ext", "gamma", "g0",
                "omega_m", "omega_het", "nbar_th", "p_in", "wavelength",
                "eta_total"}
_SPAD_KEYS = {"gate_rate", "gate_len", "dead_time", "dark_rate", "quantum_eff",
              "arm_efficiencies"}
_SIM_KEYS = {"sample_rate", "dt", "trace_len", "n_traces", "demod_bandwidth",
             "demod_filter", "decimate", "mech_linewidth", "adiabatic",
             "chunk_traces"}
_GRID_KEYS = {"npts", "half_width", "units"}
_TOP_KEYS = {"system", "spad", "sim", "grid", "output_dir", "seed"}


class RunConfig:
    """Validated bundle of system, detector, simulation, and grid settings."""

    def __init__(self, doc=None):
        doc = doc or {}
        _reject_unknown(doc, _TOP_KEYS, "top level")
        sys_doc = dict(doc.get("system", {}))
        _reject_unknown(sys_doc, _SYSTEM_KEYS, "system")
        spad_doc = dict(doc.get("spad", {}))
        _reject_unknown(spad_doc, _SPAD_KEYS, "spad")
        sim_doc = dict(doc.get("sim", {}))
        _reject_unknown(sim_doc, _SIM_KEYS, "sim")
        grid_doc = dict(doc.get("grid", {}))
        _reject_unknown(grid_doc, _GRID_KEYS, "grid")

        base = default_params()
        self.params = base.with_updates(**sys_doc) if sys_doc else base
        if "arm_efficiencies" in spad_doc:
            spad_doc["arm_efficiencies"] = tuple(spad_doc["arm_efficiencies"])
        self.spad = SpadConfig(**{**default_spad().__dict__, **spad_doc}) \
            if spad_doc else default_spad()
        self.sim_doc = sim_doc
        self.grid_doc = grid_doc
        self.output_dir = Path(doc.get("output_dir", "."))
        self.seed = int(doc.get("seed", 20210))

    def sim_config(self, **overrides):
        kwargs = dict(self.sim_doc)
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return simulator.SimConfig(params=self.params, spad=self.spad,
                                   seed=self.seed, **kwargs)

    def grid_config(self, **overrides):
        kwargs = dict(self.grid_doc)
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return phase_space.GridConfig(**kwargs)


def _reject_unknown(doc, allowed, where):
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} config keys: {sorted(unknown)}")


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return RunConfig(doc)


def _thread_count(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("PHONON_FORGE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"PHONON_FORGE_THREADS={env!r} is not an integer") \
                from exc
    return os.cpu_count() or 1


def _outdir(cfg, args):
    out = Path(args.out) if args.out else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_wigner(cfg: RunConfig, args):
    out = _outdir(cfg, args)
    nbar = args.nbar
    if nbar is None:
        nbar = dynamics.characterize(cfg.params).nbar_cooled
    eta = args.eta if args.eta is not None else cfg.params.eta_total
    spec = phase_space.StateSpec(nbar=nbar, n=args.n, eta=eta)
    gcfg = cfg.grid_config(npts=args.npts, half_width=args.half_width,
                           units=args.units)
    grid = phase_space.wigner_s(spec, gcfg, s_override=args.s)
    stem = out / f"wigner_n{args.n}"
    phase_space.write_grid(grid, f"{stem}.csv", f"{stem}.json")
    marg = phase_space.marginal_from_grid(grid)
    phase_space.write_marginal(marg, f"{stem}_marginal.csv")
    print(f"wrote {stem}.csv ({grid.npts}x{grid.npts}, units={grid.units}, "
          f"s={grid.s_param:.6g}, mass={grid.total_mass():.6f})")
    return 0


def cmd_marginal(cfg: RunConfig, args):
    out = _outdir(cfg, args)
    nbar = args.nbar
    if nbar is None:
        nbar = dynamics.characterize(cfg.params).nbar_cooled
    eta = args.eta if args.eta is not None else cfg.params.eta_total
    spec = phase_space.StateSpec(nbar=nbar, n=args.n, eta=eta)
    if args.n <= 2:
        func = phase_space.measured_marginal(spec)
    else:
        func = phase_space.measured_marginal_general(spec)
    xmax = args.xmax or 5.0 * math.sqrt(1.0 + spec.eta_nbar)
    xs = np.linspace(-xmax, xmax, args.npts or 1001)
    marg = phase_space.marginal_on_grid(func, xs)
    path = out / f"marginal_n{args.n}.csv"
    phase_space.write_marginal(marg, path)
    print(f"wrote {path} (integral={marg.integral():.6f})")
    return 0


def cmd_variance(cfg: RunConfig, args):
    out = _outdir(cfg, args)
    chain = dynamics.characterize(cfg.params)
    t_max = 5.0 / chain.gamma_eff
    taus = np.linspace(-t_max, t_max, args.npts or 2001)
    curve = dynamics.variance_curve(cfg.params, args.n, taus)
    path = out / f"variance_n{args.n}.csv"
    dynamics.write_variance_curve(curve, path)
    peak = curve.values.max()
    inf = dynamics.steady_state_variance(cfg.params)
    print(f"wrote {path} (peak ratio {(peak - 1.0) / (inf - 1.0):.6f}, "
          f"steady state {inf:.6f})")
    return 0


def cmd_simulate(cfg: RunConfig, args):
    out = _outdir(cfg, args)
    sim = cfg.sim_config(trace_len=args.trace_len, n_traces=args.n_traces)
    threads = _thread_count(args)
    ens = simulator.run_ensemble(sim, herald_kind=args.herald,
                                 threads=threads)
    base = out / f"ensemble_{args.herald}"
    simulator.save_ensemble(ens, base)
    curve = simulator.ensemble_variance(ens)
    dynamics.write_variance_curve(curve, out / f"empirical_variance_{args.herald}.csv")
    hist = simulator.herald_histogram(ens)
    stem = out / f"histogram_{args.herald}"
    phase_space.write_grid(hist, f"{stem}.csv", f"{stem}.json")

    report = {"herald_kind": args.herald, "n_traces": ens.n_traces,
              "calibration": {"vacuum_variance_expected": 1.0,
                              "sigma_sq_inf_analytic":
                                  dynamics.steady_state_variance(cfg.params)}}
    report.update(simulator.variance_ratio_report(ens) if ens.order
                  else {"sigma_sq_inf": float(np.mean(curve.values))})

    if args.click_seconds > 0:
        clicks = simulator.gated_click_stream(sim, args.click_seconds)
        simulator.write_clicks_csv(clicks, out / "clicks.csv")
        heralds = simulator.herald_select(
            clicks, args.herald if ens.order else "single")
        simulator.write_heralds_csv(heralds, out / f"heralds_{args.herald}.csv")
        budget_pred = budget_mod.build_report(cfg.params, cfg.spad)
        report["click_rates"] = {
            "duration_s": args.click_seconds,
            "singles_per_detector": {
                "0": float((clicks.detector == 0).sum() / clicks.duration),
                "1": float((clicks.detector == 1).sum() / clicks.duration)},
            "coincidences": float(
                simulator.herald_select(clicks, "coincidence").size
                / clicks.duration),
            "budget_singles_rate": budget_pred.singles_rate,
            "budget_coincidence_rate": budget_pred.coincidence_rate,
        }

    with open(out / f"report_{args.herald}.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if ens.order:
        print(f"peak ratio {report['peak_ratio']:.4f} "
              f"(ideal {report['ideal_ratio']}, filter-adjusted "
              f"{report['predicted_ratio']:.4f})")
    else:
        print(f"steady-state variance {report['sigma_sq_inf']:.4f} "
              f"(analytic {report['calibration']['sigma_sq_inf_analytic']:.4f})")
    return 0


def cmd_budget(cfg: RunConfig, args):
    out = _outdir(cfg, args)
    report = budget_mod.build_report(cfg.params, cfg.spad)
    report.to_json(out / "budget.json")
    print(budget_mod.format_table(report))
    return 0


def cmd_characterize(cfg: RunConfig, args):
    out = _outdir(cfg, args)
    powers = [float(p) for p in args.powers.split(",")] if args.powers \
        else [cfg.params.p_in]
    rows = []
    for p in powers:
        params_p = cfg.params.with_updates(p_in=p)
        chain = dynamics.characterize(params_p)
        rows.append((p, chain))
    path = out / "characterization.csv"
    with open(path, "w") as fh:
        fh.write("p_in,n_cav,G_over_2pi,cooperativity,nbar,gamma_eff_over_2pi,"
                 "decay_time\n")
        for p, ch in rows:
            fh.write("%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n" % (
                p, ch.n_cav, ch.coupling / (2 * math.pi), ch.cooperativity,
                ch.nbar_cooled, ch.gamma_eff / (2 * math.pi), ch.decay_time))
    for p, ch in rows:
        print(f"P_in={p * 1e3:.3g} mW: N_cav={ch.n_cav:.4g}, "
              f"G/2pi={ch.coupling / 2 / math.pi / 1e6:.4g} MHz, "
              f"C={ch.cooperativity:.4g}, nbar={ch.nbar_cooled:.4g}, "
              f"1/gamma_eff={ch.decay_time * 1e9:.4g} ns")
    if args.fit:
        n_cavs = np.array([dynamics.characterize(
            cfg.params.with_updates(p_in=p)).n_cav for p in powers])
        if n_cavs.size < 2:
            n_cavs = dynamics.characterize(cfg.params).n_cav \
                * np.linspace(0.2, 1.0, 5)
        g0_fit, gamma_fit = dynamics.fit_g0_from_spectra(cfg.params, n_cavs)
        rel = abs(g0_fit - cfg.params.g0) / cfg.params.g0
        print(f"spectrum fit: g0/2pi={g0_fit / 2 / math.pi:.4g} Hz "
              f"(input {cfg.params.g0 / 2 / math.pi:.4g} Hz, "
              f"relative error {rel:.2%})")
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="phonon-forge",
        description="Heralded phonon subtraction from a thermal mechanical "
                    "state: phase space, dynamics, budgets, and a stochastic "
                    "heterodyne experiment emulator.")
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--out", help="output directory (default from config)")
    parser.add_argument("--threads", type=int,
                        help="worker threads for simulation "
                             "(default: PHONON_FORGE_THREADS or all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("wigner", help="phase-space grid and its marginal")
    p.add_argument("--n", type=int, required=True, help="subtraction order")
    p.add_argument("--eta", type=float, help="measurement efficiency")
    p.add_argument("--nbar", type=float,
                   help="initial occupation (default: cooled value)")
    p.add_argument("--s", type=float, help="explicit smoothing parameter "
                                           "(zero_point units only)")
    p.add_argument("--npts", type=int, help="grid points per axis (odd)")
    p.add_argument("--half-width", dest="half_width", type=float)
    p.add_argument("--units", choices=[phase_space.UNITS_ZERO_POINT,
                                       phase_space.UNITS_HETERODYNE])
    p.set_defaults(func=cmd_wigner)

    p = sub.add_parser("marginal", help="closed-form detected marginal")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--eta", type=float)
    p.add_argument("--nbar", type=float)
    p.add_argument("--xmax", type=float)
    p.add_argument("--npts", type=int)
    p.set_defaults(func=cmd_marginal)

    p = sub.add_parser("variance", help="analytic heralded variance curve")
    p.add_argument("--n", type=int, choices=(1, 2), required=True)
    p.add_argument("--npts", type=int)
    p.set_defaults(func=cmd_variance)

    p = sub.add_parser("simulate", help="run the stochastic emulator")
    p.add_argument("--herald", choices=simulator._HERALD_KINDS,
                   default=simulator.HERALD_SINGLE)
    p.add_argument("--n-traces", dest="n_traces", type=int)
    p.add_argument("--trace-len", dest="trace_len", type=int)
    p.add_argument("--click-seconds", dest="click_seconds", type=float,
                   default=2.0,
                   help="length of the gated click-stream run used for the "
                        "rate comparison (0 disables it)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("budget", help="photon-flux and heralding budget")
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("characterize", help="cooling and coupling chain")
    p.add_argument("--powers", help="comma-separated input powers in W")
    p.add_argument("--fit", action="store_true",
                   help="recover g0 from simulated spectra")
    p.set_defaults(func=cmd_characterize)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numerical validity error: {exc}", file=sys.stderr)
        return 3
    except PhononForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
