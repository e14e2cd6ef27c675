"""Command-line front end: config in, CSV/JSON artifacts out.

Exit codes: 0 ok, 2 configuration error, 3 simulation or analysis failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .dynamics import EventTrain, NodeConfig, ParameterError
from .edf import VARIABLE_PARAMETERS, EdfCurve, sweep_edf, sweep_edf_parameters
from .eprc import (NotLockedError, PrcCurve, PrcMode, PrcProtocol, default_tp_grid,
                   find_equilibria, sweep_eprc)
from .integrator import ConvergenceError, IntegrationError, SimConfig, simulate_node
from .io import ConfigError, RunConfig, load_config, protocol_dict, with_overrides, write_csv, write_json
from .network import (RingSpec, default_ring_sim, drive_ring, forcing_schedule,
                      homogeneous_ring, predict_ring_period, simulate_ring)
from .parallel import JOBS_ENV

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILURE = 3

DEFAULT_T_N = 51.2


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from exc


def _grid(lo: float, hi: float, step: float) -> np.ndarray:
    if not step > 0:
        raise ConfigError("grid step must be positive")
    if hi < lo:
        raise ConfigError("grid upper bound below lower bound")
    n = int(math.floor((hi - lo) / step + 1e-9))
    return lo + step * np.arange(n + 1)


def _suffixed(path: Path, tag: str, ext: str | None = None) -> Path:
    return path.with_name(f"{path.stem}_{tag}{ext if ext is not None else path.suffix}")


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--jobs", type=int, default=None,
                        help=f"worker processes (default: ${JOBS_ENV} or 1)")
    common.add_argument("--dt", type=float, default=None, help="integration step (ms)")

    p = argparse.ArgumentParser(prog="eventdf", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"eventdf {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("edf", parents=[common], help="event describing function sweep")
    e.add_argument("--synapse", choices=("inhibitory", "excitatory"))
    e.add_argument("--t-min", type=float)
    e.add_argument("--t-max", type=float)
    e.add_argument("--t-step", type=float)
    e.add_argument("--vary", choices=[v.replace("_", "-") for v in VARIABLE_PARAMETERS])
    e.add_argument("--values", type=_floats)
    e.add_argument("--out", default="edf.csv")

    r = sub.add_parser("eprc", parents=[common], help="event phase response curve")
    r.add_argument("--synapse", choices=("inhibitory", "excitatory"))
    r.add_argument("--t-n", type=float)
    r.add_argument("--mode", choices=[m.value for m in PrcMode])
    r.add_argument("--perturb", choices=("excitatory", "inhibitory"))
    r.add_argument("--perturb-gbar", type=float)
    r.add_argument("--perturb-tau-decay", type=float)
    r.add_argument("--tp-min", type=float)
    r.add_argument("--tp-max", type=float)
    r.add_argument("--tp-step", type=float)
    r.add_argument("--delta-t", type=float, action="append")
    r.add_argument("--out", default="eprc.csv")

    g = sub.add_parser("ring", help="ring networks")
    gsub = g.add_subparsers(dest="ring_command", required=True)
    ring_common = argparse.ArgumentParser(add_help=False, parents=[common])
    ring_common.add_argument("--n", type=int, default=2)
    ring_common.add_argument("--synapse", choices=("inhibitory", "excitatory"))
    ring_common.add_argument("--out", default=None)
    grid_args = argparse.ArgumentParser(add_help=False)
    grid_args.add_argument("--t-min", type=float)
    grid_args.add_argument("--t-max", type=float)
    grid_args.add_argument("--t-step", type=float)
    gsub.add_parser("predict", parents=[ring_common, grid_args])
    s = gsub.add_parser("simulate", parents=[ring_common])
    s.add_argument("--cycles", type=int, default=20)
    s.add_argument("--raster", default=None)
    d = gsub.add_parser("drive", parents=[ring_common])
    d.add_argument("--forcing-period", type=float, required=True)
    d.add_argument("--forcing-lag", type=float, default=None)
    d.add_argument("--cycles", type=int, default=40)
    gsub.add_parser("compare", parents=[ring_common, grid_args])

    t = sub.add_parser("trace", parents=[common], help="single-run state trace")
    t.add_argument("--synapse", choices=("inhibitory", "excitatory"))
    t.add_argument("--events", type=_floats, default=[10.0])
    t.add_argument("--t-end", type=float, default=100.0)
    t.add_argument("--out", default="trace.csv")
    return p


def _config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    sim = {"dt": args.dt} if getattr(args, "dt", None) is not None else {}
    return with_overrides(cfg, nominal_polarity=getattr(args, "synapse", None), sim=sim)


def _node(cfg: RunConfig) -> NodeConfig:
    return NodeConfig(cfg.neuron_params(), (cfg.nominal_params(),))


def _pick(arg, cfg: RunConfig, key: str, default):
    if arg is not None:
        return arg
    return cfg.sweep.get(key, default)


# ---------------------------------------------------------------------------
# edf


def _edf_rows(curve: EdfCurve):
    for s in curve.samples:
        yield (s.T, s.delta, s.phi, s.lock.value)


def _write_edf(curve: EdfCurve, path: Path, cfg_hash: str, node_hash: str) -> None:
    write_csv(path, ["T", "delta", "phi", "lock"], _edf_rows(curve), cfg_hash)
    ch = curve.characteristics
    write_json(_sidecar(path), {"t_min": ch.T_min, "t_r": ch.T_r, "delta_inf": ch.delta_inf,
                                "protocol": protocol_dict(curve.protocol),
                                "node_config_hash": node_hash, **curve.meta}, cfg_hash)


def cmd_edf(args) -> Callable[[], int]:
    cfg = _config(args)
    grid = _grid(_pick(args.t_min, cfg, "t_min", 10.0), _pick(args.t_max, cfg, "t_max", 100.0),
                 _pick(args.t_step, cfg, "t_step", 0.5))
    if grid[0] <= 0:
        raise ConfigError("period must be positive")
    if (args.vary is None) != (args.values is None):
        raise ConfigError("--vary and --values go together")
    node = _node(cfg)
    protocol = cfg.protocol()
    extra = {"command": "edf", "grid": [grid[0], grid[-1], grid.size],
             "vary": args.vary, "values": args.values}
    cfg_hash = cfg.hash(extra)
    node_hash = cfg.hash()
    out = Path(args.out)
    if args.vary:
        vary = args.vary.replace("-", "_")
        for v in args.values:
            node.with_synapse(0, **{vary: v})  # validate before running anything

    def run() -> int:
        if args.vary is None:
            curve = sweep_edf(node, grid, protocol, args.jobs)
            _write_edf(curve, out, cfg_hash, node_hash)
            print(f"wrote {out} ({len(curve.samples)} rows)")
            return EXIT_OK
        for v, curve in sweep_edf_parameters(node, args.vary, args.values, grid, protocol, args.jobs):
            path = _suffixed(out, f"{args.vary.replace('-', '_')}{v:g}")
            _write_edf(curve, path, cfg_hash, node_hash)
            print(f"wrote {path}")
        return EXIT_OK

    return run


# ---------------------------------------------------------------------------
# eprc


def _write_prc(curve: PrcCurve, path: Path, cfg_hash: str) -> None:
    rows = ((s.t_p, s.delta_shift, s.valid, s.fail_class) for s in curve.samples)
    write_csv(path, ["t_p", "delta_shift", "valid", "fail_class"], rows, cfg_hash)


def _write_equilibria(curve: PrcCurve, delta_ts: Sequence[float], path: Path,
                      cfg_hash: str) -> list[Path]:
    written = []
    for dT in delta_ts:
        eqs = find_equilibria(curve, dT)
        p = _suffixed(path, f"eq_dT{dT:g}", ".json")
        write_json(p, {"delta_T": dT,
                       "equilibria": [{"t_p_star": e.t_p_star, "slope": e.slope,
                                       "stability": e.stability.value, "boundary": e.boundary}
                                      for e in eqs]}, cfg_hash)
        written.append(p)
    return written


def cmd_eprc(args) -> Callable[[], int]:
    cfg = _config(args)
    cfg = with_overrides(cfg, perturbation_polarity=args.perturb,
                         perturbation={"gbar_syn": args.perturb_gbar,
                                       "tau_decay": args.perturb_tau_decay})
    T_N = _pick(args.t_n, cfg, "t_n", DEFAULT_T_N)
    mode = PrcMode(_pick(args.mode, cfg, "mode", PrcMode.FULL_OSCILLATION.value))
    lo = _pick(args.tp_min, cfg, "tp_min", -20.0)
    hi = _pick(args.tp_max, cfg, "tp_max", None)
    step = _pick(args.tp_step, cfg, "tp_step", 0.25)
    grid = default_tp_grid(T_N, lo, step) if hi is None else _grid(lo, hi, step)
    protocol = PrcProtocol(T_N, cfg.perturbation_params(), mode, tuple(grid), cfg.protocol())
    node = _node(cfg)
    delta_ts = args.delta_t or [0.0]
    cfg_hash = cfg.hash({"command": "eprc", "T_N": T_N, "mode": mode.value,
                         "grid": [grid[0], grid[-1], grid.size], "delta_t": delta_ts})
    out = Path(args.out)

    def run() -> int:
        curve = sweep_eprc(node, protocol, args.jobs)
        _write_prc(curve, out, cfg_hash)
        for p in _write_equilibria(curve, delta_ts, out, cfg_hash):
            print(f"wrote {p}")
        print(f"wrote {out} ({len(curve.samples)} rows)")
        return EXIT_OK

    return run


# ---------------------------------------------------------------------------
# ring


def _ring(cfg: RunConfig, n: int) -> RingSpec:
    return homogeneous_ring(n, node=_node(cfg))


def _ring_prediction(cfg, args, n):
    grid = _grid(_pick(args.t_min, cfg, "t_min", 10.0), _pick(args.t_max, cfg, "t_max", 250.0),
                 _pick(args.t_step, cfg, "t_step", 0.5))
    if grid[0] <= 0:
        raise ConfigError("period must be positive")
    node = _node(cfg)
    return lambda: predict_ring_period([sweep_edf(node, grid, cfg.protocol(), args.jobs)] * n)


def cmd_ring(args) -> Callable[[], int]:
    cfg = _config(args)
    n = args.n
    if n < 2:
        raise ConfigError("a ring needs at least two nodes")
    sub = args.ring_command
    out = Path(args.out or f"ring_{sub}.json")
    cfg_hash = cfg.hash({"command": f"ring {sub}", "n": n,
                         **{k: v for k, v in vars(args).items()
                            if k in ("forcing_period", "forcing_lag", "cycles", "t_min",
                                     "t_max", "t_step")}})

    if sub == "predict":
        predict = _ring_prediction(cfg, args, n)

        def run() -> int:
            res = predict()
            write_json(out, res.to_json() | {"diagnostic": res.diagnostic or None}, cfg_hash)
            print(f"t_star: {res.T_star if res.T_star is not None else 'null'}")
            return EXIT_OK
        return run

    if sub == "compare":
        predict = _ring_prediction(cfg, args, n)

        def run() -> int:
            pred = predict()
            sim = simulate_ring(_ring(cfg, n))
            rel = (abs(sim.period - pred.T_star) / sim.period
                   if sim.locked and pred.T_star is not None else None)
            write_json(out, {"t_star": pred.T_star, "t_net": sim.period if sim.locked else None,
                             "rel_error": rel}, cfg_hash)
            print(f"t_star: {pred.T_star}  t_net: {sim.period}  rel_error: {rel}")
            return EXIT_OK
        return run

    if sub == "simulate":
        raster = Path(args.raster) if args.raster else None

        def run() -> int:
            spec = _ring(cfg, n)
            sim = default_ring_sim(spec, args.cycles, cfg.protocol().dt)
            res = simulate_ring(spec, sim)
            write_json(out, res.to_json(), cfg_hash)
            if raster is not None:
                rows = ((i, t) for i, ev in enumerate(res.spike_rasters) for t in ev)
                write_csv(raster, ["node_index", "event_time"], rows, cfg_hash)
            print(f"locked: {str(res.locked).lower()}  period: {res.period}"
                  + (f"  ({res.diagnostic})" if res.diagnostic else ""))
            return EXIT_OK
        return run

    # drive
    perturbation = cfg.perturbation_params()

    def run() -> int:
        spec = _ring(cfg, n)
        free = simulate_ring(spec)
        if not free.locked:
            raise CliError(f"ring does not oscillate: {free.diagnostic}", EXIT_FAILURE)
        try:
            train, sim = forcing_schedule(spec, args.forcing_period, free, args.forcing_lag,
                                          args.cycles)
        except ValueError as exc:
            raise CliError(str(exc), EXIT_CONFIG) from exc
        rep = drive_ring(spec, train, sim, perturbation)
        write_json(out, rep.to_json() | {"t_net": free.period}, cfg_hash)
        print(f"locked: {str(rep.locked).lower()}  measured_lag: {rep.measured_lag}"
              f"  drift_rate: {rep.drift_rate}")
        return EXIT_OK
    return run


# ---------------------------------------------------------------------------
# trace


def cmd_trace(args) -> Callable[[], int]:
    cfg = _config(args)
    node = _node(cfg)
    train = EventTrain(tuple(args.events))
    sim = SimConfig(dt=cfg.protocol().dt, t_end=args.t_end, record_trace=True)
    out = Path(args.out)
    cfg_hash = cfg.hash({"command": "trace", "events": list(train.times), "t_end": args.t_end})

    def run() -> int:
        res = simulate_node(node, [train], sim)
        tr = res.trace
        write_csv(out, ["t", *tr.columns],
                  ([t, *row] for t, row in zip(tr.times.tolist(), tr.values.tolist())), cfg_hash)
        print(f"wrote {out} ({len(tr.times)} rows, {len(res.times)} output events)")
        return EXIT_OK

    return run


COMMANDS = {"edf": cmd_edf, "eprc": cmd_eprc, "ring": cmd_ring, "trace": cmd_trace}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        run = COMMANDS[args.command](args)
    except (ConfigError, ParameterError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run()
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NotLockedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, ConvergenceError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
