"""``spinctl`` command-line interface.

Subcommands::

    spinctl simulate --config run.json --out DIR
    spinctl saturate --config run.json --out DIR
    spinctl snr      --config run.json --out DIR [--resolution N] | --preset fig4
    spinctl grape    --config problem.json --out DIR | --preset rat-brain-muscle [--gradcheck]

Exit codes: 0 success (also for a GRAPE run that stopped without
converging, which is flagged in its report), 2 configuration error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import io, kernels
from .bloch import SpinParams, normalize, propagate_pulse, radial_speed_table
from .errors import ConfigError, InvalidParameterError, SpinctlError
from .geometry import saturation_sequence, simulate_sequence
from .grape import (
    TWO_PI,
    ContrastProblem,
    OffsetEnsemble,
    OptimizerOptions,
    Species,
    gradient_check,
    grape_optimize,
    preset_rat_brain_muscle,
    robustness_report,
)
from .snr import maximize_q, q_surface

log = logging.getLogger("spinctl")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SNR_PRESETS = {"fig4": ((1.90, 0.5), (1.80, 1.0), (1.69, 1.5))}
GRAPE_PRESETS = ("rat-brain-muscle",)
SATURATION_TOL = 1e-6


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def load_schema():
    text = resources.files("spinctl").joinpath("config.schema.json").read_text()
    return json.loads(text)


def validate(config, section):
    schema = load_schema()
    sub = {"$ref": f"#/$defs/{section}", "$defs": schema["$defs"]}
    try:
        jsonschema.validate(config, sub)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{section} config invalid at {where}: {exc.message}") from None
    return config


def read_config(path, section):
    try:
        config = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return validate(config, section)


def params_from_config(p) -> SpinParams:
    if "Gamma" in p:
        return SpinParams.from_rates(p["Gamma"], p["gamma"])
    T1 = math.inf if p["T1_s"] is None else p["T1_s"]
    T2 = math.inf if p["T2_s"] is None else p["T2_s"]
    return normalize(T1, T2, p.get("Td_s", 1.0), p.get("unit_factor", 1.0))


def offsets_from_config(o):
    if isinstance(o, dict):
        return OffsetEnsemble.from_range(o["min"], o["max"], o["step"])
    return OffsetEnsemble(np.asarray(o, dtype=float))


def problem_from_config(cfg) -> ContrastProblem:
    roles = {}
    for sp in cfg["species"]:
        if sp["role"] in roles:
            raise ConfigError(f"more than one species with role {sp['role']!r}")
        roles[sp["role"]] = Species.from_ms(sp["name"], sp["T1_ms"], sp["T2_ms"])
    if "maximize" not in roles:
        raise ConfigError("one species must have role 'maximize'")
    pulse = cfg["pulse"]
    u_max = pulse.get("u_max_hz")
    return ContrastProblem(
        species_a=roles["maximize"],
        species_b=roles.get("minimize"),
        ensemble=offsets_from_config(cfg["offsets_hz"]),
        n_steps=pulse["n_steps"],
        dt=pulse["dt_ms"] * 1e-3,
        u_max=None if u_max is None else TWO_PI * u_max,
        cost=cfg.get("cost", "preparation"),
        b1_scales=tuple(cfg.get("b1_scales", (1.0,))),
    )


def options_from_config(cfg, seed=None) -> OptimizerOptions:
    o = dict(cfg.get("optimizer", {}))
    if "init_amplitude_hz" in o:
        o["init_amplitude"] = TWO_PI * o.pop("init_amplitude_hz")
    if seed is not None:
        o["seed"] = seed
    return OptimizerOptions(**o)


def _out_dir(out):
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(config, out, base_dir="."):
    """Propagate a pulse for every offset; one trajectory CSV per offset."""
    params = params_from_config(config["params"])
    if "pulse" in config:
        pulse = io.pulse_from_dict(config["pulse"])
    else:
        pulse = io.read_pulse_json(Path(base_dir) / config["pulse_file"])
    offsets_hz = np.asarray(
        offsets_from_config(config.get("offsets_hz", [0.0])).offsets_hz, dtype=float
    )
    x0 = config.get("initial_state", [0.0, 0.0, 1.0])
    if np.linalg.norm(x0) > 1 + 1e-12:
        raise ConfigError("initial_state lies outside the Bloch ball")
    traj = propagate_pulse(x0, params, TWO_PI * offsets_hz * params.Td, pulse)
    out = _out_dir(out)
    tau = pulse.dt / params.Td
    written = []
    for i, off in enumerate(offsets_hz):
        written.append(io.write_trajectory_csv(out / f"trajectory_{i:03d}.csv",
                                               traj[i:i + 1], [off], tau))
    finals = [{"offset_hz": float(o), "final": [float(v) for v in traj[i, -1]]}
              for i, o in enumerate(offsets_hz)]
    written.append(io.write_json(out / "simulate_summary.json", {
        "n_steps": pulse.n_steps, "dt_s": pulse.dt, "Td_s": params.Td, "finals": finals}))
    return written


def cmd_saturate(config, out):
    """Time-optimal saturation sequence, its minimum time and a replay."""
    params = params_from_config(config["params"])
    if not params.in_bloch_ball:
        raise InvalidParameterError("T2 must not exceed 2 T1 (the Bloch ball is not invariant)")
    res = saturation_sequence(params)
    times, points = simulate_sequence(res.sequence, params, config.get("substeps", 400))
    final_radius = float(np.hypot(*points[-1]))
    report = {
        "regime": res.regime,
        "family": res.sequence.family,
        "t_min": res.t_min,
        "t_min_seconds": res.t_min_seconds,
        "t_min_formula_seconds": res.t_min_formula,
        "formula_name": res.formula_name,
        "simulated_duration": float(times[-1]),
        "final_radius": final_radius,
        "reached_center": final_radius < SATURATION_TOL,
        "units": "t_min and simulated_duration in units of Td; *_seconds in s",
    }
    out = _out_dir(out)
    written = [
        io.write_sequence_json(out / "sequence.json", res.sequence),
        io.write_planar_trajectory_csv(out / "saturation_trajectory.csv", times, points),
        io.write_json(out / "saturation_report.json", report),
    ]
    print(f"regime {res.regime}: T_min = {res.t_min_seconds:.9g} s "
          f"({res.formula_name} formula {res.t_min_formula:.9g} s), final radius {final_radius:.2e}")
    if not report["reached_center"]:
        raise SpinctlError(f"replayed sequence ends at radius {final_radius:.3e}")
    return written


def _snr_one(params, out, resolution, tag=""):
    surf = q_surface(params, resolution)
    best = maximize_q(params, resolution)
    report = best.report()
    report.update({
        "Gamma": params.Gamma,
        "gamma": params.gamma,
        "resolution": resolution,
        "theta_error_rad": best.theta - best.theta_ernst,
        "evaluations": best.evaluations,
        "converged": best.converged,
        "units": "normalized (Td = 1); angles in rad",
    })
    return [
        io.write_q_surface_csv(out / f"q_surface{tag}.csv", surf),
        io.write_region_csv(out / f"regions{tag}.csv", surf),
        io.write_json(out / f"maximizer{tag}.json", report),
        io.write_contour_csv(out / f"radial_speed{tag}.csv", radial_speed_table(params)),
    ], best


def cmd_snr(config, out, resolution=None, preset=None):
    """Q surface, region labels and the maximizer for one or more rate pairs."""
    out = _out_dir(out)
    if preset is not None:
        sets = [(f"_G{G:.2f}_g{g:.2f}", SpinParams.from_rates(G, g)) for G, g in SNR_PRESETS[preset]]
    else:
        sets = [("", params_from_config(config["params"]))]
    res = resolution or (config or {}).get("resolution", 256)
    if res < 32:
        raise ConfigError("resolution must be at least 32")
    written = []
    for tag, params in sets:
        files, best = _snr_one(params, out, res, tag)
        written += files
        print(f"Gamma={params.Gamma:.4g} gamma={params.gamma:.4g}: Q* = {best.Q:.9f}, "
              f"theta* = {best.theta:.9f} rad, Ernst = {best.theta_ernst:.9f} rad")
    return written


def cmd_grape(problem, options, out, gradcheck=False, initial=None):
    """Optimize a contrast pulse and write pulse, history and robustness files."""
    result = grape_optimize(problem, options, initial=initial)
    rep = robustness_report(result.pulse, problem)
    summary = rep.summary()
    report = {
        "cost": result.cost,
        "converged": result.converged,
        "warning": result.warning,
        "message": result.message,
        "iterations": len(result.history) - 1,
        "start_costs": result.start_costs,
        "species": summary,
        "species_a": problem.species_a.name,
        "species_b": None if problem.species_b is None else problem.species_b.name,
        "n_offsets": problem.ensemble.count,
        "units": "amplitudes in rad/s, times in s, magnetization normalized to M0",
    }
    if gradcheck:
        chk = gradient_check(problem, result.pulse)
        report["gradient_check"] = {"h": chk.h, "max_rel_error": list(chk.max_rel_error),
                                    "mean_rel_error": list(chk.mean_rel_error)}
        print(f"gradient check (h = {chk.h:g}): max relative error "
              f"x {chk.max_rel_error[0]:.2e}, y {chk.max_rel_error[1]:.2e}")
    out = _out_dir(out)
    written = [
        io.write_pulse_json(out / "pulse.json", result.pulse),
        io.write_pulse_csv(out / "pulse.csv", result.pulse),
        io.write_history_csv(out / "history.csv", result.history),
        io.write_robustness_csv(out / "robustness.csv", rep),
        io.write_contrast_trajectories_csv(out / "trajectories.csv", rep, problem.dt),
        io.write_json(out / "grape_report.json", report),
    ]
    print(f"final cost C = {result.cost:.9f} ({result.message})")
    for name, s in summary.items():
        print(f"  {name}: mean |M| = {s['mean_norm']:.4f} (std {s['std_norm']:.4f}), "
              f"mean Mz = {s['mean_mz']:.4f}")
    if result.warning:
        print("warning: optimizer stopped before meeting the gradient tolerance", file=sys.stderr)
    return written


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="spinctl", description=__doc__.split("\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", type=Path, default=Path("spinctl_out"), help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker threads for batched kernels")
    common.add_argument("--seed", type=int, default=None, help="random seed (GRAPE initialization)")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="propagate a pulse")
    sub.add_parser("saturate", parents=[common], help="time-optimal saturation")
    p = sub.add_parser("snr", parents=[common], help="SNR-per-time surface and maximum")
    p.add_argument("--resolution", type=int, default=None, help="grid nodes per axis")
    p.add_argument("--preset", choices=sorted(SNR_PRESETS))
    p = sub.add_parser("grape", parents=[common], help="contrast pulse optimization")
    p.add_argument("--preset", choices=GRAPE_PRESETS)
    p.add_argument("--gradcheck", action="store_true", help="verify the gradient by finite differences")
    return parser


def run(args):
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    kernels.set_threads(args.threads)
    cmd = args.command
    preset = getattr(args, "preset", None)
    if cmd in ("simulate", "saturate") and args.config is None:
        raise ConfigError(f"{cmd} requires --config")
    if cmd == "simulate":
        cfg = read_config(args.config, "simulate")
        return cmd_simulate(cfg, args.out, base_dir=args.config.parent)
    if cmd == "saturate":
        return cmd_saturate(read_config(args.config, "saturate"), args.out)
    if cmd == "snr":
        if (args.config is None) == (preset is None):
            raise ConfigError("snr needs exactly one of --config or --preset")
        cfg = read_config(args.config, "snr") if args.config else None
        return cmd_snr(cfg, args.out, args.resolution, preset)
    if cmd == "grape":
        if (args.config is None) == (preset is None):
            raise ConfigError("grape needs exactly one of --config or --preset")
        initial = None
        if args.config:
            cfg = read_config(args.config, "grape")
            problem = problem_from_config(cfg)
            options = options_from_config(cfg, args.seed)
            if "initial_pulse_file" in cfg:
                initial = io.read_pulse_json(args.config.parent / cfg["initial_pulse_file"])
        else:
            problem = preset_rat_brain_muscle()
            options = options_from_config({}, args.seed)
        return cmd_grape(problem, options, args.out, args.gradcheck, initial)
    raise ConfigError(f"unknown command {cmd}")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except (ConfigError, InvalidParameterError) as exc:
        print(f"spinctl {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SpinctlError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"spinctl {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
