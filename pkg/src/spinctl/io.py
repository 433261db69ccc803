"""Readers and writers for the spinctl file formats.

CSV files open with ``#`` comment lines stating units, followed by the
column header.  Floats are written with ``repr`` so that a file read back
gives the same numbers bit for bit, and so that two runs producing the same
arrays produce identical files.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .bloch import Pulse
from .errors import ConfigError


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_csv(path, header, rows, comments=()):
    path = Path(path)
    with path.open("w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path):
    """Return ``(header, rows)`` with comment lines skipped; cells stay strings."""
    with Path(path).open(newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, [r for r in reader]


def write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")
    return path


# -- pulses ----------------------------------------------------------------


def pulse_to_dict(pulse: Pulse) -> dict:
    return {
        "dt_s": float(pulse.dt),
        "u_max_rad_s": None if pulse.u_max is None else float(pulse.u_max),
        "steps": [[float(a), float(b)] for a, b in pulse.steps],
    }


def pulse_from_dict(d) -> Pulse:
    try:
        return Pulse(dt=float(d["dt_s"]), steps=np.asarray(d["steps"], dtype=float),
                     u_max=None if d.get("u_max_rad_s") is None else float(d["u_max_rad_s"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid pulse description: {exc}") from exc


def write_pulse_json(path, pulse: Pulse):
    return write_json(path, pulse_to_dict(pulse))


def read_pulse_json(path) -> Pulse:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read pulse file {path}: {exc}") from exc
    return pulse_from_dict(d)


def write_pulse_csv(path, pulse: Pulse):
    rows = ((k, wx, wy) for k, (wx, wy) in enumerate(pulse.steps))
    return write_csv(path, ("index", "omega_x", "omega_y"), rows,
                     comments=(f"amplitudes in rad/s, dt = {pulse.dt!r} s",))


# -- trajectories -------------------------------------------------------------


def write_trajectory_csv(path, traj, offsets_hz, tau):
    """Trajectories ``(n_iso, n + 1, 3)``; ``t`` in normalized units."""
    traj = np.asarray(traj)

    def rows():
        for i, off in enumerate(offsets_hz):
            for k in range(traj.shape[1]):
                x, y, z = traj[i, k]
                yield (k, k * tau, float(off), x, y, z)

    return write_csv(path, ("step", "t", "offset", "x", "y", "z"), rows(),
                     comments=("t in units of Td, offset in Hz, magnetization normalized to M0",))


# -- geometric synthesis ------------------------------------------------------


def write_sequence_json(path, sequence, extra=None):
    d = sequence.to_dict()
    if extra:
        d.update(extra)
    return write_json(path, d)


def write_contour_csv(path, rows):
    return write_csv(path, ("theta", "R", "dRdt"), rows,
                     comments=("theta in rad from the +y axis, dRdt per unit normalized time",))


def write_planar_trajectory_csv(path, times, points):
    rows = ((t, y, z) for t, (y, z) in zip(times, points))
    return write_csv(path, ("t", "y", "z"), rows, comments=("t in units of Td",))


# -- SNR ---------------------------------------------------------------------


def write_q_surface_csv(path, surface):
    return write_csv(path, ("y_m", "z_m", "Q", "region_label", "feasible"), surface.rows(),
                     comments=("Q = |y_m| / sqrt(1 + Tc), Tc in units of Td",))


def write_region_csv(path, surface):
    labels = surface.labels()
    rows = ((float(yv), float(zv), labels[iz, iy])
            for iz, zv in enumerate(surface.z) for iy, yv in enumerate(surface.y))
    return write_csv(path, ("y_m", "z_m", "region_label"), rows,
                     comments=("optimal control family reaching each measure point",))


# -- GRAPE -------------------------------------------------------------------


def write_history_csv(path, history):
    return write_csv(path, ("iter", "cost", "grad_norm", "step"), history,
                     comments=("grad_norm in 1/(rad/s), step in rad/s",))


def write_robustness_csv(path, report):
    return write_csv(path, ("offset_hz", "species", "x", "y", "z", "trans_norm"), report.rows(),
                     comments=("final states normalized to M0",))


def write_contrast_trajectories_csv(path, report, dt):
    """Transverse norm and M_z against time for every species and offset."""

    def rows():
        for name, X in report.trajectories.items():
            for off, traj in zip(report.offsets_hz, X):
                for k, (x, y, z) in enumerate(traj):
                    yield (name, float(off), k, k * dt, math.hypot(x, y), z)

    return write_csv(path, ("species", "offset_hz", "step", "t_s", "trans_norm", "z"), rows(),
                     comments=("t in s, magnetization normalized to M0",))
