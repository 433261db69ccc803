"""Time-optimal synthesis for the planar spin with unbounded control.

With an unbounded field the polar angle is free: a bang rotates the state
instantly and keeps the radius.  Only the radius has to be steered, and at
radius ``R`` its speed is a quadratic in ``s = sin(theta)``::

    dR/dt = -Gamma R + (Gamma - gamma) R s**2 + gamma s,   s in [-1, 1]

Shrinking the radius as fast as possible means sitting at the minimizing
``s``: the horizontal line ``z = z0`` when it is inside the circle, the
negative half of the z axis otherwise.  Growing it means the positive half of
the z axis.  The five candidate families below are the concatenations of
these arcs; :func:`time_optimal_transfer` evaluates all admissible ones and
keeps the fastest.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .bloch import MagState, SpinParams
from .errors import (
    ArcTerminated,
    DegenerateParametersError,
    InvalidParameterError,
    UnreachableTargetError,
)

Y_FLOOR = 1e-9
TIE_TOL = 1e-10
CONTINUITY_TOL = 1e-10
DISK_TOL = 1e-12

FAMILIES = ("B", "B.Sh.B", "B.Sh.Sv.B", "B.Sv-.B", "B.Sv+.B")
FAMILY_CODES = {name: i for i, name in enumerate(FAMILIES)}


# ---------------------------------------------------------------------------
# Arcs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bang:
    """Instantaneous rotation by ``angle`` in the (y, z) plane."""

    angle: float
    kind = "bang"

    @property
    def duration(self) -> float:
        return 0.0

    def apply(self, y, z):
        c, s = math.cos(self.angle), math.sin(self.angle)
        return y * c - z * s, y * s + z * c

    def params(self):
        return {"angle": self.angle}


@dataclass(frozen=True)
class VerticalArc:
    """Zero-control relaxation along the z axis."""

    z_from: float
    z_to: float
    duration: float
    kind = "vertical"

    def entry(self):
        return 0.0, self.z_from

    def apply(self, y, z):
        return 0.0, self.z_to

    def params(self):
        return {"z_from": self.z_from, "z_to": self.z_to}


@dataclass(frozen=True)
class HorizontalArc:
    """Singular arc along ``z = z0`` from ``y_from`` to ``y_to``."""

    y_from: float
    y_to: float
    z0: float
    duration: float
    kind = "horizontal"

    def entry(self):
        return self.y_from, self.z0

    def apply(self, y, z):
        return self.y_to, self.z0

    def params(self):
        return {"y_from": self.y_from, "y_to": self.y_to, "z0": self.z0}


Arc = Union[Bang, VerticalArc, HorizontalArc]


@dataclass(frozen=True)
class ControlSequence:
    """Concatenated arcs starting at the planar point ``start``.

    Construction checks that each singular arc starts where the previous arc
    left the state.
    """

    start: tuple
    arcs: tuple
    family: str = ""

    def __post_init__(self):
        object.__setattr__(self, "arcs", tuple(self.arcs))
        y, z = self.start
        for i, arc in enumerate(self.arcs):
            if not (math.isfinite(arc.duration) and arc.duration >= 0):
                raise InvalidParameterError(f"arc {i} has invalid duration {arc.duration}")
            if not isinstance(arc, Bang):
                ey, ez = arc.entry()
                if abs(ey - y) > CONTINUITY_TOL or abs(ez - z) > CONTINUITY_TOL:
                    raise InvalidParameterError(
                        f"arc {i} ({arc.kind}) starts at ({ey:.12g}, {ez:.12g}) "
                        f"but the state is at ({y:.12g}, {z:.12g})"
                    )
            y, z = arc.apply(y, z)

    @property
    def total_time(self) -> float:
        return math.fsum(a.duration for a in self.arcs)

    @property
    def end(self):
        y, z = self.start
        for arc in self.arcs:
            y, z = arc.apply(y, z)
        return y, z

    def to_dict(self):
        return {
            "start": list(self.start),
            "family": self.family,
            "arcs": [
                {"kind": a.kind, "params": a.params(), "duration": a.duration}
                for a in self.arcs
            ],
            "total_time": self.total_time,
        }


# ---------------------------------------------------------------------------
# Singular arcs
# ---------------------------------------------------------------------------


def singular_plane_z0(params: SpinParams) -> Optional[float]:
    """Height of the horizontal singular line, or None outside the unit disk."""
    g, G = params.gamma, params.Gamma
    if G == g:
        raise DegenerateParametersError("Gamma == gamma: the singular line is at infinity")
    z0 = -g / (2.0 * (G - g))
    if abs(z0) > 1.0:
        return None
    return z0


def singular_horizontal_control(y: float, params: SpinParams, z0: Optional[float] = None) -> float:
    """Control holding ``z`` fixed at ``z0``; diverges as ``y -> 0``."""
    if z0 is None:
        z0 = singular_plane_z0(params)
        if z0 is None:
            raise InvalidParameterError("the horizontal singular line misses the Bloch disk")
    if abs(y) <= Y_FLOOR:
        raise ArcTerminated(f"|y| = {abs(y):.3g} is below the singular-arc floor {Y_FLOOR}")
    return -params.gamma * (1.0 - z0) / y


def vertical_arc_time(z_from: float, z_to: float, params: SpinParams) -> float:
    """Time to relax from ``z_from`` up to ``z_to`` on the z axis."""
    if z_to == z_from:
        return 0.0
    if z_to >= 1.0:
        raise UnreachableTargetError("z = 1 is only approached asymptotically")
    if z_to < z_from:
        raise UnreachableTargetError(
            f"relaxation on the axis only increases z ({z_from} -> {z_to})"
        )
    if params.gamma == 0:
        raise UnreachableTargetError("no longitudinal relaxation")
    return math.log((1.0 - z_from) / (1.0 - z_to)) / params.gamma


def horizontal_arc_time(y_from: float, y_to: float, params: SpinParams) -> float:
    """Closed-form duration of the singular arc on ``z = z0``.

    Along the arc ``d(y^2)/dt = -2 Gamma y^2 + 2 k`` with
    ``k = gamma (1 - z0) z0``, which integrates to a logarithm.
    """
    z0 = singular_plane_z0(params)
    if z0 is None:
        raise InvalidParameterError("the horizontal singular line misses the Bloch disk")
    if y_from == y_to:
        return 0.0
    if y_from * y_to < 0:
        raise InvalidParameterError("horizontal arc cannot cross y = 0")
    w0, w1 = y_from * y_from, y_to * y_to
    if w0 + z0 * z0 > 1 + DISK_TOL or w1 + z0 * z0 > 1 + DISK_TOL:
        raise InvalidParameterError("horizontal arc leaves the Bloch disk")
    G = params.Gamma
    k = params.gamma * (1.0 - z0) * z0
    a, b = k - G * w0, k - G * w1
    if a == 0 or a * b <= 0 or (w1 - w0) * a < 0:
        raise InvalidParameterError(
            f"horizontal arc from y={y_from} to y={y_to} runs against the flow"
        )
    return -math.log(b / a) / (2.0 * G)


def delta_pulse(state, angle: float) -> MagState:
    """Rotate about x by ``angle``; positive angles turn +z toward -y."""
    if not math.isfinite(angle):
        raise InvalidParameterError("angle must be finite")
    if isinstance(state, MagState):
        x, y, z = state.x, state.y, state.z
    else:
        x, y, z = (float(v) for v in state)
    y2, z2 = Bang(angle).apply(y, z)
    return MagState(x, y2, z2)


# ---------------------------------------------------------------------------
# Radial synthesis
# ---------------------------------------------------------------------------


def _shrink_radius(params):
    """Radius above which the horizontal arc is the fastest way to shrink."""
    g, G = params.gamma, params.Gamma
    if G <= g:
        return math.inf
    return g / (2.0 * (G - g))


def _h_time(r_from, r_to, params):
    # horizontal arc time written in radii; c = gamma^2 / (4 (Gamma - gamma))
    G, g = params.Gamma, params.gamma
    c = g * g / (4.0 * (G - g))
    num, den = G * r_from * r_from + c, G * r_to * r_to + c
    if den <= 0:
        raise UnreachableTargetError("the centre is not reached in finite time")
    return math.log(num / den) / (2.0 * G)


def _axis_down_time(r_from, r_to, params):
    if params.gamma == 0:
        raise UnreachableTargetError("no longitudinal relaxation")
    return math.log((1.0 + r_from) / (1.0 + r_to)) / params.gamma


def _axis_up_time(r_from, r_to, params):
    if r_to >= 1.0:
        raise UnreachableTargetError("the unit circle is only approached asymptotically")
    if params.gamma == 0:
        raise UnreachableTargetError("no longitudinal relaxation")
    return math.log((1.0 - r_from) / (1.0 - r_to)) / params.gamma


def family_times(r_s: float, r_m: float, params: SpinParams) -> dict:
    """Duration of every admissible family moving the radius ``r_s -> r_m``."""
    out = {}
    if r_s == r_m:
        out["B"] = 0.0
        return out
    rho = _shrink_radius(params)
    if r_m > r_s:
        try:
            out["B.Sv+.B"] = _axis_up_time(r_s, r_m, params)
        except UnreachableTargetError:
            pass
        return out
    try:
        out["B.Sv-.B"] = _axis_down_time(r_s, r_m, params)
    except UnreachableTargetError:
        pass
    if rho <= 1.0:
        if r_m >= rho:
            out["B.Sh.B"] = _h_time(r_s, r_m, params)
        elif r_s >= rho:
            try:
                out["B.Sh.Sv.B"] = _h_time(r_s, rho, params) + _axis_down_time(rho, r_m, params)
            except UnreachableTargetError:
                pass
    return out


def _best_family(times: dict):
    arcs = {"B": 1, "B.Sh.B": 3, "B.Sv-.B": 3, "B.Sv+.B": 3, "B.Sh.Sv.B": 4}
    best = None
    for name in FAMILIES:
        if name not in times:
            continue
        t = times[name]
        if best is None or t < best[1] - TIE_TOL or (
            abs(t - best[1]) <= TIE_TOL and arcs[name] < arcs[best[0]]
        ):
            best = (name, t)
    return best


def _angle(y, z):
    return math.atan2(z, y)


def _bang_between(p, q):
    if math.hypot(*p) == 0.0:
        return Bang(0.0)
    d = _angle(*q) - _angle(*p)
    d = math.remainder(d, 2.0 * math.pi)
    if d == -math.pi:
        d = math.pi
    return Bang(d)


def _check_disk(p, name):
    y, z = (float(v) for v in p)
    if not (math.isfinite(y) and math.isfinite(z)):
        raise InvalidParameterError(f"{name} must be finite")
    if y * y + z * z > 1.0 + DISK_TOL:
        raise InvalidParameterError(f"{name} = ({y}, {z}) is outside the Bloch disk")
    return y, z


def _build_sequence(S, M, family, params):
    r_s, r_m = math.hypot(*S), math.hypot(*M)
    side = -1.0 if M[0] < 0 else 1.0
    arcs = []
    if family == "B":
        arcs.append(_bang_between(S, M))
        return ControlSequence(S, arcs, family)
    if family == "B.Sv+.B":
        entry = (0.0, r_s)
        arcs.append(_bang_between(S, entry))
        arcs.append(VerticalArc(r_s, r_m, _axis_up_time(r_s, r_m, params)))
        last = (0.0, r_m)
    elif family == "B.Sv-.B":
        entry = (0.0, -r_s)
        arcs.append(_bang_between(S, entry))
        arcs.append(VerticalArc(-r_s, -r_m, _axis_down_time(r_s, r_m, params)))
        last = (0.0, -r_m)
    else:
        z0 = singular_plane_z0(params)
        y_in = side * math.sqrt(max(r_s * r_s - z0 * z0, 0.0))
        entry = (y_in, z0)
        arcs.append(_bang_between(S, entry))
        if family == "B.Sh.B":
            y_out = side * math.sqrt(max(r_m * r_m - z0 * z0, 0.0))
            arcs.append(HorizontalArc(y_in, y_out, z0, _h_time(r_s, r_m, params)))
            last = (y_out, z0)
        else:
            rho = abs(z0)
            y_out = side * Y_FLOOR if abs(y_in) > Y_FLOOR else y_in
            r_out = math.hypot(y_out, z0)
            arcs.append(HorizontalArc(y_in, y_out, z0, _h_time(r_s, r_out, params)))
            # terminate before the control diverges and bang onto the axis
            arcs.append(_bang_between((y_out, z0), (0.0, -r_out)))
            arcs.append(VerticalArc(-r_out, -r_m, _axis_down_time(r_out, r_m, params)))
            last = (0.0, -r_m)
    final = _bang_between(last, M)
    if final.angle != 0.0 or r_m == 0.0:
        arcs.append(final)
    return ControlSequence(S, arcs, family)


def time_optimal_transfer(S: Sequence[float], M: Sequence[float], params: SpinParams):
    """Minimum-time planar transfer ``S -> M`` with unbounded control.

    Parameters
    ----------
    S, M : (y, z) pairs inside the closed unit disk.
    params : SpinParams
        Must satisfy ``T2 <= 2 T1``.

    Returns
    -------
    (ControlSequence, float)
        The fastest sequence and its normalized duration ``Tc``.

    Raises
    ------
    UnreachableTargetError
        When no family reaches ``M`` in finite time.
    """
    S = _check_disk(S, "S")
    M = _check_disk(M, "M")
    if not params.in_bloch_ball:
        raise InvalidParameterError("transfer synthesis requires T2 <= 2 T1")
    r_s, r_m = math.hypot(*S), math.hypot(*M)
    times = family_times(r_s, r_m, params)
    best = _best_family(times)
    if best is None:
        raise UnreachableTargetError(f"radius {r_m} is not reachable from radius {r_s}")
    family, tc = best
    return _build_sequence(S, M, family, params), tc


def transfer_time_array(r_s, r_m, params: SpinParams):
    """Vectorized minimum transfer time and winning family code.

    Same decisions as :func:`time_optimal_transfer`, applied elementwise to
    radius arrays.  Unreachable entries get ``inf`` and code ``-1``.
    """
    r_s = np.asarray(r_s, dtype=float)
    r_m = np.asarray(r_m, dtype=float)
    g, G = params.gamma, params.Gamma
    t = np.full(np.broadcast(r_s, r_m).shape, np.inf)
    code = np.full(t.shape, -1, dtype=np.int64)
    r_s, r_m = np.broadcast_to(r_s, t.shape), np.broadcast_to(r_m, t.shape)
    eq = r_s == r_m
    t[eq] = 0.0
    code[eq] = FAMILY_CODES["B"]
    with np.errstate(divide="ignore", invalid="ignore"):
        up = (r_m > r_s) & (r_m < 1.0)
        if g > 0:
            t[up] = np.log((1.0 - r_s[up]) / (1.0 - r_m[up])) / g
            code[up] = FAMILY_CODES["B.Sv+.B"]
        down = r_m < r_s
        rho = _shrink_radius(params)
        if g > 0:
            t_axis = np.log((1.0 + r_s) / (1.0 + r_m)) / g
        else:
            t_axis = np.full(t.shape, np.inf)
        if rho <= 1.0:
            c = g * g / (4.0 * (G - g))
            sh = down & (r_m >= rho)
            shsv = down & (r_m < rho) & (r_s >= rho)
            t_sh = np.log((G * r_s**2 + c) / (G * r_m**2 + c)) / (2.0 * G)
            t_shsv = np.log((G * r_s**2 + c) / (G * rho**2 + c)) / (2.0 * G)
            if g > 0:
                t_shsv = t_shsv + np.log((1.0 + rho) / (1.0 + r_m)) / g
            else:
                t_shsv = np.full(t.shape, np.inf)
            use_sh = sh & ~(t_axis < t_sh - TIE_TOL)
            use_shsv = shsv & ~(t_axis < t_shsv - TIE_TOL)
            axis = down & ~use_sh & ~use_shsv
            t[use_sh] = t_sh[use_sh]
            code[use_sh] = FAMILY_CODES["B.Sh.B"]
            t[use_shsv] = t_shsv[use_shsv]
            code[use_shsv] = FAMILY_CODES["B.Sh.Sv.B"]
        else:
            axis = down
        ok = axis & np.isfinite(t_axis)
        t[ok] = t_axis[ok]
        code[ok] = FAMILY_CODES["B.Sv-.B"]
    return t, code


def extremal_radial_speed(R, params: SpinParams, mode: str = "min"):
    """Min or max of dR/dt over the polar angle at radius ``R``."""
    R = np.asarray(R, dtype=float)
    g, G = params.gamma, params.Gamma

    def f(s):
        return -G * R + (G - g) * R * s * s + g * s

    cands = [f(-1.0), f(1.0)]
    with np.errstate(divide="ignore", invalid="ignore"):
        if G != g:
            s_star = np.where(R > 0, -g / (2.0 * (G - g) * np.where(R > 0, R, 1.0)), np.nan)
            inside = np.abs(s_star) <= 1.0
            fs = np.where(inside, f(np.where(inside, s_star, 0.0)), np.nan)
            cands.append(fs)
    stack = np.stack(np.broadcast_arrays(*cands))
    return np.nanmin(stack, axis=0) if mode == "min" else np.nanmax(stack, axis=0)


# ---------------------------------------------------------------------------
# Saturation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SaturationResult:
    sequence: ControlSequence
    t_min: float  # normalized
    t_min_seconds: float
    regime: str  # "A": horizontal + vertical arcs, "B": inversion + vertical arc
    t_min_formula: float  # alpha closed form, seconds
    formula_name: str


def alpha_formula_saturation_time(T1: float, T2: float) -> float:
    """Alpha closed form for the regime with a horizontal singular arc.

    ``T2/2 ln(1 - 2/(alpha T2)) + T1 ln((2T1 - T2)/(2(T1 - T2)))`` with
    ``alpha = T2 (T2 - 2T1) / (2 T1 (T1 - T2)^2)``.  This expression treats
    the horizontal arc as starting at ``y = 1``; the constructed sequence
    starts it at ``y = sqrt(1 - z0^2)``, see :func:`saturation_time`.
    """
    if T1 == T2:
        raise DegenerateParametersError("T1 == T2")
    alpha = T2 * (T2 - 2 * T1) / (2 * T1 * (T1 - T2) ** 2)
    return T2 / 2 * math.log(1 - 2 / (alpha * T2)) + T1 * math.log(
        (2 * T1 - T2) / (2 * (T1 - T2))
    )


def saturation_time(params: SpinParams) -> float:
    """Exact normalized minimum time from the north pole to the centre."""
    times = family_times(1.0, 0.0, params)
    return _best_family(times)[1]


def saturation_sequence(params: SpinParams) -> SaturationResult:
    """Fastest route from the north pole ``(0, 1)`` to the disk centre."""
    if params.Gamma == params.gamma:
        warnings.warn("T1 == T2: horizontal arc undefined, using the inversion sequence",
                      stacklevel=2)
    seq, tc = time_optimal_transfer((0.0, 1.0), (0.0, 0.0), params)
    regime = "A" if seq.family == "B.Sh.Sv.B" else "B"
    if regime == "A":
        formula = alpha_formula_saturation_time(params.T1, params.T2)
        name = "alpha"
    else:
        formula = params.T1 * math.log(2.0) / params.unit_factor
        name = "T1 ln 2"
    return SaturationResult(
        sequence=seq,
        t_min=tc,
        t_min_seconds=tc * params.Td,
        regime=regime,
        t_min_formula=formula,
        formula_name=name,
    )


# ---------------------------------------------------------------------------
# Simulation of a sequence with the exact propagator
# ---------------------------------------------------------------------------


def _planar_step(params, y, z, u, h):
    from . import kernels
    from .bloch import step_generator

    P = kernels.expm_affine((step_generator(params, 0.0, (u, 0.0)) * h)[None])[0]
    v = P[:3, :3] @ np.array([0.0, y, z]) + P[:3, 3]
    return v[1], v[2]


def _horizontal_nodes(arc, params, n):
    # geometric in |y| so the last intervals shrink with the diverging control
    G = params.Gamma
    k = params.gamma * (1.0 - arc.z0) * arc.z0
    a, b = abs(arc.y_from), max(abs(arc.y_to), Y_FLOOR)
    y = a * (b / a) ** (np.arange(n + 1) / n)
    w = y * y
    t = -np.log((k - G * w) / (k - G * w[0])) / (2.0 * G)
    t[0], t[-1] = 0.0, arc.duration
    return t, np.copysign(y, arc.y_from)


def simulate_sequence(seq: ControlSequence, params: SpinParams, substeps: int = 400):
    """Replay ``seq`` with piecewise-constant controls and exact steps.

    A bang rotates the actual state to the polar angle the nominal sequence
    has after that bang.  Vertical arcs are one exact zero-control step.  Each
    horizontal arc is split into ``substeps`` intervals; on each interval the
    constant control is solved for so that the state lands back on
    ``z = z0``.

    Returns
    -------
    times, points : ndarray
        Normalized times and ``(y, z)`` states after every stage.
    """
    from scipy.optimize import brentq

    y, z = seq.start
    ny, nz = seq.start
    t = 0.0
    times, pts = [0.0], [(y, z)]
    for arc in seq.arcs:
        ny, nz = arc.apply(ny, nz)
        if isinstance(arc, Bang):
            if math.hypot(ny, nz) > 0 and math.hypot(y, z) > 0:
                y, z = Bang(_angle(ny, nz) - _angle(y, z)).apply(y, z)
            else:
                y, z = arc.apply(y, z)
        elif isinstance(arc, VerticalArc):
            if arc.duration > 0:
                y, z = _planar_step(params, y, z, 0.0, arc.duration)
                t += arc.duration
        else:
            nodes, ynodes = _horizontal_nodes(arc, params, substeps)
            for h, yn in zip(np.diff(nodes), ynodes[:-1]):
                if h <= 0:
                    continue
                u0 = singular_horizontal_control(yn, params, arc.z0)

                def miss(u):
                    return _planar_step(params, y, z, u, h)[1] - arc.z0

                lo, hi = u0 - (abs(u0) + 1.0), u0 + (abs(u0) + 1.0)
                while miss(lo) * miss(hi) > 0:
                    lo, hi = lo - (hi - lo), hi + (hi - lo)
                u = brentq(miss, lo, hi, xtol=1e-14, rtol=1e-15)
                y, z = _planar_step(params, y, z, u, h)
                t += h
                times.append(t)
                pts.append((y, z))
        times.append(t)
        pts.append((y, z))
    return np.array(times), np.array(pts)
