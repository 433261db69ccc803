"""Signal-to-noise per unit time for the cyclic steady-state experiment.

One cycle is a control period of length ``Tc`` that moves the state from the
restart point ``S`` to the measure point ``M``, followed by a free evolution
over the detection time (``Td = 1`` in normalized units) that brings ``M``
back to ``S``.  The figure of merit is ``Q = y_m / sqrt(1 + Tc)``.

Only ``y_m >= 0`` is evaluated; the mirror image has the same control time
and the same |signal|.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .bloch import SpinParams
from .errors import InvalidParameterError, NoSteadyStateError
from .geometry import (
    DISK_TOL,
    FAMILIES,
    Bang,
    time_optimal_transfer,
    transfer_time_array,
)

BOUNDARY_MARGIN = 1e-6
MAX_EVALUATIONS = 10_000
STEP_TOL = 1e-8


@dataclass(frozen=True)
class CycleSpec:
    """Experiment bookkeeping for reporting ``R = sqrt(T / Td) Q``."""

    T_total: Optional[float] = None
    Td: float = 1.0

    def __post_init__(self):
        if self.Td != 1.0:
            raise InvalidParameterError("Td is 1 in normalized units")
        if self.T_total is not None and self.T_total < self.Td:
            raise InvalidParameterError("T_total must allow at least one cycle")

    def n_cycles(self, Tc: float) -> float:
        if self.T_total is None:
            raise InvalidParameterError("T_total not set")
        return self.T_total / (Tc + self.Td)

    def snr(self, Q: float) -> float:
        if self.T_total is None:
            raise InvalidParameterError("T_total not set")
        return math.sqrt(self.T_total / self.Td) * Q


@dataclass(frozen=True)
class MeasurePoint:
    y_m: float
    z_m: float
    y_s: float
    z_s: float
    Tc: float
    Q: float
    family: str = ""

    @property
    def R_m(self) -> float:
        return math.hypot(self.y_m, self.z_m)

    @property
    def R_s(self) -> float:
        return math.hypot(self.y_s, self.z_s)


def steady_from_measure(M, params: SpinParams):
    """Free evolution of the measure point over one detection time."""
    y, z = (float(v) for v in M)
    if y * y + z * z > 1.0 + DISK_TOL:
        raise InvalidParameterError(f"M = ({y}, {z}) is outside the Bloch disk")
    return y * math.exp(-params.Gamma), 1.0 + (z - 1.0) * math.exp(-params.gamma)


def measure_point(M, params: SpinParams) -> MeasurePoint:
    """Steady-state partner, control time and Q for one measure point."""
    y, z = (float(v) for v in M)
    S = steady_from_measure((y, z), params)
    seq, tc = time_optimal_transfer(S, (y, z), params)
    return MeasurePoint(y, z, S[0], S[1], tc, abs(y) / math.sqrt(1.0 + tc), seq.family)


def q_factor(M, params: SpinParams) -> float:
    """``|y_m| / sqrt(1 + Tc)`` for the measure point ``M = (y_m, z_m)``."""
    return measure_point(M, params).Q


def q_values(y, z, params: SpinParams):
    """Vectorized Q, control time and family code over arrays of M points.

    Points farther out than ``1 - BOUNDARY_MARGIN`` are marked infeasible
    (Q is NaN, code -1).
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    ys = y * math.exp(-params.Gamma)
    zs = 1.0 + (z - 1.0) * math.exp(-params.gamma)
    r_m = np.hypot(y, z)
    tc, code = transfer_time_array(np.hypot(ys, zs), r_m, params)
    feasible = (r_m <= 1.0 - BOUNDARY_MARGIN) & np.isfinite(tc)
    q = np.where(feasible, np.abs(y) / np.sqrt(1.0 + np.where(feasible, tc, 0.0)), np.nan)
    return q, np.where(feasible, tc, np.nan), np.where(feasible, code, -1)


@dataclass(frozen=True)
class QSurface:
    y: np.ndarray  # (n,)
    z: np.ndarray  # (n,)
    Q: np.ndarray  # (n, n) indexed [iz, iy]
    Tc: np.ndarray
    code: np.ndarray

    @property
    def feasible(self) -> np.ndarray:
        return self.code >= 0

    def labels(self) -> np.ndarray:
        names = np.array(FAMILIES + ("infeasible",), dtype=object)
        return names[np.where(self.code >= 0, self.code, len(FAMILIES))]

    def rows(self):
        """``(y_m, z_m, Q, region_label, feasible)`` per node, z-major."""
        labels = self.labels()
        for iz, zv in enumerate(self.z):
            for iy, yv in enumerate(self.y):
                ok = bool(self.code[iz, iy] >= 0)
                yield (float(yv), float(zv), float(self.Q[iz, iy]) if ok else float("nan"),
                       labels[iz, iy], ok)


def q_surface(params: SpinParams, resolution: int = 256) -> QSurface:
    """Q over the half disk ``y in [0, 1], z in [-1, 1]`` on an n x n grid."""
    if resolution < 32:
        raise InvalidParameterError("resolution must be at least 32 per axis")
    if not params.in_bloch_ball:
        raise InvalidParameterError("T2 must not exceed 2 T1")
    y = np.linspace(0.0, 1.0, resolution)
    z = np.linspace(-1.0, 1.0, resolution)
    Y, Z = np.meshgrid(y, z)
    q, tc, code = q_values(Y, Z, params)
    return QSurface(y, z, q, tc, code)


def ernst_angle(params: SpinParams) -> float:
    """Flip angle maximizing the steady-state signal of repeated δ-pulses."""
    eg, eG = math.exp(-params.gamma), math.exp(-params.Gamma)
    return math.acos((eg + eG) / (1.0 + eG * eg))


def cycle_map(M, theta: float, params: SpinParams):
    """One period: free evolution over ``Td`` followed by a δ-pulse.

    The pulse turns by ``-theta`` so that a state near +z acquires
    positive ``y``.
    """
    S = steady_from_measure(M, params)
    return Bang(-theta).apply(*S)


def ernst_steady_state(theta: float, params: SpinParams) -> MeasurePoint:
    """Fixed point of :func:`cycle_map`, solved as a 2x2 linear system."""
    if not 0.0 <= theta < math.pi:
        raise InvalidParameterError(f"theta must be in [0, pi), got {theta}")
    if not params.in_bloch_ball:
        raise InvalidParameterError("T2 must not exceed 2 T1")
    c, s = math.cos(-theta), math.sin(-theta)
    rot = np.array([[c, -s], [s, c]])
    decay = np.diag([math.exp(-params.Gamma), math.exp(-params.gamma)])
    shift = np.array([0.0, 1.0 - math.exp(-params.gamma)])
    A = np.eye(2) - rot @ decay
    if abs(np.linalg.det(A)) < 1e-14:
        raise NoSteadyStateError("the cycle map has no unique fixed point")
    y, z = np.linalg.solve(A, rot @ shift)
    S = steady_from_measure((y, z), params)
    return MeasurePoint(float(y), float(z), S[0], S[1], 0.0, abs(float(y)), "B")


def flip_angle(S, M) -> float:
    """Unsigned angle between the restart and measure points."""
    S, M = np.asarray(S, dtype=float), np.asarray(M, dtype=float)
    c = float(S @ M) / (np.linalg.norm(S) * np.linalg.norm(M))
    return math.acos(min(1.0, max(-1.0, c)))


@dataclass(frozen=True)
class QMaximum:
    point: MeasurePoint
    theta: float
    theta_ernst: float
    evaluations: int
    converged: bool

    @property
    def Q(self) -> float:
        return self.point.Q

    def report(self):
        return {
            "y_m": self.point.y_m,
            "z_m": self.point.z_m,
            "Q": self.point.Q,
            "theta_rad": self.theta,
            "theta_ernst_rad": self.theta_ernst,
            "Tc": self.point.Tc,
        }


def maximize_q(params: SpinParams, resolution: int = 256) -> QMaximum:
    """Grid search on the Q surface followed by a simplex ascent.

    The ascent is Nelder-Mead in ``(y_m, z_m)``: the maximum lies on a kink
    of Q, where axis-aligned polling stalls.  It stops when the simplex is
    smaller than ``STEP_TOL`` or after ``MAX_EVALUATIONS`` evaluations.
    """
    if not (params.gamma > 0 and params.Gamma > 0):
        raise InvalidParameterError("relaxation rates must be positive")
    surf = q_surface(params, resolution)
    i = int(np.nanargmax(surf.Q))
    iz, iy = np.unravel_index(i, surf.Q.shape)
    x0 = np.array([surf.y[iy], surf.z[iz]])
    h = 1.0 / (resolution - 1)

    def neg_q(x):
        q, _, _ = q_values(x[0], x[1], params)
        q = float(q)
        return -q if math.isfinite(q) else 1.0

    simplex = [x0, x0 + [h, 0.0], x0 + [0.0, h]]
    res = minimize(
        neg_q,
        x0,
        method="Nelder-Mead",
        options={
            "xatol": STEP_TOL,
            "fatol": 1e-15,
            "maxfev": MAX_EVALUATIONS,
            "initial_simplex": simplex,
        },
    )
    best = res.x if -res.fun >= -neg_q(x0) else x0
    if not res.success:
        warnings.warn(f"Q ascent did not converge: {res.message}", stacklevel=2)
    pt = measure_point(best, params)
    return QMaximum(
        point=pt,
        theta=flip_angle((pt.y_s, pt.z_s), (pt.y_m, pt.z_m)),
        theta_ernst=ernst_angle(params),
        evaluations=int(res.nfev),
        converged=bool(res.success),
    )


@dataclass(frozen=True)
class BoundaryJump:
    point: tuple
    labels: tuple
    jump: float


def region_boundary_jumps(params: SpinParams, resolution: int = 128, delta: float = 1e-4):
    """Estimate the Q discontinuity across every labelled region boundary.

    For each pair of grid neighbours with different family labels the
    crossing is located by bisection.  Q is then sampled at ``k * delta``,
    ``k = 1..4`` on both sides and extrapolated to the crossing with the
    cubic through those samples; the returned jump is the gap between the two
    one-sided limits.  Q curves sharply near the unit circle, which is why a
    linear extrapolation is not accurate enough there.
    """
    surf = q_surface(params, resolution)
    out = []
    code = surf.code
    pairs = []
    nz, ny = code.shape
    for iz in range(nz):
        for iy in range(ny):
            for dz, dy in ((0, 1), (1, 0)):
                jz, jy = iz + dz, iy + dy
                if jz >= nz or jy >= ny:
                    continue
                a, b = code[iz, iy], code[jz, jy]
                if a >= 0 and b >= 0 and a != b:
                    pairs.append(((surf.y[iy], surf.z[iz]), (surf.y[jy], surf.z[jz])))

    def code_at(p):
        return int(q_values(p[0], p[1], params)[2])

    for p, q in pairs:
        p, q = np.array(p), np.array(q)
        cp, cq = code_at(p), code_at(q)
        for _ in range(60):
            mid = 0.5 * (p + q)
            if code_at(mid) == cp:
                p = mid
            else:
                q = mid
        x = 0.5 * (p + q)
        d = (q - p) / np.linalg.norm(q - p) if np.any(q != p) else np.array([1.0, 0.0])
        left = [x - k * delta * d for k in (1, 2, 3, 4)]
        right = [x + k * delta * d for k in (1, 2, 3, 4)]
        if any(code_at(v) != cp for v in left) or any(code_at(v) != cq for v in right):
            continue
        ql = [float(q_values(v[0], v[1], params)[0]) for v in left]
        qr = [float(q_values(v[0], v[1], params)[0]) for v in right]
        lim_l = 4 * ql[0] - 6 * ql[1] + 4 * ql[2] - ql[3]
        lim_r = 4 * qr[0] - 6 * qr[1] + 4 * qr[2] - qr[3]
        out.append(BoundaryJump((float(x[0]), float(x[1])),
                                (FAMILIES[cp], FAMILIES[cq]), abs(lim_l - lim_r)))
    return out
