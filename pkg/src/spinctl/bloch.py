"""Bloch equations with relaxation, offset and piecewise-constant controls.

Everything here works in normalized units: time is measured in units of the
reference time ``Td`` and controls/offsets are angular rates multiplied by
``Td``.  For a state ``(x, y, z)`` the dynamics are::

    x' = -Gamma x - w y + uy z
    y' =  w x - Gamma y - ux z
    z' =  gamma (1 - z) - uy x + ux y

With ``ux > 0`` a state at the north pole moves toward ``-y``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from . import kernels
from .errors import InvalidParameterError

__all__ = [
    "MagState",
    "SpinParams",
    "Pulse",
    "Isochromat",
    "PolarState",
    "normalize",
    "step_generator",
    "propagate_step",
    "propagate_pulse",
    "free_evolution",
    "radial_speed",
    "to_polar",
    "from_polar",
]

EQUILIBRIUM = (0.0, 0.0, 1.0)


@dataclass(frozen=True)
class MagState:
    """Normalized magnetization ``(Mx, My, Mz) / M0``."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise InvalidParameterError(f"non-finite magnetization {self}")

    @classmethod
    def from_array(cls, a) -> "MagState":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]))

    @classmethod
    def equilibrium(cls) -> "MagState":
        return cls(*EQUILIBRIUM)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    @property
    def transverse(self) -> float:
        return math.hypot(self.x, self.y)


@dataclass(frozen=True)
class SpinParams:
    """Relaxation times in seconds and the derived dimensionless rates.

    ``gamma = c * Td / T1`` and ``Gamma = c * Td / T2`` where ``c`` is
    :attr:`unit_factor`.  Use :func:`normalize` to construct.
    """

    T1: float
    T2: float
    Td: float = 1.0
    unit_factor: float = 1.0
    gamma: float = field(init=False)
    Gamma: float = field(init=False)

    def __post_init__(self):
        # T1 or T2 = inf switches that relaxation channel off
        for name in ("T1", "T2", "Td", "unit_factor"):
            v = getattr(self, name)
            if not v > 0 or (name in ("Td", "unit_factor") and not math.isfinite(v)):
                raise InvalidParameterError(f"{name} must be positive, got {v}")
        object.__setattr__(self, "gamma", self.unit_factor * self.Td / self.T1)
        object.__setattr__(self, "Gamma", self.unit_factor * self.Td / self.T2)

    @classmethod
    def from_rates(cls, Gamma: float, gamma: float) -> "SpinParams":
        """Params with ``Td = 1`` and the given normalized rates."""
        if not (gamma >= 0 and Gamma >= 0):
            raise InvalidParameterError(f"rates must be >= 0, got Gamma={Gamma}, gamma={gamma}")
        p = cls(
            T1=1.0 / gamma if gamma > 0 else math.inf,
            T2=1.0 / Gamma if Gamma > 0 else math.inf,
        )
        # keep the rates exactly as given rather than 1 / (1 / rate)
        object.__setattr__(p, "gamma", float(gamma))
        object.__setattr__(p, "Gamma", float(Gamma))
        return p

    @property
    def in_bloch_ball(self) -> bool:
        """True when ``T2 <= 2 T1``, which keeps the unit ball invariant."""
        return self.T2 <= 2.0 * self.T1


def normalize(T1: float, T2: float, Td: float = 1.0, c: float = 1.0) -> SpinParams:
    """Build :class:`SpinParams`; raises on non-positive input."""
    return SpinParams(T1=T1, T2=T2, Td=Td, unit_factor=c)


@dataclass(frozen=True)
class Pulse:
    """Piecewise-constant RF pulse in physical units.

    ``steps`` has shape ``(n, 2)`` holding ``(omega_x, omega_y)`` in rad/s for
    each interval of length ``dt`` seconds.
    """

    dt: float
    steps: np.ndarray
    u_max: Optional[float] = None

    def __post_init__(self):
        steps = np.array(self.steps, dtype=float).reshape(-1, 2)
        if steps.shape[0] == 0:
            raise InvalidParameterError("pulse must have at least one step")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise InvalidParameterError(f"dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(steps)):
            raise InvalidParameterError("pulse amplitudes must be finite")
        if self.u_max is not None:
            if not self.u_max > 0:
                raise InvalidParameterError(f"u_max must be positive, got {self.u_max}")
            amp = np.hypot(steps[:, 0], steps[:, 1])
            if np.any(amp > self.u_max * (1 + 1e-12)):
                raise InvalidParameterError(
                    f"pulse amplitude {amp.max():.6g} exceeds u_max {self.u_max:.6g}"
                )
        steps.setflags(write=False)
        object.__setattr__(self, "steps", steps)

    @property
    def n_steps(self) -> int:
        return self.steps.shape[0]

    @property
    def duration(self) -> float:
        return self.dt * self.n_steps

    @classmethod
    def zeros(cls, n_steps: int, dt: float, u_max: Optional[float] = None) -> "Pulse":
        return cls(dt=dt, steps=np.zeros((n_steps, 2)), u_max=u_max)


@dataclass(frozen=True)
class Isochromat:
    offset: float  # normalized (rad/s * Td)
    weight: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.offset):
            raise InvalidParameterError("offset must be finite")
        if not self.weight >= 0:
            raise InvalidParameterError("weight must be >= 0")


@dataclass(frozen=True)
class PolarState:
    """Planar state with ``y = R cos(theta)`` and ``z = R sin(theta)``.

    This is the orientation under which :func:`radial_speed` is the exact
    radial component of the planar dynamics.
    """

    R: float
    theta: float

    def __post_init__(self):
        if not self.R >= 0:
            raise InvalidParameterError(f"radius must be >= 0, got {self.R}")


def to_polar(y: float, z: float) -> PolarState:
    return PolarState(math.hypot(y, z), math.atan2(z, y))


def from_polar(p: PolarState) -> tuple[float, float]:
    return p.R * math.cos(p.theta), p.R * math.sin(p.theta)


def _as_vec(state) -> np.ndarray:
    if isinstance(state, MagState):
        return state.as_array()
    v = np.asarray(state, dtype=float)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise InvalidParameterError(f"state must be 3 finite numbers, got {state!r}")
    return v


def step_generator(params: SpinParams, offset: float, control: Sequence[float]) -> np.ndarray:
    """Homogeneous 4x4 generator acting on ``(x, y, z, 1)``.

    ``offset`` and ``control = (ux, uy)`` are normalized rates.
    """
    ux, uy = float(control[0]), float(control[1])
    w = float(offset)
    if not all(math.isfinite(v) for v in (ux, uy, w)):
        raise InvalidParameterError("generator inputs must be finite")
    g, G = params.gamma, params.Gamma
    return np.array(
        [
            [-G, -w, uy, 0.0],
            [w, -G, -ux, 0.0],
            [-uy, ux, -g, g],
            [0.0, 0.0, 0.0, 0.0],
        ]
    )


def batch_generators(gamma, Gamma, offsets, controls, tau):
    """Generators times ``tau`` for every (trajectory, step) pair.

    ``gamma``, ``Gamma``, ``offsets`` have shape ``(b,)``; ``controls`` has
    shape ``(b, n, 2)`` or ``(n, 2)`` (shared).  Returns ``(b, n, 4, 4)``.
    """
    gamma = np.asarray(gamma, dtype=float)
    Gamma = np.asarray(Gamma, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    b = offsets.shape[0]
    controls = np.asarray(controls, dtype=float)
    if controls.ndim == 2:
        controls = np.broadcast_to(controls, (b,) + controls.shape)
    n = controls.shape[1]
    G = np.zeros((b, n, 4, 4))
    G[:, :, 0, 0] = -Gamma[:, None]
    G[:, :, 1, 1] = -Gamma[:, None]
    G[:, :, 2, 2] = -gamma[:, None]
    G[:, :, 2, 3] = gamma[:, None]
    G[:, :, 0, 1] = -offsets[:, None]
    G[:, :, 1, 0] = offsets[:, None]
    ux = controls[..., 0]
    uy = controls[..., 1]
    G[:, :, 0, 2] = uy
    G[:, :, 2, 0] = -uy
    G[:, :, 1, 2] = -ux
    G[:, :, 2, 1] = ux
    return G * tau


def propagate_step(state, params: SpinParams, offset: float, control, dt: float) -> MagState:
    """Exact propagation over one interval of normalized length ``dt``."""
    if not (math.isfinite(dt) and dt > 0):
        raise InvalidParameterError(f"dt must be positive, got {dt}")
    v = _as_vec(state)
    P = kernels.expm_affine((step_generator(params, offset, control) * dt)[None])[0]
    return MagState.from_array(P[:3, :3] @ v + P[:3, 3])


def _offset_array(offsets) -> np.ndarray:
    if isinstance(offsets, Isochromat):
        return np.array([offsets.offset])
    if np.ndim(offsets) == 0:
        return np.array([float(offsets)])
    return np.array([o.offset if isinstance(o, Isochromat) else float(o) for o in offsets])


def propagate_pulse(
    state,
    params: SpinParams,
    offsets: Union[float, Isochromat, Iterable],
    pulse: Pulse,
    store: bool = True,
    chunk: int = 4096,
) -> np.ndarray:
    """Propagate a physical-unit pulse for one or several isochromats.

    Parameters
    ----------
    state : MagState or array_like, shape (3,)
        Common initial state.
    params : SpinParams
    offsets : float, Isochromat or iterable of them
        Normalized offsets (``omega * Td``).
    pulse : Pulse
        Amplitudes in rad/s, ``dt`` in seconds; converted with ``params.Td``.
    store : bool
        Keep every intermediate state.  With ``False`` only final states are
        returned and memory stays bounded by ``chunk`` steps.

    Returns
    -------
    ndarray
        ``(n_iso, n_steps + 1, 3)`` if ``store`` else ``(n_iso, 3)``.
    """
    x0 = _as_vec(state)
    offs = _offset_array(offsets)
    b = offs.shape[0]
    tau = pulse.dt / params.Td
    u = pulse.steps * params.Td
    gam = np.full(b, params.gamma)
    Gam = np.full(b, params.Gamma)
    x = np.tile(x0, (b, 1))
    if store:
        G = batch_generators(gam, Gam, offs, u, tau)
        P = kernels.expm_affine(G.reshape(-1, 4, 4)).reshape(G.shape)
        return kernels.forward_sweep(P, x)
    for lo in range(0, pulse.n_steps, chunk):
        G = batch_generators(gam, Gam, offs, u[lo : lo + chunk], tau)
        P = kernels.expm_affine(G.reshape(-1, 4, 4)).reshape(G.shape)
        x = kernels.forward_sweep(P, x)[:, -1]
    return x


def free_evolution(state, params: SpinParams, duration: float) -> MagState:
    """Closed-form relaxation with no control and zero offset."""
    if not (math.isfinite(duration) and duration >= 0):
        raise InvalidParameterError(f"duration must be >= 0, got {duration}")
    x, y, z = _as_vec(state)
    e2 = math.exp(-params.Gamma * duration)
    e1 = math.exp(-params.gamma * duration)
    return MagState(x * e2, y * e2, 1.0 + (z - 1.0) * e1)


def radial_speed(R, theta, params: SpinParams):
    """Rate of change of the planar radius for polar angle ``theta``.

    Works elementwise on arrays, e.g. for contour data over a grid.
    """
    R = np.asarray(R, dtype=float)
    if np.any(R < 0):
        raise InvalidParameterError("radius must be >= 0")
    c = np.cos(theta)
    s = np.sin(theta)
    out = -params.Gamma * R * c * c + params.gamma * (s - R * s * s)
    return out if np.ndim(out) else float(out)


def radial_speed_table(params: SpinParams, n_theta: int = 181, radii=(0.25, 0.5, 0.75, 1.0)):
    """Rows ``(theta, R, dRdt)`` sampling the radial speed over the circle."""
    theta = np.linspace(-np.pi, np.pi, n_theta)
    rows = []
    for R in radii:
        for t, v in zip(theta, radial_speed(np.full_like(theta, R), theta, params)):
            rows.append((float(t), float(R), float(v)))
    return rows
