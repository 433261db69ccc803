"""GRAPE optimization of offset-robust two-species contrast pulses.

Time is in seconds and amplitudes/offsets in rad/s throughout this module
(the spin parameters use ``Td = 1 s``).  Both species are propagated over
the same offset ensemble with the same pulse, starting from ``(0, 0, 1)``.

Gradients are exact for the discretized problem: every step map is the
exponential of an affine generator, its derivative with respect to the two
control amplitudes is the Frechet derivative of that exponential, and the
costates are carried backwards through the transposed step maps.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from . import kernels
from .bloch import Pulse, SpinParams, batch_generators
from .errors import InvalidParameterError

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
COSTS = ("transverse", "preparation")


@dataclass(frozen=True)
class Species:
    name: str
    params: SpinParams

    @classmethod
    def from_ms(cls, name: str, T1_ms: float, T2_ms: float) -> "Species":
        params = SpinParams(T1=T1_ms * 1e-3, T2=T2_ms * 1e-3, Td=1.0)
        return cls(name, params)

    def __post_init__(self):
        if self.params.Td != 1.0:
            raise InvalidParameterError("GRAPE species use Td = 1 s")
        if not self.params.in_bloch_ball:
            raise InvalidParameterError(f"{self.name}: T2 must not exceed 2 T1")


@dataclass(frozen=True)
class OffsetEnsemble:
    """Resonance offsets in Hz with non-negative weights.

    Offsets are stored sorted so that sums over the ensemble are taken in a
    fixed order whatever order they were given in.
    """

    offsets_hz: np.ndarray
    weights: Optional[np.ndarray] = None
    bounds_hz: Optional[tuple] = None

    def __post_init__(self):
        off = np.atleast_1d(np.asarray(self.offsets_hz, dtype=float))
        if off.size == 0:
            raise InvalidParameterError("offset ensemble is empty")
        if not np.all(np.isfinite(off)):
            raise InvalidParameterError("offsets must be finite")
        w = np.ones_like(off) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != off.shape or np.any(w < 0) or w.sum() <= 0:
            raise InvalidParameterError("weights must be non-negative, one per offset")
        order = np.lexsort((w, off))
        off, w = off[order], w[order]
        bounds = self.bounds_hz or (float(off.min()), float(off.max()))
        if off.min() < bounds[0] - 1e-9 or off.max() > bounds[1] + 1e-9:
            raise InvalidParameterError("offsets outside the declared interval")
        for a in (off, w):
            a.setflags(write=False)
        object.__setattr__(self, "offsets_hz", off)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bounds_hz", (float(bounds[0]), float(bounds[1])))

    @classmethod
    def from_range(cls, min_hz: float, max_hz: float, step_hz: float) -> "OffsetEnsemble":
        if step_hz <= 0 or max_hz < min_hz:
            raise InvalidParameterError("need min <= max and step > 0")
        n = int(round((max_hz - min_hz) / step_hz)) + 1
        return cls(np.linspace(min_hz, max_hz, n), bounds_hz=(min_hz, max_hz))

    @property
    def count(self) -> int:
        return self.offsets_hz.size

    @property
    def rad_s(self) -> np.ndarray:
        return TWO_PI * self.offsets_hz

    @property
    def normalized_weights(self) -> np.ndarray:
        return self.weights / self.weights.sum()


@dataclass(frozen=True)
class ContrastProblem:
    """Maximize the signal of ``species_a`` while suppressing ``species_b``.

    ``species_b`` may be ``None``; the cost then only rewards species a.
    ``b1_scales`` multiplies the control amplitudes to model field
    inhomogeneity; the default single factor of 1 disables it.
    """

    species_a: Species
    species_b: Optional[Species]
    ensemble: OffsetEnsemble
    n_steps: int
    dt: float
    u_max: Optional[float] = None
    cost: str = "preparation"
    b1_scales: tuple = (1.0,)

    def __post_init__(self):
        if self.cost not in COSTS:
            raise InvalidParameterError(f"cost must be one of {COSTS}, got {self.cost!r}")
        if self.n_steps < 0 or not self.dt > 0:
            raise InvalidParameterError("need n_steps >= 0 and dt > 0")
        if self.u_max is not None and not self.u_max > 0:
            raise InvalidParameterError("u_max must be positive")
        scales = tuple(float(s) for s in self.b1_scales)
        if not scales or any(not s > 0 for s in scales):
            raise InvalidParameterError("b1 scales must be positive")
        object.__setattr__(self, "b1_scales", scales)

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    @property
    def species(self) -> tuple:
        if self.species_b is None:
            return (self.species_a,)
        return (self.species_a, self.species_b)

    @property
    def rows_per_species(self) -> int:
        return len(self.b1_scales) * self.ensemble.count

    def zero_pulse(self) -> Pulse:
        return Pulse.zeros(self.n_steps, self.dt, self.u_max)


@dataclass(frozen=True)
class OptimizerOptions:
    max_iterations: int = 500
    grad_tol: float = 1e-9
    initial_step: float = TWO_PI * 50.0  # rad/s moved by the first trial step
    backtrack: float = 0.5
    min_step: float = 1e-14
    armijo: float = 1e-4
    seed: int = 0
    n_starts: int = 4
    init_amplitude: float = TWO_PI * 10.0
    quasi_newton: bool = False
    memory: int = 10

    def __post_init__(self):
        if self.max_iterations < 1 or self.n_starts < 1:
            raise InvalidParameterError("max_iterations and n_starts must be >= 1")
        for name in ("grad_tol", "initial_step", "min_step", "armijo", "init_amplitude"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be positive")
        if not 0 < self.backtrack < 1:
            raise InvalidParameterError("backtrack factor must be in (0, 1)")


def preset_rat_brain_muscle(n_steps: int = 500, dt: float = 0.5e-3,
                            u_max: Optional[float] = None) -> ContrastProblem:
    """Muscle (kept) versus brain (saturated), offsets -400..400 Hz by 40 Hz."""
    return ContrastProblem(
        species_a=Species.from_ms("muscle", 1011.0, 30.0),
        species_b=Species.from_ms("brain", 920.0, 60.0),
        ensemble=OffsetEnsemble.from_range(-400.0, 400.0, 40.0),
        n_steps=n_steps,
        dt=dt,
        u_max=u_max,
        cost="preparation",
    )


# ---------------------------------------------------------------------------
# Costs
# ---------------------------------------------------------------------------


def _weights(n, weights):
    if n == 0:
        raise InvalidParameterError("empty ensemble")
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float)
    return w / w.sum()


def _cost_terms(kind, fa, fb, weights=None):
    """Cost and its derivatives with respect to the final states."""
    fa = np.atleast_2d(np.asarray(fa, dtype=float))
    single = fb is None
    fb = np.zeros_like(fa) if single else np.atleast_2d(np.asarray(fb, dtype=float))
    if fa.shape != fb.shape:
        raise InvalidParameterError("final-state lists differ in length")
    w = _weights(fa.shape[0], weights)
    da = np.zeros_like(fa)
    db = np.zeros_like(fb)
    na = np.hypot(fa[:, 0], fa[:, 1])
    if kind == "transverse":
        nb = np.hypot(fb[:, 0], fb[:, 1])
        C = float(np.dot(w, nb - na))
        with np.errstate(invalid="ignore", divide="ignore"):
            da[:, :2] = np.where(na[:, None] > 0, -fa[:, :2] / na[:, None], 0.0)
            db[:, :2] = np.where(nb[:, None] > 0, fb[:, :2] / nb[:, None], 0.0)
    elif kind == "preparation":
        nb = np.linalg.norm(fb, axis=1)
        C = float(np.dot(w, nb - fa[:, 2]))
        da[:, 2] = -1.0
        with np.errstate(invalid="ignore", divide="ignore"):
            db = np.where(nb[:, None] > 0, fb / nb[:, None], 0.0)
    else:
        raise InvalidParameterError(f"unknown cost {kind!r}")
    if single:
        # the zero "b" states contribute |0| = 0 and no adjoint
        return C, da * w[:, None], None
    return C, da * w[:, None], db * w[:, None]


def cost_contrast_transverse(finals_a, finals_b, weights=None) -> float:
    """Mean of ``|M_b,perp| - |M_a,perp|`` over the ensemble (minimized)."""
    return _cost_terms("transverse", finals_a, finals_b, weights)[0]


def cost_contrast_preparation(finals_a, finals_b, weights=None) -> float:
    """Mean of ``|M_b| - M_a,z`` over the ensemble (minimized)."""
    return _cost_terms("preparation", finals_a, finals_b, weights)[0]


# ---------------------------------------------------------------------------
# Propagation and gradient
# ---------------------------------------------------------------------------


def _controls(problem, pulse):
    if isinstance(pulse, Pulse):
        if pulse.n_steps != problem.n_steps or not math.isclose(pulse.dt, problem.dt):
            raise InvalidParameterError(
                f"pulse has {pulse.n_steps} steps of {pulse.dt} s, problem expects "
                f"{problem.n_steps} of {problem.dt} s"
            )
        return np.asarray(pulse.steps, dtype=float)
    u = np.asarray(pulse, dtype=float)
    if u.shape != (problem.n_steps, 2):
        raise InvalidParameterError(
            f"controls must have shape ({problem.n_steps}, 2), got {u.shape}"
        )
    return u


def _batch(problem):
    """Per-trajectory rates, offsets and control scales, species-major."""
    rows = []
    for sp in problem.species:
        for scale in problem.b1_scales:
            for off in problem.ensemble.rad_s:
                rows.append((sp.params.gamma, sp.params.Gamma, off, scale))
    a = np.array(rows)
    return a[:, 0], a[:, 1], a[:, 2], a[:, 3]


def _ensemble_weights(problem):
    w = problem.ensemble.normalized_weights
    return np.tile(w, len(problem.b1_scales)) / len(problem.b1_scales)


def _maps(problem, u, derivs):
    gam, Gam, off, scale = _batch(problem)
    controls = u[None, :, :] * scale[:, None, None]
    G = batch_generators(gam, Gam, off, controls, problem.dt)
    b, n = G.shape[:2]
    if not derivs:
        return kernels.expm_affine(G.reshape(-1, 4, 4)).reshape(b, n, 4, 4), None
    E = np.zeros((b, n, 2, 4, 4))
    s = (scale * problem.dt)[:, None]
    E[:, :, 0, 1, 2] = -s
    E[:, :, 0, 2, 1] = s
    E[:, :, 1, 0, 2] = s
    E[:, :, 1, 2, 0] = -s
    P, D = kernels.expm_affine_frechet(G.reshape(-1, 4, 4), E.reshape(-1, 2, 4, 4))
    return P.reshape(b, n, 4, 4), D.reshape(b, n, 2, 4, 4)


def simulate(problem: ContrastProblem, pulse, store: bool = False):
    """Final (or full) states for species a and b, shape ``(k, 3)`` each.

    ``k`` counts offsets times B1 scales.  With ``store`` the full
    trajectories ``(k, n + 1, 3)`` are returned instead.  The second entry
    is ``None`` for a single-species problem.
    """
    u = _controls(problem, pulse)
    X = _forward(problem, u)
    Xa, Xb = _split(problem, X)
    if store:
        return Xa, Xb
    return Xa[:, -1], None if Xb is None else Xb[:, -1]


def _initial(problem):
    return np.tile([0.0, 0.0, 1.0], (len(problem.species) * problem.rows_per_species, 1))


def _forward(problem, u):
    x0 = _initial(problem)
    if u.shape[0] == 0:
        return x0[:, None, :]
    P, _ = _maps(problem, u, derivs=False)
    return kernels.forward_sweep(P, x0)


def _split(problem, X):
    half = problem.rows_per_species
    return X[:half], (X[half:] if problem.species_b is not None else None)


def cost(problem: ContrastProblem, pulse) -> float:
    fa, fb = simulate(problem, pulse)
    return _cost_terms(problem.cost, fa, fb, _ensemble_weights(problem))[0]


def cost_gradient(problem: ContrastProblem, pulse):
    """Cost and its exact gradient with respect to the pulse amplitudes.

    Returns
    -------
    C : float
    grad : ndarray, shape (n_steps, 2)
        ``dC / d omega_{x,y}`` per step, in 1/(rad/s).
    """
    u = _controls(problem, pulse)
    w = _ensemble_weights(problem)
    if u.shape[0] == 0:
        return cost(problem, u), np.zeros((0, 2))
    P, D = _maps(problem, u, derivs=True)
    X = kernels.forward_sweep(P, _initial(problem))
    Xa, Xb = _split(problem, X)
    C, da, db = _cost_terms(problem.cost, Xa[:, -1], None if Xb is None else Xb[:, -1], w)
    L = kernels.backward_sweep(P, da if db is None else np.concatenate([da, db]))
    g = kernels.accumulate_gradient(D, X, L)
    # fixed-order reduction over trajectories
    grad = np.zeros((u.shape[0], 2))
    for row in g:
        grad += row
    return C, grad


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GradientCheck:
    h: float
    max_rel_error: tuple  # per channel (x, y)
    mean_rel_error: tuple

    @property
    def worst(self) -> float:
        return max(self.max_rel_error)


def _expm_ld(G, terms=18):
    """Taylor exponential in extended precision with one shared scaling."""
    norm = np.max(np.sum(np.abs(G), axis=-2), axis=-1).max(initial=0.0)
    s = max(0, int(math.ceil(math.log2(float(norm) / 0.25)))) if norm > 0 else 0
    X = G / np.longdouble(2.0 ** s)
    P = np.broadcast_to(np.eye(4, dtype=np.longdouble), G.shape).copy()
    term = P.copy()
    for k in range(1, terms + 1):
        term = term @ X / np.longdouble(k)
        P = P + term
    for _ in range(s):
        P = P @ P
    return P


def _generators_ld(problem, u):
    """Extended-precision generators ``(..., b, n, 4, 4)`` for controls ``(..., n, 2)``."""
    ld = np.longdouble
    u = np.asarray(u, dtype=ld)
    gam, Gam, off, scale = (a.astype(ld) for a in _batch(problem))
    dt = ld(problem.dt)
    lead = u.shape[:-2]
    n = u.shape[-2]
    G = np.zeros(lead + (gam.size, n, 4, 4), dtype=ld)
    col = (slice(None), None)
    G[..., 0, 0] = G[..., 1, 1] = -Gam[col] * dt
    G[..., 2, 2] = -gam[col] * dt
    G[..., 2, 3] = gam[col] * dt
    G[..., 0, 1] = -off[col] * dt
    G[..., 1, 0] = off[col] * dt
    cu = u[..., None, :, :] * scale[:, None, None] * dt
    G[..., 0, 2] = cu[..., 1]
    G[..., 2, 0] = -cu[..., 1]
    G[..., 1, 2] = -cu[..., 0]
    G[..., 2, 1] = cu[..., 0]
    return G


def _terms_ld(problem, finals):
    """Weighted cost of extended-precision final states ``(..., b, 3)``."""
    ld = np.longdouble
    half = problem.rows_per_species
    w = _ensemble_weights(problem).astype(ld)
    fa = finals[..., :half, :]
    fb = finals[..., half:, :] if problem.species_b is not None else np.zeros_like(fa)
    if problem.cost == "transverse":
        terms = np.sqrt(fb[..., 0] ** 2 + fb[..., 1] ** 2) - np.sqrt(fa[..., 0] ** 2 + fa[..., 1] ** 2)
    else:
        terms = np.sqrt(np.sum(fb ** 2, axis=-1)) - fa[..., 2]
    return terms @ w


def reference_cost(problem: ContrastProblem, pulse):
    """Cost evaluated in extended precision (``numpy.longdouble``)."""
    u = _controls(problem, pulse)
    P = _expm_ld(_generators_ld(problem, u))
    x = np.zeros((P.shape[0], 4), dtype=np.longdouble)
    x[:, 2:] = 1
    for k in range(u.shape[0]):
        x = np.einsum("bij,bj->bi", P[:, k], x)
    return _terms_ld(problem, x[:, :3])


def finite_difference_gradient(problem: ContrastProblem, pulse, h: float = 1e-6):
    """Central differences of the cost, one amplitude at a time.

    The oracle runs in extended precision: at ``h = 1e-6`` rad/s the cost
    moves by about ``|g| h``, which can be only a few thousand ulps of a
    double, so double round-off would swamp the difference quotient.  Only
    the perturbed step is re-exponentiated; it is composed with the stored
    states before it and the product of the step maps after it.
    """
    ld = np.longdouble
    u = _controls(problem, pulse).astype(ld)
    n = u.shape[0]
    if n == 0:
        return np.zeros((0, 2))
    hh = ld(h)
    G = _generators_ld(problem, u)  # (b, n, 4, 4)
    b = G.shape[0]
    # perturbed generators (b, n, channel, sign, 4, 4), one shared scaling
    dG = np.zeros((2, 4, 4), dtype=ld)
    dG[0, 1, 2], dG[0, 2, 1] = -1, 1
    dG[1, 0, 2], dG[1, 2, 0] = 1, -1
    _, _, _, scale = _batch(problem)
    step = (scale.astype(ld) * ld(problem.dt) * hh)[:, None, None, None, None, None]
    sign = np.array([1, -1], dtype=ld)[None, None, None, :, None, None]
    Gp = G[:, :, None, None] + step * sign * dG[None, None, :, None]
    allP = _expm_ld(np.concatenate([G[:, :, None, None].reshape(b, n, 1, 4, 4),
                                    Gp.reshape(b, n, 4, 4, 4)], axis=2))
    P, Pp = allP[:, :, 0], allP[:, :, 1:].reshape(b, n, 2, 2, 4, 4)
    X = np.zeros((b, n + 1, 4), dtype=ld)
    X[:, 0, 2:] = 1
    for k in range(n):
        X[:, k + 1] = np.einsum("bij,bj->bi", P[:, k], X[:, k])
    suffix = np.empty((b, n, 4, 4), dtype=ld)
    suffix[:, n - 1] = np.eye(4, dtype=ld)
    for k in range(n - 2, -1, -1):
        suffix[:, k] = suffix[:, k + 1] @ P[:, k + 1]
    y = np.einsum("bkcsij,bkj->bkcsi", Pp, X[:, :n])
    finals = np.einsum("bkij,bkcsj->kcsbi", suffix, y)[..., :3]
    C = _terms_ld(problem, finals)  # (n, 2, 2)
    return ((C[..., 0] - C[..., 1]) / (2 * hh)).astype(float)


def gradient_check(problem: ContrastProblem, pulse, h: float = 1e-6) -> GradientCheck:
    """Compare :func:`cost_gradient` with central differences of step ``h``.

    The error of a channel is measured against the largest finite-difference
    component of that channel.
    """
    if not h > 0:
        raise InvalidParameterError("h must be positive")
    _, g = cost_gradient(problem, pulse)
    fd = finite_difference_gradient(problem, pulse, h)
    mx, mean = [], []
    for c in range(2):
        scale = np.max(np.abs(fd[:, c])) if fd.size else 0.0
        err = np.abs(g[:, c] - fd[:, c])
        if scale == 0.0:
            mx.append(float(err.max(initial=0.0)))
            mean.append(float(err.mean()) if err.size else 0.0)
        else:
            mx.append(float(err.max() / scale))
            mean.append(float(err.mean() / scale))
    return GradientCheck(h, tuple(mx), tuple(mean))


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class GrapeResult:
    pulse: Pulse
    cost: float
    history: list = field(default_factory=list)  # (iteration, cost, grad_norm, step)
    converged: bool = False
    message: str = ""
    start_costs: list = field(default_factory=list)

    @property
    def warning(self) -> bool:
        return not self.converged


def project(u, u_max):
    """Clip each step's amplitude to ``u_max`` keeping its phase."""
    if u_max is None:
        return u
    amp = np.hypot(u[:, 0], u[:, 1])
    over = amp > u_max
    if np.any(over):
        u = u.copy()
        u[over] *= (u_max / amp[over])[:, None]
    return u


def _lbfgs_direction(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / np.vdot(y, s)
        a = rho * np.vdot(s, q)
        alphas.append((rho, a))
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= np.vdot(s, y) / np.vdot(y, y)
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * np.vdot(y, q)
        q += (a - b) * s
    return -q


def _descend(problem, u0, opts):
    u = project(u0, problem.u_max)
    C, g = cost_gradient(problem, u)
    gnorm = float(np.linalg.norm(g))
    history = [(0, C, gnorm, 0.0)]
    t = opts.initial_step / gnorm if gnorm > 0 else 0.0
    s_hist, y_hist = [], []
    for it in range(1, opts.max_iterations + 1):
        if gnorm < opts.grad_tol:
            return u, C, history, True, "gradient norm below tolerance"
        d = -g
        if opts.quasi_newton and s_hist:
            d = _lbfgs_direction(g, s_hist, y_hist)
            if np.vdot(d, g) >= 0:
                d = -g
                s_hist.clear()
                y_hist.clear()
        while True:
            trial = project(u + t * d, problem.u_max)
            C_new, g_new = cost_gradient(problem, trial)
            decrease = float(np.vdot(g, u - trial))
            if C_new <= C - opts.armijo * decrease and C_new <= C:
                break
            t *= opts.backtrack
            if t * float(np.linalg.norm(d)) < opts.min_step:
                return u, C, history, False, "line search reached the minimum step"
        step = float(np.linalg.norm(trial - u))
        if opts.quasi_newton:
            s_vec, y_vec = trial - u, g_new - g
            if np.vdot(s_vec, y_vec) > 1e-12 * np.vdot(y_vec, y_vec):
                s_hist.append(s_vec)
                y_hist.append(y_vec)
                if len(s_hist) > opts.memory:
                    s_hist.pop(0)
                    y_hist.pop(0)
        u, C, g = trial, C_new, g_new
        gnorm = float(np.linalg.norm(g))
        history.append((it, C, gnorm, step))
        t = 1.0 if opts.quasi_newton and s_hist else t / opts.backtrack
    return u, C, history, False, "maximum iterations reached"


def initial_controls(problem: ContrastProblem, opts: OptimizerOptions, start: int):
    rng = np.random.default_rng([opts.seed, start])
    u = rng.uniform(-opts.init_amplitude, opts.init_amplitude, size=(problem.n_steps, 2))
    return project(u, problem.u_max)


def grape_optimize(problem: ContrastProblem, options: Optional[OptimizerOptions] = None,
                   initial: Union[Pulse, np.ndarray, None] = None) -> GrapeResult:
    """Steepest descent with backtracking on the contrast cost.

    Runs ``options.n_starts`` random starts (or one start from ``initial``)
    and returns the lowest final cost.  Accepted iterations never increase
    the cost; amplitudes are clipped to ``u_max`` after every update.
    """
    opts = options or OptimizerOptions()
    if problem.n_steps == 0:
        raise InvalidParameterError("cannot optimize an empty pulse")
    if initial is not None:
        starts = [_controls(problem, initial)]
    else:
        starts = [initial_controls(problem, opts, k) for k in range(opts.n_starts)]
    best = None
    start_costs = []
    for k, u0 in enumerate(starts):
        u, C, hist, ok, msg = _descend(problem, u0, opts)
        log.info("start %d: cost %.6g after %d iterations (%s)", k, C, len(hist) - 1, msg)
        start_costs.append(C)
        if best is None or C < best[1]:
            best = (u, C, hist, ok, msg)
    u, C, hist, ok, msg = best
    pulse = Pulse(dt=problem.dt, steps=u, u_max=problem.u_max)
    return GrapeResult(pulse, C, hist, ok, msg, start_costs)


# ---------------------------------------------------------------------------
# Robustness report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RobustnessReport:
    offsets_hz: np.ndarray
    finals: dict  # species name -> (k, 3) final states
    trajectories: dict  # species name -> (k, n + 1, 3)
    cost_terms: dict  # species name -> (k,) per-isochromat cost contribution
    cost: float

    def rows(self):
        """``(offset_hz, species, x, y, z, trans_norm)`` per isochromat."""
        for name, F in self.finals.items():
            for off, (x, y, z) in zip(self.offsets_hz, F):
                yield (float(off), name, float(x), float(y), float(z), math.hypot(x, y))

    def summary(self):
        out = {}
        for name, F in self.finals.items():
            norms = np.linalg.norm(F, axis=1)
            trans = np.hypot(F[:, 0], F[:, 1])
            terms = self.cost_terms[name]
            out[name] = {
                "mean_norm": float(norms.mean()),
                "std_norm": float(norms.std()),
                "mean_mz": float(F[:, 2].mean()),
                "std_mz": float(F[:, 2].std()),
                "mean_trans": float(trans.mean()),
                "mean_cost_term": float(terms.mean()),
                "std_cost_term": float(terms.std()),
            }
        return out


def robustness_report(pulse, problem: ContrastProblem) -> RobustnessReport:
    """Final states, cost contributions and trajectories per offset."""
    Xa, Xb = simulate(problem, pulse, store=True)
    fa = Xa[:, -1]
    a = problem.species_a.name
    finals, trajs = {a: fa}, {a: Xa}
    if problem.cost == "transverse":
        terms = {a: -np.hypot(fa[:, 0], fa[:, 1])}
    else:
        terms = {a: -fa[:, 2]}
    fb = None
    if Xb is not None:
        b = problem.species_b.name
        fb = Xb[:, -1]
        finals[b], trajs[b] = fb, Xb
        if problem.cost == "transverse":
            terms[b] = np.hypot(fb[:, 0], fb[:, 1])
        else:
            terms[b] = np.linalg.norm(fb, axis=1)
    return RobustnessReport(
        offsets_hz=np.tile(problem.ensemble.offsets_hz, len(problem.b1_scales)),
        finals=finals,
        trajectories=trajs,
        cost_terms=terms,
        cost=_cost_terms(problem.cost, fa, fb, _ensemble_weights(problem))[0],
    )


def with_options(opts: OptimizerOptions, **kw) -> OptimizerOptions:
    return replace(opts, **kw)
