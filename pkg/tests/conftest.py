import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from spinctl.bloch import SpinParams


def bloch_rhs(params, offset, control):
    """Right-hand side of the normalized Bloch equations, written out by hand."""
    g, G = params.gamma, params.Gamma
    ux, uy = control
    w = offset

    def f(t, v):
        x, y, z = v
        return [
            -G * x - w * y + uy * z,
            w * x - G * y - ux * z,
            g * (1.0 - z) - uy * x + ux * y,
        ]

    return f


def integrate(params, offset, control, x0, duration, rtol=1e-12, atol=1e-13):
    """Tight-tolerance Runge-Kutta reference for one constant-control step."""
    sol = solve_ivp(bloch_rhs(params, offset, control), (0.0, duration), list(x0),
                    method="DOP853", rtol=rtol, atol=atol)
    return sol.y[:, -1]


def random_params(rng, lo=0.05, hi=3.0):
    """Random (Gamma, gamma) with Gamma <= 2 gamma... or larger, inside the Bloch ball."""
    gamma = rng.uniform(lo, hi)
    Gamma = rng.uniform(gamma / 2.0, 3.0 * gamma + hi)
    return SpinParams.from_rates(Gamma, gamma)


def random_ball_point(rng, dim=3):
    v = rng.normal(size=dim)
    v /= np.linalg.norm(v)
    return v * rng.uniform() ** (1.0 / dim)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


PAPER_RATES = [(1.90, 0.5), (1.80, 1.0), (1.69, 1.5)]


def closed_loop_saturation_time(params):
    """Duration of north pole -> centre along the horizontal then vertical arc,
    obtained by integrating the controlled flow rather than from closed forms.

    On z = z0 the holding control gives y' = -Gamma y + k / y with
    k = gamma (1 - z0) z0; it is integrated in w = y**2, where it is smooth
    up to the axis.  On the axis z' = gamma (1 - z) is integrated up to z = 0.
    """
    g, G = params.gamma, params.Gamma
    z0 = -g / (2.0 * (G - g))
    k = g * (1.0 - z0) * z0

    def hit_axis(t, w):
        return w[0]

    hit_axis.terminal = True
    w_in = 1.0 - z0 * z0
    horiz = solve_ivp(lambda t, w: [-2.0 * G * w[0] + 2.0 * k], (0.0, 100.0), [w_in],
                      method="DOP853", rtol=1e-13, atol=1e-15, events=hit_axis)

    def hit_centre(t, z):
        return z[0]

    hit_centre.terminal = True
    vert = solve_ivp(lambda t, z: [g * (1.0 - z[0])], (0.0, 100.0), [z0],
                     method="DOP853", rtol=1e-13, atol=1e-15, events=hit_centre)
    return horiz.t_events[0][0] + vert.t_events[0][0]


def radial_min_time(r_s, r_m, params):
    """Brute-force minimum time for the radius to go r_s -> r_m.

    At each radius the fastest admissible radial speed is found by bounded
    scalar optimization over the polar angle, then dr / speed is integrated.
    """
    from scipy.integrate import quad
    from scipy.optimize import minimize_scalar

    from spinctl.bloch import radial_speed

    sign = -1.0 if r_m < r_s else 1.0

    def best_speed(r):
        grid = np.linspace(-math.pi, math.pi, 721)
        vals = sign * radial_speed(np.full_like(grid, r), grid, params)
        i = int(np.argmax(vals))
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        res = minimize_scalar(lambda th: -sign * radial_speed(r, th, params),
                              bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
        return max(vals[i], -res.fun)

    lo, hi = sorted((r_s, r_m))
    val, _ = quad(lambda r: 1.0 / best_speed(r), lo, hi, epsabs=1e-13, epsrel=1e-11, limit=400)
    return val
