"""Property-based checks over randomly drawn parameters and pulses."""
import math

import numpy as np
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from spinctl.bloch import Pulse, SpinParams, propagate_pulse
from spinctl.grape import (
    ContrastProblem,
    OffsetEnsemble,
    Species,
    cost,
    cost_gradient,
    finite_difference_gradient,
    simulate,
)
from spinctl.snr import cycle_map, ernst_steady_state

SETTINGS = settings(max_examples=40, deadline=None, derandomize=True,
                    suppress_health_check=[HealthCheck.too_slow])

finite = dict(allow_nan=False, allow_infinity=False)


@st.composite
def ball_rates(draw):
    gamma = draw(st.floats(0.0, 3.0, **finite))
    Gamma = draw(st.floats(gamma / 2.0, gamma / 2.0 + 5.0, **finite))
    return SpinParams.from_rates(Gamma, gamma)


@st.composite
def ball_states(draw):
    v = np.array(draw(st.lists(st.floats(-1.0, 1.0, **finite), min_size=3, max_size=3)))
    n = np.linalg.norm(v)
    return v / n if n > 1.0 else v


@st.composite
def pulses(draw, max_steps=12):
    n = draw(st.integers(1, max_steps))
    amps = draw(st.lists(st.floats(-30.0, 30.0, **finite), min_size=2 * n, max_size=2 * n))
    dt = draw(st.floats(1e-3, 0.5, **finite))
    return Pulse(dt=dt, steps=np.array(amps).reshape(n, 2))


@SETTINGS
@given(ball_rates(), ball_states(), pulses(), st.floats(-20.0, 20.0, **finite))
def test_relaxation_keeps_states_in_ball(params, x0, pulse, offset):
    traj = propagate_pulse(x0, params, [offset], pulse)
    assert np.linalg.norm(traj, axis=-1).max() <= 1.0 + 1e-12


@SETTINGS
@given(ball_states(), pulses(), st.floats(-20.0, 20.0, **finite))
def test_rotation_alone_preserves_norm(x0, pulse, offset):
    params = SpinParams.from_rates(0.0, 0.0)
    traj = propagate_pulse(x0, params, [offset], pulse)
    np.testing.assert_allclose(np.linalg.norm(traj, axis=-1), np.linalg.norm(x0), atol=1e-12)


@SETTINGS
@given(st.floats(0.01, math.pi - 0.01), ball_rates())
def test_steady_state_is_fixed_point(theta, params):
    if params.gamma == 0.0 and params.Gamma == 0.0:
        return
    m = ernst_steady_state(theta, params)
    nxt = cycle_map((m.y_m, m.z_m), theta, params)
    np.testing.assert_allclose(nxt, (m.y_m, m.z_m), atol=1e-12)


@st.composite
def contrast_problems(draw):
    species = []
    for name in ("a", "b"):
        T2 = draw(st.floats(5.0, 100.0))
        T1 = draw(st.floats(max(T2, 200.0), 2000.0))
        species.append(Species.from_ms(name, T1, T2))
    n_off = draw(st.integers(1, 4))
    offsets = draw(st.lists(st.floats(-100.0, 100.0, **finite), min_size=n_off, max_size=n_off))
    n = draw(st.integers(1, 10))
    dt = draw(st.floats(1e-3, 5e-3))
    kind = draw(st.sampled_from(["transverse", "preparation"]))
    p = ContrastProblem(species[0], species[1], OffsetEnsemble(offsets), n, dt, cost=kind)
    amps = draw(st.lists(st.floats(-2 * math.pi * 100, 2 * math.pi * 100, **finite),
                         min_size=2 * n, max_size=2 * n))
    return p, np.array(amps).reshape(n, 2)


@settings(max_examples=25, deadline=None, derandomize=True)
@given(contrast_problems())
def test_gradient_agrees_with_finite_differences(case):
    p, u = case
    # the norms in the costs have a kink at zero; skip draws that land there
    fa, fb = simulate(p, u)
    if p.cost == "transverse":
        kink = min(np.hypot(fa[:, 0], fa[:, 1]).min(), np.hypot(fb[:, 0], fb[:, 1]).min())
    else:
        kink = np.linalg.norm(fb, axis=1).min()
    assume(kink > 1e-3)
    _, g = cost_gradient(p, u)
    fd = finite_difference_gradient(p, u, h=1e-6)
    # relative to the largest component per channel, plus an absolute floor
    # for drawn cases whose gradient is itself at the round-off level
    scale = np.abs(fd).max(axis=0)
    assert np.all(np.abs(g - fd) <= 1e-6 * scale + 1e-11)


@SETTINGS
@given(contrast_problems())
def test_cost_is_bounded(case):
    p, u = case
    C = cost(p, u)
    assert -1.0 - 1e-12 <= C <= (1.0 if p.cost == "transverse" else 2.0) + 1e-12
