import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.linalg import expm, expm_frechet

from spinctl import _pykernels, kernels

BACKENDS = kernels.available_backends()


def random_generators(rng, m, scale=1.0):
    """Bloch-type generators: rotation at rate ~scale plus relaxation."""
    G = np.zeros((m, 4, 4))
    w = rng.normal(0, scale, (m, 3))
    G[:, 0, 1], G[:, 1, 0] = -w[:, 0], w[:, 0]
    G[:, 0, 2], G[:, 2, 0] = w[:, 1], -w[:, 1]
    G[:, 1, 2], G[:, 2, 1] = -w[:, 2], w[:, 2]
    g = rng.uniform(0, 0.5, m) * min(scale, 1.0)
    G[:, 0, 0] = G[:, 1, 1] = -rng.uniform(g / 2, 2 * g + 0.1)
    G[:, 2, 2], G[:, 2, 3] = -g, g
    return G


def generic_generators(rng, m, scale=1.0):
    G = np.zeros((m, 4, 4))
    G[:, :3, :] = rng.normal(0, scale, (m, 3, 4))
    return G


def random_directions(rng, m, c):
    E = np.zeros((m, c, 4, 4))
    E[:, :, :3, :] = rng.normal(size=(m, c, 3, 4))
    return E


@pytest.mark.parametrize("backend", BACKENDS)
def test_expm_against_scipy(backend, rng):
    k = kernels.get_backend(backend)
    for scale in (1e-3, 0.3, 3.0, 40.0):
        G = random_generators(rng, 30, scale)
        P = k.expm_affine(G)
        for g, p in zip(G, P):
            ref = expm(g)
            assert np.max(np.abs(p - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


@pytest.mark.parametrize("backend", BACKENDS)
def test_frechet_against_scipy(backend, rng):
    k = kernels.get_backend(backend)
    G = random_generators(rng, 25, 1.5)
    E = random_directions(rng, 25, 2)
    P, D = k.expm_affine_frechet(G, E)
    for i in range(25):
        for c in range(2):
            ref_p, ref_d = expm_frechet(G[i], E[i, c])
            assert np.max(np.abs(P[i] - ref_p)) < 1e-12 * max(1, np.abs(ref_p).max())
            assert np.max(np.abs(D[i, c] - ref_d)) < 1e-11 * max(1, np.abs(ref_d).max())


@pytest.mark.parametrize("backend", BACKENDS)
def test_generic_affine_against_scipy(backend, rng):
    k = kernels.get_backend(backend)
    G = generic_generators(rng, 40, 0.7)
    E = random_directions(rng, 40, 1)
    P, D = k.expm_affine_frechet(G, E)
    for i in range(40):
        ref_p, ref_d = expm_frechet(G[i], E[i, 0])
        assert np.max(np.abs(P[i] - ref_p)) < 1e-12 * max(1, np.abs(ref_p).max())
        assert np.max(np.abs(D[i, 0] - ref_d)) < 1e-11 * max(1, np.abs(ref_d).max())


def test_zero_generator_is_identity():
    for name in BACKENDS:
        P = kernels.get_backend(name).expm_affine(np.zeros((2, 4, 4)))
        assert np.array_equal(P, np.broadcast_to(np.eye(4), (2, 4, 4)))


@pytest.mark.skipif("c" not in BACKENDS, reason="compiled kernels not built")
class TestBackendAgreement:
    def test_expm(self, rng):
        G = random_generators(rng, 500, 2.0)
        a = _pykernels.expm_affine(G)
        b = kernels.get_backend("c").expm_affine(G)
        assert np.max(np.abs(a - b)) < 1e-13

    def test_frechet(self, rng):
        G = random_generators(rng, 200, 2.0)
        E = random_directions(rng, 200, 3)
        pa, da = _pykernels.expm_affine_frechet(G, E)
        pb, db = kernels.get_backend("c").expm_affine_frechet(G, E)
        assert np.max(np.abs(pa - pb)) < 1e-13
        assert np.max(np.abs(da - db)) < 1e-12

    def test_sweeps_and_gradient(self, rng):
        c = kernels.get_backend("c")
        G = random_generators(rng, 6 * 40, 0.2)
        E = random_directions(rng, 6 * 40, 2)
        P, D = c.expm_affine_frechet(G, E)
        P = P.reshape(6, 40, 4, 4)
        D = D.reshape(6, 40, 2, 4, 4)
        x0 = rng.normal(size=(6, 3))
        lam = rng.normal(size=(6, 3))
        Xa, Xb = _pykernels.forward_sweep(P, x0), c.forward_sweep(P, x0)
        La, Lb = _pykernels.backward_sweep(P, lam), c.backward_sweep(P, lam)
        assert np.max(np.abs(Xa - Xb)) < 1e-13
        assert np.max(np.abs(La - Lb)) < 1e-13
        ga = _pykernels.accumulate_gradient(D, Xa, La)
        gb = c.accumulate_gradient(D, Xb, Lb)
        assert np.max(np.abs(ga - gb)) < 1e-12


def test_forward_sweep_is_affine_map(rng):
    G = random_generators(rng, 5, 0.5).reshape(1, 5, 4, 4)
    P = kernels.expm_affine(G.reshape(-1, 4, 4)).reshape(1, 5, 4, 4)
    x0 = rng.normal(size=(1, 3))
    X = kernels.forward_sweep(P, x0)
    v = np.append(x0[0], 1.0)
    for k in range(5):
        v = P[0, k] @ v
        assert X[0, k + 1] == pytest.approx(v[:3], abs=1e-14)


def test_thread_count_does_not_change_results(rng):
    G = random_generators(rng, 1001, 1.0)
    E = random_directions(rng, 1001, 2)
    old = kernels.get_threads()
    try:
        kernels.set_threads(1)
        P1, D1 = kernels.expm_affine_frechet(G, E)
        kernels.set_threads(7)
        P7, D7 = kernels.expm_affine_frechet(G, E)
    finally:
        kernels.set_threads(old)
    assert np.array_equal(P1, P7) and np.array_equal(D1, D7)


def test_set_threads_validates():
    with pytest.raises(ValueError):
        kernels.set_threads(0)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_env_selects_python_fallback():
    env = dict(os.environ, SPINCTL_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "from spinctl import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_env_rejects_unknown_choice():
    env = dict(os.environ, SPINCTL_BACKEND="gpu")
    out = subprocess.run([sys.executable, "-c", "import spinctl.kernels"],
                         env=env, capture_output=True, text=True)
    assert out.returncode != 0 and "SPINCTL_BACKEND" in out.stderr
