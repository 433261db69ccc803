"""Backend selection for the propagation kernels.

The compiled extension ``spinctl._ckernels`` is used when it was built;
otherwise the numpy implementation in :mod:`spinctl._pykernels` is used.
Set ``SPINCTL_BACKEND=python`` to force the fallback, or ``=c`` to fail
loudly when the extension is missing.

Batch work can be split across a thread pool with :func:`set_threads`.
Rows of a batch are independent and results are reassembled in index
order, so outputs do not depend on the thread count.
"""
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _pykernels

_choice = os.environ.get("SPINCTL_BACKEND", "auto").lower()
if _choice not in ("auto", "c", "python"):
    raise ImportError(f"SPINCTL_BACKEND must be auto, c or python, got {_choice!r}")

_ckernels = None
if _choice != "python":
    try:
        from . import _ckernels
    except ImportError:
        if _choice == "c":
            raise

BACKEND = "c" if _ckernels is not None else "python"
_impl = _ckernels if _ckernels is not None else _pykernels

_threads = 1


def available_backends():
    """Names of the kernel implementations importable in this install."""
    return ["python"] + (["c"] if _ckernels is not None else [])


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active one)."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "c":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not built")
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def set_threads(n):
    """Set the worker count used to split batched kernel calls."""
    global _threads
    if int(n) < 1:
        raise ValueError("thread count must be >= 1")
    _threads = int(n)


def get_threads():
    return _threads


def _split_call(func, arrays, threads):
    m = arrays[0].shape[0]
    if threads <= 1 or m < 2 * threads:
        return func(*arrays)
    bounds = np.linspace(0, m, threads + 1).astype(int)
    chunks = [tuple(a[lo:hi] for a in arrays) for lo, hi in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda args: func(*args), chunks))
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(p, axis=0) for p in zip(*parts))
    return np.concatenate(parts, axis=0)


def expm_affine(G):
    return _split_call(_impl.expm_affine, (np.asarray(G, dtype=float),), _threads)


def expm_affine_frechet(G, E):
    return _split_call(
        _impl.expm_affine_frechet,
        (np.asarray(G, dtype=float), np.asarray(E, dtype=float)),
        _threads,
    )


def forward_sweep(P, x0):
    return _split_call(_impl.forward_sweep, (P, np.asarray(x0, dtype=float)), _threads)


def backward_sweep(P, lam_final):
    return _split_call(
        _impl.backward_sweep, (P, np.asarray(lam_final, dtype=float)), _threads
    )


def accumulate_gradient(D, X, L):
    return _split_call(_impl.accumulate_gradient, (D, X, L), _threads)
