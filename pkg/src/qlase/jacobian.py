"""Real/complex conversion and finite-difference Jacobians."""

from __future__ import annotations

from typing import Callable

import numpy as np


def to_real(x) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    return np.concatenate([x.real, x.imag])


def to_complex(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    d = y.shape[0] // 2
    return y[:d] + 1j * y[d:]


def realified(rhs: Callable) -> Callable:
    """Real-vector version of a complex vector field."""
    def f(y):
        return to_real(rhs(to_complex(y)))
    return f


def _stencil(fcols, y, h, order):
    """Central differences on columns; ``fcols(Y)`` maps a (n, k) batch to (m, k)."""
    n = y.size
    E = np.diag(h)
    if order == 2:
        F = fcols(np.concatenate([y[:, None] + E, y[:, None] - E], axis=1))
        return (F[:, :n] - F[:, n:]) / (2.0 * h)
    if order == 4:
        F = fcols(np.concatenate([y[:, None] + 2 * E, y[:, None] + E,
                                  y[:, None] - E, y[:, None] - 2 * E], axis=1))
        f2, f1, m1, m2 = (F[:, k * n:(k + 1) * n] for k in range(4))
        return (-f2 + 8.0 * f1 - 8.0 * m1 + m2) / (12.0 * h)
    raise ValueError("order must be 2 or 4")


def jacobian_fd(rhs: Callable, x, h_scale: float = 1e-6, order: int = 2) -> np.ndarray:
    """Central-difference Jacobian of ``rhs`` in Re/Im coordinates.

    ``rhs`` maps complex vectors of length ``d`` to the same; the result is the
    real ``2d x 2d`` matrix.  The step for coordinate ``i`` is
    ``h_scale * max(1, |y_i|)``.  All evaluations go through one batched
    call, so ``rhs`` must accept arrays of shape ``(d, k)``.

    ``order=4`` uses the five-point stencil, which is exact (up to round-off)
    for right-hand sides of polynomial degree <= 4 such as the model
    equations; a large ``h_scale`` then minimises round-off.
    """
    y = to_real(x)
    h = h_scale * np.maximum(1.0, np.abs(y))
    return _stencil(lambda Y: to_real(rhs(to_complex(Y))), y, h, order)


def jacobian_fd_real(f: Callable, y, h_scale: float = 1e-6, order: int = 2) -> np.ndarray:
    """Central-difference Jacobian of a real vector map ``f(y)`` (evaluated per column)."""
    y = np.asarray(y, dtype=float)
    h = h_scale * np.maximum(1.0, np.abs(y))

    def fcols(Y):
        return np.column_stack([np.asarray(f(Y[:, k])) for k in range(Y.shape[1])])
    return _stencil(fcols, y, h, order)


# settings for the model Jacobians used by Newton, continuation and stability
EXACT_FD = dict(h_scale=1e-2, order=4)
