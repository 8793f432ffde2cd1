"""Arnoldi approximation of ``exp(tA) v`` for large sparse non-normal ``A``.

Time stepping with local error control follows the classical Expokit scheme:
each substep builds an ``m``-dimensional Krylov basis, exponentiates the
augmented Hessenberg matrix and estimates the local error from the
``phi_1`` correction term.  Steps are split until every local error is below
its share ``tol * |v| * tau / t`` of the total budget.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.linalg as la
import scipy.sparse.linalg as spla

from .errors import ConvergenceError

__all__ = ["expm_action", "KrylovResult"]


class KrylovResult(np.ndarray):
    """``ndarray`` subclass carrying ``error_estimate`` and ``steps``."""

    def __new__(cls, arr, error_estimate, steps):
        obj = np.asarray(arr).view(cls)
        obj.error_estimate = error_estimate
        obj.steps = steps
        return obj

    def __array_finalize__(self, obj):
        self.error_estimate = getattr(obj, "error_estimate", 0.0)
        self.steps = getattr(obj, "steps", 0)


def _arnoldi(a, v, beta, m):
    n = v.shape[0]
    basis = np.zeros((m + 1, n), dtype=complex)
    h = np.zeros((m + 2, m + 2), dtype=complex)
    basis[0] = v / beta
    happy_tol = 1e-12 * beta
    for j in range(m):
        w = a @ basis[j]
        for i in range(j + 1):
            h[i, j] = np.vdot(basis[i], w)
            w = w - h[i, j] * basis[i]
        # one reorthogonalization pass keeps the basis honest for non-normal A
        for i in range(j + 1):
            c = np.vdot(basis[i], w)
            h[i, j] += c
            w = w - c * basis[i]
        s = np.linalg.norm(w)
        if s <= happy_tol:
            return basis[: j + 1], h[: j + 1, : j + 1], True, 0.0
        h[j + 1, j] = s
        basis[j + 1] = w / s
    av_norm = np.linalg.norm(a @ basis[m])
    h[m + 1, m] = 1.0
    return basis, h, False, av_norm


def expm_action(a, v: np.ndarray, t: float, *, tol: float = 1e-9, m: int = 60,
                max_rejections: int = 20) -> KrylovResult:
    """Return ``exp(t a) @ v`` with an a-posteriori error estimate.

    Parameters
    ----------
    a : sparse matrix or LinearOperator
    v : starting vector
    t : non-negative time
    tol : absolute error budget relative to ``|v|``
    m : maximal Krylov dimension

    Raises
    ------
    ConvergenceError
        When a substep keeps failing its error test.
    """
    if t < 0:
        raise ValueError("time must be non-negative")
    v = np.asarray(v, dtype=complex)
    n = v.shape[0]
    beta0 = np.linalg.norm(v)
    if t == 0 or beta0 == 0:
        return KrylovResult(v.copy(), 0.0, 0)
    m = max(1, min(m, n))
    if isinstance(a, spla.LinearOperator):
        a_norm = spla.onenormest(a)
    elif hasattr(a, "tocsr"):
        a_norm = abs(a).sum(axis=0).max()
    else:
        a_norm = np.abs(a).sum(axis=0).max()
    a_norm = max(float(a_norm), 1e-300)
    budget = tol * beta0
    fact = ((m + 1) / math.e) ** (m + 1) * math.sqrt(2 * math.pi * (m + 1))
    tau = min(t, (1.0 / a_norm) * ((fact * tol) / (4.0 * beta0 * a_norm)) ** (1.0 / m))
    tau = max(tau, t * 1e-12)

    w = v.copy()
    t_now = 0.0
    err_total = 0.0
    steps = 0
    while t_now < t:
        beta = np.linalg.norm(w)
        if beta == 0:
            break
        basis, h, happy, av_norm = _arnoldi(a, w, beta, m)
        tau = min(tau, t - t_now)
        if happy:
            # invariant Krylov space: the rest of the interval is exact
            tau = t - t_now
            f = la.expm(tau * h)
            w = (beta * f[:, 0]) @ basis
            steps += 1
            break
        for _ in range(max_rejections):
            f = la.expm(tau * h)
            err1 = abs(beta * f[m, 0])
            err2 = abs(beta * f[m + 1, 0] * av_norm)
            if err1 > 10 * err2:
                err_loc = err2
            elif err1 > err2:
                err_loc = err1 * err2 / (err1 - err2)
            else:
                err_loc = err1
            allowed = budget * tau / t
            if err_loc <= allowed:
                break
            tau *= 0.9 * (allowed / err_loc) ** (1.0 / m)
        else:
            raise ConvergenceError(
                f"Krylov step rejected {max_rejections} times at t={t_now}",
                achieved=err_loc, trace=[t_now, tau])
        w = (beta * f[: m + 1, 0]) @ basis
        t_now += tau
        err_total += err_loc
        steps += 1
        growth = 5.0 if err_loc == 0 else min(5.0, 0.9 * (budget * tau / t / err_loc) ** (1.0 / m))
        tau = min(t - t_now, tau * growth)
    return KrylovResult(w, err_total, steps)
