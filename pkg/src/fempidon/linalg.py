"""Krylov solvers for the sparse FEM systems (Jacobi-preconditioned)."""

from __future__ import annotations

import numpy as np

from .errors import SolverError


def _jacobi(A):
    d = A.diagonal().astype(float)
    d[d == 0] = 1.0
    return 1.0 / d


def pcg(A, b, tol=1e-10, max_iter=10_000, x0=None):
    """Conjugate gradients with diagonal preconditioning.

    Stops when ||b - A x|| <= tol * ||b||.  Returns ``(x, iterations)``.
    """
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    dinv = _jacobi(A)
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    for it in range(1, max_iter + 1):
        if res <= tol:
            return x, it - 1
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            return x, it
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG did not converge in {max_iter} iterations (relative residual {res:.3e})",
                      residual=res, iterations=max_iter)


def bicgstab(A, b, tol=1e-10, max_iter=10_000, x0=None):
    """Right-preconditioned BiCGStab with a Jacobi preconditioner.

    Convergence is judged on the true relative residual ||b - A x|| / ||b||.
    """
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    dinv = _jacobi(A)
    r = b - A @ x
    res = np.linalg.norm(r) / bnorm
    if res <= tol:
        return x, 0
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    for it in range(1, max_iter + 1):
        rho_new = r_hat @ r
        if rho_new == 0.0:
            raise SolverError("BiCGStab breakdown (rho = 0)", residual=res, iterations=it)
        beta = (rho_new / rho) * (alpha / omega)
        p = r + beta * (p - omega * v)
        p_hat = dinv * p
        v = A @ p_hat
        alpha = rho_new / (r_hat @ v)
        s = r - alpha * v
        if np.linalg.norm(s) / bnorm <= tol:
            x += alpha * p_hat
            r = b - A @ x
            res = np.linalg.norm(r) / bnorm
            if res <= tol:
                return x, it
            continue
        s_hat = dinv * s
        t = A @ s_hat
        tt = t @ t
        omega = (t @ s) / tt if tt > 0 else 0.0
        x += alpha * p_hat + omega * s_hat
        r = s - omega * t
        rho = rho_new
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            true_res = np.linalg.norm(b - A @ x) / bnorm
            if true_res <= tol:
                return x, it
            r = b - A @ x
            res = true_res
        if omega == 0.0:
            raise SolverError("BiCGStab breakdown (omega = 0)", residual=res, iterations=it)
    raise SolverError(f"BiCGStab did not converge in {max_iter} iterations (relative residual {res:.3e})",
                      residual=res, iterations=max_iter)
