"""Lanczos iteration with full reorthogonalization and explicit restarts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class ConvergenceError(RuntimeError):
    """Iterative eigensolver did not reach the requested residual."""

    def __init__(self, message: str, residual: float, value: float | None = None):
        super().__init__(message)
        self.residual = residual
        self.value = value


@dataclass
class LanczosResult:
    value: float
    vector: np.ndarray
    residual: float
    iterations: int
    restarts: int


def _project_out(v: np.ndarray, basis: np.ndarray | None) -> np.ndarray:
    if basis is not None:
        v -= basis @ (basis.T @ v)
    return v


def lanczos_lowest(
    matvec: Callable[[np.ndarray], np.ndarray],
    dim: int,
    *,
    v0: np.ndarray | None = None,
    tol: float = 1e-10,
    krylov_dim: int = 200,
    max_restarts: int = 50,
    check_every: int = 5,
    deflate: np.ndarray | None = None,
    seed: int = 0,
) -> LanczosResult:
    """Smallest eigenpair of a real symmetric operator.

    ``tol`` is an absolute bound on ||A x - theta x||. Columns of ``deflate``
    (orthonormal) are projected out of every Krylov vector, which yields the
    lowest eigenpair on their orthogonal complement.
    """
    m_max = max(2, min(krylov_dim, dim - (0 if deflate is None else deflate.shape[1])))
    if v0 is None:
        v0 = np.random.default_rng(seed).standard_normal(dim)
    q = _project_out(np.array(v0, dtype=float), deflate)
    nrm = np.linalg.norm(q)
    if nrm == 0.0:
        q = _project_out(np.random.default_rng(seed).standard_normal(dim), deflate)
        nrm = np.linalg.norm(q)
    q /= nrm

    total = 0
    theta, resid = np.nan, np.inf
    for restart in range(max_restarts + 1):
        V = np.empty((m_max, dim))  # Krylov vectors stored as rows
        alpha = np.empty(m_max)
        beta = np.empty(m_max)
        V[0] = q
        m = 0
        for j in range(m_max):
            w = np.asarray(matvec(V[j]), dtype=float)
            _project_out(w, deflate)
            alpha[j] = V[j] @ w
            w_norm = np.linalg.norm(w)
            w -= V[: j + 1].T @ (V[: j + 1] @ w)
            # second Gram-Schmidt pass only after heavy cancellation
            if np.linalg.norm(w) < 0.7 * w_norm:
                w -= V[: j + 1].T @ (V[: j + 1] @ w)
            _project_out(w, deflate)
            beta[j] = np.linalg.norm(w)
            total += 1
            m = j + 1
            invariant = beta[j] <= 1e-14 * max(1.0, abs(alpha[j]))
            if invariant or m % check_every == 0 or m == m_max:
                T = np.diag(alpha[:m]) + np.diag(beta[: m - 1], 1) + np.diag(beta[: m - 1], -1)
                evals, evecs = np.linalg.eigh(T)
                theta = evals[0]
                s = evecs[:, 0]
                resid = abs(beta[j] * s[-1])
                if invariant or resid <= 0.5 * tol:
                    break
            if j + 1 < m_max:
                V[j + 1] = w / beta[j]
        x = s @ V[:m]
        x /= np.linalg.norm(x)
        r = np.asarray(matvec(x), dtype=float)
        _project_out(r, deflate)
        theta = float(x @ r)
        resid = float(np.linalg.norm(r - theta * x))
        if resid <= tol:
            return LanczosResult(theta, x, resid, total, restart)
        q = x
    raise ConvergenceError(
        f"Lanczos did not converge: residual {resid:.3e} > {tol:.3e} after {total} steps",
        residual=resid,
        value=theta,
    )
