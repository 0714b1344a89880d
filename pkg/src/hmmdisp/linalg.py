"""Sparse linear solves: Jacobi-preconditioned CG, BiCGSTAB and a direct path.

Matrices are ``scipy.sparse`` CSR matrices. Every solver returns
``(x, SolveInfo)``; the reported residual is recomputed as
``||b - A x||`` from the returned ``x``, never taken from a recursion.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import IncompatibleDataError, SolverError

logger = logging.getLogger(__name__)

METHODS = ("cg", "bicgstab", "direct")


@dataclass(frozen=True)
class SolverConfig:
    """How to solve one linear system.

    ``max_iter=None`` means ten times the system dimension.  ``precond`` is
    ``"jacobi"``, ``"ilu"`` or ``None``; the default picks Jacobi for CG and
    incomplete LU for BiCGSTAB.
    """

    method: str = "cg"
    tol: float = 1e-10
    max_iter: int = None
    precond: str = "auto"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown solver method {self.method!r}; choose from {METHODS}")
        if not 0.0 < self.tol < 1.0:
            raise ValueError(f"tolerance must lie in (0, 1), got {self.tol}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.precond not in ("auto", "jacobi", "ilu", None):
            raise ValueError(f"unknown preconditioner {self.precond!r}")


@dataclass(frozen=True)
class SolveInfo:
    method: str
    iterations: int
    residual: float          # ||b - A x||
    rhs_norm: float

    @property
    def relative_residual(self):
        return self.residual / self.rhs_norm if self.rhs_norm > 0 else self.residual


def _as_csr(A):
    A = sp.csr_matrix(A, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got {A.shape}")
    return A


def _preconditioner(A, kind):
    if kind is None:
        return lambda r: r
    if kind == "jacobi":
        diag = A.diagonal()
        inv = np.where(diag != 0.0, 1.0 / np.where(diag != 0.0, diag, 1.0), 1.0)
        return lambda r: inv * r
    if kind == "ilu":
        ilu = spla.spilu(A.tocsc(), drop_tol=1e-6, fill_factor=20)
        return ilu.solve
    raise ValueError(kind)


def _pcg(A, b, x, tol, max_iter, precond, kernel=None):
    bnorm = np.linalg.norm(b)
    target = tol * bnorm
    it = 0
    for _ in range(5):  # restarts from the true residual if the recursion drifted
        r = b - A @ x
        if kernel is not None:
            r -= (r @ kernel) / (kernel @ kernel) * kernel
        if np.linalg.norm(r) <= target:
            break
        z = precond(r)
        p = z.copy()
        rz = r @ z
        while it < max_iter:
            Ap = A @ p
            curv = p @ Ap
            if not curv > 0.0:
                raise SolverError(
                    f"conjugate gradient breakdown: non-positive curvature {curv:.3e} "
                    f"at iteration {it}", iterations=it, residual=float(np.linalg.norm(r)))
            alpha = rz / curv
            x = x + alpha * p
            r = r - alpha * Ap
            if kernel is not None:
                r -= (r @ kernel) / (kernel @ kernel) * kernel
            it += 1
            if np.linalg.norm(r) <= target:
                break
            z = precond(r)
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        if it >= max_iter:
            break
    return x, it


def _bicgstab(A, b, x, tol, max_iter, precond):
    bnorm = np.linalg.norm(b)
    target = tol * bnorm
    it = 0
    for _ in range(5):
        r = b - A @ x
        if np.linalg.norm(r) <= target:
            break
        rhat = r.copy()
        rho = alpha = omega = 1.0
        v = np.zeros_like(b)
        p = np.zeros_like(b)
        while it < max_iter:
            rho_new = rhat @ r
            if rho_new == 0.0:
                raise SolverError("BiCGSTAB breakdown (rho = 0)", iterations=it,
                                  residual=float(np.linalg.norm(r)))
            beta = (rho_new / rho) * (alpha / omega)
            p = r + beta * (p - omega * v)
            phat = precond(p)
            v = A @ phat
            denom = rhat @ v
            if denom == 0.0:
                raise SolverError("BiCGSTAB breakdown (rhat . v = 0)", iterations=it,
                                  residual=float(np.linalg.norm(r)))
            alpha = rho_new / denom
            s = r - alpha * v
            it += 1
            if np.linalg.norm(s) <= target:
                x = x + alpha * phat
                r = s
                break
            shat = precond(s)
            t = A @ shat
            tt = t @ t
            omega = (t @ s) / tt if tt > 0 else 0.0
            x = x + alpha * phat + omega * shat
            r = s - omega * t
            if np.linalg.norm(r) <= target:
                break
            if omega == 0.0:
                raise SolverError("BiCGSTAB breakdown (omega = 0)", iterations=it,
                                  residual=float(np.linalg.norm(r)))
            rho = rho_new
        if it >= max_iter:
            break
    return x, it


def solve(M, b, cfg=SolverConfig(), x0=None):
    """Solve ``M x = b``.

    Returns
    -------
    x : ndarray
    info : SolveInfo

    Raises
    ------
    SolverError
        On breakdown or when ``||M x - b|| > tol ||b||`` after ``max_iter``
        iterations.
    """
    A = _as_csr(M)
    b = np.asarray(b, dtype=float)
    if b.shape != (A.shape[0],):
        raise ValueError(f"right-hand side has shape {b.shape}, matrix is {A.shape}")
    return _solve(A, b, cfg, x0)


def _solve(A, b, cfg, x0=None, kernel=None):
    n = A.shape[0]
    bnorm = float(np.linalg.norm(b))
    max_iter = cfg.max_iter if cfg.max_iter is not None else 10 * n
    if bnorm == 0.0:
        return np.zeros(n), SolveInfo(cfg.method, 0, 0.0, 0.0)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    precond = cfg.precond
    if precond == "auto":
        precond = "jacobi" if cfg.method == "cg" else "ilu"
    if cfg.method == "direct":
        if kernel is not None:
            k = kernel[:, None]
            aug = sp.bmat([[A, sp.csr_matrix(k)], [sp.csr_matrix(k.T), None]], format="csc")
            x = spla.spsolve(aug, np.append(b, 0.0))[:n]
        else:
            x = spla.spsolve(A.tocsc(), b)
        it = 1
    elif cfg.method == "cg":
        x, it = _pcg(A, b, x, cfg.tol, max_iter, _preconditioner(A, precond), kernel)
    else:
        x, it = _bicgstab(A, b, x, cfg.tol, max_iter, _preconditioner(A, precond))
    res = float(np.linalg.norm(b - A @ x))
    info = SolveInfo(cfg.method, it, res, bnorm)
    # a direct factorisation is accepted at whatever accuracy it reaches
    converged = res <= cfg.tol * bnorm or cfg.method == "direct"
    if not (np.isfinite(res) and converged):
        raise SolverError(
            f"{cfg.method} did not converge: residual {res:.3e} > {cfg.tol:.1e} * {bnorm:.3e} "
            f"after {it} iterations", iterations=it, residual=res)
    logger.debug("%s: %d iterations, residual %.3e", cfg.method, it, res)
    return x, info


def solve_singular_neumann(M, b, kernel, cfg=SolverConfig(), weights=None, compat_tol=1e-8):
    """Solve a symmetric positive semidefinite system with a 1-D kernel.

    ``b`` is projected onto the orthogonal complement of ``kernel``; if its
    kernel component exceeds ``compat_tol`` relative to ``||b||`` the data
    are declared incompatible.  The returned solution is orthogonal to
    ``kernel`` in the inner product weighted by ``weights`` (Euclidean by
    default).

    Raises
    ------
    IncompatibleDataError
    SolverError
    """
    A = _as_csr(M)
    b = np.asarray(b, dtype=float)
    k = np.asarray(kernel, dtype=float)
    kk = k @ k
    if not kk > 0:
        raise ValueError("kernel vector must be nonzero")
    bnorm = np.linalg.norm(b)
    comp = (b @ k) / np.sqrt(kk)
    if abs(comp) > compat_tol * bnorm:
        raise IncompatibleDataError(
            f"right-hand side has kernel component {comp:.3e} (relative "
            f"{abs(comp) / bnorm:.3e} > {compat_tol:.1e})", residual=float(abs(comp)))
    b = b - (b @ k) / kk * k
    x, info = _solve(A, b, cfg, kernel=k)
    w = np.ones_like(k) if weights is None else np.asarray(weights, dtype=float)
    x = x - ((w * x) @ k) / ((w * k) @ k) * k
    res = float(np.linalg.norm(b - A @ x))
    return x, SolveInfo(info.method, info.iterations, res, info.rhs_norm)
