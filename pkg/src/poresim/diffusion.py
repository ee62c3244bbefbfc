"""Time stepping for the graph diffusion equation dM/dt = -D * L * M.

Two schemes are provided: forward Euler (explicit), which costs one
Laplacian matvec per step but is stable only for dt <= 1/(D * deg_max),
and backward Euler (implicit), which solves (I + D dt L) M' = M with a
Jacobi-preconditioned conjugate gradient and admits much larger steps.

Units: the diffusion coefficient is in voxel^2 per day and all time steps
are in days. (With D = 100950 voxel^2/day, the explicit stability bound on
a 6-connected graph is 1/(6 D) day = 0.1426 s.)

A dense eigendecomposition solver is included as an exact oracle for small
graphs; it is meant for tests, not production stepping.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .graph import VoxelGraph, laplacian_apply


class ConvergenceError(RuntimeError):
    """Iterative solve exceeded its iteration cap."""

    def __init__(self, iterations: int, residual: float, tol: float):
        self.iterations = iterations
        self.residual = residual
        self.tol = tol
        super().__init__(
            f"PCG did not converge in {iterations} iterations "
            f"(relative residual {residual:.3e}, tolerance {tol:.1e})"
        )


@dataclass
class DiffusionConfig:
    """Diffusion coefficient (voxel^2/day), time step (days), solver knobs."""

    d_coeff: float
    dt: float
    pcg_tol: float = 1e-10
    pcg_max_iter: int = 100000

    def __post_init__(self):
        if self.d_coeff < 0:
            raise ValueError(f"d_coeff must be >= 0, got {self.d_coeff}")
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not self.pcg_tol > 0:
            raise ValueError(f"pcg_tol must be > 0, got {self.pcg_tol}")
        if self.pcg_max_iter < 1:
            raise ValueError(f"pcg_max_iter must be >= 1, got {self.pcg_max_iter}")


def max_stable_dt(g: VoxelGraph, d_coeff: float) -> float:
    """Largest explicit step keeping all diagonal entries of I - D dt L nonnegative.

    Returns 1/(D deg_max) days; +inf for a graph of isolated nodes (nothing
    exchanges mass, any step is safe).
    """
    if g.n == 0:
        raise ValueError("empty graph has no stability bound")
    if not d_coeff > 0:
        raise ValueError(f"d_coeff must be > 0, got {d_coeff}")
    deg_max = g.deg_max
    if deg_max == 0:
        return np.inf
    return 1.0 / (d_coeff * deg_max)


def explicit_step(g: VoxelGraph, m: np.ndarray, cfg: DiffusionConfig) -> np.ndarray:
    """One forward-Euler step: (I - D dt L) m. Exactly one matvec."""
    return m - (cfg.d_coeff * cfg.dt) * laplacian_apply(g, m)


def pcg_solve(
    matvec: Callable[[np.ndarray], np.ndarray],
    inv_diag: np.ndarray,
    b: np.ndarray,
    tol: float,
    max_iter: int,
    callback: Optional[Callable[[int, float], None]] = None,
) -> tuple[np.ndarray, int, float]:
    """Jacobi-preconditioned conjugate gradient for an SPD operator.

    Starts from x0 = 0 and stops when ||b - A x||_2 / ||b||_2 <= tol.
    ``inv_diag`` holds the reciprocal diagonal of the operator. Returns
    (solution, iterations, relative residual); raises ConvergenceError
    when max_iter is exceeded.
    """
    b = np.asarray(b, dtype=np.float64)
    b_norm = np.linalg.norm(b)
    x = np.zeros_like(b)
    if b_norm == 0.0:
        return x, 0, 0.0
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    rel_res = 1.0
    for k in range(1, max_iter + 1):
        ap = matvec(p)
        alpha = rz / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        rel_res = float(np.linalg.norm(r) / b_norm)
        if callback is not None:
            callback(k, rel_res)
        if rel_res <= tol:
            return x, k, rel_res
        z = inv_diag * r
        rz_new = float(r @ z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    raise ConvergenceError(max_iter, rel_res, tol)


def implicit_step(
    g: VoxelGraph, m: np.ndarray, cfg: DiffusionConfig
) -> tuple[np.ndarray, int]:
    """One backward-Euler step: solve (I + D dt L) m' = m.

    Returns (m', pcg iterations). The relative residual of the solve is at
    most cfg.pcg_tol (a zero input returns zero immediately).
    """
    c = cfg.d_coeff * cfg.dt

    def matvec(x: np.ndarray) -> np.ndarray:
        return x + c * laplacian_apply(g, x)

    inv_diag = 1.0 / (1.0 + c * g.degrees)
    x, iters, _ = pcg_solve(matvec, inv_diag, m, cfg.pcg_tol, cfg.pcg_max_iter)
    return x, iters


def analytic_solution(
    g: VoxelGraph,
    m0: np.ndarray,
    d_coeff: float,
    t: float,
    max_nodes: int = 2000,
) -> np.ndarray:
    """Exact solution M(t) = U exp(-D t diag(w)) U^T M(0) by dense eigendecomposition.

    Only feasible for small graphs (n <= max_nodes); intended as a test
    oracle for the time-stepping schemes.
    """
    if g.n > max_nodes:
        raise ValueError(f"graph has {g.n} nodes, dense oracle capped at {max_nodes}")
    m0 = np.asarray(m0, dtype=np.float64)
    if m0.shape != (g.n,):
        raise ValueError(f"mass vector has shape {m0.shape}, graph has {g.n} nodes")
    lap = np.diag(g.degrees) - g.adjacency.toarray()
    w, u = np.linalg.eigh(lap)
    return u @ (np.exp(-d_coeff * t * w) * (u.T @ m0))
