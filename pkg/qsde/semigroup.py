"""
Deterministic oracles for the averaged dynamics: the Lindblad semigroup in
the Heisenberg and Schrödinger pictures and the Picard iteration towards
the minimal completely positive solution.

Superoperators act on row-major vectorized matrices, vec(B)[a*n + b] = B[a, b],
so B ↦ A B C has the matrix kron(A, Cᵀ).
"""
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, ModelError
from .germ import Germ
from .utils.linalg_utils import as_matrix, as_vector, dag, expm, matrix_units

ACTION_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Superoperator:
    n: int
    matrix: np.ndarray   # (n², n²)

    @classmethod
    def from_map(cls, n: int, fn: Callable[[np.ndarray], np.ndarray]) -> "Superoperator":
        columns = [np.asarray(fn(E), dtype=complex).reshape(-1) for E in matrix_units(n)]
        return cls(n, np.stack(columns, axis=1))

    @classmethod
    def sandwich(cls, A, C) -> "Superoperator":
        """B ↦ A B C"""
        A = np.asarray(A, dtype=complex)
        return cls(A.shape[0], np.kron(A, np.asarray(C, dtype=complex).T))

    def __call__(self, B) -> np.ndarray:
        B = as_matrix(B, self.n, "B")
        return (self.matrix @ B.reshape(-1)).reshape(self.n, self.n)

    def predual(self) -> "Superoperator":
        """The map ρ ↦ ρ' with tr(ρ' B) = tr(ρ S(B)) for all B."""
        n = self.n
        perm = np.arange(n * n).reshape(n, n).T.reshape(-1)
        return Superoperator(n, self.matrix.T[np.ix_(perm, perm)])

    def action_residual(self, fn: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(max(np.abs(self(E) - fn(E)).max() for E in matrix_units(self.n)))


def generator(germ: Germ) -> Superoperator:
    """The averaged generator B ↦ γ(B) = φ(B) − K†B − BK."""
    sop = Superoperator.from_map(germ.n, germ.gamma)
    residual = sop.action_residual(germ.gamma)
    if residual > ACTION_TOL:
        raise ModelError(f"materialized generator disagrees with γ on matrix units ({residual:.3e})")
    return sop


@dataclass(frozen=True, eq=False)
class EvolutionResult:
    grid: np.ndarray
    values: np.ndarray   # (M+1, n, n)
    method: str
    steps: int

    def expectation(self, psi0) -> np.ndarray:
        """<ψ₀|B(t)|ψ₀>"""
        psi0 = as_vector(psi0, self.values.shape[1], "psi0")
        return np.einsum("a,tab,b->t", psi0.conj(), self.values, psi0)

    def trace_against(self, B) -> np.ndarray:
        """tr(ρ(t) B)"""
        B = as_matrix(B, self.values.shape[1], "B")
        return np.einsum("tab,ba->t", self.values, B)

    def at(self, t: float) -> np.ndarray:
        return self.values[int(np.argmin(np.abs(self.grid - t)))]


def _grid(tmax: float, steps: int) -> np.ndarray:
    if int(steps) != steps or steps < 1:
        raise ValueError(f"steps must be a positive integer, got {steps}")
    if not tmax > 0:
        raise ValueError(f"tmax must be positive, got {tmax}")
    return np.linspace(0.0, float(tmax), int(steps) + 1)


def _rk4_propagator(S: np.ndarray, h: float) -> np.ndarray:
    """One classical Runge–Kutta step for dv/dt = S v, written as a matrix."""
    hS = h * S
    I = np.eye(S.shape[0], dtype=complex)
    return I + hS @ (I + hS @ (I / 2 + hS @ (I / 6 + hS / 24)))


def _integrate(S: np.ndarray, v0: np.ndarray, grid: np.ndarray) -> np.ndarray:
    out = np.empty((grid.size, v0.size), dtype=complex)
    out[0] = v0
    step = _rk4_propagator(S, grid[1] - grid[0])
    for j in range(1, grid.size):
        out[j] = step @ out[j - 1]
    return out


def evolve_heisenberg(germ: Germ, B0, tmax: float, steps: int) -> EvolutionResult:
    """dB/dt = γ(B), B(0) = B0"""
    n = germ.n
    B0 = as_matrix(B0, n, "B0")
    grid = _grid(tmax, steps)
    S = generator(germ).matrix
    values = _integrate(S, B0.reshape(-1), grid).reshape(-1, n, n)
    values[0] = B0
    logging.debug(f"evolve_heisenberg: {steps} RK4 steps to t={tmax}")
    return EvolutionResult(grid, values, "rk4-heisenberg", int(steps))


def evolve_schrodinger(germ: Germ, rho0, tmax: float, steps: int) -> EvolutionResult:
    """
    The predual equation, integrated on x = vec(ρᵀ) with dx/dt = Sᵀx so that
    tr(ρ(t) B0) and tr(ρ0 B(t)) are computed by transposed products.
    """
    n = germ.n
    rho0 = as_matrix(rho0, n, "rho0")
    if np.linalg.norm(rho0 - dag(rho0)) > 1e-10 or np.linalg.eigvalsh(0.5 * (rho0 + dag(rho0)))[0] < -1e-10:
        raise ModelError("rho0 must be positive semidefinite")
    if abs(np.trace(rho0) - 1) > 1e-10:
        raise ModelError(f"rho0 must have unit trace, got {np.trace(rho0):.6g}")
    grid = _grid(tmax, steps)
    S = generator(germ).matrix
    x = _integrate(S.T, rho0.T.reshape(-1), grid).reshape(-1, n, n)
    values = np.ascontiguousarray(np.swapaxes(x, 1, 2))
    values[0] = rho0
    return EvolutionResult(grid, values, "rk4-schrodinger", int(steps))


def picard_minimal(germ: Germ, B0, tmax: float, steps: int, iters: int) -> list[EvolutionResult]:
    """
    Vacuum-averaged Picard iterates

        Φ⁰_t = Ω_t,   Φ^{m+1}_t = Ω_t + ∫₀ᵗ Φ^m_s ∘ φ ∘ Ω_{t−s} ds,
        Ω_t(B) = W_t† B W_t,   W_t = exp(−Kt),

    by trapezoidal quadrature on the uniform grid. Each iterate is kept as a
    superoperator per grid point and returned evaluated at B0.
    """
    model = germ.model
    if model is None:
        raise ModelError("picard_minimal needs a germ built from a structural model")
    if int(iters) != iters or iters < 0:
        raise ValueError(f"iters must be a non-negative integer, got {iters}")
    n = germ.n
    B0 = as_matrix(B0, n, "B0")
    grid = _grid(tmax, steps)
    h = grid[1] - grid[0]
    K = model.K

    omega = np.stack([Superoperator.sandwich(dag(W), W).matrix for W in (expm(-K * t) for t in grid)])
    F = Superoperator.from_map(n, model.phi).matrix
    weights = np.full(grid.size, h)
    weights[0] = 0.5 * h

    P = omega.copy()
    b0 = B0.reshape(-1)
    results = [EvolutionResult(grid, (P @ b0).reshape(-1, n, n), "picard-0", int(steps))]
    for m in range(1, int(iters) + 1):
        Q = np.einsum("iab,bc->iac", P, F)
        nxt = omega.copy()
        for j in range(1, grid.size):
            w = weights[:j + 1].copy()
            w[j] = 0.5 * h
            nxt[j] += np.einsum("i,iab,ibc->ac", w, Q[:j + 1], omega[j::-1])
        P = nxt
        results.append(EvolutionResult(grid, (P @ b0).reshape(-1, n, n), f"picard-{m}", int(steps)))
        logging.debug(f"picard_minimal: iterate {m} done")
    return results


def picard_gaps(results: Sequence[EvolutionResult], reference: EvolutionResult | None = None) -> np.ndarray:
    """
    Sup-norm (over the grid, max entry) gap of each iterate to the reference,
    or between successive iterates when no reference is given.
    """
    if reference is not None:
        if reference.values.shape != results[0].values.shape:
            raise DimensionError("reference evolution is on a different grid")
        return np.array([np.abs(r.values - reference.values).max() for r in results])
    return np.array([np.abs(b.values - a.values).max() for a, b in zip(results, results[1:])])
