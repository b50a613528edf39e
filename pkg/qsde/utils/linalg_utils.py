import numpy as np
from scipy import linalg

from ..errors import DimensionError

# relative PSD tolerance: min eigenvalue >= -PSD_TOL * largest |eigenvalue|
PSD_TOL = 1e-10


def dag(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def as_matrix(value, n: int | None = None, name: str = "matrix") -> np.ndarray:
    """Square complex matrix, optionally of a required size."""
    m = np.asarray(value, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be a square matrix, got shape {m.shape}")
    if n is not None and m.shape[0] != n:
        raise DimensionError(f"{name} must be {n}x{n}, got {m.shape[0]}x{m.shape[1]}")
    return m


def as_vector(value, n: int | None = None, name: str = "vector") -> np.ndarray:
    v = np.asarray(value, dtype=complex)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {v.shape}")
    if n is not None and v.shape[0] != n:
        raise DimensionError(f"{name} must have length {n}, got {v.shape[0]}")
    return v


def hermitian_residual(a: np.ndarray) -> float:
    """||A - A†|| relative to max(||A||, 1)."""
    scale = max(np.linalg.norm(a), 1.0)
    return float(np.linalg.norm(a - dag(a)) / scale)


def hermitian_part(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + dag(a))


def spectrum_bounds(a: np.ndarray) -> tuple[float, float]:
    """(min eigenvalue, largest |eigenvalue|) of the Hermitian part of a."""
    if a.size == 0:
        return 0.0, 0.0
    eig = linalg.eigvalsh(hermitian_part(a))
    return float(eig[0]), float(np.max(np.abs(eig)))


def is_psd(a: np.ndarray, tol: float = PSD_TOL, atol: float = 0.0) -> bool:
    min_eig, scale = spectrum_bounds(a)
    return min_eig >= -(tol * scale + atol)


def matrix_units(n: int) -> list[np.ndarray]:
    """E_ab in row-major order (a, b)."""
    units = []
    for a in range(n):
        for b in range(n):
            e = np.zeros((n, n), dtype=complex)
            e[a, b] = 1.0
            units.append(e)
    return units


def spanning_test_ops(n: int) -> list[np.ndarray]:
    """Matrix units of M_n followed by the identity."""
    return matrix_units(n) + [np.eye(n, dtype=complex)]


def expm(a: np.ndarray) -> np.ndarray:
    # scipy's Pade scaling-and-squaring, accurate to double precision for
    # non-normal arguments
    return linalg.expm(a)


def null_space(a: np.ndarray, rcond: float = 1e-12) -> np.ndarray:
    """Orthonormal basis (as columns) of the kernel of a, via SVD."""
    if a.shape[0] == 0:
        return np.eye(a.shape[1], dtype=complex)
    return linalg.null_space(a, rcond=rcond)
