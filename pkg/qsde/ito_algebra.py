"""
Finite-dimensional Ito *-algebras of stochastic differentials.

An element dΛ(a) is stored through its quadruple blocks

    scalar  a_+^-   (the dt coefficient, also the mean l(a))
    row     a_•^-   (annihilation part, length k_dim)
    col     a_+^•   (creation part, length k_dim)
    block   a_•^•   (exchange part, k_dim x k_dim)

and multiplied with the Hudson-Parthasarathy dot-contraction.
"""
from dataclasses import dataclass, field
from itertools import product
from numbers import Number
from typing import Sequence

import numpy as np

from .errors import DimensionError

MINUS, PLUS, DOT = "-", "+", "•"
_MU = {MINUS, DOT, "."}
_NU = {PLUS, DOT, "."}


def _c(x) -> complex:
    return complex(x)


@dataclass(frozen=True, eq=False)
class ItoElement:
    k_dim: int
    scalar: complex = 0j
    row: np.ndarray = field(default=None)
    col: np.ndarray = field(default=None)
    block: np.ndarray = field(default=None)

    def __post_init__(self):
        k = int(self.k_dim)
        if k < 0:
            raise DimensionError(f"k_dim must be >= 0, got {k}")
        row = np.zeros(k, dtype=complex) if self.row is None else np.asarray(self.row, dtype=complex).reshape(-1)
        col = np.zeros(k, dtype=complex) if self.col is None else np.asarray(self.col, dtype=complex).reshape(-1)
        block = np.zeros((k, k), dtype=complex) if self.block is None else np.asarray(self.block, dtype=complex)
        if row.shape != (k,) or col.shape != (k,):
            raise DimensionError(f"row/col must have length {k}, got {row.shape} and {col.shape}")
        if block.size == k * k:
            block = block.reshape(k, k)
        if block.shape != (k, k):
            raise DimensionError(f"block must be {k}x{k}, got {block.shape}")
        for arr in (row, col, block):
            arr.setflags(write=False)
        object.__setattr__(self, "k_dim", k)
        object.__setattr__(self, "scalar", _c(self.scalar))
        object.__setattr__(self, "row", row)
        object.__setattr__(self, "col", col)
        object.__setattr__(self, "block", block)

    # coordinates: [scalar, row..., col..., block (row-major)...]
    def to_vector(self) -> np.ndarray:
        return np.concatenate(([self.scalar], self.row, self.col, self.block.reshape(-1)))

    @classmethod
    def from_vector(cls, k_dim: int, vec) -> "ItoElement":
        v = np.asarray(vec, dtype=complex).reshape(-1)
        if v.size != 1 + 2 * k_dim + k_dim * k_dim:
            raise DimensionError(f"vector of length {v.size} does not fit k_dim={k_dim}")
        return cls(k_dim, v[0], v[1:1 + k_dim], v[1 + k_dim:1 + 2 * k_dim], v[1 + 2 * k_dim:])

    def _check(self, other: "ItoElement") -> None:
        if not isinstance(other, ItoElement):
            raise TypeError(f"expected ItoElement, got {type(other).__name__}")
        if other.k_dim != self.k_dim:
            raise DimensionError(f"k_dim mismatch: {self.k_dim} vs {other.k_dim}")

    def __add__(self, other: "ItoElement") -> "ItoElement":
        self._check(other)
        return ItoElement(self.k_dim, self.scalar + other.scalar, self.row + other.row,
                          self.col + other.col, self.block + other.block)

    def __sub__(self, other: "ItoElement") -> "ItoElement":
        return self + (-1) * other

    def __mul__(self, c) -> "ItoElement":
        if not isinstance(c, Number):
            return NotImplemented
        return ItoElement(self.k_dim, c * self.scalar, c * self.row, c * self.col, c * self.block)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        return (isinstance(other, ItoElement) and other.k_dim == self.k_dim
                and bool(np.array_equal(self.to_vector(), other.to_vector())))

    def __hash__(self):
        return hash((self.k_dim, self.to_vector().tobytes()))

    def allclose(self, other: "ItoElement", atol: float = 1e-12) -> bool:
        self._check(other)
        return bool(np.allclose(self.to_vector(), other.to_vector(), rtol=0.0, atol=atol))

    def is_zero(self) -> bool:
        return not np.any(self.to_vector())

    def __repr__(self) -> str:
        return (f"ItoElement(k_dim={self.k_dim}, scalar={self.scalar}, row={self.row.tolist()}, "
                f"col={self.col.tolist()}, block={self.block.tolist()})")


def zero_element(k_dim: int) -> ItoElement:
    return ItoElement(k_dim)


def hp_product(a: ItoElement, b: ItoElement) -> ItoElement:
    """(a•b)_ν^μ = a_•^μ b_ν^•"""
    a._check(b)
    return ItoElement(
        a.k_dim,
        scalar=a.row @ b.col,
        row=a.row @ b.block,
        col=a.block @ b.col,
        block=a.block @ b.block,
    )


def flat(a: ItoElement) -> ItoElement:
    """The involution a♭_{-ν}^{μ} = a_{-μ}^{ν*}."""
    return ItoElement(a.k_dim, np.conj(a.scalar), np.conj(a.col), np.conj(a.row), np.conj(a.block).T)


def death_element(k_dim: int) -> ItoElement:
    return ItoElement(k_dim, scalar=1.0)


def wiener_element(alpha: complex, xi: complex) -> ItoElement:
    """dΛ = α dt + ξ dQ"""
    return ItoElement(1, scalar=alpha, row=[xi], col=[xi], block=[[0.0]])


def poisson_element(alpha: complex, zeta: complex) -> ItoElement:
    """dΛ = α dt + ζ dP for the compensated Poisson process P = Λ + i(Λ⁺ - Λ₋)."""
    zeta = _c(zeta)
    return ItoElement(1, scalar=alpha, row=[-1j * zeta], col=[1j * zeta], block=[[zeta]])


def canonical_element(mu: str, nu: str, coefficient, k_dim: int | None = None) -> ItoElement:
    """
    Pure differential with `coefficient` placed in block a_ν^μ.
    (-, +) is dt, (•, +) creation, (-, •) annihilation, (•, •) exchange.
    """
    if mu not in _MU or nu not in _NU:
        raise DimensionError(f"malformed index pair ({mu!r}, {nu!r}); expected mu in {{-, •}}, nu in {{+, •}}")
    upper_dot = mu in (DOT, ".")
    lower_dot = nu in (DOT, ".")
    if upper_dot and lower_dot:
        blk = np.atleast_2d(np.asarray(coefficient, dtype=complex))
        k = blk.shape[0]
        _expect_k(k_dim, k)
        return ItoElement(k, block=blk)
    if upper_dot or lower_dot:
        vec = np.atleast_1d(np.asarray(coefficient, dtype=complex))
        if vec.ndim != 1:
            raise DimensionError(f"({mu}, {nu}) needs a vector coefficient, got shape {vec.shape}")
        k = vec.shape[0]
        _expect_k(k_dim, k)
        return ItoElement(k, col=vec) if upper_dot else ItoElement(k, row=vec)
    if np.ndim(coefficient) != 0:
        raise DimensionError("(-, +) needs a scalar coefficient")
    return ItoElement(1 if k_dim is None else k_dim, scalar=coefficient)


def _expect_k(k_dim: int | None, k: int) -> None:
    if k_dim is not None and k_dim != k:
        raise DimensionError(f"coefficient implies k_dim={k}, but k_dim={k_dim} was requested")


def mean(a: ItoElement) -> complex:
    """l(a): the vacuum mean per unit time."""
    return a.scalar


@dataclass(frozen=True)
class ItoAlgebraBasis:
    elements: tuple
    labels: tuple

    def __init__(self, elements: Sequence[ItoElement], labels: Sequence[str] | None = None):
        elements = tuple(elements)
        if not elements:
            raise DimensionError("basis must contain at least one element")
        dims = {e.k_dim for e in elements}
        if len(dims) != 1:
            raise DimensionError(f"inconsistent k_dim across basis elements: {sorted(dims)}")
        labels = tuple(labels) if labels is not None else tuple(f"e{i}" for i in range(len(elements)))
        if len(labels) != len(elements):
            raise DimensionError(f"{len(labels)} labels for {len(elements)} elements")
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "labels", labels)

    @property
    def k_dim(self) -> int:
        return self.elements[0].k_dim

    def __len__(self) -> int:
        return len(self.elements)

    def matrix(self) -> np.ndarray:
        """Coordinates of the basis elements as columns."""
        return np.stack([e.to_vector() for e in self.elements], axis=1)


def quantum_basis(k_dim: int) -> ItoAlgebraBasis:
    """dt, creations dΛ⁺_i, annihilations dΛ₋_i and exchanges dΛ_ij of the k-channel quantum algebra."""
    elements, labels = [death_element(k_dim)], ["dt"]
    for i in range(k_dim):
        unit = np.eye(k_dim, dtype=complex)[i]
        elements.append(ItoElement(k_dim, col=unit))
        labels.append(f"dA+[{i + 1}]")
    for i in range(k_dim):
        unit = np.eye(k_dim, dtype=complex)[i]
        elements.append(ItoElement(k_dim, row=unit))
        labels.append(f"dA-[{i + 1}]")
    for i, j in product(range(k_dim), repeat=2):
        blk = np.zeros((k_dim, k_dim), dtype=complex)
        blk[i, j] = 1.0
        elements.append(ItoElement(k_dim, block=blk))
        labels.append(f"dN[{i + 1},{j + 1}]")
    return ItoAlgebraBasis(elements, labels)


@dataclass(frozen=True)
class ClosureReport:
    is_closed: bool
    worst_residual: float
    tol: float
    labels: tuple
    structure_constants: np.ndarray   # c[i, j, :] expands hp_product(e_i, e_j)
    involution_constants: np.ndarray  # f[i, :] expands flat(e_i)
    contains_death: bool
    residuals: dict

    def as_dict(self) -> dict:
        def pairs(arr):
            return np.stack([arr.real, arr.imag], axis=-1).tolist()
        return {
            "is_closed": self.is_closed,
            "worst_residual": self.worst_residual,
            "tol": self.tol,
            "contains_death": self.contains_death,
            "labels": list(self.labels),
            "structure_constants": pairs(self.structure_constants),
            "involution_constants": pairs(self.involution_constants),
        }


def _expand(basis_matrix: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, float]:
    coeffs, *_ = np.linalg.lstsq(basis_matrix, target, rcond=None)
    norm = np.linalg.norm(target)
    if norm == 0.0:
        return coeffs, 0.0
    return coeffs, float(np.linalg.norm(basis_matrix @ coeffs - target) / norm)


def check_closure(basis: ItoAlgebraBasis, tol: float = 1e-10) -> ClosureReport:
    """
    Least-squares test that flat(e_i) and hp_product(e_i, e_j) stay in the span.
    Residuals are relative to the norm of the expanded element.
    """
    A = basis.matrix()
    m = len(basis)
    structure = np.zeros((m, m, m), dtype=complex)
    involution = np.zeros((m, m), dtype=complex)
    residuals = {}
    for i, e in enumerate(basis.elements):
        involution[i], residuals[("flat", basis.labels[i])] = _expand(A, flat(e).to_vector())
    for i, j in product(range(m), repeat=2):
        prod = hp_product(basis.elements[i], basis.elements[j]).to_vector()
        structure[i, j], residuals[(basis.labels[i], basis.labels[j])] = _expand(A, prod)
    _, death_res = _expand(A, death_element(basis.k_dim).to_vector())
    worst = max(residuals.values())
    return ClosureReport(
        is_closed=worst <= tol,
        worst_residual=worst,
        tol=tol,
        labels=basis.labels,
        structure_constants=structure,
        involution_constants=involution,
        contains_death=death_res <= tol,
        residuals=residuals,
    )


def _format_combination(coeffs: np.ndarray, labels: Sequence[str], tol: float) -> str:
    terms = []
    for c, label in zip(coeffs, labels):
        if abs(c) <= tol:
            continue
        c = complex(round(c.real, 12), round(c.imag, 12))
        if c == 1:
            terms.append(label)
        elif c == -1:
            terms.append(f"-{label}")
        elif c.imag == 0:
            terms.append(f"{c.real:g}*{label}")
        else:
            terms.append(f"({c.real:g}{c.imag:+g}j)*{label}")
    return " + ".join(terms).replace("+ -", "- ") if terms else "0"


def multiplication_table(basis: ItoAlgebraBasis, tol: float = 1e-10) -> dict:
    """{(left, right): product written in basis labels}"""
    report = check_closure(basis, tol)
    table = {}
    for i, j in product(range(len(basis)), repeat=2):
        key = (basis.labels[i], basis.labels[j])
        if report.residuals[key] > tol:
            table[key] = "<outside span>"
        else:
            table[key] = _format_combination(report.structure_constants[i, j], basis.labels, tol)
    return table
