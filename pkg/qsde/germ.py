"""
Germ matrices of quantum stochastic master equations and their
conditional complete positivity.

Channel indices m, n of the germ maps are 1-based (1..d) so they can sit
next to the symbolic indices "-" and "+" used for the time components.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, ModelError
from .utils.linalg_utils import (
    PSD_TOL,
    as_matrix,
    dag,
    hermitian_residual,
    null_space,
    spanning_test_ops,
    spectrum_bounds,
)

HERMITIAN_TOL = 1e-12
D_TOL = 1e-10

MatrixMap = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class StructuralModel:
    """
    Operators of a Lindblad-structured generator:

        γ(B)       = Σ_i L^i† B L^i − K†B − BK,   K = iH + ½(Σ_i L^i†L^i − D)
        γ^m(B)     = Σ_i L_m^i† B L^i − K_m† B
        γ_n(B)     = Σ_i L^i† B L_n^i − B K_n
        γ_n^m(B)   = Σ_i L_m^i† B L_n^i

    L holds the d' Kraus operators L^i, Ln[m][i] the d x d' array L_m^i.
    Kn defaults to K_n = Σ_i L^i†L_n^i and D to 0, which makes the
    normalization process a martingale.
    """
    H: np.ndarray
    L: np.ndarray
    Ln: np.ndarray
    Kn: np.ndarray | None = None
    D: np.ndarray | None = None

    def __post_init__(self):
        H = as_matrix(self.H, name="H")
        n = H.shape[0]
        if hermitian_residual(H) > HERMITIAN_TOL:
            raise ModelError(f"H is not Hermitian (relative residual {hermitian_residual(H):.3e})")
        L = np.asarray(self.L, dtype=complex).reshape(-1, n, n) if np.size(self.L) else np.zeros((0, n, n), complex)
        kraus = L.shape[0]
        Ln = np.asarray(self.Ln, dtype=complex)
        if Ln.size == 0:
            Ln = np.zeros((Ln.shape[0] if Ln.ndim >= 1 else 0, kraus, n, n), dtype=complex)
        if Ln.ndim != 4 or Ln.shape[1:] != (kraus, n, n):
            raise DimensionError(f"Ln must have shape (d, {kraus}, {n}, {n}), got {Ln.shape}")
        d = Ln.shape[0]
        Kn = None
        if self.Kn is not None:
            Kn = np.asarray(self.Kn, dtype=complex).reshape(-1, n, n) if d else np.zeros((0, n, n), complex)
            if Kn.shape != (d, n, n):
                raise DimensionError(f"Kn must have shape ({d}, {n}, {n}), got {Kn.shape}")
        D = None
        if self.D is not None:
            D = as_matrix(self.D, n, name="D")
            if hermitian_residual(D) > HERMITIAN_TOL:
                raise ModelError("D is not Hermitian")
            top = float(np.linalg.eigvalsh(0.5 * (D + dag(D)))[-1])
            if top > D_TOL * max(1.0, np.linalg.norm(D)):
                raise ModelError(f"D must satisfy D <= 0, largest eigenvalue is {top:.3e}")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "Ln", Ln)
        object.__setattr__(self, "Kn", Kn)
        object.__setattr__(self, "D", D)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def d(self) -> int:
        return self.Ln.shape[0]

    @property
    def kraus_mult(self) -> int:
        return self.L.shape[0]

    @property
    def D_eff(self) -> np.ndarray:
        return np.zeros((self.n, self.n), dtype=complex) if self.D is None else self.D

    @property
    def K(self) -> np.ndarray:
        return 1j * self.H + 0.5 * (self.phi(np.eye(self.n)) - self.D_eff)

    @property
    def Kn_eff(self) -> np.ndarray:
        if self.Kn is not None:
            return self.Kn
        return np.einsum("iab,miac->mbc", self.L.conj(), self.Ln) if self.d else np.zeros((0, self.n, self.n), complex)

    @property
    def is_martingale(self) -> bool:
        return self.D is None or not np.any(self.D)

    def phi(self, B: np.ndarray) -> np.ndarray:
        """φ(B) = Σ_i L^i† B L^i"""
        return np.einsum("iba,bc,icd->ad", self.L.conj(), B, self.L)

    def phi_up(self, m: int, B: np.ndarray) -> np.ndarray:
        return np.einsum("iba,bc,icd->ad", self.Ln[m - 1].conj(), B, self.L)

    def phi_dn(self, n: int, B: np.ndarray) -> np.ndarray:
        return np.einsum("iba,bc,icd->ad", self.L.conj(), B, self.Ln[n - 1])

    def phi_blk(self, m: int, n: int, B: np.ndarray) -> np.ndarray:
        return np.einsum("iba,bc,icd->ad", self.Ln[m - 1].conj(), B, self.Ln[n - 1])


def hudson_evans_model(S, H, K_plus) -> StructuralModel:
    """
    Single-channel isometric flow: J = S unitary, L₊ = S K₊, K⁻ = K₊†.
    Its germ preserves the identity, so φ_t(I) = I.
    """
    S = as_matrix(S, name="S")
    n = S.shape[0]
    if np.linalg.norm(dag(S) @ S - np.eye(n)) > 1e-10:
        raise ModelError("S must be an isometry (S†S = I)")
    K_plus = as_matrix(K_plus, n, name="K_plus")
    return StructuralModel(H=H, L=[S @ K_plus], Ln=[[S]])


def _index(label, d: int, symbol: str, role: str) -> int | str:
    if label == symbol:
        return symbol
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool) and 1 <= label <= d:
        return int(label)
    raise DimensionError(f"bad {role} index {label!r}: expected {symbol!r} or 1..{d}")


@dataclass(frozen=True, eq=False)
class Germ:
    """
    The matrix of maps γ_ν^μ acting on n x n system operators.

    gamma_fn(B)        = γ(B)     = λ_+^-(B)
    up_fn(m, B)        = γ^m(B)   = λ_+^m(B)
    dn_fn(n, B)        = γ_n(B)   = λ_n^-(B)
    blk_fn(m, n, B)    = γ_n^m(B) = B δ_n^m + λ_n^m(B)
    """
    n: int
    d: int
    gamma_fn: MatrixMap
    up_fn: Callable[[int, np.ndarray], np.ndarray]
    dn_fn: Callable[[int, np.ndarray], np.ndarray]
    blk_fn: Callable[[int, int, np.ndarray], np.ndarray]
    model: StructuralModel | None = field(default=None)

    def _arg(self, B) -> np.ndarray:
        return as_matrix(B, self.n, name="B")

    def gamma(self, B) -> np.ndarray:
        return self.gamma_fn(self._arg(B))

    def gamma_up(self, m: int, B) -> np.ndarray:
        return self.up_fn(_index(m, self.d, None, "upper"), self._arg(B))

    def gamma_dn(self, n: int, B) -> np.ndarray:
        return self.dn_fn(_index(n, self.d, None, "lower"), self._arg(B))

    def gamma_blk(self, m: int, n: int, B) -> np.ndarray:
        return self.blk_fn(_index(m, self.d, None, "upper"), _index(n, self.d, None, "lower"), self._arg(B))

    def component(self, mu, nu, B) -> np.ndarray:
        """γ_ν^μ(B) for mu in {"-", 1..d}, nu in {"+", 1..d}."""
        mu = _index(mu, self.d, "-", "upper")
        nu = _index(nu, self.d, "+", "lower")
        if mu == "-":
            return self.gamma(B) if nu == "+" else self.gamma_dn(nu, B)
        return self.gamma_up(mu, B) if nu == "+" else self.gamma_blk(mu, nu, B)

    def full(self, B) -> np.ndarray:
        """𝜸(B) as a (1+d)n square block matrix, rows (-, 1..d), columns (+, 1..d)."""
        B = self._arg(B)
        uppers = ["-"] + list(range(1, self.d + 1))
        lowers = ["+"] + list(range(1, self.d + 1))
        return np.block([[self.component(mu, nu, B) for nu in lowers] for mu in uppers])

    def negate_channel_block(self) -> "Germ":
        """Sign-tampered copy with γ_n^m replaced by −γ_n^m; never CCP unless γ_•^• vanishes."""
        blk = self.blk_fn
        return replace(self, blk_fn=lambda m, n, B: -blk(m, n, B), model=None)

    @classmethod
    def zero(cls, n: int, d: int) -> "Germ":
        """All λ = 0, i.e. γ = γ^m = γ_n = 0 and γ_n^m(B) = B δ_n^m."""
        zeros = lambda *args: np.zeros((n, n), dtype=complex)  # noqa: E731
        return cls(n, d, zeros, zeros, zeros,
                   lambda m, k, B: np.array(B, dtype=complex) if m == k else np.zeros((n, n), complex))


def build_germ(model: StructuralModel) -> Germ:
    K = model.K
    Kn = model.Kn_eff
    Kd = dag(K)
    return Germ(
        n=model.n,
        d=model.d,
        gamma_fn=lambda B: model.phi(B) - Kd @ B - B @ K,
        up_fn=lambda m, B: model.phi_up(m, B) - dag(Kn[m - 1]) @ B,
        dn_fn=lambda n, B: model.phi_dn(n, B) - B @ Kn[n - 1],
        blk_fn=lambda m, n, B: model.phi_blk(m, n, B),
        model=model,
    )


def apply_lambda(germ: Germ, mu, nu, B) -> np.ndarray:
    """λ_ν^μ(B) = γ_ν^μ(B) − B δ_ν^μ"""
    value = germ.component(mu, nu, B)
    if mu != "-" and mu == nu:
        value = value - np.asarray(B, dtype=complex)
    return value


def flat_symmetry_residual(germ: Germ, B) -> float:
    """Largest violation of γ(B†) = γ(B)†, γ^n(B†) = γ_n(B)†, γ_n^m(B†) = γ_m^n(B)†."""
    B = np.asarray(B, dtype=complex)
    Bd = dag(B)
    res = [np.linalg.norm(germ.gamma(Bd) - dag(germ.gamma(B)))]
    for m in range(1, germ.d + 1):
        res.append(np.linalg.norm(germ.gamma_up(m, Bd) - dag(germ.gamma_dn(m, B))))
        for k in range(1, germ.d + 1):
            res.append(np.linalg.norm(germ.gamma_blk(m, k, Bd) - dag(germ.gamma_blk(k, m, B))))
    return float(max(res))


def normalization_defect(germ: Germ) -> np.ndarray:
    """𝜸(I) − δ(I); zero exactly when the flow is identity preserving."""
    n, d = germ.n, germ.d
    delta = np.zeros(((1 + d) * n, (1 + d) * n), dtype=complex)
    delta[n:, n:] = np.eye(d * n)
    return germ.full(np.eye(n)) - delta


@dataclass(frozen=True, eq=False)
class DissipationMatrix:
    """
    The dissipation form Δ as one Hermitian matrix indexed by (k, α, p):
    k runs over test operators, α over (base, 1..d), p over the basis of H.
    """
    test_ops: tuple
    matrix: np.ndarray
    n: int
    d: int

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def index(self, k: int, alpha: int, p: int) -> int:
        return (k * (1 + self.d) + alpha) * self.n + p

    def block(self, k: int, alpha: int, l: int, beta: int) -> np.ndarray:
        n = self.n
        i, j = self.index(k, alpha, 0), self.index(l, beta, 0)
        return self.matrix[i:i + n, j:j + n]


def _check_test_ops(test_ops: Sequence, n: int) -> tuple:
    if len(test_ops) == 0:
        raise DimensionError("test_ops must not be empty")
    return tuple(as_matrix(X, n, name="test operator") for X in test_ops)


def dissipation_matrix(germ: Germ, test_ops: Sequence | None = None) -> DissipationMatrix:
    n, d = germ.n, germ.d
    ops = _check_test_ops(spanning_test_ops(n) if test_ops is None else test_ops, n)
    I = np.eye(n, dtype=complex)
    D = germ.gamma(I)
    lam = [germ.gamma(X) for X in ops]
    lam_dag = [germ.gamma(dag(X)) for X in ops]
    up_dag = [[germ.gamma_up(m, dag(X)) for m in range(1, d + 1)] for X in ops]
    dn = [[germ.gamma_dn(m, X) for m in range(1, d + 1)] for X in ops]
    size = len(ops) * (1 + d) * n
    M = np.zeros((size, size), dtype=complex)
    for k, X in enumerate(ops):
        Xd = dag(X)
        for l, Z in enumerate(ops):
            XZ = Xd @ Z
            blocks = np.empty((1 + d, 1 + d), dtype=object)
            blocks[0, 0] = germ.gamma(XZ) - Xd @ lam[l] - lam_dag[k] @ Z + Xd @ D @ Z
            for b in range(1, d + 1):
                blocks[0, b] = germ.gamma_dn(b, XZ) - Xd @ dn[l][b - 1]
            for a in range(1, d + 1):
                blocks[a, 0] = germ.gamma_up(a, XZ) - up_dag[k][a - 1] @ Z
                for b in range(1, d + 1):
                    blocks[a, b] = germ.gamma_blk(a, b, XZ)
            row = k * (1 + d) * n
            col = l * (1 + d) * n
            M[row:row + (1 + d) * n, col:col + (1 + d) * n] = np.block(blocks.tolist())
    herm = hermitian_residual(M)
    if herm > 1e-12:
        logging.debug(f"dissipation matrix Hermitian residual {herm:.3e}")
    return DissipationMatrix(ops, M, n, d)


def kolmogorov_factor(model: StructuralModel, test_ops: Sequence | None = None) -> np.ndarray:
    """
    C with Δ = C†C, built from the structural operators alone:
    column block (k, base) = j(X_k)L − L X_k, (k, m) = j(X_k)L_m, j(X) = I_{d'} ⊗ X.
    """
    n, d, dk = model.n, model.d, model.kraus_mult
    ops = _check_test_ops(spanning_test_ops(n) if test_ops is None else test_ops, n)
    L = model.L.reshape(dk * n, n)
    Lm = [model.Ln[m].reshape(dk * n, n) for m in range(d)]
    cols = []
    for X in ops:
        jX = np.kron(np.eye(dk), X)
        cols.append(jX @ L - L @ X)
        cols.extend(jX @ Lm[m] for m in range(d))
    return np.hstack(cols) if cols else np.zeros((0, 0), dtype=complex)


def constrained_form_min_eig(germ: Germ, test_ops: Sequence | None = None) -> tuple[float, float]:
    """
    Minimum eigenvalue of Σ_{k,l} <η_k|𝜸(X_k†X_l)η_l> restricted to Σ_k X_k η_k = 0
    (the kernel is computed by SVD), together with the largest |eigenvalue|.
    """
    n, d = germ.n, germ.d
    ops = _check_test_ops(spanning_test_ops(n) if test_ops is None else test_ops, n)
    width = (1 + d) * n
    G = np.zeros((len(ops) * width, len(ops) * width), dtype=complex)
    A = np.zeros((n, len(ops) * width), dtype=complex)
    for k, X in enumerate(ops):
        A[:, k * width:k * width + n] = X
        for l, Z in enumerate(ops):
            G[k * width:(k + 1) * width, l * width:(l + 1) * width] = germ.full(dag(X) @ Z)
    N = null_space(A)
    return spectrum_bounds(dag(N) @ G @ N)


@dataclass(frozen=True)
class CCPVerdict:
    is_ccp: bool
    min_eig: float
    scale: float
    constrained_min_eig: float
    constrained_is_ccp: bool

    @property
    def verdicts_agree(self) -> bool:
        return self.is_ccp == self.constrained_is_ccp

    def as_dict(self) -> dict:
        return {
            "is_ccp": self.is_ccp,
            "min_eig": self.min_eig,
            "scale": self.scale,
            "constrained_min_eig": self.constrained_min_eig,
            "constrained_is_ccp": self.constrained_is_ccp,
            "verdicts_agree": self.verdicts_agree,
        }


def check_ccp(germ: Germ, test_ops: Sequence | None = None, tol: float = PSD_TOL) -> CCPVerdict:
    """
    Positivity of the dissipation matrix, cross-checked against the
    constrained germ form on the same test operators. Raises ModelError when
    the two verdicts disagree.
    """
    delta = dissipation_matrix(germ, test_ops)
    min_eig, scale = spectrum_bounds(delta.matrix)
    is_ccp = min_eig >= -tol * scale
    c_min, _ = constrained_form_min_eig(germ, delta.test_ops)
    # both forms coincide on the constrained subspace, so one scale serves both
    c_ok = c_min >= -tol * scale
    verdict = CCPVerdict(is_ccp, min_eig, scale, c_min, c_ok)
    if not verdict.verdicts_agree:
        logging.error(f"CCP verdicts disagree: dissipation min_eig={min_eig:.3e}, constrained min_eig={c_min:.3e}")
        raise ModelError(f"dissipation matrix (min_eig={min_eig:.3e}) and constrained form "
                         f"(min_eig={c_min:.3e}) disagree on conditional complete positivity")
    logging.debug(f"check_ccp: is_ccp={is_ccp} min_eig={min_eig:.3e} scale={scale:.3e}")
    return verdict
