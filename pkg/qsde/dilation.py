"""
Numerical Kolmogorov dilation of a conditionally completely positive germ.

The dissipation matrix is factorized as Δ = C†C with C = Λ^½ U† over the
eigenvalues above the cutoff; the columns of C are the vectors k(X)e_p and
k_m(X)e_p, so H° = C^r and the representation j is read off by a
least-squares solve of j(B)k(Z) = k(BZ) − k(B)Z, j(B)k_m(Z) = k_m(BZ).
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DilationError, DimensionError, ModelError
from .germ import Germ, check_ccp, dissipation_matrix
from .utils.linalg_utils import as_matrix, dag, matrix_units, spanning_test_ops

RANK_CUTOFF = 1e-12
RESIDUAL_GATE = 1e-6


@dataclass(frozen=True, eq=False)
class DilationData:
    n: int
    d: int
    rank: int
    k_units: np.ndarray      # (n, n, r, n): k(E_ab)
    km_units: np.ndarray     # (d, n, n, r, n): k_m(E_ab)
    j_units: np.ndarray      # (n, n, r, r): j(E_ab)
    L_circ: np.ndarray       # (d, r, n)
    L_minus: np.ndarray      # (d, n, n)
    D: np.ndarray
    G: np.ndarray
    G_inv: np.ndarray
    Lop: np.ndarray
    germ: Germ
    lstsq_residual: float

    def j(self, B) -> np.ndarray:
        return np.einsum("ab,abrs->rs", as_matrix(B, self.n, "B"), self.j_units)

    def k(self, B) -> np.ndarray:
        return np.einsum("ab,abrp->rp", as_matrix(B, self.n, "B"), self.k_units)

    def k_bullet(self, m: int, B) -> np.ndarray:
        return np.einsum("ab,abrp->rp", as_matrix(B, self.n, "B"), self.km_units[m - 1])

    def k_star(self, B) -> np.ndarray:
        """k*(B) = k(B†)†"""
        return dag(self.k(dag(as_matrix(B, self.n, "B"))))

    def l(self, B) -> np.ndarray:
        """l(B) = γ(B) − DB"""
        B = as_matrix(B, self.n, "B")
        return self.germ.gamma(B) - self.D @ B

    def jmath(self, B) -> np.ndarray:
        """The ♭-representation on H ⊕ H° ⊕ H with block pattern [[B, k*, l], [0, j, k], [0, 0, B]]."""
        B = as_matrix(B, self.n, "B")
        n, r = self.n, self.rank
        out = np.zeros((2 * n + r, 2 * n + r), dtype=complex)
        out[:n, :n] = B
        out[:n, n:n + r] = self.k_star(B)
        out[:n, n + r:] = self.l(B)
        out[n:n + r, n:n + r] = self.j(B)
        out[n:n + r, n + r:] = self.k(B)
        out[n + r:, n + r:] = B
        return out

    def flat(self, A: np.ndarray) -> np.ndarray:
        return pseudo_adjoint(A, self.G)

    def indefinite_norm(self, xi) -> float:
        """(ξ|ξ) = 2 Re(ξ⁻|ξ⁺) + ||ξ°||² + <ξ⁺|Dξ⁺>"""
        xi = np.asarray(xi, dtype=complex)
        return float(np.real(np.vdot(xi, self.G @ xi)))

    def summary(self) -> dict:
        return {"rank": self.rank, "n": self.n, "d": self.d, "lstsq_residual": self.lstsq_residual}


def metric_tensors(D: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    """G = [[0,0,I],[0,I°,0],[I,0,D]] and its inverse [[-D,0,I],[0,I°,0],[I,0,0]]."""
    n = D.shape[0]
    I = np.eye(n, dtype=complex)
    G = np.zeros((2 * n + r, 2 * n + r), dtype=complex)
    G_inv = np.zeros_like(G)
    G[:n, n + r:] = I
    G[n:n + r, n:n + r] = np.eye(r)
    G[n + r:, :n] = I
    G[n + r:, n + r:] = D
    G_inv[:n, :n] = -D
    G_inv[:n, n + r:] = I
    G_inv[n:n + r, n:n + r] = np.eye(r)
    G_inv[n + r:, :n] = I
    return G, G_inv


def pseudo_adjoint(A, G) -> np.ndarray:
    """A♭ = G⁻¹A†G"""
    A = np.asarray(A, dtype=complex)
    G = np.asarray(G, dtype=complex)
    try:
        return linalg.solve(G, dag(A) @ G)
    except linalg.LinAlgError as e:
        raise ModelError(f"metric is singular: {e}")


def _unit_positions(test_ops, n: int) -> list[int]:
    positions = []
    for E in matrix_units(n):
        hits = [i for i, X in enumerate(test_ops) if np.array_equal(np.asarray(X, dtype=complex), E)]
        if not hits:
            raise DimensionError("dilation needs every matrix unit of M_n among the test operators")
        positions.append(hits[0])
    return positions


def kolmogorov_dilation(germ: Germ, test_ops=None, cutoff: float = RANK_CUTOFF,
                        gate: float = RESIDUAL_GATE) -> DilationData:
    n, d = germ.n, germ.d
    ops = spanning_test_ops(n) if test_ops is None else list(test_ops)
    units = _unit_positions(ops, n)
    verdict = check_ccp(germ, ops)
    if not verdict.is_ccp:
        raise DilationError(f"germ is not conditionally completely positive (min_eig={verdict.min_eig:.3e})")

    delta = dissipation_matrix(germ, ops)
    w, U = linalg.eigh(0.5 * (delta.matrix + dag(delta.matrix)))
    top = float(w[-1]) if w.size else 0.0
    keep = w > cutoff * top if top > 0 else np.zeros_like(w, dtype=bool)
    w, U = w[keep], U[:, keep]
    r = int(w.size)
    logging.info(f"kolmogorov_dilation: rank {r} of {delta.size} (cutoff {cutoff:g} x {top:.3e})")

    C = np.sqrt(w)[:, None] * dag(U)
    C_pinv = U / np.sqrt(w)[None, :]
    blocks = C.reshape(r, len(ops), 1 + d, n)
    k_units = np.stack([blocks[:, units[a * n + b], 0, :] for a in range(n) for b in range(n)]).reshape(n, n, r, n)
    km_units = np.stack([
        np.stack([blocks[:, units[a * n + b], m, :] for a in range(n) for b in range(n)]).reshape(n, n, r, n)
        for m in range(1, d + 1)
    ]) if d else np.zeros((0, n, n, r, n), dtype=complex)

    def k(B):
        return np.einsum("ab,abrp->rp", B, k_units)

    def km(m, B):
        return np.einsum("ab,abrp->rp", B, km_units[m])

    scale = float(np.sqrt(top)) if top > 0 else 1.0
    j_units = np.zeros((n, n, r, r), dtype=complex)
    worst = 0.0
    for a, E in enumerate(matrix_units(n)):
        target = np.zeros((r, len(ops), 1 + d, n), dtype=complex)
        kE = k(E)
        for z, Z in enumerate(ops):
            EZ = E @ Z
            target[:, z, 0, :] = k(EZ) - kE @ Z
            for m in range(d):
                target[:, z, m + 1, :] = km(m, EZ)
        target = target.reshape(r, -1)
        jE = target @ C_pinv
        residual = float(np.linalg.norm(jE @ C - target)) if r else 0.0
        worst = max(worst, residual)
        j_units[a // n, a % n] = jE
    if worst > gate * scale:
        raise DilationError(f"representation least-squares residual {worst:.3e} exceeds {gate:g} x scale {scale:.3e}")

    I = np.eye(n, dtype=complex)
    L_circ = np.stack([km(m, I) for m in range(d)]) if d else np.zeros((0, r, n), dtype=complex)
    L_minus = np.stack([germ.gamma_dn(m, I) for m in range(1, d + 1)]) if d else np.zeros((0, n, n), dtype=complex)
    D = germ.gamma(I)
    G, G_inv = metric_tensors(D, r)

    Lop = np.zeros((2 * n + r, n + d * n), dtype=complex)
    Lop[n + r:, :n] = I
    for m in range(d):
        cols = slice(n + m * n, n + (m + 1) * n)
        Lop[:n, cols] = L_minus[m]
        Lop[n:n + r, cols] = L_circ[m]

    return DilationData(n, d, r, k_units, km_units, j_units, L_circ, L_minus, D, G, G_inv, Lop, germ, worst)


def verify_dilation(dd: DilationData, germ: Germ, B, tol: float = 1e-8) -> float:
    """
    max(||L♭ ȷ(B) L − 𝜸(B)||, ||ȷ(B†) − G⁻¹ȷ(B)†G||), with L♭ = L†G.
    """
    B = as_matrix(B, dd.n, "B")
    identity = np.linalg.norm(dag(dd.Lop) @ dd.G @ dd.jmath(B) @ dd.Lop - germ.full(B))
    flat_rep = np.linalg.norm(dd.jmath(dag(B)) - dd.G_inv @ dag(dd.jmath(B)) @ dd.G)
    residual = float(max(identity, flat_rep))
    if residual > tol:
        logging.warning(f"verify_dilation: residual {residual:.3e} above tolerance {tol:g}")
    return residual


def dilation_identity_residuals(dd: DilationData, X, B) -> dict:
    """Residuals of the representation, derivation, channel and coboundary identities on the pair (X, B)."""
    X = as_matrix(X, dd.n, "X")
    B = as_matrix(B, dd.n, "B")
    Bd = dag(B)
    I = np.eye(dd.n)
    return {
        "unital": float(np.linalg.norm(dd.j(I) - np.eye(dd.rank))),
        "adjoint": float(np.linalg.norm(dd.j(Bd) - dag(dd.j(B)))),
        "multiplicative": float(np.linalg.norm(dd.j(X @ B) - dd.j(X) @ dd.j(B))),
        "derivation": float(np.linalg.norm(dd.k(Bd @ B) - (dag(dd.j(B)) @ dd.k(B) + dd.k(Bd) @ B))),
        "channel_module": max((float(np.linalg.norm(dd.k_bullet(m, X @ B) - dd.j(X) @ dd.k_bullet(m, B)))
                               for m in range(1, dd.d + 1)), default=0.0),
        "coboundary": float(np.linalg.norm(
            dd.k_star(Bd) @ dd.k(B) - (dd.l(Bd @ B) - Bd @ dd.l(B) - dd.l(Bd) @ B))),
        "flat_multiplicative": float(np.linalg.norm(
            dd.jmath(dag(X) @ B) - dd.flat(dd.jmath(X)) @ dd.jmath(B))),
    }
