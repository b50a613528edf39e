"""
Monte Carlo unravelings of the linear filtering equations

    diffusive:  dV + KV dt = Σ_c L_c V dQ_c
    jump:       dV + KV dt = Σ_c L_c V dP_c,   L_c = J_c − I,  dP = dN − dt

propagated in the linear (unnormalized) picture. Trajectories of an
ensemble are advanced in fixed-size batches; every batched contraction is an
elementwise loop (numpy.einsum), so each path only depends on its own
random stream.
"""
import logging
import multiprocessing
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from tqdm import tqdm

from . import settings
from .errors import DimensionError, ModelError, NumericalAbort
from .germ import StructuralModel
from .utils.linalg_utils import as_matrix, as_vector, dag, expm, is_psd
from .utils.rng_utils import TrajectoryStream, check_seed

FILTER_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DiffusiveChannel:
    L: np.ndarray
    kind = "diffusive"

    def __post_init__(self):
        object.__setattr__(self, "L", as_matrix(self.L, name="L"))


@dataclass(frozen=True, eq=False)
class JumpChannel:
    J: np.ndarray
    kind = "jump"

    def __post_init__(self):
        object.__setattr__(self, "J", as_matrix(self.J, name="J"))

    @property
    def L(self) -> np.ndarray:
        return self.J - np.eye(self.J.shape[0])


def _close(a: np.ndarray, b: np.ndarray, tol: float = FILTER_TOL) -> bool:
    scale = max(1.0, np.linalg.norm(a), np.linalg.norm(b))
    return bool(np.linalg.norm(a - b) <= tol * scale)


@dataclass(frozen=True, eq=False)
class TrajectoryModel:
    K: np.ndarray
    channels: tuple = field(default=())

    def __post_init__(self):
        K = as_matrix(self.K, name="K")
        n = K.shape[0]
        channels = tuple(self.channels)
        for c in channels:
            if not isinstance(c, (DiffusiveChannel, JumpChannel)):
                raise ModelError(f"unknown channel record {type(c).__name__}")
            if c.L.shape != (n, n):
                raise DimensionError(f"channel operator must be {n}x{n}, got {c.L.shape}")
        kinds = {c.kind for c in channels}
        if len(kinds) > 1:
            raise ModelError("diffusive and jump channels cannot be mixed in one model")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "channels", channels)

    @property
    def n(self) -> int:
        return self.K.shape[0]

    @property
    def kind(self) -> str:
        return self.channels[0].kind if self.channels else "diffusive"

    @property
    def Ls(self) -> np.ndarray:
        return np.stack([c.L for c in self.channels]) if self.channels else np.zeros((0, self.n, self.n), complex)

    def _LdL(self) -> np.ndarray:
        return np.einsum("cba,cbd->ad", self.Ls.conj(), self.Ls)

    @property
    def is_filtering(self) -> bool:
        """K + K† = Σ L†L"""
        return _close(self.K + dag(self.K), self._LdL())

    @property
    def is_subfiltering(self) -> bool:
        """K + K† − Σ L†L ≥ 0, i.e. the mean norm cannot grow."""
        return is_psd(self.K + dag(self.K) - self._LdL(), atol=FILTER_TOL)

    is_submartingale = is_subfiltering

    @property
    def is_unitary_diffusive(self) -> bool:
        return (self.kind == "diffusive" and self.is_filtering
                and all(_close(dag(c.L), -c.L) for c in self.channels))

    @property
    def is_unitary_jump(self) -> bool:
        return (self.kind == "jump" and bool(self.channels) and self.is_filtering
                and all(_close(dag(c.J) @ c.J, np.eye(self.n)) for c in self.channels))

    def to_structural_model(self) -> StructuralModel:
        """
        The averaged structural model: per channel the Kraus operator is the
        creation coefficient L₊ (L for diffusive, iL for jump), the exchange
        coefficient is J (I for diffusive) and K_n = K⁻ (−L, resp. iL).
        """
        n = self.n
        I = np.eye(n, dtype=complex)
        kraus, exch, kminus = [], [], []
        for c in self.channels:
            if c.kind == "diffusive":
                kraus.append(c.L)
                exch.append(I)
                kminus.append(-c.L)
            else:
                kraus.append(1j * c.L)
                exch.append(c.J)
                kminus.append(1j * c.L)
        d = len(self.channels)
        Ln = np.zeros((d, d, n, n), dtype=complex)
        for m in range(d):
            Ln[m, m] = exch[m]
        H = (self.K - dag(self.K)) / 2j
        H = 0.5 * (H + dag(H))
        D = self._LdL() - (self.K + dag(self.K))
        D = 0.5 * (D + dag(D))
        try:
            return StructuralModel(H=H, L=kraus if d else [], Ln=Ln, Kn=kminus if d else None, D=D)
        except ModelError as e:
            raise ModelError(f"trajectory model is not sub-filtering, so it has no averaged CP semigroup: {e}")


def from_general_model(J, L_plus, K_minus, K, kind: str) -> TrajectoryModel:
    """
    Reduce the single-channel quantum equation
    dV + KV dt + K⁻V dΛ₋ = (J − I)V dΛ + L₊V dΛ⁺ to a classical unraveling.
    """
    K = as_matrix(K, name="K")
    n = K.shape[0]
    J = as_matrix(J, n, "J")
    L_plus = as_matrix(L_plus, n, "L_plus")
    K_minus = as_matrix(K_minus, n, "K_minus")
    I = np.eye(n, dtype=complex)
    if kind == "diffusive":
        if not _close(J, I):
            raise ModelError("diffusive reduction requires J = I")
        if not _close(L_plus, -K_minus):
            raise ModelError("diffusive reduction requires L_plus = -K_minus")
        return TrajectoryModel(K, (DiffusiveChannel(L_plus),))
    if kind == "jump":
        L = J - I
        if not _close(L_plus, 1j * L):
            raise ModelError("jump reduction requires L_plus = i(J - I)")
        if not _close(K_minus, 1j * L):
            raise ModelError("jump reduction requires K_minus = i(J - I)")
        return TrajectoryModel(K, (JumpChannel(J),))
    raise ModelError(f"kind must be 'diffusive' or 'jump', got {kind!r}")


def check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise DimensionError("grid needs at least two time points")
    if grid[0] != 0.0:
        raise DimensionError(f"grid must start at 0, got {grid[0]}")
    if np.any(np.diff(grid) <= 0):
        raise DimensionError("grid must be strictly increasing")
    return grid


def uniform_grid(dt: float, tmax: float) -> np.ndarray:
    if dt <= 0 or tmax < dt:
        raise DimensionError(f"need dt > 0 and tmax >= dt, got dt={dt}, tmax={tmax}")
    steps = int(round(tmax / dt))
    return np.linspace(0.0, steps * dt, steps + 1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    grid: np.ndarray
    propagators: np.ndarray          # (M+1, n, n)
    noise_record: tuple              # per channel: Wiener increments or jump times
    seed_info: tuple | None

    def states(self, psi0) -> np.ndarray:
        psi0 = as_vector(psi0, self.propagators.shape[1], "psi0")
        return self.propagators @ psi0

    def weights(self, psi0) -> np.ndarray:
        """||V(t) ψ₀||²"""
        return np.sum(np.abs(self.states(psi0)) ** 2, axis=-1)

    def normalized_states(self, psi0) -> np.ndarray:
        psi = self.states(psi0)
        norms = np.linalg.norm(psi, axis=-1, keepdims=True)
        return np.divide(psi, norms, out=np.zeros_like(psi), where=norms > 0)


def _check_finite(X: np.ndarray, step: int, offset: int | None) -> None:
    bad = ~np.isfinite(X).reshape(X.shape[0], -1).all(axis=1)
    if bad.any():
        b = int(np.argmax(bad))
        raise NumericalAbort("non-finite propagator", step=step,
                             trajectory=None if offset is None else offset + b)


def _propagate_diffusive(model: TrajectoryModel, grid: np.ndarray, increments: np.ndarray,
                         X: np.ndarray, observe, offset: int | None = None) -> None:
    """increments: (B, M, C) Wiener increments; X: (B, n, p) initial payloads."""
    n = model.n
    Ls = model.Ls
    observe(0, X)
    for j, dt in enumerate(np.diff(grid)):
        step = np.eye(n, dtype=complex) - model.K * dt
        S = step[None, :, :] + np.einsum("bc,cij->bij", increments[:, j, :], Ls)
        X = np.einsum("bij,bjk->bik", S, X)
        _check_finite(X, j + 1, offset)
        observe(j + 1, X)


class _FlowCache:
    """exp(−A τ) for the inter-jump drift A = K + Σ_c L_c."""

    def __init__(self, model: TrajectoryModel):
        self.A = model.K + model.Ls.sum(axis=0)
        self._cache = {}

    def __call__(self, tau: float) -> np.ndarray:
        if tau not in self._cache:
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[tau] = expm(-self.A * tau)
        return self._cache[tau]


def _propagate_jump(model: TrajectoryModel, grid: np.ndarray, jump_times: Sequence[Sequence[np.ndarray]],
                    X: np.ndarray, observe, offset: int | None = None) -> None:
    """jump_times[b][c]: sorted arrival times of channel c for batch member b."""
    flow = _FlowCache(model)
    Js = [c.J for c in model.channels]
    events = {}
    for b, per_channel in enumerate(jump_times):
        for c, times in enumerate(per_channel):
            for tau, j in zip(times, np.searchsorted(grid, times, side="right") - 1):
                events.setdefault(int(j), {}).setdefault(b, []).append((float(tau), c))
    observe(0, X)
    for j in range(grid.size - 1):
        t0, t1 = grid[j], grid[j + 1]
        hit = events.get(j, {})
        quiet = np.array([b for b in range(X.shape[0]) if b not in hit], dtype=int)
        if quiet.size:
            X[quiet] = np.einsum("ij,bjk->bik", flow(t1 - t0), X[quiet])
        for b, evs in hit.items():
            x, last = X[b], t0
            for tau, c in sorted(evs):
                x = Js[c] @ (flow(tau - last) @ x)
                last = tau
            X[b] = flow(t1 - last) @ x
        _check_finite(X, j + 1, offset)
        observe(j + 1, X)


def _wiener_increments(stream: TrajectoryStream, grid: np.ndarray, channels: int) -> np.ndarray:
    sq = np.sqrt(np.diff(grid))
    if channels == 0:
        return np.zeros((grid.size - 1, 0))
    return np.stack([stream.channel(c).standard_normal(grid.size - 1) * sq for c in range(channels)], axis=1)


def _arrival_times(stream: TrajectoryStream, tmax: float, channels: int) -> list[np.ndarray]:
    """Unit-rate Poisson arrivals on [0, tmax) for every channel."""
    out = []
    for c in range(channels):
        rng = stream.channel(c)
        times = np.empty(0)
        last = 0.0
        block = int(tmax + 5.0 * np.sqrt(tmax) + 10)
        while last < tmax:
            draws = last + np.cumsum(rng.exponential(1.0, size=block))
            times = np.concatenate((times, draws))
            last = times[-1]
        out.append(times[times < tmax])
    return out


def _record_all(store: np.ndarray):
    def observe(j, X):
        store[j] = X[0]
    return observe


def simulate_diffusive(model: TrajectoryModel, grid, stream: TrajectoryStream | None = None,
                       increments=None) -> Trajectory:
    if model.kind != "diffusive":
        raise ModelError("simulate_diffusive needs diffusive channels")
    grid = check_grid(grid)
    C = len(model.channels)
    if increments is None:
        if stream is None:
            raise ValueError("either a random stream or explicit increments is required")
        increments = _wiener_increments(stream, grid, C)
    increments = np.asarray(increments, dtype=float).reshape(grid.size - 1, C)
    store = np.zeros((grid.size, model.n, model.n), dtype=complex)
    X = np.eye(model.n, dtype=complex)[None]
    _propagate_diffusive(model, grid, increments[None], X, _record_all(store),
                         None if stream is None else stream.trajectory)
    return Trajectory(grid, store, tuple(increments[:, c] for c in range(C)),
                      None if stream is None else stream.seed_info)


def simulate_jump(model: TrajectoryModel, grid, stream: TrajectoryStream, jump_times=None) -> Trajectory:
    if model.kind != "jump" and model.channels:
        raise ModelError("simulate_jump needs jump channels")
    grid = check_grid(grid)
    C = len(model.channels)
    if jump_times is None:
        jump_times = _arrival_times(stream, grid[-1], C)
    jump_times = [np.sort(np.asarray(t, dtype=float)) for t in jump_times]
    store = np.zeros((grid.size, model.n, model.n), dtype=complex)
    X = np.eye(model.n, dtype=complex)[None].copy()
    _propagate_jump(model, grid, [jump_times], X, _record_all(store),
                    None if stream is None else stream.trajectory)
    return Trajectory(grid, store, tuple(jump_times), None if stream is None else stream.seed_info)


def simulate(model: TrajectoryModel, grid, stream: TrajectoryStream) -> Trajectory:
    if model.kind == "jump":
        return simulate_jump(model, grid, stream)
    return simulate_diffusive(model, grid, stream)


def flow_value(traj: Trajectory, B, psi0) -> np.ndarray:
    """<ψ₀|V(t)† B V(t)|ψ₀> on the trajectory grid."""
    n = traj.propagators.shape[1]
    B = as_matrix(B, n, "B")
    psi = traj.states(psi0)
    return np.einsum("ta,ab,tb->t", psi.conj(), B, psi)


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    grid: np.ndarray
    names: tuple
    means: np.ndarray          # (M+1, O) complex
    stderr: np.ndarray         # (M+1, O)
    norm_mean: np.ndarray      # (M+1,)
    norm_stderr: np.ndarray    # (M+1,)
    n_traj: int
    master_seed: int

    def mean_of(self, name: str) -> np.ndarray:
        return self.means[:, self.names.index(name)]

    def stderr_of(self, name: str) -> np.ndarray:
        return self.stderr[:, self.names.index(name)]

    def header(self) -> list[str]:
        cols = ["t"]
        for name in self.names:
            cols += [f"{name}_mean_re", f"{name}_mean_im", f"{name}_stderr"]
        return cols + ["norm_mean", "norm_stderr"]

    def to_rows(self) -> list[list[float]]:
        rows = []
        for j, t in enumerate(self.grid):
            row = [float(t)]
            for o in range(len(self.names)):
                row += [float(self.means[j, o].real), float(self.means[j, o].imag), float(self.stderr[j, o])]
            rows.append(row + [float(self.norm_mean[j]), float(self.norm_stderr[j])])
        return rows


@dataclass(frozen=True)
class _ChunkStats:
    count: int
    mean: np.ndarray   # (M+1, O+1) complex, last column is the weight
    m2: np.ndarray     # (M+1, O+1) sum of |x − mean|²


def _simulate_chunk(task) -> _ChunkStats:
    model, grid, psi0, obs, master_seed, start, stop = task
    size = stop - start
    values = np.zeros((size, grid.size, obs.shape[0] + 1), dtype=complex)

    def observe(j, X):
        psi = X[:, :, 0]
        values[:, j, :-1] = np.einsum("ba,oac,bc->bo", psi.conj(), obs, psi)
        values[:, j, -1] = np.sum(np.abs(psi) ** 2, axis=1)

    X = np.repeat(psi0[None, :, None], size, axis=0)
    streams = [TrajectoryStream(master_seed, k) for k in range(start, stop)]
    C = len(model.channels)
    if model.kind == "jump":
        times = [_arrival_times(s, grid[-1], C) for s in streams]
        _propagate_jump(model, grid, times, X, observe, start)
    else:
        incs = np.stack([_wiener_increments(s, grid, C) for s in streams])
        _propagate_diffusive(model, grid, incs, X, observe, start)
    mean = values.mean(axis=0)
    m2 = np.sum(np.abs(values - mean[None]) ** 2, axis=0)
    return _ChunkStats(size, mean, m2)


def _merge(a: _ChunkStats | None, b: _ChunkStats) -> _ChunkStats:
    if a is None:
        return b
    count = a.count + b.count
    delta = b.mean - a.mean
    mean = a.mean + delta * (b.count / count)
    m2 = a.m2 + b.m2 + np.abs(delta) ** 2 * (a.count * b.count / count)
    return _ChunkStats(count, mean, m2)


def ensemble(model: TrajectoryModel, observables: Mapping[str, np.ndarray], psi0, n_traj: int, grid,
             master_seed: int, workers: int | None = None, progress: bool = False) -> EnsembleResult:
    """
    Seeded ensemble means and standard errors of <ψ_t|B|ψ_t> and of ||ψ_t||².
    Chunks of settings.ENSEMBLE_CHUNK_SIZE trajectories are generated in
    parallel and reduced in trajectory-index order.
    """
    if n_traj < 1:
        raise ValueError(f"n_traj must be >= 1, got {n_traj}")
    master_seed = check_seed(master_seed)
    grid = check_grid(grid)
    n = model.n
    psi0 = as_vector(psi0, n, "psi0")
    names = tuple(observables)
    obs = np.stack([as_matrix(observables[k], n, k) for k in names]) if names else np.zeros((0, n, n), complex)
    size = settings.ENSEMBLE_CHUNK_SIZE
    tasks = [(model, grid, psi0, obs, master_seed, s, min(s + size, n_traj)) for s in range(0, n_traj, size)]
    workers = settings.worker_count() if workers is None else workers
    workers = max(1, min(workers, len(tasks)))
    logging.info(f"ensemble: {n_traj} {model.kind} trajectories, {grid.size - 1} steps, "
                 f"{len(tasks)} chunks on {workers} worker(s), seed {master_seed}")

    total = None
    try:
        if workers == 1:
            results = map(_simulate_chunk, tasks)
            total = _reduce(results, len(tasks), progress)
        else:
            with multiprocessing.Pool(processes=workers) as pool:
                total = _reduce(pool.imap(_simulate_chunk, tasks), len(tasks), progress)
    except NumericalAbort as e:
        logging.error(f"ensemble aborted: {e}", exc_info=True)
        raise

    scale = np.sqrt(total.m2 / (n_traj - 1)) / np.sqrt(n_traj) if n_traj > 1 else np.zeros(total.m2.shape)
    logging.info("ensemble: done")
    return EnsembleResult(
        grid=grid,
        names=names,
        means=total.mean[:, :-1],
        stderr=scale[:, :-1],
        norm_mean=total.mean[:, -1].real,
        norm_stderr=scale[:, -1],
        n_traj=n_traj,
        master_seed=master_seed,
    )


def _reduce(results, count: int, progress: bool) -> _ChunkStats:
    total = None
    for stats in tqdm(results, total=count, disable=not progress, desc="chunks", unit="chunk"):
        total = _merge(total, stats)
    return total
