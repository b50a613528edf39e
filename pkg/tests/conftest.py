import json

import numpy as np
import pytest

from qsde.germ import StructuralModel, build_germ
from qsde.unraveling import DiffusiveChannel, JumpChannel, TrajectoryModel

# basis order (g, e): σ₋ = |g><e|
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.conj().T
EXCITED = SIGMA_PLUS @ SIGMA_MINUS
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Z = np.diag([1.0, -1.0]).astype(complex)
I2 = np.eye(2, dtype=complex)
PSI_EXCITED = np.array([0, 1], dtype=complex)


def random_matrix(rng, n, scale=1.0):
    return scale * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))


def random_hermitian(rng, n, scale=1.0):
    a = random_matrix(rng, n, scale)
    return 0.5 * (a + a.conj().T)


def random_structural_model(rng, n, d, kraus, with_D=False):
    L = [random_matrix(rng, n, 0.5) for _ in range(kraus)]
    Ln = [[random_matrix(rng, n, 0.5) for _ in range(kraus)] for _ in range(d)]
    D = None
    if with_D:
        R = random_matrix(rng, n, 0.3)
        D = -(R @ R.conj().T)
    return StructuralModel(H=random_hermitian(rng, n), L=L, Ln=Ln, D=D)


def desk_models(seed=7, count=20):
    """Random Lindblad-structured models with n in {2, 3} and d, d' in {1, 2}."""
    rng = np.random.default_rng(seed)
    models = []
    for i in range(count):
        n = 2 + i % 2
        d = 1 + (i // 2) % 2
        kraus = 1 + (i // 4) % 2
        models.append(random_structural_model(rng, n, d, kraus, with_D=bool(i % 3 == 0)))
    return models


def complex_json(a):
    a = np.asarray(a, dtype=complex)
    if a.ndim == 0:
        return [float(a.real), float(a.imag)]
    return [complex_json(x) for x in a]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def damped_model():
    return StructuralModel(H=np.zeros((2, 2)), L=[SIGMA_MINUS], Ln=[[I2]])


@pytest.fixture
def damped_germ(damped_model):
    return build_germ(damped_model)


@pytest.fixture
def diffusive_damped():
    return TrajectoryModel(0.5 * EXCITED, (DiffusiveChannel(SIGMA_MINUS),))


@pytest.fixture
def jump_damped():
    return TrajectoryModel(0.5 * EXCITED, (JumpChannel(I2 + SIGMA_MINUS),))


@pytest.fixture
def write_config(tmp_path):
    def _write(payload, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(payload))
        return str(path)
    return _write


@pytest.fixture
def damped_structural_config():
    return {
        "model": {
            "type": "structural",
            "H": complex_json(np.zeros((2, 2))),
            "L": [complex_json(SIGMA_MINUS)],
            "Ln": [[complex_json(I2)]],
        },
        "simulation": {"dt": 0.01, "tmax": 1.0, "ntraj": 1, "seed": 1, "picard_iters": 5},
        "observables": {"excited": complex_json(EXCITED)},
        "psi0": complex_json(PSI_EXCITED),
    }


@pytest.fixture
def damped_trajectory_config():
    return {
        "model": {
            "type": "trajectory",
            "K": complex_json(0.5 * EXCITED),
            "channels": [{"kind": "jump", "op": complex_json(I2 + SIGMA_MINUS)}],
        },
        "simulation": {"dt": 0.01, "tmax": 1.0, "ntraj": 300, "seed": 42},
        "observables": {"excited": complex_json(EXCITED)},
        "psi0": complex_json(PSI_EXCITED),
    }
