"""
Seeded random streams for trajectory simulation.

Every (master seed, trajectory index, channel index) triple owns an
independent Philox counter-based generator. The three integers are hashed
by numpy's ``SeedSequence`` (``entropy=master_seed, spawn_key=(k, c)``), so
a trajectory draws the same numbers whichever worker generates it and in
whatever order.
"""
from dataclasses import dataclass

import numpy as np

MAX_SEED = 2**64 - 1


def check_seed(seed: int) -> int:
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool):
        raise ValueError(f"seed must be an integer, got {type(seed).__name__}")
    if not 0 <= int(seed) <= MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return int(seed)


def channel_generator(master_seed: int, trajectory: int, channel: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=check_seed(master_seed), spawn_key=(int(trajectory), int(channel)))
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class TrajectoryStream:
    master_seed: int
    trajectory: int = 0

    def __post_init__(self):
        check_seed(self.master_seed)
        if self.trajectory < 0:
            raise ValueError(f"trajectory index must be >= 0, got {self.trajectory}")

    def channel(self, c: int) -> np.random.Generator:
        return channel_generator(self.master_seed, self.trajectory, c)

    @property
    def seed_info(self) -> tuple[int, int]:
        return self.master_seed, self.trajectory
