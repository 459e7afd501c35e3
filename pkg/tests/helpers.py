"""Small builders shared across test modules."""
import numpy as np

from scoopgp.data import ScoopRecord, TaskDataset
from scoopgp.model import Observation, ScoopAction


def random_action(rng, extent=(0.9, 0.6)) -> ScoopAction:
    return ScoopAction(
        x=float(rng.uniform(0.1, extent[0] - 0.1)),
        y=float(rng.uniform(0.1, extent[1] - 0.1)),
        yaw=int(rng.integers(8)),
        depth=float(rng.uniform(0.03, 0.08)),
        stiffness=int(rng.integers(2)),
    )


def make_task(
    task_id: str,
    n: int,
    seed: int,
    channels: int = 2,
    h: int = 4,
    w: int = 4,
    reward_shift: float = 0.0,
) -> TaskDataset:
    rng = np.random.default_rng(seed)
    records = []
    for _ in range(n):
        patch = rng.uniform(0.0, 1.0, size=(channels, h, w))
        patch[-1] = rng.uniform(0.0, 0.2, size=(h, w))
        records.append(
            ScoopRecord(
                obs=Observation(patch),
                action=random_action(rng),
                reward=float(rng.uniform(0.0, 30.0)) + reward_shift,
            )
        )
    return TaskDataset(task_id, records)
