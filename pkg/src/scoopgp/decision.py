"""Action selection and episodic rollouts.

A policy scores a discrete candidate set with the model posterior
(greedy uses the mean, UCB adds a multiple of the standard deviation)
and picks the argmax, breaking ties toward the lowest candidate index.
Episodes loop observe / select / execute until the reward threshold is
met or the attempt budget runs out; the growing history is the support
set handed to the model at each step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import TaskDataset
from .model import DEPTH_MAX, DEPTH_MIN, N_YAW, Observation, ScoopAction
from .terrain import TerrainTask, execute_scoop, feasible, render_patches


@dataclass(frozen=True)
class ActionGrid:
    """Uniform grid over action parameters; depths sit at bin midpoints."""

    nx: int = 8
    ny: int = 6
    n_yaw: int = N_YAW
    nd: int = 2
    n_stiffness: int = 2
    # close enough to the tray wall that outward-facing border scoops
    # fail the feasibility predicate and exercise action masking
    margin: float = 0.05

    @classmethod
    def paper_scale(cls) -> "ActionGrid":
        return cls(nx=15, ny=12, nd=4)

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.n_yaw * self.nd * self.n_stiffness

    def depths(self) -> np.ndarray:
        step = (DEPTH_MAX - DEPTH_MIN) / self.nd
        return DEPTH_MIN + (np.arange(self.nd) + 0.5) * step

    def enumerate(self, extent: tuple[float, float]) -> list[ScoopAction]:
        xs = np.linspace(self.margin, extent[0] - self.margin, self.nx)
        ys = np.linspace(self.margin, extent[1] - self.margin, self.ny)
        depths = self.depths()
        actions = []
        for x in xs:
            for y in ys:
                for yaw in range(self.n_yaw):
                    for d in depths:
                        for s in range(self.n_stiffness):
                            actions.append(ScoopAction(float(x), float(y), yaw, float(d), s))
        return actions

    def to_dict(self) -> dict:
        return {
            "nx": self.nx, "ny": self.ny, "n_yaw": self.n_yaw,
            "nd": self.nd, "n_stiffness": self.n_stiffness, "margin": self.margin,
        }


@dataclass(frozen=True)
class Policy:
    kind: str  # "ucb" or "greedy"
    gamma: float = 0.0

    @classmethod
    def ucb(cls, gamma: float = 2.0) -> "Policy":
        if gamma < 0:
            raise ValueError("gamma must be nonnegative")
        return cls("ucb", gamma)

    @classmethod
    def greedy(cls) -> "Policy":
        return cls("greedy", 0.0)

    def scores(self, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
        if self.kind == "greedy":
            return means
        if self.kind == "ucb":
            return means + self.gamma * np.sqrt(variances)
        raise ValueError(f"unknown policy kind {self.kind!r}")

    def label(self) -> str:
        return "greedy" if self.kind == "greedy" else f"ucb({self.gamma:g})"


def ucb_score(model, obs: Observation, act: ScoopAction, support, gamma: float) -> float:
    """Posterior mean plus gamma standard deviations."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    post = model.predict(obs, act, support)
    return post.mean + gamma * math.sqrt(post.variance)


def select_action(
    model, candidates, support, policy: Policy, excluded=frozenset()
) -> tuple[int, float]:
    """Argmax of the policy score over non-excluded (obs, action) pairs.

    Returns (candidate index, score); ties go to the lowest index.
    """
    allowed = [i for i in range(len(candidates)) if i not in excluded]
    if not allowed:
        raise ValueError("no candidates left after exclusion")
    means, variances = model.predict_batch([candidates[i] for i in allowed], support)
    scores = policy.scores(means, variances)
    best = int(np.argmax(scores))
    return allowed[best], float(scores[best])


@dataclass
class EpisodeStep:
    index: int
    action: ScoopAction
    reward: float
    score: float

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "action": self.action.to_dict(),
            "reward": self.reward,
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeStep":
        return cls(d["index"], ScoopAction.from_dict(d["action"]), d["reward"], d["score"])


@dataclass
class EpisodeTrace:
    """Ordered record of one deployment trial."""

    task_id: str
    policy: str
    threshold: float
    max_attempts: int
    steps: list[EpisodeStep] = field(default_factory=list)
    success: bool = False
    fault: str | None = None
    meta: dict = field(default_factory=dict)

    @property
    def attempts(self) -> int:
        return len(self.steps)

    def validate(self) -> None:
        if self.success:
            if not self.steps or self.steps[-1].reward < self.threshold:
                raise ValueError("success flag without a final reward above threshold")
            for s in self.steps[:-1]:
                if s.reward >= self.threshold:
                    raise ValueError("non-final step already met the threshold")

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "policy": self.policy,
            "threshold": self.threshold,
            "max_attempts": self.max_attempts,
            "success": self.success,
            "attempts": self.attempts,
            "fault": self.fault,
            "meta": self.meta,
            "steps": [s.to_dict() for s in self.steps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeTrace":
        return cls(
            task_id=d["task_id"],
            policy=d["policy"],
            threshold=d["threshold"],
            max_attempts=d["max_attempts"],
            steps=[EpisodeStep.from_dict(s) for s in d["steps"]],
            success=d["success"],
            fault=d["fault"],
            meta=d.get("meta", {}),
        )


class ReplayEnvironment:
    """Replays a task's recorded scoops; each record is selectable once
    and pays the reward observed in the dataset."""

    def __init__(self, dataset: TaskDataset):
        self.task_id = dataset.task_id
        self._records = dataset.records
        self._used: set[int] = set()

    def candidates(self) -> list[tuple[Observation, ScoopAction]]:
        return [(r.obs, r.action) for r in self._records]

    def excluded(self) -> set[int]:
        return set(self._used)

    def execute(self, index: int) -> float:
        if index in self._used:
            raise RuntimeError(f"record {index} already replayed")
        self._used.add(index)
        return self._records[index].reward


class LiveEnvironment:
    """Runs scoops on a mutating terrain copy; the observation patches
    are re-rendered from the current terrain at every step."""

    def __init__(self, task: TerrainTask, grid: ActionGrid, seed: int):
        self.task_id = task.task_id
        self.terrain = task.terrain.copy()
        self.actions = grid.enumerate(self.terrain.extent)
        self._infeasible = {
            i for i, a in enumerate(self.actions) if not feasible(self.terrain, a)
        }
        self.rng = np.random.default_rng(seed)

    def candidates(self) -> list[tuple[Observation, ScoopAction]]:
        patches = render_patches(self.terrain, self.actions, self.rng)
        return [(Observation(p), a) for p, a in zip(patches, self.actions)]

    def excluded(self) -> set[int]:
        return set(self._infeasible)

    def execute(self, index: int) -> float:
        if index in self._infeasible:
            raise RuntimeError(f"action {index} is kinematically infeasible")
        return execute_scoop(self.terrain, self.actions[index], self.rng)


def run_episode(
    model, env, threshold: float, max_attempts: int, policy: Policy
) -> EpisodeTrace:
    """Observe, select, execute until a reward reaches the threshold.

    The support set at attempt n holds exactly the n-1 earlier records.
    Environment faults abort the episode and leave a partial trace.
    """
    trace = EpisodeTrace(
        task_id=env.task_id,
        policy=policy.label(),
        threshold=threshold,
        max_attempts=max_attempts,
    )
    support: list[tuple[Observation, ScoopAction, float]] = []
    for _ in range(max_attempts):
        try:
            cands = env.candidates()
        except Exception as e:  # noqa: BLE001 - env fault ends the trial
            trace.fault = f"{type(e).__name__}: {e}"
            break
        excluded = env.excluded()
        if len(excluded) >= len(cands):
            break
        index, score = select_action(model, cands, support, policy, excluded)
        obs, act = cands[index]
        try:
            reward = env.execute(index)
        except Exception as e:  # noqa: BLE001
            trace.fault = f"{type(e).__name__}: {e}"
            break
        trace.steps.append(EpisodeStep(index=index, action=act, reward=reward, score=score))
        if reward >= threshold:
            trace.success = True
            break
        support.append((obs, act, reward))
    return trace
