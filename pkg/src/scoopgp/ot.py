"""Task-to-task distances and the reference-task median split.

Samples are compared with a composite cost over per-channel patch
histograms, the numeric action vector, and the reward, each scaled by a
dataset-wide normalization constant. Task distance is the debiased
entropic-transport divergence under that cost; splits partition tasks
around the median of a reference task's distance row.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import TaskDataset
from .model import Observation

DEFAULT_MAX_ITER = 500
DEFAULT_TOL = 1e-6
DEFAULT_EPS_SCALE = 0.05


class SplitError(ValueError):
    """A requested task split cannot be constructed."""


class SinkhornWarning(UserWarning):
    """Sinkhorn iterations hit max_iter before the marginal tolerance."""


@dataclass(frozen=True)
class SampleCostParams:
    """Normalization constants and histogram config for the sample cost.

    Computed once over the whole training database so distances are
    reproducible across runs.
    """

    c_image: float
    c_action: float
    c_reward: float
    histogram_bins: int = 32
    channel_ranges: tuple[tuple[float, float], ...] = ()

    @classmethod
    def from_tasks(cls, tasks: list[TaskDataset], bins: int = 32) -> "SampleCostParams":
        n_channels = tasks[0].records[0].obs.patch.shape[0]
        lo = np.full(n_channels, np.inf)
        hi = np.full(n_channels, -np.inf)
        for task in tasks:
            for rec in task.records:
                flat = rec.obs.patch.reshape(n_channels, -1)
                lo = np.minimum(lo, flat.min(axis=1))
                hi = np.maximum(hi, flat.max(axis=1))
        ranges = tuple((float(a), float(b if b > a else a + 1e-9)) for a, b in zip(lo, hi))
        partial = cls(1.0, 1.0, 1.0, histogram_bins=bins, channel_ranges=ranges)
        c_img = c_act = c_rew = 0.0
        for task in tasks:
            for rec in task.records:
                c_img = max(c_img, float(np.linalg.norm(histogram_feature(rec.obs, partial))))
                c_act = max(c_act, float(np.linalg.norm(rec.action.vector())))
                c_rew = max(c_rew, abs(float(rec.reward)))
        return cls(
            c_image=max(c_img, 1e-12),
            c_action=max(c_act, 1e-12),
            c_reward=max(c_rew, 1e-12),
            histogram_bins=bins,
            channel_ranges=ranges,
        )

    def to_dict(self) -> dict:
        return {
            "c_image": self.c_image,
            "c_action": self.c_action,
            "c_reward": self.c_reward,
            "histogram_bins": self.histogram_bins,
            "channel_ranges": [list(r) for r in self.channel_ranges],
        }


def histogram_feature(obs: Observation, params: SampleCostParams) -> np.ndarray:
    """Per-channel density histograms over fixed ranges, concatenated.

    Each channel's block sums to 1; values are clipped into the stored
    channel range so nothing falls outside the bins.
    """
    n_channels = obs.patch.shape[0]
    if len(params.channel_ranges) != n_channels:
        raise ValueError(
            f"params carry {len(params.channel_ranges)} channel ranges, patch has {n_channels}"
        )
    bins = params.histogram_bins
    parts = []
    for c in range(n_channels):
        lo, hi = params.channel_ranges[c]
        values = np.clip(obs.patch[c].ravel(), lo, hi)
        counts, _ = np.histogram(values, bins=bins, range=(lo, hi))
        parts.append(counts / values.size)
    return np.concatenate(parts)


def sample_cost(s1, s2, params: SampleCostParams) -> float:
    """Composite distance between two (obs, action, reward) samples."""
    o1, a1, r1 = s1
    o2, a2, r2 = s2
    d_img = float(
        np.linalg.norm(histogram_feature(o1, params) - histogram_feature(o2, params))
    )
    d_act = float(np.linalg.norm(a1.vector() - a2.vector()))
    d_rew = abs(float(r1) - float(r2))
    return float(
        np.sqrt(
            (d_img / params.c_image) ** 2
            + (d_act / params.c_action) ** 2
            + (d_rew / params.c_reward) ** 2
        )
    )


def _task_arrays(task: TaskDataset, params: SampleCostParams):
    H = np.stack([histogram_feature(r.obs, params) for r in task.records])
    A = np.stack([r.action.vector() for r in task.records])
    r = task.rewards
    return H, A, r


def _pairwise_l2(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(X * X, axis=1)[:, None]
        + np.sum(Y * Y, axis=1)[None, :]
        - 2.0 * (X @ Y.T)
    )
    return np.sqrt(np.maximum(d2, 0.0))


def cost_matrix_arrays(arrays_a, arrays_b, params: SampleCostParams) -> np.ndarray:
    Ha, Aa, ra = arrays_a
    Hb, Ab, rb = arrays_b
    d_img = _pairwise_l2(Ha, Hb) / params.c_image
    d_act = _pairwise_l2(Aa, Ab) / params.c_action
    d_rew = np.abs(ra[:, None] - rb[None, :]) / params.c_reward
    return np.sqrt(d_img**2 + d_act**2 + d_rew**2)


def cost_matrix(A: TaskDataset, B: TaskDataset, params: SampleCostParams) -> np.ndarray:
    return cost_matrix_arrays(_task_arrays(A, params), _task_arrays(B, params), params)


def _logsumexp(M: np.ndarray, axis: int) -> np.ndarray:
    m = M.max(axis=axis, keepdims=True)
    return np.squeeze(m + np.log(np.sum(np.exp(M - m), axis=axis, keepdims=True)), axis=axis)


def entropic_transport_cost(
    C: np.ndarray,
    eps: float,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> tuple[float, bool]:
    """<P, C> under the entropic-optimal plan, by log-domain Sinkhorn.

    Uniform marginals. Returns (cost, converged); iteration stops when
    the row-marginal violation drops below tol in the max norm. The
    matrix is canonicalized in orientation first, so transposed inputs
    produce bit-identical values (the OT value is transpose-invariant).
    """
    C = np.ascontiguousarray(C, dtype=np.float64)
    Ct = np.ascontiguousarray(C.T)
    if C.shape[0] > C.shape[1] or (
        C.shape[0] == C.shape[1] and C.tobytes() > Ct.tobytes()
    ):
        C = Ct
    n, m = C.shape
    eps = max(float(eps), 1e-12)
    log_mu = np.full(n, -np.log(n))
    log_nu = np.full(m, -np.log(m))
    f = np.zeros(n)
    g = np.zeros(m)
    converged = False
    for _ in range(max_iter):
        f = -eps * _logsumexp((g[None, :] - C) / eps + log_nu[None, :], axis=1)
        g = -eps * _logsumexp((f[:, None] - C) / eps + log_mu[:, None], axis=0)
        log_P = (f[:, None] + g[None, :] - C) / eps + log_mu[:, None] + log_nu[None, :]
        P = np.exp(log_P)
        if np.max(np.abs(P.sum(axis=1) - np.exp(log_mu))) < tol:
            converged = True
            break
    else:
        log_P = (f[:, None] + g[None, :] - C) / eps + log_mu[:, None] + log_nu[None, :]
        P = np.exp(log_P)
    return float(np.sum(P * C)), converged


def pair_epsilon(C_ab: np.ndarray, scale: float = DEFAULT_EPS_SCALE) -> float:
    """Regularization for one task pair: scale times the median cross cost."""
    return max(scale * float(np.median(C_ab)), 1e-12)


def sinkhorn_divergence(
    A: TaskDataset,
    B: TaskDataset,
    params: SampleCostParams,
    eps: float,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> float:
    """Debiased divergence OT(A,B) - (OT(A,A) + OT(B,B)) / 2 at one eps."""
    if not A.records or not B.records:
        raise ValueError("sinkhorn_divergence needs nonempty datasets")
    arrays_a = _task_arrays(A, params)
    arrays_b = _task_arrays(B, params)
    values = []
    all_converged = True
    for pair in ((arrays_a, arrays_b), (arrays_a, arrays_a), (arrays_b, arrays_b)):
        C = cost_matrix_arrays(pair[0], pair[1], params)
        value, converged = entropic_transport_cost(C, eps, max_iter, tol)
        values.append(value)
        all_converged = all_converged and converged
    if not all_converged:
        warnings.warn(
            f"sinkhorn did not reach tol={tol} within {max_iter} iterations "
            f"for pair ({A.task_id}, {B.task_id}); value is partial",
            SinkhornWarning,
        )
    return values[0] - 0.5 * values[1] - 0.5 * values[2]


def task_distance_matrix(
    tasks: list[TaskDataset],
    params: SampleCostParams,
    eps_scale: float = DEFAULT_EPS_SCALE,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> np.ndarray:
    """Symmetric matrix of pairwise task divergences (diagonal is zero).

    Each pair gets its own eps from the median of its cross-cost matrix;
    the self terms reuse the pair's eps so the debiasing is consistent.
    """
    M = len(tasks)
    arrays = [_task_arrays(t, params) for t in tasks]
    D = np.zeros((M, M))
    for i in range(M):
        for j in range(i + 1, M):
            C_ab = cost_matrix_arrays(arrays[i], arrays[j], params)
            eps = pair_epsilon(C_ab, eps_scale)
            v_ab, ok_ab = entropic_transport_cost(C_ab, eps, max_iter, tol)
            C_aa = cost_matrix_arrays(arrays[i], arrays[i], params)
            v_aa, ok_aa = entropic_transport_cost(C_aa, eps, max_iter, tol)
            C_bb = cost_matrix_arrays(arrays[j], arrays[j], params)
            v_bb, ok_bb = entropic_transport_cost(C_bb, eps, max_iter, tol)
            if not (ok_ab and ok_aa and ok_bb):
                warnings.warn(
                    f"sinkhorn did not converge for tasks ({tasks[i].task_id}, "
                    f"{tasks[j].task_id})",
                    SinkhornWarning,
                )
            D[i, j] = D[j, i] = v_ab - 0.5 * v_aa - 0.5 * v_bb
    return D


@dataclass
class SplitPlan:
    """One fold's partition of task indices into mean and kernel sides."""

    fold_index: int
    ref_task: int
    mean_task_ids: list[int]
    kernel_task_ids: list[int]
    split_method: str
    degenerate: bool = False
    material_overlap: int = 0

    def validate(self, n_tasks: int) -> None:
        mean_set = set(self.mean_task_ids)
        kernel_set = set(self.kernel_task_ids)
        if not mean_set or not kernel_set:
            raise SplitError(f"fold {self.fold_index}: empty split side")
        if mean_set & kernel_set:
            raise SplitError(f"fold {self.fold_index}: overlapping splits")
        if mean_set | kernel_set != set(range(n_tasks)):
            raise SplitError(f"fold {self.fold_index}: splits do not cover all tasks")

    def to_dict(self) -> dict:
        return {
            "fold_index": self.fold_index,
            "ref_task": self.ref_task,
            "mean_task_ids": list(self.mean_task_ids),
            "kernel_task_ids": list(self.kernel_task_ids),
            "split_method": self.split_method,
            "degenerate": self.degenerate,
            "material_overlap": self.material_overlap,
        }


def median_split(
    tasks: list[TaskDataset],
    ref_index: int,
    D: np.ndarray,
    rule: str = "median",
    fold_index: int = 0,
) -> SplitPlan:
    """Tasks at or below the median distance to the reference go to the
    mean side (including the reference itself); the rest feed the kernel.

    rule='count' instead assigns the ceil(M/2) closest tasks to the mean
    side. All-equal distances fall back to a half split by index.
    """
    M = len(tasks)
    if M < 2:
        raise SplitError("median_split needs at least 2 tasks")
    d = np.asarray(D)[ref_index]
    degenerate = bool(np.all(d == d[0]))
    if degenerate:
        half = (M + 1) // 2
        mean_ids = list(range(half))
        kernel_ids = list(range(half, M))
    elif rule == "median":
        med = float(np.median(d))
        mean_ids = [i for i in range(M) if d[i] <= med]
        kernel_ids = [i for i in range(M) if d[i] > med]
        if not kernel_ids:
            # heavy ties at the median; fall back to a count split
            order = np.argsort(d, kind="stable")
            half = (M + 1) // 2
            mean_ids = sorted(int(i) for i in order[:half])
            kernel_ids = sorted(int(i) for i in order[half:])
            degenerate = True
    elif rule == "count":
        order = np.argsort(d, kind="stable")
        half = (M + 1) // 2
        mean_ids = sorted(int(i) for i in order[:half])
        kernel_ids = sorted(int(i) for i in order[half:])
    else:
        raise ValueError(f"unknown split rule {rule!r}")
    plan = SplitPlan(
        fold_index=fold_index,
        ref_task=ref_index,
        mean_task_ids=mean_ids,
        kernel_task_ids=kernel_ids,
        split_method="ot",
        degenerate=degenerate,
    )
    plan.validate(M)
    return plan
