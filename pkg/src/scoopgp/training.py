"""Training procedures for the reward model.

Three entry points:

- train_sl: pooled MSE training of the extractor and mean head, with a
  validation split, early stopping, and flip/noise augmentation.
- train_dkmt: joint NLML meta-training of mean, kernel, and GP
  hyperparameters, one task per batch.
- train_kcmd: the fold procedure. Phase 1 trains and retains a pooled
  mean model. Each fold then splits the tasks around a reference task
  (by transport distance, at random, or by material knowledge), retrains
  a fold mean from scratch on the similar side with an L2 anchor to the
  retained extractor, and collects that mean's residuals on the far
  side. A single kernel is finally meta-trained on all collected
  residuals, embedding each fold's records through that fold's frozen
  extractor, and the retained phase-1 weights are returned untouched.

Every procedure emits a manifest with ordered phase events, split
plans, loss curves, and weight digests.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import gp
from . import ot
from . import tensor as T
from .data import TaskDataset
from .model import Architecture, DeepGPModel, flip_permutation, init_segment_weights

SPLIT_METHODS = ("ot", "random", "manual")


class TrainingError(RuntimeError):
    """Training diverged or a fold could not be completed."""


@dataclass
class TrainConfig:
    k_folds: int = 10
    lr_mean: float = 5e-3
    lr_kernel: float = 1e-2
    patience: int = 5
    validation_fraction: float = 0.1
    l2_anchor_coeff: float = 1.0
    seed: int = 0
    batch_size: int = 128
    max_epochs_mean: int = 150
    max_epochs_meta: int = 150
    split_rule: str = "median"
    arch: Architecture = field(default_factory=Architecture)

    def validate(self, n_tasks: int | None = None) -> None:
        if self.k_folds < 2:
            raise ValueError("k_folds must be at least 2")
        if n_tasks is not None and self.k_folds > n_tasks:
            raise ValueError(f"k_folds={self.k_folds} exceeds task count {n_tasks}")
        if not (0.0 <= self.validation_fraction < 1.0):
            raise ValueError("validation_fraction must be in [0, 1)")
        if self.patience < 1 or self.batch_size < 1:
            raise ValueError("patience and batch_size must be positive")
        if self.split_rule not in ("median", "count"):
            raise ValueError(f"unknown split_rule {self.split_rule!r}")

    def to_dict(self) -> dict:
        return {
            "k_folds": self.k_folds,
            "lr_mean": self.lr_mean,
            "lr_kernel": self.lr_kernel,
            "patience": self.patience,
            "validation_fraction": self.validation_fraction,
            "l2_anchor_coeff": self.l2_anchor_coeff,
            "seed": self.seed,
            "batch_size": self.batch_size,
            "max_epochs_mean": self.max_epochs_mean,
            "max_epochs_meta": self.max_epochs_meta,
            "split_rule": self.split_rule,
            "arch": self.arch.to_dict(),
        }


@dataclass
class TrainingManifest:
    method: str
    seed: int
    config: dict
    events: list[str] = field(default_factory=list)
    splits: list[dict] = field(default_factory=list)
    loss_curves: dict = field(default_factory=dict)
    kernel_params: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    def log(self, event: str) -> None:
        self.events.append(event)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "config": self.config,
            "events": self.events,
            "splits": self.splits,
            "loss_curves": self.loss_curves,
            "kernel_params": self.kernel_params,
            "stats": self.stats,
        }


@dataclass
class FoldResiduals:
    """Residual records of one (fold, task) cell plus the frozen features
    that embed them (both patch orientations, fold extractor applied)."""

    fold: int
    task_id: str
    features: np.ndarray
    features_flipped: np.ndarray
    residuals: np.ndarray


def weight_digest(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arrays[name]).tobytes())
    return h.hexdigest()


class _EarlyStop:
    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self.snapshot = None

    def update(self, epoch: int, value: float, snap_fn) -> bool:
        """Record improvements; True once patience epochs passed without one."""
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.snapshot = snap_fn()
        return epoch - self.best_epoch >= self.patience


def _pool(tasks: list[TaskDataset], arch: Architecture):
    X = np.vstack([t.feature_matrix(arch) for t in tasks])
    y = np.concatenate([t.rewards for t in tasks])
    return X, y


def _noise_amplitudes(arch: Architecture) -> np.ndarray:
    hw = arch.patch_h * arch.patch_w
    amp = np.concatenate(
        [
            np.full((arch.channels - 1) * hw, 0.02),  # appearance jitter
            np.full(hw, 0.002),  # height noise, meters
            np.zeros(2),
        ]
    )
    return amp


def _train_mean(
    model: DeepGPModel,
    X: np.ndarray,
    y_std: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
    manifest: TrainingManifest,
    curve_tag: str,
    anchor: dict[str, np.ndarray] | None = None,
    anchor_coeff: float = 0.0,
) -> None:
    """MSE training of extractor+mean with val-loss early stopping.

    Training data is doubled with flipped patches and gets fresh additive
    noise per batch; validation stays clean. With an anchor, the
    quadratic penalty anchor_coeff * ||w - a||^2 on the extractor weights
    is applied as its exact proximal step once per epoch (decoupled, like
    AdamW weight decay): feeding the penalty through Adam's normalized
    steps cannot reach the anchor for large coefficients, while a
    per-batch proximal step overpins the extractor at the paper-scale
    coefficient and flattens the deployment gap between folds."""
    n = len(X)
    n_val = min(math.ceil(cfg.validation_fraction * n), n - 1)
    perm = rng.permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    flip_cols = flip_permutation(cfg.arch)
    Xtr = np.vstack([X[train_idx], X[train_idx][:, flip_cols]])
    ytr = np.concatenate([y_std[train_idx], y_std[train_idx]])
    Xval, yval = (X[val_idx], y_std[val_idx]) if n_val else (X[train_idx], y_std[train_idx])
    amp = _noise_amplitudes(cfg.arch)

    params = model.segment_params("extractor") + model.segment_params("mean")
    extractor_params = model.segment_params("extractor")
    state = T.AdamState()
    stopper = _EarlyStop(cfg.patience)
    curve = []

    def snap():
        return {p.name: p.data.copy() for p in params}

    for epoch in range(cfg.max_epochs_mean):
        order = rng.permutation(len(Xtr))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(Xtr), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = Xtr[idx] + rng.uniform(-1.0, 1.0, size=(len(idx), X.shape[1])) * amp
            yb = ytr[idx][:, None]
            with T.Tape() as tape:
                pred = model.mean_t(model.extractor_t(T.Tensor(xb)))
                loss = T.reduce("mean", T.square(T.sub(pred, T.Tensor(yb))))
                tape.backward(loss)
            try:
                T.adam_step(params, [p.grad for p in params], state, cfg.lr_mean)
            except T.OptimizerError as err:
                raise TrainingError(f"{curve_tag}: diverged at epoch {epoch}: {err}") from err
            epoch_loss += loss.item()
            n_batches += 1
        if anchor is not None and anchor_coeff > 0.0:
            shrink = 1.0 / (1.0 + 2.0 * anchor_coeff * cfg.lr_mean)
            for p in extractor_params:
                a = anchor[p.name]
                p.data = a + (p.data - a) * shrink
        val_pred = model.mean_batch(Xval)
        val_mse = float(np.mean((val_pred - yval) ** 2))
        curve.append([epoch_loss / max(n_batches, 1), val_mse])
        if stopper.update(epoch, val_mse, snap):
            break
    for p in params:
        p.data = stopper.snapshot[p.name]
    manifest.loss_curves[curve_tag] = curve
    manifest.stats[f"{curve_tag}.val_size"] = int(n_val)
    manifest.stats[f"{curve_tag}.best_epoch"] = stopper.best_epoch
    manifest.stats[f"{curve_tag}.best_val_mse"] = stopper.best


def _reward_stats(tasks: list[TaskDataset]) -> tuple[float, float]:
    y = np.concatenate([t.rewards for t in tasks])
    return float(y.mean()), float(max(y.std(), 1e-6))


def train_sl(
    tasks: list[TaskDataset], cfg: TrainConfig
) -> tuple[DeepGPModel, TrainingManifest]:
    """Pooled supervised training of extractor and mean (no kernel)."""
    if not tasks:
        raise ValueError("train_sl needs at least one task")
    cfg.validate()
    manifest = TrainingManifest("sl", cfg.seed, cfg.to_dict())
    rng = np.random.default_rng(cfg.seed)
    model = DeepGPModel.init(cfg.arch, seed=cfg.seed, has_kernel=False)
    model.reward_mean, model.reward_std = _reward_stats(tasks)
    X, y = _pool(tasks, cfg.arch)
    y_std = (y - model.reward_mean) / model.reward_std
    manifest.log("phase:sl:start")
    _train_mean(model, X, y_std, cfg, rng, manifest, curve_tag="sl")
    manifest.log("phase:sl:done")
    manifest.stats["reward_mean"] = model.reward_mean
    manifest.stats["reward_std"] = model.reward_std
    manifest.stats["sl_weight_digest"] = weight_digest(model.copy_weight_arrays())
    return model, manifest


def _kp_tensors(kp: gp.KernelParams) -> dict[str, T.Tensor]:
    return {
        name: T.Tensor(np.asarray(value), requires_grad=True, name=f"kp.{name}")
        for name, value in kp.to_dict().items()
    }


def _data_init_kp(kpt: dict[str, T.Tensor], Z: np.ndarray, residuals: np.ndarray) -> None:
    """Median-distance init for the lengthscale, residual variance for the
    outputscale. A unit lengthscale against raw embedding distances (tens
    of units at init) saturates the RBF to zero, its gradient vanishes,
    and NLML settles into the no-correlation optimum."""
    n = min(len(Z), 256)
    D = Z[:n, None, :] - Z[None, :n, :]
    dists = np.sqrt(np.maximum((D * D).sum(-1), 0.0))
    med = float(np.median(dists[np.triu_indices(n, k=1)])) if n > 1 else 1.0
    kpt["log_lengthscale"].data = np.asarray(math.log(max(med, 1e-3)))
    kpt["log_outputscale"].data = np.asarray(
        math.log(max(float(np.var(residuals)), 1e-4))
    )


def _kp_from_tensors(kpt: dict[str, T.Tensor]) -> gp.KernelParams:
    return gp.KernelParams(
        log_lengthscale=float(kpt["log_lengthscale"].data),
        log_outputscale=float(kpt["log_outputscale"].data),
        log_noise=float(kpt["log_noise"].data),
    )


def train_dkmt(
    tasks: list[TaskDataset], cfg: TrainConfig
) -> tuple[DeepGPModel, TrainingManifest]:
    """Joint NLML meta-training of mean, kernel, and hyperparameters,
    one task per batch, early-stopped on the training loss."""
    if not tasks:
        raise ValueError("train_dkmt needs at least one task")
    cfg.validate()
    manifest = TrainingManifest("dkmt", cfg.seed, cfg.to_dict())
    rng = np.random.default_rng(cfg.seed)
    model = DeepGPModel.init(cfg.arch, seed=cfg.seed, has_kernel=True)
    model.reward_mean, model.reward_std = _reward_stats(tasks)
    flip_cols = flip_permutation(cfg.arch)
    per_task = []
    for t in tasks:
        X = t.feature_matrix(cfg.arch)
        y_std = (t.rewards - model.reward_mean) / model.reward_std
        per_task.append((t.task_id, X, X[:, flip_cols], y_std))

    mean_params = model.segment_params("extractor") + model.segment_params("mean")
    kpt = _kp_tensors(model.kp)
    _data_init_kp(
        kpt,
        model.embed_batch(np.vstack([pt[1] for pt in per_task])[:256]),
        np.concatenate([pt[3] for pt in per_task]),
    )
    kernel_params = model.segment_params("kernel") + list(kpt.values())
    st_mean, st_kernel = T.AdamState(), T.AdamState()
    stopper = _EarlyStop(cfg.patience)
    curve = []
    task_orders = []

    def snap():
        weights = {p.name: p.data.copy() for p in mean_params + kernel_params}
        return weights

    manifest.log("phase:dkmt:start")
    for epoch in range(cfg.max_epochs_meta):
        order = rng.permutation(len(per_task))
        task_orders.append([per_task[i][0] for i in order])
        epoch_loss = 0.0
        for i in order:
            task_id, X, Xf, y_std = per_task[i]
            mask = rng.random(len(X)) < 0.5
            xb = np.where(mask[:, None], Xf, X)
            try:
                with T.Tape() as tape:
                    F = model.extractor_t(T.Tensor(xb))
                    resid = T.sub(T.Tensor(y_std[:, None]), model.mean_t(F))
                    Kbar = gp.gram_objective(
                        model.kernel_t(F),
                        kpt["log_lengthscale"],
                        kpt["log_outputscale"],
                        kpt["log_noise"],
                    )
                    loss = gp.nlml_objective(Kbar, resid)
                    tape.backward(loss)
                T.adam_step(mean_params, [p.grad for p in mean_params], st_mean, cfg.lr_mean)
                T.adam_step(
                    kernel_params, [p.grad for p in kernel_params], st_kernel, cfg.lr_kernel
                )
            except (gp.ConditioningError, T.OptimizerError) as err:
                raise TrainingError(f"dkmt: task {task_id} epoch {epoch}: {err}") from err
            epoch_loss += loss.item()
        curve.append(epoch_loss / len(per_task))
        if stopper.update(epoch, curve[-1], snap):
            break
    for p in mean_params + kernel_params:
        p.data = stopper.snapshot[p.name]
    model.kp = _kp_from_tensors(kpt)
    manifest.log("phase:dkmt:done")
    manifest.loss_curves["dkmt"] = curve
    manifest.stats["task_orders"] = task_orders[: min(len(task_orders), 3)]
    manifest.stats["best_epoch"] = stopper.best_epoch
    manifest.kernel_params = model.kp.to_dict()
    return model, manifest


def manual_split(
    tasks: list[TaskDataset], k_folds: int = 1, seed: int = 0
) -> list[ot.SplitPlan]:
    """Splits built from ground-truth material ids so the two sides use
    different materials where achievable; tasks mixing both sides count
    as overlap, minimized exactly by enumerating material bipartitions."""
    task_mats = []
    for t in tasks:
        if not t.ground_truth or "materials" not in t.ground_truth:
            raise ot.SplitError(f"task {t.task_id} carries no material metadata")
        task_mats.append(frozenset(t.ground_truth["materials"]))
    materials = sorted(set().union(*task_mats))
    if len(materials) < 2:
        raise ot.SplitError("manual split needs at least 2 distinct materials")
    if len(materials) > 16:
        raise ot.SplitError("manual split supports at most 16 distinct materials")

    candidates = []
    for bits in range(1, 2 ** len(materials) - 1):
        mean_mats = {m for i, m in enumerate(materials) if bits >> i & 1}
        mean_ids, kernel_ids, overlap = [], [], 0
        for idx, mats in enumerate(task_mats):
            inside = len(mats & mean_mats)
            outside = len(mats) - inside
            if inside and outside:
                overlap += 1
            if inside >= outside:
                mean_ids.append(idx)
            else:
                kernel_ids.append(idx)
        if mean_ids and kernel_ids:
            candidates.append((overlap, bits, mean_ids, kernel_ids))
    if not candidates:
        raise ot.SplitError("no material bipartition separates the tasks")
    best_overlap = min(c[0] for c in candidates)
    best = [c for c in candidates if c[0] == best_overlap]
    rng = np.random.default_rng(seed)
    rng.shuffle(best)
    plans = []
    for k in range(k_folds):
        overlap, _, mean_ids, kernel_ids = best[k % len(best)]
        plans.append(
            ot.SplitPlan(
                fold_index=k,
                ref_task=mean_ids[0],
                mean_task_ids=list(mean_ids),
                kernel_task_ids=list(kernel_ids),
                split_method="manual",
                degenerate=overlap > 0,
                material_overlap=overlap,
            )
        )
    return plans


def _random_split(n_tasks: int, ref: int, rng: np.random.Generator, fold: int) -> ot.SplitPlan:
    others = [i for i in range(n_tasks) if i != ref]
    rng.shuffle(others)
    n_mean = (n_tasks + 1) // 2
    mean_ids = sorted([ref] + others[: n_mean - 1])
    kernel_ids = sorted(others[n_mean - 1 :])
    return ot.SplitPlan(
        fold_index=fold,
        ref_task=ref,
        mean_task_ids=mean_ids,
        kernel_task_ids=kernel_ids,
        split_method="random",
    )


def train_kcmd(
    tasks: list[TaskDataset],
    cfg: TrainConfig,
    split_method: str = "ot",
) -> tuple[DeepGPModel, TrainingManifest]:
    """Fold-based training with simulated deployment gaps.

    Returns a model whose extractor and mean are the retained phase-1
    weights (bit-identical) and whose kernel head and hyperparameters
    were meta-trained on the fold residuals.
    """
    if len(tasks) < 2:
        raise ValueError("train_kcmd needs at least 2 tasks")
    if split_method not in SPLIT_METHODS:
        raise ValueError(f"split_method must be one of {SPLIT_METHODS}")
    cfg.validate(n_tasks=len(tasks))

    # phase 1: pooled mean model, retained for the returned model
    sl_model, sl_manifest = train_sl(tasks, cfg)
    manifest = TrainingManifest(f"kcmd-{split_method}", cfg.seed, cfg.to_dict())
    manifest.events.extend(sl_manifest.events)
    manifest.loss_curves.update(sl_manifest.loss_curves)
    manifest.stats.update(sl_manifest.stats)
    retained = sl_model.copy_weight_arrays()
    anchor = {
        name: arr for name, arr in retained.items() if name.startswith("extractor.")
    }

    X_all, y_all = _pool(tasks, cfg.arch)
    y_std_all = (y_all - sl_model.reward_mean) / sl_model.reward_std
    per_task_X = [t.feature_matrix(cfg.arch) for t in tasks]
    per_task_y = [
        (t.rewards - sl_model.reward_mean) / sl_model.reward_std for t in tasks
    ]
    flip_cols = flip_permutation(cfg.arch)

    fold_rng = np.random.default_rng([cfg.seed, 101])
    refs = fold_rng.permutation(len(tasks))[: cfg.k_folds]
    distance_matrix = None
    manual_plans = None
    if split_method == "ot":
        manifest.log("phase:distances:start")
        cost_params = ot.SampleCostParams.from_tasks(tasks)
        distance_matrix = ot.task_distance_matrix(tasks, cost_params)
        manifest.stats["distance_matrix"] = np.round(distance_matrix, 6).tolist()
        manifest.log("phase:distances:done")
    elif split_method == "manual":
        manual_plans = manual_split(tasks, cfg.k_folds, seed=cfg.seed)

    residual_db: list[FoldResiduals] = []
    for k in range(cfg.k_folds):
        ref = int(refs[k])
        if split_method == "ot":
            plan = ot.median_split(tasks, ref, distance_matrix, cfg.split_rule, fold_index=k)
        elif split_method == "random":
            plan = _random_split(len(tasks), ref, fold_rng, k)
        else:
            plan = manual_plans[k]
        plan.validate(len(tasks))
        manifest.splits.append(plan.to_dict())
        manifest.log(
            f"fold:{k}:split:ref={plan.ref_task}:mean={len(plan.mean_task_ids)}"
            f":kernel={len(plan.kernel_task_ids)}"
        )

        fold_model = DeepGPModel.init(
            cfg.arch, seed=int(fold_rng.integers(2**31)), has_kernel=False
        )
        fold_model.reward_mean = sl_model.reward_mean
        fold_model.reward_std = sl_model.reward_std
        X_mean = np.vstack([per_task_X[i] for i in plan.mean_task_ids])
        y_mean = np.concatenate([per_task_y[i] for i in plan.mean_task_ids])
        try:
            _train_mean(
                fold_model,
                X_mean,
                y_mean,
                cfg,
                fold_rng,
                manifest,
                curve_tag=f"fold-{k}",
                anchor=anchor,
                anchor_coeff=cfg.l2_anchor_coeff,
            )
        except TrainingError as err:
            raise TrainingError(f"fold {k}: {err}") from err
        drift = max(
            float(np.max(np.abs(p.data - anchor[p.name])))
            for p in fold_model.segment_params("extractor")
        )
        manifest.stats[f"fold-{k}.anchor_drift_inf"] = drift
        manifest.log(f"fold:{k}:mean-trained")

        for i in plan.kernel_task_ids:
            X = per_task_X[i]
            residuals = per_task_y[i] - fold_model.mean_batch(X)
            residual_db.append(
                FoldResiduals(
                    fold=k,
                    task_id=tasks[i].task_id,
                    features=fold_model.extract_batch(X),
                    features_flipped=fold_model.extract_batch(X[:, flip_cols]),
                    residuals=residuals,
                )
            )
        manifest.log(f"fold:{k}:residuals:{sum(len(per_task_X[i]) for i in plan.kernel_task_ids)}")

    manifest.stats["residual_db_size"] = int(sum(len(fr.residuals) for fr in residual_db))
    manifest.stats["residual_db_cells"] = [
        {"fold": fr.fold, "task_id": fr.task_id, "count": len(fr.residuals)}
        for fr in residual_db
    ]

    # assemble the returned model: retained weights plus a fresh kernel head
    weights = {
        name: T.Tensor(arr.copy(), requires_grad=True, name=name)
        for name, arr in retained.items()
    }
    kernel_rng = np.random.default_rng([cfg.seed, 7])
    weights.update(init_segment_weights(cfg.arch, "kernel", kernel_rng))
    final = DeepGPModel(
        cfg.arch,
        weights,
        gp.KernelParams(),
        reward_mean=sl_model.reward_mean,
        reward_std=sl_model.reward_std,
        has_kernel=True,
    )

    manifest.log("phase:kernel:start")
    kpt = _kp_tensors(final.kp)
    _data_init_kp(
        kpt,
        final.kernel_t(
            T.Tensor(np.vstack([fr.features for fr in residual_db])[:256])
        ).data,
        np.concatenate([fr.residuals for fr in residual_db]),
    )
    kernel_params = final.segment_params("kernel") + list(kpt.values())
    state = T.AdamState()
    stopper = _EarlyStop(cfg.patience)
    meta_rng = np.random.default_rng([cfg.seed, 303])
    curve = []

    def snap():
        return {p.name: p.data.copy() for p in kernel_params}

    for epoch in range(cfg.max_epochs_meta):
        order = meta_rng.permutation(len(residual_db))
        epoch_loss = 0.0
        for bi in order:
            fr = residual_db[bi]
            mask = meta_rng.random(len(fr.residuals)) < 0.5
            F = np.where(mask[:, None], fr.features_flipped, fr.features)
            try:
                with T.Tape() as tape:
                    Kbar = gp.gram_objective(
                        final.kernel_t(T.Tensor(F)),
                        kpt["log_lengthscale"],
                        kpt["log_outputscale"],
                        kpt["log_noise"],
                    )
                    loss = gp.nlml_objective(Kbar, T.Tensor(fr.residuals[:, None]))
                    tape.backward(loss)
                T.adam_step(kernel_params, [p.grad for p in kernel_params], state, cfg.lr_kernel)
            except (gp.ConditioningError, T.OptimizerError) as err:
                raise TrainingError(
                    f"kernel meta-training: fold {fr.fold} task {fr.task_id} "
                    f"epoch {epoch}: {err}"
                ) from err
            epoch_loss += loss.item()
        curve.append(epoch_loss / len(residual_db))
        if stopper.update(epoch, curve[-1], snap):
            break
    for p in kernel_params:
        p.data = stopper.snapshot[p.name]
    final.kp = _kp_from_tensors(kpt)
    manifest.log("phase:kernel:done")
    manifest.loss_curves["kernel"] = curve
    manifest.kernel_params = final.kp.to_dict()
    manifest.stats["kernel_best_epoch"] = stopper.best_epoch
    manifest.stats["returned_weight_digest"] = weight_digest(
        {n: w.data for n, w in final.weights.items() if not n.startswith("kernel.")}
    )
    return final, manifest
