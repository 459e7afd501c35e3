"""Synthetic scooping world: materials, terrains, rendering, outcomes.

Materials carry a latent depth-response curve (peak volume, peak depth,
width), a jam penalty on slopes, a preferred controller stiffness, and
an appearance color. Terrains compose materials as Single, Partition,
Mixture, or Layers grids over a heightfield. Within the training pool,
brighter appearance correlates with higher yield; the novel test
materials break that correlation (and one is not scoopable at all),
which is what makes the test tasks out-of-distribution.

Rendering and rewards are pure given an rng, so episodes are
reproducible; execute_scoop additionally mutates the terrain (lowers
the heightfield and may expose a hidden layer).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import ScoopRecord, TaskDataset
from .model import (
    DEPTH_MAX,
    DEPTH_MIN,
    N_YAW,
    STIFF_HARD,
    STIFF_SOFT,
    Observation,
    ScoopAction,
    TrajectoryConstants,
)

EXTENT = (0.9, 0.6)
CELL = 0.01
MAX_ELEVATION = 0.2
MAX_SLOPE_DEG = 30.0
PATCH_LEN = 0.16
SCOOP_WIDTH = 0.06
FOOT_MARGIN = 0.02
REWARD_NOISE_SIGMA = 0.25
NOISE_FLOOR_STD = 0.4
SLOPE_FREE_DEG = 15.0
STIFF_MISMATCH = 0.85
APPEARANCE_MARGIN = 0.12
APPEARANCE_NOISE = 0.02
HEIGHT_NOISE = 0.002

COMPOSITIONS = ("Single", "Partition", "Mixture", "Layers")


@dataclass(frozen=True)
class LatentMaterial:
    """Ground-truth material parameters; never exposed to the learner."""

    id: str
    color: tuple[float, float, float]
    texture_scale: float
    peak_volume: float  # cm^3 at the best depth, zero when unscoopable
    peak_depth: float
    depth_width: float
    jam_penalty: float  # cm^3 lost per degree of slope beyond the free range
    stiffness_pref: int

    @property
    def scoopable(self) -> bool:
        return self.peak_volume > 0.0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "color": list(self.color),
            "texture_scale": self.texture_scale,
            "peak_volume": self.peak_volume,
            "peak_depth": self.peak_depth,
            "depth_width": self.depth_width,
            "jam_penalty": self.jam_penalty,
            "stiffness_pref": self.stiffness_pref,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LatentMaterial":
        return cls(
            id=d["id"],
            color=tuple(d["color"]),
            texture_scale=d["texture_scale"],
            peak_volume=d["peak_volume"],
            peak_depth=d["peak_depth"],
            depth_width=d["depth_width"],
            jam_penalty=d["jam_penalty"],
            stiffness_pref=int(d["stiffness_pref"]),
        )


@dataclass
class TerrainInstance:
    """Material grids plus a heightfield over a fixed extent."""

    surface: np.ndarray  # (nx, ny) int indices into materials
    heightfield: np.ndarray  # (nx, ny) meters
    materials: list[LatentMaterial]
    composition: str
    seed: int
    hidden: np.ndarray | None = None
    layer_depth: float | None = None
    extent: tuple[float, float] = EXTENT
    cell: float = CELL

    def copy(self) -> "TerrainInstance":
        return TerrainInstance(
            surface=self.surface.copy(),
            heightfield=self.heightfield.copy(),
            materials=self.materials,
            composition=self.composition,
            seed=self.seed,
            hidden=None if self.hidden is None else self.hidden.copy(),
            layer_depth=self.layer_depth,
            extent=self.extent,
            cell=self.cell,
        )

    def material_ids(self) -> list[str]:
        ids = {self.materials[i].id for i in np.unique(self.surface)}
        if self.hidden is not None:
            ids |= {self.materials[i].id for i in np.unique(self.hidden)}
        return sorted(ids)

    def to_dict(self) -> dict:
        return {
            "surface": self.surface.astype(int).tolist(),
            "heightfield": np.round(self.heightfield, 6).tolist(),
            "materials": [m.to_dict() for m in self.materials],
            "composition": self.composition,
            "seed": self.seed,
            "hidden": None if self.hidden is None else self.hidden.astype(int).tolist(),
            "layer_depth": self.layer_depth,
            "extent": list(self.extent),
            "cell": self.cell,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TerrainInstance":
        return cls(
            surface=np.array(d["surface"], dtype=np.int64),
            heightfield=np.array(d["heightfield"], dtype=np.float64),
            materials=[LatentMaterial.from_dict(m) for m in d["materials"]],
            composition=d["composition"],
            seed=int(d["seed"]),
            hidden=None if d["hidden"] is None else np.array(d["hidden"], dtype=np.int64),
            layer_depth=d["layer_depth"],
            extent=tuple(d["extent"]),
            cell=d["cell"],
        )


@dataclass
class TerrainTask:
    """One terrain plus its identity within a generated suite."""

    task_id: str
    terrain: TerrainInstance
    is_test: bool

    @property
    def composition(self) -> str:
        return self.terrain.composition


class BoundsError(ValueError):
    """Action or patch falls outside the terrain extent."""


# --- material pools -------------------------------------------------------

_TRAIN_SCOOPABILITY = (0.90, 0.75, 0.55, 0.40, 0.22, 0.08)


def _volume_from_scoopability(g: float) -> float:
    return 10.0 + 95.0 * g


def _brightness_from_scoopability(g: float) -> float:
    return 0.25 + 0.55 * g


def _jittered_color(base: float, rng: np.random.Generator) -> tuple[float, float, float]:
    tint = rng.uniform(-0.05, 0.05, size=3)
    return tuple(float(np.clip(base + t, 0.03, 0.97)) for t in tint)


def training_materials(rng: np.random.Generator) -> list[LatentMaterial]:
    """Pool where brightness tracks scoopability (the learnable trend)."""
    mats = []
    for i, g in enumerate(_TRAIN_SCOOPABILITY):
        mats.append(
            LatentMaterial(
                id=f"train-{i}",
                color=_jittered_color(_brightness_from_scoopability(g), rng),
                texture_scale=float(rng.uniform(0.02, 0.05)),
                peak_volume=_volume_from_scoopability(g),
                peak_depth=float(rng.uniform(0.058, 0.070)),
                depth_width=float(rng.uniform(0.020, 0.030)),
                jam_penalty=0.4 + 1.2 * (1.0 - g),
                stiffness_pref=STIFF_HARD if g < 0.5 else STIFF_SOFT,
            )
        )
    return mats


def novel_materials(rng: np.random.Generator) -> list[LatentMaterial]:
    """Test-only pool that breaks the brightness trend; one is unscoopable."""
    return [
        LatentMaterial(
            id="novel-gleam",
            color=(0.74, 0.52, 0.80),  # bright but nearly barren
            texture_scale=float(rng.uniform(0.015, 0.025)),
            peak_volume=6.0,
            peak_depth=0.062,
            depth_width=0.025,
            jam_penalty=1.2,
            stiffness_pref=STIFF_SOFT,
        ),
        LatentMaterial(
            id="novel-dense",
            color=(0.36, 0.60, 0.44),  # drab but high-yield
            texture_scale=float(rng.uniform(0.02, 0.04)),
            peak_volume=85.0,
            peak_depth=0.0675,
            depth_width=0.012,
            jam_penalty=0.8,
            stiffness_pref=STIFF_SOFT,
        ),
        LatentMaterial(
            id="novel-sheet",
            color=(0.70, 0.48, 0.76),  # unscoopable, yet dressed like the lure
            texture_scale=0.015,
            peak_volume=0.0,
            peak_depth=0.060,
            depth_width=0.025,
            jam_penalty=0.0,
            stiffness_pref=STIFF_HARD,
        ),
        LatentMaterial(
            id="novel-fluff",
            color=(0.55, 0.74, 0.60),  # mid-bright, yields less than the trend says
            texture_scale=float(rng.uniform(0.03, 0.05)),
            peak_volume=34.0,
            peak_depth=0.060,
            depth_width=0.026,
            jam_penalty=0.5,
            stiffness_pref=STIFF_SOFT,
        ),
    ]


def appearance_gap(train: list[LatentMaterial], novel: list[LatentMaterial]) -> float:
    gaps = [
        float(np.linalg.norm(np.array(n.color) - np.array(t.color)))
        for n in novel
        for t in train
    ]
    return min(gaps)


# --- terrain construction -------------------------------------------------


def _grid_shape(extent=EXTENT, cell=CELL) -> tuple[int, int]:
    return int(round(extent[0] / cell)), int(round(extent[1] / cell))


def _cell_centers(shape, cell):
    xs = (np.arange(shape[0]) + 0.5) * cell
    ys = (np.arange(shape[1]) + 0.5) * cell
    return np.meshgrid(xs, ys, indexing="ij")


def _gen_heightfield(rng: np.random.Generator, shape, cell) -> np.ndarray:
    X, Y = _cell_centers(shape, cell)
    h = np.zeros(shape)
    for _ in range(int(rng.integers(2, 6))):
        cx = rng.uniform(0.0, shape[0] * cell)
        cy = rng.uniform(0.0, shape[1] * cell)
        amp = rng.uniform(0.03, 0.14)
        sx = rng.uniform(0.10, 0.30)
        sy = sx * rng.uniform(0.4, 1.0)  # anisotropic bumps double as ridges
        h += amp * np.exp(-(((X - cx) / sx) ** 2 + ((Y - cy) / sy) ** 2) / 2.0)
    h = np.minimum(h, MAX_ELEVATION * 0.95)
    gx, gy = np.gradient(h, cell)
    max_slope = math.degrees(math.atan(float(np.sqrt(gx**2 + gy**2).max())))
    if max_slope > MAX_SLOPE_DEG:
        h *= math.tan(math.radians(MAX_SLOPE_DEG)) / math.tan(math.radians(max_slope)) * 0.98
    return h


def _partition_grid(shape, mat_indices, rng, cut_range=(0.3, 0.7), axis=None) -> np.ndarray:
    X, Y = _cell_centers(shape, CELL)
    grid = np.full(shape, mat_indices[0], dtype=np.int64)
    if axis is None:
        axis = 0 if rng.random() < 0.5 else 1
    axis_vals = X if axis == 0 else Y
    extent = shape[axis] * CELL
    cuts = np.sort(rng.uniform(*cut_range, size=len(mat_indices) - 1)) * extent
    for k, cut in enumerate(cuts):
        grid[axis_vals > cut] = mat_indices[k + 1]
    return grid


def _mixture_grid(shape, mat_indices, rng, n_blobs=None) -> np.ndarray:
    X, Y = _cell_centers(shape, CELL)
    n_blobs = n_blobs or int(rng.integers(6, 13))
    px = rng.uniform(0, shape[0] * CELL, size=n_blobs)
    py = rng.uniform(0, shape[1] * CELL, size=n_blobs)
    blob_mat = np.array(
        [mat_indices[i % len(mat_indices)] for i in range(n_blobs)], dtype=np.int64
    )
    rng.shuffle(blob_mat)
    d2 = (X[..., None] - px) ** 2 + (Y[..., None] - py) ** 2
    return blob_mat[np.argmin(d2, axis=-1)]


def _make_terrain(
    composition, mat_indices, materials, rng, seed, cut_range=(0.3, 0.7)
) -> TerrainInstance:
    shape = _grid_shape()
    height = _gen_heightfield(rng, shape, CELL)
    hidden = None
    layer_depth = None
    if composition == "Single":
        surface = np.full(shape, mat_indices[0], dtype=np.int64)
    elif composition == "Partition":
        surface = _partition_grid(shape, mat_indices, rng, cut_range)
    elif composition == "Mixture":
        surface = _mixture_grid(shape, mat_indices, rng)
    elif composition == "Layers":
        # first index is the visible lid, second the buried material,
        # remaining indices tile the rest of the surface
        surface = _partition_grid(shape, [mat_indices[0], *mat_indices[2:]], rng, cut_range)
        hidden = surface.copy()
        hidden[surface == mat_indices[0]] = mat_indices[1]
        layer_depth = float(rng.uniform(0.045, 0.055))
    else:
        raise ValueError(f"unknown composition {composition!r}")
    return TerrainInstance(
        surface=surface,
        heightfield=height,
        materials=materials,
        composition=composition,
        seed=seed,
        hidden=hidden,
        layer_depth=layer_depth,
    )


def _train_composition_counts(n_train: int) -> tuple[int, int, int]:
    # proportions follow the offline database make-up (roughly 16/49/35)
    n_single = max(1, round(0.16 * n_train))
    n_partition = max(1, round(0.49 * n_train))
    n_mixture = n_train - n_single - n_partition
    if n_mixture < 1:
        n_partition -= 1 - n_mixture
        n_mixture = 1
    return n_single, n_partition, n_mixture


def generate_suite(
    seed: int, n_train_tasks: int = 12, n_test_tasks: int = 4
) -> tuple[list[TerrainTask], list[TerrainTask]]:
    """Training tasks over the training pool; test tasks with novel
    materials (every test task contains at least one) and the Layers
    composition held out for testing."""
    if n_train_tasks < 2 or n_test_tasks < 1:
        raise ValueError("need at least 2 training and 1 test task")
    rng = np.random.default_rng(seed)
    for _ in range(50):
        train_mats = training_materials(rng)
        novel = novel_materials(rng)
        if appearance_gap(train_mats, novel) >= APPEARANCE_MARGIN:
            break
    else:
        raise RuntimeError("could not place novel materials at the appearance margin")
    materials = train_mats + novel
    train_idx = list(range(len(train_mats)))
    novel_idx = list(range(len(train_mats), len(materials)))
    gleam, dense, sheet, fluff = novel_idx

    n_single, n_partition, n_mixture = _train_composition_counts(n_train_tasks)
    train_tasks = []
    mat_cycle = 0
    for composition, count in (
        ("Single", n_single),
        ("Partition", n_partition),
        ("Mixture", n_mixture),
    ):
        for _ in range(count):
            if composition == "Single":
                picks = [train_idx[mat_cycle % len(train_idx)]]
            else:
                k = 2 if composition == "Partition" and rng.random() < 0.6 else 3
                first = train_idx[mat_cycle % len(train_idx)]
                rest = [i for i in train_idx if i != first]
                picks = [first, *rng.choice(rest, size=k - 1, replace=False).tolist()]
            mat_cycle += 1
            tid = f"train-{len(train_tasks):02d}"
            train_tasks.append(
                TerrainTask(
                    task_id=tid,
                    terrain=_make_terrain(
                        composition, picks, materials, rng, seed=int(rng.integers(2**31))
                    ),
                    is_test=False,
                )
            )

    test_specs = []
    for i in range(n_test_tasks):
        kind = COMPOSITIONS[i % len(COMPOSITIONS)]
        if kind == "Single":
            test_specs.append(("Single", [dense]))
        elif kind == "Partition":
            test_specs.append(("Partition", [gleam, 2]))
        elif kind == "Mixture":
            test_specs.append(("Mixture", [sheet, 2, gleam, fluff]))
        else:
            # deceptive lid over an unscoopable layer, next to high yield
            test_specs.append(("Layers", [gleam, sheet, dense]))
    test_tasks = []
    for i, (composition, picks) in enumerate(test_specs):
        tid = f"test-{i:02d}"
        # deceptive compositions get a majority share of the lure material,
        # so a non-adaptive ranking has plenty of attractive bad actions;
        # the layered tray keeps its yielding region small so random
        # records undersample it and the success threshold stays fair
        if composition == "Layers":
            cut_range = (0.78, 0.84)
        elif composition == "Partition":
            cut_range = (0.55, 0.65)
        else:
            cut_range = (0.3, 0.7)
        terrain = _make_terrain(
            composition, picks, materials, rng, seed=int(rng.integers(2**31)),
            cut_range=cut_range,
        )
        if composition == "Layers":
            # a deliberately gentle tray: the lid's deception, not the
            # topography, is what the layered test task probes
            terrain.heightfield *= 0.25
        task = TerrainTask(task_id=tid, terrain=terrain, is_test=True)
        if not (set(terrain.material_ids()) & {materials[j].id for j in novel_idx}):
            raise RuntimeError(f"test task {tid} carries no novel material")
        test_tasks.append(task)
    return train_tasks, test_tasks


# --- rendering -------------------------------------------------------------


def _direction(yaw: int) -> tuple[np.ndarray, np.ndarray]:
    a = yaw * (2.0 * math.pi / N_YAW)
    d = np.array([math.cos(a), math.sin(a)])
    p = np.array([-math.sin(a), math.cos(a)])
    return d, p


def render_patches(
    terrain: TerrainInstance,
    actions: list[ScoopAction],
    rng: np.random.Generator | None = None,
    patch_h: int = 16,
    patch_w: int = 16,
) -> np.ndarray:
    """(n, 4, H, W) patches oriented along each action's yaw, left edge at
    the scoop start. Noise-free when rng is None."""
    n = len(actions)
    nx, ny = terrain.surface.shape
    colors = np.array([m.color for m in terrain.materials])
    textures = np.array([m.texture_scale for m in terrain.materials])
    du = (np.arange(patch_w) + 0.5) / patch_w * PATCH_LEN
    dv = ((np.arange(patch_h) + 0.5) / patch_h - 0.5) * PATCH_LEN
    DU, DV = np.meshgrid(du, dv)  # (H, W)
    out = np.empty((n, 4, patch_h, patch_w))
    for i, act in enumerate(actions):
        if not (0.0 <= act.x <= terrain.extent[0] and 0.0 <= act.y <= terrain.extent[1]):
            raise BoundsError(f"action start ({act.x}, {act.y}) outside extent {terrain.extent}")
        d, p = _direction(act.yaw)
        px = act.x + d[0] * DU + p[0] * DV
        py = act.y + d[1] * DU + p[1] * DV
        ix = np.clip((px / terrain.cell).astype(np.int64), 0, nx - 1)
        iy = np.clip((py / terrain.cell).astype(np.int64), 0, ny - 1)
        mats = terrain.surface[ix, iy]
        out[i, :3] = colors[mats].transpose(2, 0, 1)
        out[i, 3] = terrain.heightfield[ix, iy]
        if rng is not None:
            scale = textures[mats]
            out[i, :3] += rng.uniform(-1.0, 1.0, size=(3, patch_h, patch_w)) * scale
            out[i, 3] += rng.uniform(-HEIGHT_NOISE, HEIGHT_NOISE, size=(patch_h, patch_w))
    np.clip(out[:, :3], 0.0, 1.0, out=out[:, :3])
    return out


def render_patch(
    terrain: TerrainInstance, act: ScoopAction, rng: np.random.Generator | None = None
) -> Observation:
    return Observation(render_patches(terrain, [act], rng)[0])


# --- scooping ---------------------------------------------------------------


def feasible(terrain: TerrainInstance, act: ScoopAction) -> bool:
    """Swath from start through the drag must stay inside the tray."""
    d, p = _direction(act.yaw)
    drag = TrajectoryConstants().drag_length_m
    half_w = SCOOP_WIDTH / 2.0
    corners = []
    for along in (-FOOT_MARGIN, drag + FOOT_MARGIN):
        for side in (-half_w - FOOT_MARGIN, half_w + FOOT_MARGIN):
            corners.append((act.x + d[0] * along + p[0] * side, act.y + d[1] * along + p[1] * side))
    return all(
        0.0 <= cx <= terrain.extent[0] and 0.0 <= cy <= terrain.extent[1]
        for cx, cy in corners
    )


def _footprint_cells(terrain: TerrainInstance, act: ScoopAction):
    d, p = _direction(act.yaw)
    drag = TrajectoryConstants().drag_length_m
    along = np.linspace(0.0, drag, 7)
    side = np.linspace(-SCOOP_WIDTH / 2, SCOOP_WIDTH / 2, 7)
    A, S = np.meshgrid(along, side)
    px = act.x + d[0] * A + p[0] * S
    py = act.y + d[1] * A + p[1] * S
    nx, ny = terrain.surface.shape
    ix = np.clip((px / terrain.cell).astype(np.int64), 0, nx - 1)
    iy = np.clip((py / terrain.cell).astype(np.int64), 0, ny - 1)
    return ix.ravel(), iy.ravel()


def _center_cell(terrain: TerrainInstance, act: ScoopAction):
    d, _ = _direction(act.yaw)
    drag = TrajectoryConstants().drag_length_m
    cx = act.x + d[0] * drag / 2.0
    cy = act.y + d[1] * drag / 2.0
    nx, ny = terrain.surface.shape
    return (
        int(np.clip(cx / terrain.cell, 0, nx - 1)),
        int(np.clip(cy / terrain.cell, 0, ny - 1)),
    )


def _local_slope_deg(terrain: TerrainInstance, ix: int, iy: int) -> float:
    h = terrain.heightfield
    nx, ny = h.shape
    x0, x1 = max(ix - 1, 0), min(ix + 1, nx - 1)
    y0, y1 = max(iy - 1, 0), min(iy + 1, ny - 1)
    gx = (h[x1, iy] - h[x0, iy]) / ((x1 - x0) * terrain.cell) if x1 > x0 else 0.0
    gy = (h[ix, y1] - h[ix, y0]) / ((y1 - y0) * terrain.cell) if y1 > y0 else 0.0
    return math.degrees(math.atan(math.hypot(gx, gy)))


def effective_material(terrain: TerrainInstance, act: ScoopAction) -> LatentMaterial:
    """Material the scoop actually engages: the hidden layer when the
    scoop goes below the layer boundary."""
    ix, iy = _center_cell(terrain, act)
    idx = int(terrain.surface[ix, iy])
    if (
        terrain.hidden is not None
        and terrain.layer_depth is not None
        and act.depth > terrain.layer_depth
    ):
        idx = int(terrain.hidden[ix, iy])
    return terrain.materials[idx]


def base_reward(terrain: TerrainInstance, act: ScoopAction) -> float:
    """Noise-free scoop volume in cm^3."""
    mat = effective_material(terrain, act)
    depth_factor = math.exp(-(((act.depth - mat.peak_depth) / mat.depth_width) ** 2))
    stiff = 1.0 if act.stiffness == mat.stiffness_pref else STIFF_MISMATCH
    ix, iy = _center_cell(terrain, act)
    slope = _local_slope_deg(terrain, ix, iy)
    raw = mat.peak_volume * depth_factor * stiff
    raw -= mat.jam_penalty * max(0.0, slope - SLOPE_FREE_DEG)
    return max(raw, 0.0)


def sample_reward(
    terrain: TerrainInstance, act: ScoopAction, rng: np.random.Generator
) -> float:
    """base_reward scaled by mean-one lognormal noise, plus a small
    measurement floor so unscoopable material still reads near zero."""
    noise = math.exp(
        REWARD_NOISE_SIGMA * rng.standard_normal() - REWARD_NOISE_SIGMA**2 / 2.0
    )
    floor = abs(rng.normal(0.0, NOISE_FLOOR_STD))
    return base_reward(terrain, act) * noise + floor


def execute_scoop(
    terrain: TerrainInstance, act: ScoopAction, rng: np.random.Generator
) -> float:
    """Sample a reward, then mutate the terrain: the footprint sinks and
    a pierced layer becomes exposed surface."""
    reward = sample_reward(terrain, act, rng)
    ix, iy = _footprint_cells(terrain, act)
    terrain.heightfield[ix, iy] = np.maximum(
        terrain.heightfield[ix, iy] - 0.6 * act.depth, 0.0
    )
    if (
        terrain.hidden is not None
        and terrain.layer_depth is not None
        and act.depth > terrain.layer_depth
    ):
        terrain.surface[ix, iy] = terrain.hidden[ix, iy]
    return reward


def compute_threshold(rewards) -> float:
    """Success threshold: the 5th largest reward among the records."""
    seq = list(rewards)
    if seq and isinstance(seq[0], ScoopRecord):
        seq = [r.reward for r in seq]
    values = np.asarray(seq, dtype=np.float64)
    if values.size < 5:
        raise ValueError(f"need at least 5 records, got {values.size}")
    return float(np.sort(values)[-5])


def sample_random_action(
    terrain: TerrainInstance, rng: np.random.Generator
) -> ScoopAction:
    return ScoopAction(
        x=float(rng.uniform(0.0, terrain.extent[0])),
        y=float(rng.uniform(0.0, terrain.extent[1])),
        yaw=int(rng.integers(N_YAW)),
        depth=float(rng.uniform(DEPTH_MIN, DEPTH_MAX)),
        stiffness=int(rng.integers(2)),
    )


def collect_offline(task: TerrainTask, n_samples: int = 100, seed: int = 0) -> TaskDataset:
    """Uniformly random feasible scoops on the pristine terrain.

    The terrain is treated as reset between scoops, so records are
    i.i.d.; infeasible draws are discarded and redrawn.
    """
    rng = np.random.default_rng(seed)
    terrain = task.terrain
    records = []
    while len(records) < n_samples:
        act = sample_random_action(terrain, rng)
        if not feasible(terrain, act):
            continue
        obs = render_patch(terrain, act, rng)
        reward = sample_reward(terrain, act, rng)
        records.append(ScoopRecord(obs=obs, action=act, reward=reward))
    return TaskDataset(
        task_id=task.task_id,
        records=records,
        constants=TrajectoryConstants(),
        ground_truth={
            "composition": task.composition,
            "materials": terrain.material_ids(),
            "material_table": {
                m.id: m.to_dict()
                for m in terrain.materials
                if m.id in terrain.material_ids()
            },
            "layer_depth": terrain.layer_depth,
            "collect_seed": seed,
        },
    )
