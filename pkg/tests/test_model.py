import numpy as np
import pytest

from scoopgp import gp
from scoopgp import model as M
from scoopgp.data import load_task_dataset, save_task_dataset
from helpers import make_task, random_action

SMALL = M.Architecture(
    channels=2, patch_h=4, patch_w=4,
    extractor_widths=(12, 8), mean_widths=(6,), kernel_widths=(6,), embed_dim=3,
)


def small_obs_act(seed=0, arch=SMALL):
    rng = np.random.default_rng(seed)
    patch = rng.uniform(0, 1, size=(arch.channels, arch.patch_h, arch.patch_w))
    return M.Observation(patch), random_action(rng)


def test_action_validation():
    M.ScoopAction(0.1, 0.1, 3, 0.05, 1).validate(extent=(0.9, 0.6))
    with pytest.raises(ValueError):
        M.ScoopAction(0.1, 0.1, 8, 0.05, 1).validate()
    with pytest.raises(ValueError):
        M.ScoopAction(0.1, 0.1, 0, 0.09, 1).validate()
    with pytest.raises(ValueError):
        M.ScoopAction(0.1, 0.1, 0, 0.05, 2).validate()
    with pytest.raises(ValueError):
        M.ScoopAction(1.0, 0.1, 0, 0.05, 1).validate(extent=(0.9, 0.6))


def test_observation_validation():
    M.Observation(np.zeros((2, 4, 4))).validate()
    with pytest.raises(ValueError):
        M.Observation(np.full((2, 4, 4), np.nan)).validate()
    bad = np.zeros((2, 4, 4))
    bad[0, 0, 0] = 1.5
    with pytest.raises(ValueError):
        M.Observation(bad).validate()


def test_feature_vector_layout():
    obs, act = small_obs_act()
    x = M.feature_vector(SMALL, obs, act)
    assert x.shape == (SMALL.input_dim,)
    assert x[-1] == float(act.stiffness)
    assert -1.0 <= x[-2] <= 1.0
    with pytest.raises(Exception):
        M.feature_vector(M.Architecture(), obs, act)  # wrong patch shape


def test_flip_permutation_matches_flipped_patch():
    obs, act = small_obs_act(3)
    x = M.feature_vector(SMALL, obs, act)
    flipped = M.feature_vector(SMALL, M.Observation(M.flip_patch(obs.patch)), act)
    perm = M.flip_permutation(SMALL)
    assert np.array_equal(x[perm], flipped)


def test_extract_features_deterministic_and_sized():
    m = M.DeepGPModel.init(SMALL, seed=0)
    obs, act = small_obs_act(1)
    f1 = m.extract_features(obs, act)
    f2 = m.extract_features(obs, act)
    assert np.array_equal(f1, f2)
    assert f1.shape == (SMALL.feature_dim,)
    default = M.DeepGPModel.init(M.Architecture(), seed=0)
    rng = np.random.default_rng(0)
    obs4 = M.Observation(rng.uniform(0, 1, size=(4, 16, 16)))
    assert default.extract_features(obs4, act).shape == (64,)


def test_stiffness_flip_changes_one_feature_and_output():
    m = M.DeepGPModel.init(SMALL, seed=2)
    obs, act = small_obs_act(5)
    other = M.ScoopAction(act.x, act.y, act.yaw, act.depth, 1 - act.stiffness)
    x1 = M.feature_vector(SMALL, obs, act)
    x2 = M.feature_vector(SMALL, obs, other)
    assert np.sum(x1 != x2) == 1
    assert not np.array_equal(m.extract_features(obs, act), m.extract_features(obs, other))


def test_zero_initialized_mean_head_predicts_dataset_mean():
    m = M.DeepGPModel.init(SMALL, seed=0)
    m.reward_mean, m.reward_std = 31.3, 12.0
    obs, act = small_obs_act(7)
    assert m.predict_mean(obs, act) == 31.3


def test_zero_shot_predict_equals_mean():
    m = M.DeepGPModel.init(SMALL, seed=1)
    m.reward_mean, m.reward_std = 10.0, 4.0
    obs, act = small_obs_act(2)
    post = m.predict(obs, act, support=[])
    assert post.mean == m.predict_mean(obs, act)
    assert post.variance == pytest.approx(
        (m.kp.outputscale + m.kp.noise**2) * m.reward_std**2
    )


def test_support_at_query_with_tiny_noise_interpolates():
    m = M.DeepGPModel.init(SMALL, seed=3)
    m.kp = gp.KernelParams(log_noise=np.log(1e-7))
    m.reward_mean, m.reward_std = 5.0, 2.0
    obs, act = small_obs_act(4)
    post = m.predict(obs, act, support=[(obs, act, 42.0)])
    assert post.mean == pytest.approx(42.0, abs=1e-3)
    assert post.variance <= 1e-4


def test_predict_composes_mean_and_gp_oracle():
    m = M.DeepGPModel.init(SMALL, seed=4)
    # give the mean head nonzero output so composition is visible
    m.weights["mean.1.w"].data[:] = np.random.default_rng(0).normal(
        size=m.weights["mean.1.w"].shape
    )
    m.reward_mean, m.reward_std = 20.0, 6.0
    rng = np.random.default_rng(9)
    support = []
    for s in range(3):
        obs, act = small_obs_act(20 + s)
        support.append((obs, act, float(rng.uniform(0, 40))))
    query_obs, query_act = small_obs_act(99)
    post = m.predict(query_obs, query_act, support)

    Xs = np.stack([m.feature_vector(o, a) for o, a, _ in support])
    Zs = m.embed_batch(Xs)
    ms = m.mean_batch(Xs)
    resid = (np.array([r for _, _, r in support]) - 20.0) / 6.0 - ms
    zq = m.embed_batch(m.feature_vector(query_obs, query_act)[None, :])[0]
    ref = gp.posterior(Zs, resid, zq, m.kp)
    mq = m.mean_batch(m.feature_vector(query_obs, query_act)[None, :])[0]
    assert post.mean == pytest.approx((mq + ref.mean) * 6.0 + 20.0, abs=1e-10)
    assert post.variance == pytest.approx(ref.variance * 36.0, abs=1e-10)


def test_residual_zero_support_leaves_prediction_unchanged():
    m = M.DeepGPModel.init(SMALL, seed=5)
    m.reward_mean, m.reward_std = 15.0, 5.0
    obs, act = small_obs_act(11)
    base = m.predict_mean(obs, act)
    post = m.predict(obs, act, support=[(obs, act, base)])
    assert post.mean == pytest.approx(base, abs=1e-9)


def test_model_without_kernel_ignores_support():
    m = M.DeepGPModel.init(SMALL, seed=6, has_kernel=False)
    m.reward_mean, m.reward_std = 10.0, 3.0
    obs, act = small_obs_act(1)
    sup_obs, sup_act = small_obs_act(2)
    p0 = m.predict(obs, act, [])
    p1 = m.predict(obs, act, [(sup_obs, sup_act, 99.0)])
    assert p0.mean == p1.mean
    assert p0.variance == p1.variance == 0.0
    with pytest.raises(RuntimeError):
        m.kernel_t(None)


def test_dataset_roundtrip_and_views(tmp_path):
    task = make_task("t0", 6, seed=0)
    task.ground_truth = {"composition": "Single", "materials": ["train-1"]}
    path = tmp_path / "t0.json"
    save_task_dataset(task, path)
    learner = load_task_dataset(path)
    oracle = load_task_dataset(path, view="oracle")
    assert learner.ground_truth is None
    assert oracle.ground_truth["materials"] == ["train-1"]
    assert len(learner) == 6
    assert np.allclose(learner.rewards, np.round(task.rewards, 6))
    assert learner.records[2].action.to_dict() == task.records[2].action.to_dict()
    assert np.allclose(
        learner.records[3].obs.patch, task.records[3].obs.patch, atol=1e-6
    )
    with pytest.raises(ValueError):
        load_task_dataset(path, view="secret")


def test_dataset_schema_version_rejected(tmp_path):
    import json

    task = make_task("t1", 5, seed=1)
    path = tmp_path / "t1.json"
    save_task_dataset(task, path)
    payload = json.loads(path.read_text())
    payload["schema_version"] = 99
    path.write_text(json.dumps(payload))
    with pytest.raises(ValueError, match="schema_version"):
        load_task_dataset(path)


def test_feature_matrix_cached(tmp_path):
    task = make_task("t2", 4, seed=2)
    X1 = task.feature_matrix(SMALL)
    X2 = task.feature_matrix(SMALL)
    assert X1 is X2
    assert X1.shape == (4, SMALL.input_dim)
