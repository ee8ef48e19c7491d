import numpy as np
import pytest

from terradapt import frames, training
from terradapt.basis import BasisEnsemble
from terradapt.dataset import Trajectory

import reference


def _tiny_ensemble(seed=0, k=2, hidden=8):
    return BasisEnsemble.create(k, np.random.default_rng(seed), dt=0.1,
                                substeps=1, hidden=hidden, n_hidden=1)


def _synthetic_traj(rng, env_id: int, n_steps: int = 12) -> Trajectory:
    """Small-motion trajectory following a per-env constant-plus-control rule."""
    base = np.array([0.04, 0.01, 0.0, 0.0, 0.0, 0.02]) * (1.0 + 0.3 * env_id)
    poses = np.empty((n_steps + 1, 6))
    poses[0] = rng.uniform(-0.2, 0.2, 6)
    controls = rng.uniform(-1.0, 1.0, (n_steps + 1, 2))
    feats = rng.normal(0.0, 0.5, (n_steps + 1, 16))
    for t in range(n_steps):
        delta = base + 0.01 * np.concatenate([controls[t], np.zeros(4)])
        poses[t + 1] = frames.step_poses(poses[t:t + 1], delta[np.newaxis])[0]
    return Trajectory(env_id=env_id, times=np.arange(n_steps + 1) * 0.1,
                      poses=poses, controls=controls,
                      e_elev=feats[:, :8], e_sem=feats[:, 8:])


def _tiny_data(n_envs=2, n_traj=3, seed=5):
    rng = np.random.default_rng(seed)
    return [[training.prepare_traj(_synthetic_traj(rng, e))
             for _ in range(n_traj)] for e in range(n_envs)]


def _tiny_cfg(**over):
    base = dict(k=2, hidden=8, f_envs=2, n_traj=3, n_examples=1, n_query=2,
                s_windows=1, t_pred=3, steps=40, lr_start=3e-3, lr_end=1e-4,
                example_batch=64, seed=1)
    base.update(over)
    return training.TrainerConfig(**base)


def test_rollout_follows_pose_composition():
    rng = np.random.default_rng(2)
    b, t_pred = 3, 4
    start = rng.uniform(-0.3, 0.3, (b, 6))
    controls = rng.uniform(-1, 1, (b, t_pred, 2))
    feats = rng.normal(0, 0.5, (b, t_pred, 16))
    delta = rng.uniform(-0.05, 0.05, (b, 6))
    seen = []

    def fn(inputs, ctrl):
        seen.append(inputs.copy())
        return delta

    preds = training.rollout_model(fn, start, controls, feats)
    assert preds.shape == (b, t_pred + 1, 6)
    assert np.array_equal(preds[:, 0], start)
    # independent scalar composition: planar delta rotated by current yaw
    for t in range(t_pred):
        assert np.array_equal(seen[t], frames.assemble_inputs(preds[:, t],
                                                              feats[:, t]))
        for i in range(b):
            p, d = preds[i, t], delta[i]
            c, s = np.cos(p[5]), np.sin(p[5])
            want = np.concatenate([
                [p[0] + c * d[0] - s * d[1], p[1] + s * d[0] + c * d[1],
                 p[2] + d[2]],
                frames.wrap_angles(p[3:] + d[3:])])
            assert np.allclose(preds[i, t + 1], want, atol=1e-12)


def test_rollout_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    ens = _tiny_ensemble(seed=4)
    b, t_pred = 3, 3
    start = rng.uniform(-0.3, 0.3, (b, 6))
    controls = rng.uniform(-1, 1, (b, t_pred, 2))
    feats = rng.normal(0, 0.5, (b, t_pred, 16))
    gt = rng.uniform(-0.3, 0.3, (b, t_pred + 1, 6))
    alphas = rng.normal(0, 1, (b, ens.k))

    loss, grads, preds = training.rollout_loss_and_grads(
        ens, alphas, start, controls, gt, feats)
    assert np.array_equal(
        preds, training.rollout_ensemble(ens, alphas, start, controls, feats))
    err = frames.pose_error(preds[:, 1:], gt[:, 1:])
    assert loss == pytest.approx(float(np.sum(err * err) / b), rel=1e-12)

    params = ens.params()

    def loss_at(idx, p):
        saved = params[idx].copy()
        params[idx][...] = p
        rolled = training.rollout_ensemble(ens, alphas, start, controls, feats)
        e = frames.pose_error(rolled[:, 1:], gt[:, 1:])
        params[idx][...] = saved
        return float(np.sum(e * e) / b)

    for idx in range(len(params)):
        num = reference.numeric_grad(lambda p, i=idx: loss_at(i, p),
                                     params[idx].copy())
        assert reference.rel_err(grads[idx], num) < 1e-6, f"param {idx}"


def test_shared_alpha_equals_tiled_per_sample():
    rng = np.random.default_rng(6)
    ens = _tiny_ensemble(seed=7)
    b, t_pred = 2, 3
    start = rng.uniform(-0.2, 0.2, (b, 6))
    controls = rng.uniform(-1, 1, (b, t_pred, 2))
    feats = rng.normal(0, 0.5, (b, t_pred, 16))
    alpha = rng.normal(0, 1, ens.k)
    a = training.rollout_ensemble(ens, alpha, start, controls, feats)
    tiled = np.tile(alpha, (b, 1))
    assert np.array_equal(
        a, training.rollout_ensemble(ens, tiled, start, controls, feats))


def test_trainer_reduces_loss_on_learnable_rule():
    data = _tiny_data()
    cfg = _tiny_cfg(steps=120, lr_start=5e-3)
    trainer = training.Trainer(_tiny_ensemble(seed=8), data, cfg)
    losses = np.array(trainer.run())
    assert len(losses) == cfg.steps
    assert losses[-5:].mean() < 0.5 * losses[:5].mean()


def test_checkpoint_resume_is_bitwise_identical(tmp_path):
    data = _tiny_data()
    cfg = _tiny_cfg(steps=10)
    path = tmp_path / "ck.npz"

    t1 = training.Trainer(_tiny_ensemble(seed=9), data, cfg)
    t1.run(4)
    training.save_checkpoint(path, t1, extras={"mean_alpha": np.arange(2.0)})
    t1.run(4)

    ck = training.load_checkpoint(path)
    assert np.array_equal(ck["extras"]["mean_alpha"], np.arange(2.0))
    t2 = training.resume_trainer(ck, data)
    assert t2.step_count == 4
    t2.run(4)

    assert t1.loss_history == t2.loss_history
    for p1, p2 in zip(t1.ensemble.params(), t2.ensemble.params()):
        assert np.array_equal(p1, p2)
    for m1, m2 in zip(t1.adam.m, t2.adam.m):
        assert np.array_equal(m1, m2)


def test_env_alphas_shape_and_determinism():
    data = _tiny_data()
    trainer = training.Trainer(_tiny_ensemble(seed=10), data, _tiny_cfg())
    a1 = trainer.env_alphas()
    a2 = trainer.env_alphas()
    assert a1.shape == (len(data), trainer.ensemble.k)
    assert np.array_equal(a1, a2)


def test_config_and_data_validation():
    with pytest.raises(ValueError):
        _tiny_cfg(n_examples=2, n_query=2, n_traj=3)  # 2 + 2 > 3
    with pytest.raises(ValueError, match="f_envs"):
        training.Trainer(_tiny_ensemble(), _tiny_data(n_envs=1), _tiny_cfg())
    rng = np.random.default_rng(11)
    short = [[training.prepare_traj(_synthetic_traj(rng, e, n_steps=2))
              for _ in range(3)] for e in range(2)]
    with pytest.raises(ValueError, match="t_pred"):
        training.Trainer(_tiny_ensemble(), short, _tiny_cfg())


def test_checkpoint_rejects_unknown_version(tmp_path):
    data = _tiny_data()
    trainer = training.Trainer(_tiny_ensemble(seed=12), data, _tiny_cfg())
    path = tmp_path / "ck.npz"
    training.save_checkpoint(path, trainer)
    with np.load(path) as d:
        arrays = {k: d[k] for k in d.files}
    arrays["format_version"] = np.array(999, dtype=np.int64)
    np.savez(path, **arrays)
    with pytest.raises(ValueError, match="version"):
        training.load_checkpoint(path)
