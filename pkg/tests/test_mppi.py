import numpy as np
import pytest

from terradapt import mppi, terrain
from terradapt.basis import BasisEnsemble
from terradapt.baselines import DirectMlp
from terradapt.dataset import Transitions
from terradapt.embeddings import StatsEmbedder
from terradapt.frames import step_poses
from terradapt.vehicle import VehicleParams


class ZeroProvider:
    def for_rollout(self, pose):
        def query(x, y):
            b = len(np.atleast_1d(x))
            return np.zeros((b, 8)), np.zeros((b, 8))

        return query


def planar_fn(poses, inputs, controls):
    d = np.zeros((len(poses), 6))
    d[:, 0] = 0.1 * controls[:, 1]
    d[:, 5] = 0.2 * controls[:, 0]
    return d


def zero_fn(poses, inputs, controls):
    return np.zeros((len(poses), 6))


def test_zero_noise_returns_the_nominal():
    cfg = mppi.MppiConfig(horizon=5, n_samples=8, steer_std=0.0,
                          speed_std=0.0)
    planner = mppi.Mppi(planar_fn, ZeroProvider(), cfg, env_size=20.0,
                        rng=np.random.default_rng(0))
    nominal = np.stack([np.linspace(-0.5, 0.5, 5),
                        np.linspace(0.5, 1.5, 5)], axis=1)
    planner.reset(nominal)
    u = planner.plan(np.array([10.0, 10, 0, 0, 0, 0]), np.array([15.0, 10]))
    assert np.allclose(u, nominal[0], atol=1e-12)
    want = np.vstack([nominal[1:], nominal[-1]])
    assert np.allclose(planner.nominal, want, atol=1e-12)


def _manual_plan(cfg, nominal, pose, goal, seed):
    """Candidate sampling, documented cost terms, softmax blend, by hand."""
    rng = np.random.default_rng(seed)
    noise = rng.normal(size=(cfg.n_samples, cfg.horizon, 2))
    noise *= np.array([cfg.steer_std, cfg.speed_std])
    noise[0] = 0.0
    seqs = nominal[np.newaxis] + noise
    seqs[..., 0] = np.clip(seqs[..., 0], -1.0, 1.0)
    seqs[..., 1] = np.clip(seqs[..., 1], 0.0, cfg.v_max)

    costs = np.zeros(cfg.n_samples)
    poses = np.tile(pose, (cfg.n_samples, 1))
    for t in range(cfg.horizon):
        poses = step_poses(poses, planar_fn(poses, None, seqs[:, t]))
        costs += cfg.goal_weight * np.hypot(poses[:, 0] - goal[0],
                                            poses[:, 1] - goal[1])
    costs += cfg.terminal_weight * np.hypot(poses[:, 0] - goal[0],
                                            poses[:, 1] - goal[1])
    w = np.exp(-(costs - costs.min()) / cfg.temperature)
    w /= w.sum()
    return np.einsum("s,sth->th", w, seqs)


def test_plan_matches_manual_softmax_blend():
    cfg = mppi.MppiConfig(horizon=5, n_samples=16, temperature=0.7,
                          boundary_margin=2.0)
    pose = np.array([10.0, 10.0, 0, 0, 0, 0.3])
    goal = np.array([14.0, 11.0])
    planner = mppi.Mppi(planar_fn, ZeroProvider(), cfg, env_size=20.0,
                        rng=np.random.default_rng(7))
    nominal = planner.nominal.copy()
    u = planner.plan(pose, goal)

    blended = _manual_plan(cfg, nominal, pose, goal, seed=7)
    assert np.allclose(u, blended[0], atol=1e-12)
    assert np.allclose(planner.nominal,
                       np.vstack([blended[1:], blended[-1]]), atol=1e-12)


def test_high_temperature_blends_toward_candidate_mean():
    cfg = mppi.MppiConfig(horizon=4, n_samples=32, temperature=1e9)
    planner = mppi.Mppi(planar_fn, ZeroProvider(), cfg, env_size=20.0,
                        rng=np.random.default_rng(8))
    nominal = planner.nominal.copy()
    u = planner.plan(np.array([10.0, 10, 0, 0, 0, 0]), np.array([12.0, 10]))

    rng = np.random.default_rng(8)
    noise = rng.normal(size=(cfg.n_samples, cfg.horizon, 2))
    noise *= np.array([cfg.steer_std, cfg.speed_std])
    noise[0] = 0.0
    seqs = nominal[np.newaxis] + noise
    seqs[..., 0] = np.clip(seqs[..., 0], -1.0, 1.0)
    seqs[..., 1] = np.clip(seqs[..., 1], 0.0, cfg.v_max)
    assert np.allclose(u, seqs[:, 0].mean(axis=0), atol=1e-6)


def test_cost_terms_attitude_and_boundary():
    cfg = mppi.MppiConfig(horizon=3, n_samples=2)
    planner = mppi.Mppi(zero_fn, ZeroProvider(), cfg, env_size=20.0,
                        rng=np.random.default_rng(9))
    goal = np.array([12.0, 10.0])
    seqs = np.zeros((1, cfg.horizon, 2))

    tilted = np.array([10.0, 10, 0, 0.2, -0.1, 0])
    d = np.hypot(*(tilted[:2] - goal))
    want = cfg.horizon * (cfg.goal_weight * d
                          + cfg.attitude_weight * (0.2 ** 2 + 0.1 ** 2))
    want += cfg.terminal_weight * d
    got = planner._costs(tilted, goal, seqs)
    assert got[0] == pytest.approx(want, rel=1e-12)

    near_edge = np.array([2.0, 10, 0, 0, 0, 0])  # 5 m inside the 7 m margin
    d = np.hypot(*(near_edge[:2] - goal))
    want = cfg.horizon * (cfg.goal_weight * d + cfg.boundary_weight * 5.0)
    want += cfg.terminal_weight * d
    got = planner._costs(near_edge, goal, seqs)
    assert got[0] == pytest.approx(want, rel=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        mppi.MppiConfig(temperature=0.0)
    with pytest.raises(ValueError):
        mppi.MppiConfig(horizon=0)
    with pytest.raises(ValueError):
        mppi.MppiConfig(steer_std=-0.1)


def test_adaptation_policy_schedules():
    once = mppi.AdaptationPolicy("once", warmup_steps=10, period_steps=5)
    assert not once.due(9, 0)
    assert once.due(10, 0) and once.due(37, 0)
    assert not once.due(37, 1)

    per = mppi.AdaptationPolicy("periodic", warmup_steps=10, period_steps=5)
    assert not per.due(9, 3)
    assert per.due(10, 0) and per.due(15, 1) and per.due(25, 99)
    assert not per.due(11, 0) and not per.due(24, 0)

    with pytest.raises(ValueError):
        mppi.AdaptationPolicy("always")
    with pytest.raises(ValueError):
        mppi.AdaptationPolicy("once", warmup_steps=0)


class RecordingOwner:
    def __init__(self):
        self.seen = None

    def predict(self, inputs, controls):
        return np.zeros((len(inputs), 6))

    def refit(self, tr):
        self.seen = tr


def test_adaptive_model_fifo_and_refit():
    owner = RecordingOwner()
    model = mppi.AdaptiveModel(owner, capacity=3)
    model.refit()  # empty buffer: no-op
    assert model.n_refits == 0 and owner.seen is None

    for i in range(5):
        model.observe((np.full(22, float(i)), np.full(2, float(i)),
                       np.full(6, float(i))))
    tr = model.buffered()
    assert len(tr) == 3
    assert np.array_equal(tr.inputs[:, 0], [2.0, 3.0, 4.0])  # oldest dropped
    model.refit()
    assert model.n_refits == 1 and len(owner.seen) == 3


def test_va_predictor_refit_recovers_in_span_dynamics():
    rng = np.random.default_rng(10)
    ens = BasisEnsemble.create(2, rng, hidden=8, n_hidden=1)
    true_alpha = np.array([0.7, -0.3])
    inputs = rng.normal(0, 0.5, (40, 22))
    controls = rng.uniform(-1, 1, (40, 2))
    targets = ens.predict(inputs, controls, true_alpha)
    vp = mppi.VaPredictor(ens, np.zeros(2), lam=0.0)
    vp.refit(Transitions(inputs, controls, targets))
    assert np.allclose(vp.alpha, true_alpha, atol=1e-7)
    assert np.allclose(vp.predict(inputs, controls), targets, atol=1e-7)


def test_baseline_predictor_refits_from_the_base():
    rng = np.random.default_rng(11)
    base = DirectMlp.create(np.random.default_rng(12), hidden=8, n_hidden=2)
    bp = mppi.BaselinePredictor(base, adapt_kw={"steps": 10, "lr": 1e-3})
    inputs = rng.normal(0, 0.5, (20, 22))
    controls = rng.uniform(-1, 1, (20, 2))
    targets = rng.normal(0, 0.1, (20, 6))
    before = bp.predict(inputs, controls)
    bp.refit(Transitions(inputs, controls, targets))
    assert bp.current is not base
    assert not np.allclose(bp.predict(inputs, controls), before)
    assert np.array_equal(bp.base.net.weights[-1], base.net.weights[-1])


def test_navigate_reaches_goal_with_oracle_dynamics():
    env = terrain.make_flat_environment(n=120)
    veh = VehicleParams()
    model = mppi.OracleModel(env, veh)
    cfg = mppi.MppiConfig(horizon=8, n_samples=32, boundary_margin=2.0)
    planner = mppi.Mppi(model.model_fn, ZeroProvider(), cfg,
                        env_size=env.size_m, rng=np.random.default_rng(13))
    res = mppi.navigate(env, model, planner, [3.0, 3.0, 0, 0, 0, 0],
                        [8.0, 3.0], veh, max_steps=120)
    assert res.success
    assert res.final_distance <= 1.0
    assert res.n_steps == len(res.controls) == len(res.path) - 1
    assert np.hypot(res.path[-1, 0] - 8.0, res.path[-1, 1] - 3.0) <= 1.0


def test_navigate_periodic_adaptation_schedule():
    env = terrain.make_flat_environment(n=120)
    veh = VehicleParams()
    rng = np.random.default_rng(14)
    ens = BasisEnsemble.create(2, rng, hidden=8, n_hidden=1)
    model = mppi.AdaptiveModel(mppi.VaPredictor(ens, np.zeros(2)))
    cfg = mppi.MppiConfig(horizon=5, n_samples=16, boundary_margin=1.0)
    planner = mppi.Mppi(model.model_fn, ZeroProvider(), cfg,
                        env_size=env.size_m, rng=np.random.default_rng(15))
    policy = mppi.AdaptationPolicy("periodic", warmup_steps=5, period_steps=10)
    res = mppi.navigate(env, model, planner, [1.5, 2.0, 0, 0, 0, 0.5],
                        [10.4, 10.4], veh, max_steps=30, policy=policy,
                        embedder=StatsEmbedder())
    assert res.refit_steps == [5, 15, 25]
    assert model.n_refits == 3
    assert len(model.buffer) == 30


def test_navigate_requires_embedder_for_adaptation():
    env = terrain.make_flat_environment(n=120)
    veh = VehicleParams()
    model = mppi.OracleModel(env, veh)
    cfg = mppi.MppiConfig(horizon=3, n_samples=4)
    planner = mppi.Mppi(model.model_fn, ZeroProvider(), cfg,
                        env_size=env.size_m, rng=np.random.default_rng(16))
    with pytest.raises(ValueError, match="embedder"):
        mppi.navigate(env, model, planner, [3.0, 3, 0, 0, 0, 0], [5.0, 3],
                      veh, max_steps=5, policy=mppi.AdaptationPolicy())


def test_hold_provider_freezes_features():
    env = terrain.make_flat_environment(n=120)
    emb = StatsEmbedder()
    query = mppi.HoldProvider(emb, env).for_rollout(
        np.array([4.0, 5.0, 0, 0, 0, 0.2]))
    e0, s0 = emb.embed(env, 4.0, 5.0, 0.2)
    ee, es = query(np.array([1.0, 2.0, 3.0]), np.array([1.0, 1.0, 1.0]))
    assert ee.shape == (3, 8) and es.shape == (3, 8)
    assert np.array_equal(ee, np.tile(e0, (3, 1)))
    assert np.array_equal(es, np.tile(s0, (3, 1)))
