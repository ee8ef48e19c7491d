import csv

import numpy as np
import pytest

from terradapt import evaluation, training
from terradapt.baselines import DirectMlp, NodeFinetune
from terradapt.basis import BasisEnsemble
from terradapt.dataset import Transitions
from terradapt.frames import ELEV_SLICE, SEM_SLICE


def _random_tr(rng, m=30):
    inputs = rng.normal(0, 0.5, (m, 22))
    inputs[:, :3] = 0.0
    inputs[:, 5] = 0.0
    return Transitions(inputs, rng.uniform(-1, 1, (m, 2)),
                       rng.normal(0, 0.1, (m, 6)))


def test_ablate_inputs_zeroes_the_right_slots():
    rng = np.random.default_rng(0)
    x = rng.normal(0, 1, (5, 22))
    sem = evaluation.ablate_inputs(x, "semantic")
    assert np.all(sem[:, SEM_SLICE] == 0.0)
    assert np.array_equal(sem[:, ELEV_SLICE], x[:, ELEV_SLICE])
    elev = evaluation.ablate_inputs(x, "elevation")
    assert np.all(elev[:, ELEV_SLICE] == 0.0)
    assert np.array_equal(elev[:, SEM_SLICE], x[:, SEM_SLICE])
    both = evaluation.ablate_inputs(x, "both")
    assert np.all(both[:, 6:22] == 0.0)
    assert np.array_equal(both[:, :6], x[:, :6])
    assert evaluation.ablate_inputs(x, "none") is x
    assert not np.any(x[:, 6:22] == 0.0)  # originals untouched
    with pytest.raises(ValueError, match="ablate mode"):
        evaluation.ablate_inputs(x, "speed")


def test_masked_predict_wraps_the_view():
    seen = []

    def fn(inputs, controls):
        seen.append(inputs.copy())
        return np.zeros((len(inputs), 6))

    rng = np.random.default_rng(1)
    x = rng.normal(0, 1, (4, 22))
    u = rng.normal(0, 1, (4, 2))
    evaluation.masked_predict(fn, "semantic")(x, u)
    assert np.array_equal(seen[-1], evaluation.ablate_inputs(x, "semantic"))
    assert evaluation.masked_predict(fn, "none") is fn


def test_one_step_mse_closed_form():
    rng = np.random.default_rng(2)
    tr = _random_tr(rng, m=8)
    off = np.array([0.1, -0.2, 0.0, 0.3, 0.0, 0.05])
    fn = lambda x, u: tr.targets + off
    assert evaluation.one_step_mse(fn, tr) == pytest.approx(
        float(np.sum(off * off)), rel=1e-12)


def test_fit_alpha_uses_the_ablated_view():
    rng = np.random.default_rng(3)
    ens = BasisEnsemble.create(2, rng, hidden=8, n_hidden=1)
    tr = _random_tr(rng, m=40)
    a_none = evaluation.fit_alpha(ens, tr, lam=1e-3)
    direct = ens.adapt(tr.inputs, tr.controls, tr.targets, 1e-3).alpha
    assert np.array_equal(a_none, direct)
    a_sem = evaluation.fit_alpha(ens, tr, lam=1e-3, ablate="semantic")
    masked = ens.adapt(evaluation.ablate_inputs(tr.inputs, "semantic"),
                       tr.controls, tr.targets, 1e-3).alpha
    assert np.array_equal(a_sem, masked)
    assert not np.allclose(a_none, a_sem)


def test_va_predict_fn_applies_the_mask():
    rng = np.random.default_rng(4)
    ens = BasisEnsemble.create(2, rng, hidden=8, n_hidden=1)
    tr = _random_tr(rng, m=6)
    alpha = np.array([0.4, 0.6])
    fn = evaluation.va_predict_fn(ens, alpha, ablate="elevation")
    want = ens.predict(evaluation.ablate_inputs(tr.inputs, "elevation"),
                       tr.controls, alpha)
    assert np.array_equal(fn(tr.inputs, tr.controls), want)


def test_env_split_partitions_in_order():
    rng = np.random.default_rng(5)
    trajs = []
    for i in range(5):
        tr = _random_tr(rng, m=4)
        trajs.append(training.TrajData(poses=np.zeros((5, 6)),
                                       controls=np.zeros((4, 2)),
                                       feats=np.zeros((5, 16)),
                                       transitions=tr))
    ex, qry, rest = evaluation.env_split(trajs, 2)
    assert len(ex) == 8 and len(qry) == 12
    assert rest == trajs[2:]
    assert np.array_equal(ex.inputs[:4], trajs[0].transitions.inputs)
    with pytest.raises(ValueError):
        evaluation.env_split(trajs[:2], 2)


def _drift_traj(n, d=0.05):
    """Straight-line ground truth along x at yaw 0."""
    poses = np.zeros((n + 1, 6))
    poses[:, 0] = np.arange(n + 1) * d
    return training.TrajData(poses=poses, controls=np.zeros((n, 2)),
                             feats=np.zeros((n + 1, 16)), transitions=None)


def test_build_windows_tiles_without_overlap():
    td = _drift_traj(10)
    starts, ctrls, gts, fts = evaluation.build_windows([td, td], 4)
    assert starts.shape == (4, 6) and ctrls.shape == (4, 4, 2)
    assert gts.shape == (4, 5, 6) and fts.shape == (4, 4, 16)
    assert np.array_equal(gts[0], td.poses[0:5])
    assert np.array_equal(gts[1], td.poses[4:9])  # next tile starts at 4
    with pytest.raises(ValueError, match="horizon"):
        evaluation.build_windows([td], 11)


def test_horizon_curve_matches_linear_drift_formula():
    d, eps, n = 0.05, 0.01, 8
    td = _drift_traj(n, d)

    def fn(inputs, controls):
        out = np.zeros((len(inputs), 6))
        out[:, 0] = d + eps
        return out

    horizons = (1, 2, 4)
    curve = evaluation.horizon_curve(fn, [td], horizons)
    for h in horizons:
        want = eps * eps * sum(t * t for t in range(1, h + 1)) / h
        assert curve[h] == pytest.approx(want, rel=1e-9), f"h={h}"
    vals = [curve[h] for h in sorted(curve)]
    assert vals == sorted(vals)  # drift makes the curve nondecreasing

    exact = evaluation.horizon_curve(
        lambda x, u: np.tile([d, 0, 0, 0, 0, 0.0], (len(x), 1)), [td], horizons)
    assert all(v == pytest.approx(0.0, abs=1e-24) for v in exact.values())


def test_adapt_benchmark_rows_and_budgets():
    rng = np.random.default_rng(6)
    ens = BasisEnsemble.create(2, rng, hidden=8, n_hidden=1)
    mlp = DirectMlp.create(rng, hidden=8, n_hidden=1)
    node = NodeFinetune.create(rng, hidden=8, n_hidden=1)
    tr = _random_tr(rng, m=20)
    rows = evaluation.adapt_benchmark(
        ens, {"mlp": mlp, "node": node}, tr, lam=1e-3,
        budgets={"mlp": {"steps": 5}, "node": {"steps": 3}})
    assert [r[0] for r in rows] == ["va", "mlp", "node"]
    assert rows[0][2] == 1
    assert rows[1][2] == 5 and rows[2][2] == 3
    assert all(r[1] > 0 for r in rows)


def test_metrics_round_trip_and_stability(tmp_path):
    metrics = {"a": 0.1 + 0.2, "b": {"c": np.float64(1.0) / 3.0,
                                     "d": np.int64(7)},
               "e": [np.float32(0.5), 2], "f": np.arange(3) * 0.1}
    p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
    evaluation.write_metrics(p1, metrics)
    evaluation.write_metrics(p2, metrics)
    assert p1.read_bytes() == p2.read_bytes()
    back = evaluation.read_metrics(p1)
    assert back["a"] == 0.1 + 0.2  # full-precision floats survive
    assert back["b"]["c"] == 1.0 / 3.0 and back["b"]["d"] == 7
    assert back["f"] == [0.0, 0.1, 0.2]


def test_write_timings_csv(tmp_path):
    path = tmp_path / "t.csv"
    evaluation.write_timings(path, [("fit", 0.125), ("adapt", 1.5, "k=2")])
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["name", "seconds", "detail"]
    assert rows[1] == ["fit", "0.125000", ""]
    assert rows[2] == ["adapt", "1.500000", "k=2"]
