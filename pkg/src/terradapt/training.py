"""Offline multi-step training of the basis ensemble.

Each iteration samples a few environments, fits per-environment
coefficients in closed form from example trajectories (no gradients flow
through the fit), then rolls the combined model out over short windows of
the remaining query trajectories and descends the multi-step prediction
error with one Adam step on all basis parameters jointly.

Rollouts are autoregressive in the pose: predicted roll and pitch feed
the next step's input while terrain features are read at the step index
of the recorded trajectory. Backpropagation walks the rollout in reverse
and recomputes each step's integrator tape on the fly, so memory stays
bounded by one step's caches instead of the whole window.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .basis import BasisEnsemble
from .dataset import Trajectory, Transitions, traj_transitions
from .frames import assemble_inputs, pose_error, step_poses
from .nn import CHECKPOINT_VERSION, AdamState, CosineSchedule, adam_step


@dataclass(frozen=True)
class TrainerConfig:
    k: int = 24
    hidden: int | None = None  # None: scale with k
    f_envs: int = 5
    n_traj: int = 10
    n_examples: int = 4
    n_query: int = 6
    s_windows: int = 2
    t_pred: int = 8
    steps: int = 1000
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    lam: float = 1e-3
    dt: float = 0.1
    substeps: int = 1
    example_batch: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.n_examples + self.n_query > self.n_traj:
            raise ValueError("n_examples + n_query must not exceed n_traj")
        if min(self.k, self.f_envs, self.n_examples, self.n_query,
               self.s_windows, self.t_pred, self.steps, self.example_batch) < 1:
            raise ValueError("all counts must be positive")


@dataclass(frozen=True)
class TrajData:
    """Per-trajectory arrays prepared once: standardized features plus
    flat one-step samples for the coefficient fit."""

    poses: np.ndarray    # (n+1, 6)
    controls: np.ndarray  # (n, 2)
    feats: np.ndarray    # (n+1, 16)
    transitions: Transitions

    @property
    def n_steps(self) -> int:
        return len(self.controls)


def prepare_traj(traj: Trajectory, embedder=None,
                 feats: np.ndarray | None = None) -> TrajData:
    if feats is None:
        if embedder is not None:
            ee, es = embedder.from_raw(traj.e_elev, traj.e_sem)
        else:
            ee, es = traj.e_elev, traj.e_sem
        feats = np.concatenate([ee, es], axis=1)
    return TrajData(poses=traj.poses.copy(),
                    controls=traj.controls[:-1].copy(),
                    feats=np.asarray(feats, dtype=np.float64),
                    transitions=traj_transitions(traj, feats=feats))


# ---------------------------------------------------------------------------
# autoregressive rollout
# ---------------------------------------------------------------------------

def rollout_model(predict_fn, start_poses: np.ndarray, controls: np.ndarray,
                  feats: np.ndarray) -> np.ndarray:
    """Open-loop rollout of any one-step model.

    predict_fn(inputs (B, 22), controls (B, 2)) -> body deltas (B, 6).
    controls is (B, T, 2), feats (B, T, 16). Returns poses (B, T+1, 6)
    including the start.
    """
    b, t_pred = controls.shape[:2]
    preds = np.empty((b, t_pred + 1, 6))
    preds[:, 0] = start_poses
    cur = np.array(start_poses, dtype=np.float64)
    for t in range(t_pred):
        delta = predict_fn(assemble_inputs(cur, feats[:, t]), controls[:, t])
        cur = step_poses(cur, delta)
        preds[:, t + 1] = cur
    return preds


def rollout_ensemble(ensemble: BasisEnsemble, alphas, start_poses, controls,
                     feats) -> np.ndarray:
    return rollout_model(
        lambda x, u: ensemble.combine(alphas, ensemble.deltas(x, u)),
        start_poses, controls, feats)


def rollout_loss_and_grads(ensemble: BasisEnsemble, alphas: np.ndarray,
                           start_poses: np.ndarray, controls: np.ndarray,
                           gt_poses: np.ndarray, feats: np.ndarray):
    """Multi-step loss and parameter gradients for one window batch.

    Loss is the squared pose error summed over steps and components,
    averaged over the batch; angle residuals are wrapped. Gradients flow
    through the pose composition (including the yaw rotation of planar
    deltas) and the roll/pitch feedback into later inputs; alphas are
    constants.
    """
    b, t_pred = controls.shape[:2]
    preds = rollout_ensemble(ensemble, alphas, start_poses, controls, feats)
    err = pose_error(preds[:, 1:], gt_poses[:, 1:])
    loss = float(np.sum(err * err) / b)

    lam_pose = np.zeros((b, 6))
    param_grads = None
    for t in range(t_pred, 0, -1):
        lam_pose = lam_pose + (2.0 / b) * err[:, t - 1]
        prev = preds[:, t - 1]
        c, s = np.cos(prev[:, 5]), np.sin(prev[:, 5])
        inputs = assemble_inputs(prev, feats[:, t - 1])
        deltas_k, tapes = ensemble.deltas_taped(inputs, controls[:, t - 1])
        delta = ensemble.combine(alphas, deltas_k)

        g_delta = np.empty_like(lam_pose)
        g_delta[:, 0] = c * lam_pose[:, 0] + s * lam_pose[:, 1]
        g_delta[:, 1] = -s * lam_pose[:, 0] + c * lam_pose[:, 1]
        g_delta[:, 2:] = lam_pose[:, 2:]

        pg, g_in = ensemble.backward_combined(tapes, alphas, g_delta)
        if param_grads is None:
            param_grads = pg
        else:
            for acc, g in zip(param_grads, pg):
                acc += g

        lam_prev = lam_pose.copy()
        lam_prev[:, 5] += (lam_pose[:, 0] * (-s * delta[:, 0] - c * delta[:, 1])
                           + lam_pose[:, 1] * (c * delta[:, 0] - s * delta[:, 1]))
        lam_prev[:, 3] += g_in[:, 3]
        lam_prev[:, 4] += g_in[:, 4]
        lam_pose = lam_prev
    return loss, param_grads, preds


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------

class Trainer:
    """Runs the outer optimization over a prepared dataset.

    ``data`` is a list over environments of lists of :class:`TrajData`.
    All sampling draws from one generator seeded by the config, and the
    checkpoint carries that generator's state, so a save/load/resume
    reproduces the uninterrupted run bit for bit.
    """

    def __init__(self, ensemble: BasisEnsemble, data, cfg: TrainerConfig,
                 rng: np.random.Generator | None = None):
        if len(data) < cfg.f_envs:
            raise ValueError(f"need at least f_envs={cfg.f_envs} environments, "
                             f"got {len(data)}")
        for e, trajs in enumerate(data):
            if len(trajs) < cfg.n_traj:
                raise ValueError(f"environment {e} has {len(trajs)} trajectories, "
                                 f"config needs {cfg.n_traj}")
            for td in trajs:
                if td.n_steps < cfg.t_pred:
                    raise ValueError(f"trajectory shorter than t_pred={cfg.t_pred}")
        self.ensemble = ensemble
        self.data = data
        self.cfg = cfg
        self.rng = rng or np.random.default_rng(cfg.seed)
        self.params = ensemble.params()
        self.adam = AdamState.for_params(self.params)
        self.schedule = CosineSchedule(cfg.lr_start, cfg.lr_end, cfg.steps)
        self.step_count = 0
        self.loss_history: list[float] = []

    # -- sampling ----------------------------------------------------------

    def _example_fit(self, trajs, traj_ids) -> np.ndarray:
        parts = [trajs[i].transitions for i in traj_ids]
        ex = Transitions.concat(parts)
        if len(ex) > self.cfg.example_batch:
            idx = self.rng.choice(len(ex), size=self.cfg.example_batch,
                                  replace=False)
            ex = ex.subset(np.sort(idx))
        return self.ensemble.adapt(ex.inputs, ex.controls, ex.targets,
                                   self.cfg.lam).alpha

    def _sample_batch(self):
        cfg = self.cfg
        env_ids = self.rng.choice(len(self.data), size=cfg.f_envs, replace=False)
        starts, ctrls, gts, fts, alphas = [], [], [], [], []
        for e in env_ids:
            trajs = self.data[e]
            traj_ids = self.rng.choice(len(trajs), size=cfg.n_traj, replace=False)
            alpha = self._example_fit(trajs, traj_ids[:cfg.n_examples])
            for q in traj_ids[cfg.n_examples:cfg.n_examples + cfg.n_query]:
                td = trajs[q]
                for _ in range(cfg.s_windows):
                    t0 = int(self.rng.integers(0, td.n_steps - cfg.t_pred + 1))
                    starts.append(td.poses[t0])
                    gts.append(td.poses[t0:t0 + cfg.t_pred + 1])
                    ctrls.append(td.controls[t0:t0 + cfg.t_pred])
                    fts.append(td.feats[t0:t0 + cfg.t_pred])
                    alphas.append(alpha)
        return (np.stack(starts), np.stack(ctrls), np.stack(gts),
                np.stack(fts), np.stack(alphas))

    # -- optimization ------------------------------------------------------

    def step(self) -> float:
        starts, ctrls, gts, fts, alphas = self._sample_batch()
        loss, grads, _ = rollout_loss_and_grads(self.ensemble, alphas, starts,
                                                ctrls, gts, fts)
        lr = self.schedule.lr_at(self.step_count)
        adam_step(self.params, grads, self.adam, lr)
        self.step_count += 1
        self.loss_history.append(loss)
        return loss

    def run(self, n_steps: int | None = None, log_every: int = 0,
            log_fn=print) -> list:
        n = self.cfg.steps if n_steps is None else n_steps
        for _ in range(n):
            loss = self.step()
            if log_every and self.step_count % log_every == 0:
                log_fn(f"step {self.step_count}: loss {loss:.6f}")
        return self.loss_history

    # -- per-environment coefficients ---------------------------------------

    def env_alphas(self) -> np.ndarray:
        """Coefficients for every environment from all its trajectories,
        deterministically subsampled to the example budget."""
        out = np.empty((len(self.data), self.ensemble.k))
        for e, trajs in enumerate(self.data):
            ex = Transitions.concat([td.transitions for td in trajs])
            if len(ex) > self.cfg.example_batch:
                idx = np.linspace(0, len(ex) - 1, self.cfg.example_batch).astype(int)
                ex = ex.subset(idx)
            out[e] = self.ensemble.adapt(ex.inputs, ex.controls, ex.targets,
                                         self.cfg.lam).alpha
        return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, trainer: Trainer, extras: dict | None = None) -> None:
    """Ensemble weights, Adam moments, step counter, RNG state, config."""
    arrays = {"format_version": np.array(CHECKPOINT_VERSION, dtype=np.int64)}
    ens = trainer.ensemble
    arrays["k"] = np.array(ens.k, dtype=np.int64)
    arrays["layer_sizes"] = np.array(ens.nets[0].layer_sizes, dtype=np.int64)
    for i, net in enumerate(ens.nets):
        for j, (w, bias) in enumerate(zip(net.weights, net.biases)):
            arrays[f"n{i}_w{j}"] = w
            arrays[f"n{i}_b{j}"] = bias
    for i, (m, v) in enumerate(zip(trainer.adam.m, trainer.adam.v)):
        arrays[f"adam_m{i}"] = m
        arrays[f"adam_v{i}"] = v
    meta = {"step": trainer.step_count, "adam_t": trainer.adam.t,
            "cfg": asdict(trainer.cfg),
            "rng_state": trainer.rng.bit_generator.state,
            "loss_history": trainer.loss_history}
    arrays["meta"] = np.array(json.dumps(meta))
    for key, val in (extras or {}).items():
        arrays[f"x_{key}"] = np.asarray(val)
    np.savez(path, **arrays)


def load_checkpoint(path) -> dict:
    """Returns {ensemble, meta, adam: (m, v), extras}."""
    out = {"extras": {}}
    with np.load(path, allow_pickle=False) as data:
        if int(data["format_version"]) != CHECKPOINT_VERSION:
            raise ValueError("unsupported checkpoint format version")
        meta = json.loads(str(data["meta"]))
        cfg = TrainerConfig(**meta["cfg"])
        from .nn import FeedforwardNet
        sizes = tuple(int(s) for s in data["layer_sizes"])
        nets = []
        for i in range(int(data["k"])):
            ws = [data[f"n{i}_w{j}"] for j in range(len(sizes) - 1)]
            bs = [data[f"n{i}_b{j}"] for j in range(len(sizes) - 1)]
            nets.append(FeedforwardNet(sizes, ws, bs))
        from .rk4 import Rk4Config
        ensemble = BasisEnsemble(nets, Rk4Config(cfg.dt, cfg.substeps))
        n_params = 2 * len(ws) * len(nets)
        m = [data[f"adam_m{i}"] for i in range(n_params)]
        v = [data[f"adam_v{i}"] for i in range(n_params)]
        for key in data.files:
            if key.startswith("x_"):
                out["extras"][key[2:]] = data[key]
    out.update(ensemble=ensemble, meta=meta, cfg=cfg, adam=(m, v))
    return out


def resume_trainer(ck: dict, data) -> Trainer:
    """Rebuild a trainer mid-run from :func:`load_checkpoint` output."""
    cfg = ck["cfg"]
    trainer = Trainer(ck["ensemble"], data, cfg)
    m, v = ck["adam"]
    trainer.adam = AdamState(m=list(m), v=list(v), t=ck["meta"]["adam_t"])
    trainer.step_count = ck["meta"]["step"]
    trainer.loss_history = list(ck["meta"]["loss_history"])
    state = ck["meta"]["rng_state"]
    trainer.rng = np.random.default_rng()
    trainer.rng.bit_generator.state = state
    return trainer
