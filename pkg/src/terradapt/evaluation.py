"""Evaluation: one-step error, multi-step horizon curves, ablations,
adaptation-cost benchmark, and deterministic result files.

Metrics files are JSON with sorted keys and full-precision floats, so the
same seed produces byte-identical output. Wall-clock measurements never
go into metrics; they live in a separate timings CSV sidecar.
"""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path

import numpy as np

from .basis import BasisEnsemble
from .dataset import Transitions
from .frames import ELEV_SLICE, SEM_SLICE, pose_error
from .training import TrajData, rollout_model

ABLATE_MODES = ("none", "semantic", "elevation", "both")


def ablate_inputs(inputs: np.ndarray, mode: str) -> np.ndarray:
    """Zero the selected embedding slots of conditioned inputs."""
    if mode not in ABLATE_MODES:
        raise ValueError(f"ablate mode must be one of {ABLATE_MODES}, "
                         f"got {mode!r}")
    if mode == "none":
        return inputs
    out = np.array(inputs, copy=True)
    if mode in ("semantic", "both"):
        out[..., SEM_SLICE] = 0.0
    if mode in ("elevation", "both"):
        out[..., ELEV_SLICE] = 0.0
    return out


def masked_predict(predict_fn, mode: str):
    if mode == "none":
        return predict_fn
    return lambda inputs, controls: predict_fn(ablate_inputs(inputs, mode),
                                               controls)


def va_predict_fn(ensemble: BasisEnsemble, alpha: np.ndarray,
                  ablate: str = "none"):
    base = lambda x, u: ensemble.combine(alpha, ensemble.deltas(x, u))
    return masked_predict(base, ablate)


def fit_alpha(ensemble: BasisEnsemble, tr: Transitions, lam: float,
              ablate: str = "none") -> np.ndarray:
    """Closed-form coefficients, fit on the same ablated view the model
    will be evaluated with."""
    return ensemble.adapt(ablate_inputs(tr.inputs, ablate), tr.controls,
                          tr.targets, lam).alpha


def one_step_mse(predict_fn, tr: Transitions) -> float:
    """Mean over samples of the squared 6-d residual norm."""
    resid = predict_fn(tr.inputs, tr.controls) - tr.targets
    return float(np.mean(np.sum(resid * resid, axis=1)))


def env_split(trajs: list, n_examples: int):
    """First n_examples trajectories fit coefficients, the rest evaluate."""
    if len(trajs) <= n_examples:
        raise ValueError(f"need more than {n_examples} trajectories, "
                         f"got {len(trajs)}")
    ex = Transitions.concat([t.transitions for t in trajs[:n_examples]])
    qry = Transitions.concat([t.transitions for t in trajs[n_examples:]])
    return ex, qry, trajs[n_examples:]


# ---------------------------------------------------------------------------
# horizon curves
# ---------------------------------------------------------------------------

def build_windows(trajs: list, horizon: int):
    """Non-overlapping length-``horizon`` windows from prepared trajectories.

    Returns (starts (B,6), controls (B,h,2), gt (B,h+1,6), feats (B,h,16)).
    """
    starts, ctrls, gts, fts = [], [], [], []
    for td in trajs:
        for t0 in range(0, td.n_steps - horizon + 1, horizon):
            starts.append(td.poses[t0])
            gts.append(td.poses[t0:t0 + horizon + 1])
            ctrls.append(td.controls[t0:t0 + horizon])
            fts.append(td.feats[t0:t0 + horizon])
    if not starts:
        raise ValueError(f"no trajectory long enough for horizon {horizon}")
    return np.stack(starts), np.stack(ctrls), np.stack(gts), np.stack(fts)


def horizon_curve(predict_fn, trajs: list, horizons) -> dict:
    """Rollout MSE at several horizons.

    The value at horizon h is the squared pose error accumulated over all
    rollout steps up to h, averaged over steps and windows, so the curve
    measures total open-loop degradation as the horizon grows.
    """
    horizons = sorted(int(h) for h in horizons)
    hmax = horizons[-1]
    starts, ctrls, gts, fts = build_windows(trajs, hmax)
    preds = rollout_model(predict_fn, starts, ctrls, fts)
    err = pose_error(preds[:, 1:], gts[:, 1:])
    per_step = np.sum(err * err, axis=2)  # (B, hmax)
    return {h: float(per_step[:, :h].mean()) for h in horizons}


# ---------------------------------------------------------------------------
# adaptation benchmark
# ---------------------------------------------------------------------------

def adapt_benchmark(ensemble: BasisEnsemble, baselines: dict,
                    tr: Transitions, lam: float,
                    budgets: dict | None = None) -> list:
    """Wall-clock adaptation cost of every method on one example set.

    ``baselines`` maps names to models exposing ``adapt``; ``budgets``
    optionally overrides (steps, lr) per name. Early stopping is disabled
    so the configured budgets are what gets measured. Returns rows of
    (method, seconds, steps).
    """
    rows = []
    t0 = time.perf_counter()
    ensemble.adapt(tr.inputs, tr.controls, tr.targets, lam)
    rows.append(("va", time.perf_counter() - t0, 1))
    for name, model in baselines.items():
        kw = dict(budgets.get(name, {})) if budgets else {}
        t0 = time.perf_counter()
        _, history = model.adapt(tr, early=False, **kw)
        rows.append((name, time.perf_counter() - t0, len(history)))
    return rows


# ---------------------------------------------------------------------------
# result files
# ---------------------------------------------------------------------------

def _round_trip_floats(obj):
    if isinstance(obj, dict):
        return {str(k): _round_trip_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_trip_floats(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_round_trip_floats(v) for v in obj.tolist()]
    return obj


def write_metrics(path, metrics: dict) -> None:
    """Deterministic JSON: sorted keys, shortest round-trip floats."""
    payload = json.dumps(_round_trip_floats(metrics), sort_keys=True, indent=2)
    Path(path).write_text(payload + "\n")


def read_metrics(path) -> dict:
    return json.loads(Path(path).read_text())


def write_timings(path, rows) -> None:
    """Wall-clock sidecar: (name, seconds[, detail]) rows."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["name", "seconds", "detail"])
        for row in rows:
            name, seconds = row[0], row[1]
            detail = row[2] if len(row) > 2 else ""
            writer.writerow([name, f"{seconds:.6f}", detail])
