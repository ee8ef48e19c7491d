"""Command line entry points.

Subcommands cover the full pipeline: ``generate`` a dataset, ``train`` a
model (the basis ensemble or one of the baselines), ``evaluate`` one-step
and horizon errors with optional embedding ablations, ``navigate`` closed
loop against the simulated ground truth, and ``adapt-bench`` to time the
adaptation routes against each other.

Exit codes: 0 success, 1 runtime failure, 2 bad arguments or config,
3 data integrity failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import baselines as bl
from . import dataset, embeddings, evaluation, mppi, terrain, training, vehicle
from .basis import BasisEnsemble, mean_alpha
from .config import Config, ConfigError, load_config
from .dataset import DatasetError, Transitions
from .nn import CHECKPOINT_VERSION
from .rk4 import Rk4Config

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_DATA = 3

METHODS = ("va", "node", "maml", "mlp")
HORIZONS = (1, 8, 16, 32, 64)


def _cfg(args) -> Config:
    return load_config(args.config) if args.config else Config()


def _terrain_kw(cfg: Config) -> dict:
    w = cfg.world
    return {"n": w.grid_n, "resolution": w.resolution, "octaves": w.octaves,
            "base_cell_m": w.base_cell_m, "n_sites": w.n_sites}


def _fit_embedder(cfg: Config, envs, raw_trajs, rng):
    if cfg.embeddings.mode == "stats":
        all_e = np.concatenate([t.e_elev for ts in raw_trajs for t in ts])
        all_s = np.concatenate([t.e_sem for ts in raw_trajs for t in ts])
        return embeddings.StatsEmbedder.fit(all_e, all_s)
    e = cfg.embeddings
    return embeddings.train_swae_embedder(
        envs, raw_trajs, rng, swae_steps=e.swae_steps, swae_batch=e.swae_batch,
        swae_lr=e.swae_lr, beta=e.swae_beta, hidden=e.swae_hidden,
        latent=e.swae_latent, comp_steps=e.compressor_steps,
        comp_lr=e.compressor_lr)


def _prepare_data(data_dir, cfg: Config, embedder=None, rng=None):
    """Load every environment and trajectory; returns
    (manifest, envs, per-env TrajData lists, embedder)."""
    manifest = dataset.load_manifest(data_dir)
    n_envs = int(manifest["n_envs"])
    envs = [dataset.load_environment(data_dir, e) for e in range(n_envs)]
    raw = [dataset.load_env_trajectories(data_dir, e) for e in range(n_envs)]
    if embedder is None:
        embedder = _fit_embedder(cfg, envs, raw, rng)
    data = []
    for env, trajs in zip(envs, raw):
        if embedder.mode == "swae":
            data.append([training.prepare_traj(
                t, feats=embeddings.swae_traj_features(embedder, env, t.poses))
                for t in trajs])
        else:
            data.append([training.prepare_traj(t, embedder) for t in trajs])
    return manifest, envs, data, embedder


def _subsample(tr: Transitions, cap: int) -> Transitions:
    if len(tr) <= cap:
        return tr
    idx = np.linspace(0, len(tr) - 1, cap).astype(int)
    return tr.subset(idx)


def _embedder_extras(embedder) -> dict:
    return {f"emb_{k}": v for k, v in embeddings.embedder_state(embedder).items()}


def _embedder_from_extras(extras) -> object:
    state = {k[4:]: v for k, v in extras.items() if k.startswith("emb_")}
    if not state:
        raise DatasetError("checkpoint carries no embedder state")
    return embeddings.embedder_from_state(state)


# ---------------------------------------------------------------------------
# baseline checkpoints
# ---------------------------------------------------------------------------

def _save_baseline(path, model, method: str, embedder, extra_meta=None) -> None:
    arrays = {"format_version": np.array(CHECKPOINT_VERSION, dtype=np.int64),
              "method": np.array(method)}
    embeddings._net_state("net", model.net, arrays)
    meta = dict(extra_meta or {})
    if isinstance(model, bl.NodeFinetune):
        meta.update(dt=model.cfg.dt, substeps=model.cfg.substeps)
    arrays["meta"] = np.array(json.dumps(meta))
    arrays.update(_embedder_extras(embedder))
    np.savez(path, **arrays)


def _load_baseline(path):
    with np.load(path, allow_pickle=False) as data:
        if int(data["format_version"]) != CHECKPOINT_VERSION:
            raise DatasetError("unsupported baseline checkpoint version")
        method = str(data["method"])
        meta = json.loads(str(data["meta"]))
        net = embeddings._net_from_state("net", data)
        extras = {k: np.asarray(data[k]) for k in data.files
                  if k.startswith("emb_")}
    if method == "mlp":
        model = bl.DirectMlp(net)
    elif method == "maml":
        model = bl.FoMaml(net)
    elif method == "node":
        model = bl.NodeFinetune(net, Rk4Config(meta["dt"], meta["substeps"]))
    else:
        raise DatasetError(f"baseline checkpoint has unknown method {method!r}")
    return model, _embedder_from_extras(extras)


def _load_va(path):
    ck = training.load_checkpoint(path)
    embedder = _embedder_from_extras(ck["extras"])
    prior = ck["extras"].get("mean_alpha")
    if prior is None:
        prior = np.zeros(ck["ensemble"].k)
    return ck["ensemble"], ck, np.asarray(prior, dtype=np.float64), embedder


def _adapt_budget(cfg: Config, method: str) -> dict:
    b = cfg.baselines
    return {"mlp": {"steps": b.mlp_adapt_steps, "lr": b.mlp_adapt_lr},
            "maml": {"steps": b.maml_adapt_steps, "lr": b.maml_adapt_lr},
            "node": {"steps": b.node_adapt_steps, "lr": b.node_adapt_lr}}[method]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = _cfg(args)
    w = cfg.world
    manifest = dataset.build_dataset(args.out, n_envs=w.n_envs, n_traj=w.n_traj,
                                     n_steps=w.n_steps, seed=args.seed,
                                     terrain_kw=_terrain_kw(cfg))
    print(f"wrote {manifest['n_envs']} environments, "
          f"{len(manifest['files'])} files to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _cfg(args)
    rng = np.random.default_rng(args.seed)
    _, envs, data, embedder = _prepare_data(args.data, cfg, rng=rng)
    t0 = time.perf_counter()
    if args.method == "va":
        m = cfg.model
        ensemble = BasisEnsemble.create(m.k, rng, dt=m.dt, substeps=m.substeps,
                                        hidden=m.hidden)
        t = cfg.train
        tcfg = training.TrainerConfig(
            k=m.k, hidden=m.hidden, f_envs=t.f_envs, n_traj=t.n_traj,
            n_examples=t.n_examples, n_query=t.n_query, s_windows=t.s_windows,
            t_pred=t.t_pred, steps=t.steps, lr_start=t.lr_start,
            lr_end=t.lr_end, lam=m.lam, dt=m.dt, substeps=m.substeps,
            example_batch=t.example_batch, seed=args.seed)
        trainer = training.Trainer(ensemble, data, tcfg, rng=rng)
        trainer.run(log_every=max(1, tcfg.steps // 20))
        alphas = trainer.env_alphas()
        extras = {"mean_alpha": mean_alpha(alphas), "env_alphas": alphas}
        extras.update(_embedder_extras(embedder))
        training.save_checkpoint(args.out, trainer, extras)
        final = trainer.loss_history[-1]
        print(f"trained va for {trainer.step_count} steps "
              f"(final loss {final:.6f}) -> {args.out}")
    else:
        b = cfg.baselines
        per_env = [Transitions.concat([td.transitions for td in trajs])
                   for trajs in data]
        pooled = Transitions.concat(per_env)
        if args.method == "mlp":
            model = bl.DirectMlp.create(rng, hidden=b.hidden)
            hist = model.pretrain(pooled, b.pretrain_steps, b.pretrain_batch,
                                  b.pretrain_lr, rng)
        elif args.method == "maml":
            model = bl.FoMaml.create(rng, hidden=b.hidden)
            hist = model.meta_train(per_env, b.pretrain_steps, b.pretrain_batch,
                                    b.maml_inner_lr, b.pretrain_lr, rng)
        else:
            model = bl.NodeFinetune.create(rng, hidden=b.hidden,
                                           dt=cfg.model.dt,
                                           substeps=cfg.model.substeps)
            hist = model.pretrain(pooled, b.pretrain_steps, b.pretrain_batch,
                                  b.pretrain_lr, rng)
        _save_baseline(args.out, model, args.method, embedder)
        print(f"trained {args.method} for {len(hist)} steps "
              f"(final loss {hist[-1]:.6f}) -> {args.out}")
    evaluation.write_timings(Path(args.out).with_suffix(".timings.csv"),
                             [("train", time.perf_counter() - t0, args.method)])
    return EXIT_OK


def _evaluate_va(cfg, data, ensemble, prior, lam, ablate, horizons):
    per_env = []
    timings = []
    for e, trajs in enumerate(data):
        ex, qry, qtrajs = evaluation.env_split(trajs, cfg.train.n_examples)
        ex = _subsample(ex, cfg.train.example_batch)
        t0 = time.perf_counter()
        alpha = evaluation.fit_alpha(ensemble, ex, lam, ablate)
        timings.append((f"adapt_env{e}", time.perf_counter() - t0, "va"))
        fn = evaluation.va_predict_fn(ensemble, alpha, ablate)
        prior_fn = evaluation.va_predict_fn(ensemble, prior, ablate)
        per_env.append({
            "env": e,
            "one_step_adapted": evaluation.one_step_mse(fn, qry),
            "one_step_prior": evaluation.one_step_mse(prior_fn, qry),
            "horizon": evaluation.horizon_curve(fn, qtrajs, horizons),
        })
    return per_env, timings


def _evaluate_baseline(cfg, data, model, method, ablate, horizons):
    budget = _adapt_budget(cfg, method)
    per_env = []
    timings = []
    for e, trajs in enumerate(data):
        ex, qry, qtrajs = evaluation.env_split(trajs, cfg.train.n_examples)
        ex = _subsample(ex, cfg.train.example_batch)
        ex_m = Transitions(evaluation.ablate_inputs(ex.inputs, ablate),
                           ex.controls, ex.targets)
        t0 = time.perf_counter()
        adapted, _ = model.adapt(ex_m, **budget)
        timings.append((f"adapt_env{e}", time.perf_counter() - t0, method))
        fn = evaluation.masked_predict(adapted.predict, ablate)
        base_fn = evaluation.masked_predict(model.predict, ablate)
        per_env.append({
            "env": e,
            "one_step_adapted": evaluation.one_step_mse(fn, qry),
            "one_step_prior": evaluation.one_step_mse(base_fn, qry),
            "horizon": evaluation.horizon_curve(fn, qtrajs, horizons),
        })
    return per_env, timings


def cmd_evaluate(args) -> int:
    cfg = _cfg(args)
    ablate = args.ablate or "none"
    if args.method == "va":
        ensemble, ck, prior, embedder = _load_va(args.ckpt)
        lam = ck["cfg"].lam
    else:
        model, embedder = _load_baseline(args.ckpt)
    manifest, envs, data, _ = _prepare_data(args.data, cfg, embedder=embedder)
    max_h = min(min(td.n_steps for trajs in data for td in trajs),
                max(HORIZONS))
    horizons = [h for h in HORIZONS if h <= max_h]
    if args.method == "va":
        per_env, timings = _evaluate_va(cfg, data, ensemble, prior, lam,
                                        ablate, horizons)
    else:
        per_env, timings = _evaluate_baseline(cfg, data, model, args.method,
                                              ablate, horizons)
    agg = {
        "one_step_adapted": float(np.mean([r["one_step_adapted"] for r in per_env])),
        "one_step_prior": float(np.mean([r["one_step_prior"] for r in per_env])),
        "horizon": {h: float(np.mean([r["horizon"][h] for r in per_env]))
                    for h in horizons},
    }
    metrics = {"method": args.method, "ablate": ablate, "seed": args.seed,
               "n_envs": len(data), "aggregate": agg, "per_env": per_env}
    evaluation.write_metrics(args.out, metrics)
    evaluation.write_timings(Path(args.out).with_suffix(".timings.csv"), timings)
    print(f"{args.method} (ablate={ablate}): one-step adapted "
          f"{agg['one_step_adapted']:.6f} vs prior {agg['one_step_prior']:.6f}")
    return EXIT_OK


def _nav_model(args, cfg, env):
    veh = vehicle.VehicleParams(dt=cfg.model.dt)
    if args.method == "gt":
        return mppi.OracleModel(env, veh), None, veh
    if args.method == "va":
        ensemble, ck, prior, embedder = _load_va(args.ckpt)
        predictor = mppi.VaPredictor(ensemble, prior, lam=ck["cfg"].lam)
    else:
        model, embedder = _load_baseline(args.ckpt)
        predictor = mppi.BaselinePredictor(model,
                                           _adapt_budget(cfg, args.method))
    return (mppi.AdaptiveModel(predictor, cfg.nav.buffer_capacity),
            embedder, veh)


def cmd_navigate(args) -> int:
    cfg = _cfg(args)
    env = dataset.load_environment(args.data, args.env)
    model, embedder, veh = _nav_model(args, cfg, env)
    rng = np.random.default_rng(args.seed)
    p = cfg.planner
    pcfg = mppi.MppiConfig(horizon=p.horizon, n_samples=p.n_samples,
                           temperature=p.temperature, steer_std=p.steer_std,
                           speed_std=p.speed_std, goal_weight=p.goal_weight,
                           terminal_weight=p.terminal_weight,
                           attitude_weight=p.attitude_weight,
                           boundary_weight=p.boundary_weight,
                           boundary_margin=min(p.boundary_margin,
                                               0.2 * env.size_m))
    if args.method == "gt":
        policy = None
        provider = mppi.HoldProvider(embeddings.StatsEmbedder(), env)
    else:
        policy = mppi.AdaptationPolicy(args.adapt_mode, cfg.nav.warmup_steps,
                                       cfg.nav.period_steps)
        if p.embed_source == "field":
            provider = mppi.FieldProvider(
                embeddings.EmbeddingField.build(env, embedder, p.field_stride))
        else:
            provider = mppi.HoldProvider(embedder, env)
    place_margin = min(p.boundary_margin + 2.0, 0.25 * env.size_m)
    episodes = []
    timings = []
    for ep in range(cfg.nav.episodes):
        start = goal = None
        for _ in range(50):
            cand = vehicle.random_start(env, rng, veh, margin=place_margin)
            for _ in range(20):
                ang = rng.uniform(-np.pi, np.pi)
                gx = cand.x + cfg.nav.goal_distance * np.cos(ang)
                gy = cand.y + cfg.nav.goal_distance * np.sin(ang)
                if env.contains(gx, gy, margin=place_margin):
                    start, goal = cand, np.array([gx, gy])
                    break
            if start is not None:
                break
        if goal is None:
            raise ValueError("could not place a goal inside the map")
        planner = mppi.Mppi(model.model_fn, provider, pcfg, env.size_m, rng)
        t0 = time.perf_counter()
        res = mppi.navigate(env, model, planner, start.as_array(), goal, veh,
                            cfg.nav.max_steps, cfg.nav.goal_radius,
                            policy=policy, embedder=embedder)
        timings.append((f"episode{ep}", time.perf_counter() - t0,
                        f"steps={res.n_steps}"))
        episodes.append({"episode": ep, "success": bool(res.success),
                         "n_steps": res.n_steps,
                         "final_distance": res.final_distance,
                         "refit_steps": res.refit_steps})
    rate = float(np.mean([e["success"] for e in episodes]))
    metrics = {"method": args.method, "adapt_mode": args.adapt_mode,
               "seed": args.seed, "env": args.env, "success_rate": rate,
               "episodes": episodes}
    evaluation.write_metrics(args.out, metrics)
    evaluation.write_timings(Path(args.out).with_suffix(".timings.csv"), timings)
    print(f"{args.method}: {sum(e['success'] for e in episodes)}"
          f"/{len(episodes)} episodes reached the goal")
    return EXIT_OK


def cmd_adapt_bench(args) -> int:
    cfg = _cfg(args)
    rng = np.random.default_rng(args.seed)
    _, envs, data, _ = _prepare_data(args.data, cfg, rng=rng)
    ex = Transitions.concat(
        [td.transitions for td in data[0][:cfg.train.n_examples]])
    ex = _subsample(ex, cfg.train.example_batch)
    m, b = cfg.model, cfg.baselines
    ensemble = BasisEnsemble.create(m.k, rng, dt=m.dt, substeps=m.substeps,
                                    hidden=m.hidden)
    models = {
        "node": bl.NodeFinetune.create(rng, hidden=b.hidden, dt=m.dt,
                                       substeps=m.substeps),
        "maml": bl.FoMaml.create(rng, hidden=b.hidden),
        "mlp": bl.DirectMlp.create(rng, hidden=b.hidden),
    }
    budgets = {name: _adapt_budget(cfg, name) for name in models}
    rows = evaluation.adapt_benchmark(ensemble, models, ex, m.lam, budgets)
    evaluation.write_timings(args.out, [(nm, sec, f"steps={st}")
                                        for nm, sec, st in rows])
    metrics = {"seed": args.seed, "n_examples": len(ex),
               "budgets": {nm: budgets[nm]["steps"] for nm in budgets},
               "k": m.k, "baseline_hidden": b.hidden}
    evaluation.write_metrics(Path(args.out).with_suffix(".metrics.json"), metrics)
    for nm, sec, steps in rows:
        print(f"{nm:>5}: {sec:8.3f} s ({steps} steps)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="terradapt",
        description="Terrain-adaptive kinodynamics: data generation, "
                    "training, evaluation, and navigation.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a simulated dataset")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--config", help="JSON config file")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a dynamics model")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--out", required=True, help="checkpoint path (.npz)")
    t.add_argument("--config", help="JSON config file")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--method", choices=METHODS, default="va")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="one-step and horizon errors")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--config", help="JSON config file")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--method", choices=METHODS, default="va")
    e.add_argument("--ablate", choices=("semantic", "elevation", "both"))
    e.add_argument("--out", default="metrics.json")
    e.set_defaults(func=cmd_evaluate)

    n = sub.add_parser("navigate", help="closed-loop goal reaching")
    n.add_argument("--data", required=True)
    n.add_argument("--ckpt", help="model checkpoint (not needed for gt)")
    n.add_argument("--config", help="JSON config file")
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--method", choices=METHODS + ("gt",), default="va")
    n.add_argument("--adapt-mode", choices=("once", "periodic"), default="once")
    n.add_argument("--env", type=int, default=0)
    n.add_argument("--out", default="nav_metrics.json")
    n.set_defaults(func=cmd_navigate)

    b = sub.add_parser("adapt-bench", help="time the adaptation routes")
    b.add_argument("--data", required=True)
    b.add_argument("--config", help="JSON config file")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="adapt_timings.csv")
    b.set_defaults(func=cmd_adapt_bench)
    return p


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command in ("train", "evaluate", "navigate", "adapt-bench"):
            if args.command == "navigate" and args.method != "gt" \
                    and not args.ckpt:
                print("navigate: --ckpt is required unless --method gt",
                      file=sys.stderr)
                return EXIT_USAGE
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DatasetError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - map anything else to exit 1
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
