"""Span-of-networks dynamics model with closed-form coefficient adaptation.

A dynamics hypothesis space is the linear span of k basis functions, each
an RK4-integrated network field (see :mod:`terradapt.rk4`). A specific
environment is identified by a coefficient vector alpha found by
regularized least squares on a handful of example transitions: build the
k x k Gram matrix of basis predictions under the empirical inner product

    <f, g> = (1/M) * sum_m sum_d f[m, d] * g[m, d]

and solve (G + lam*I) alpha = r by Cholesky. No gradients flow through
the solve; training treats alpha as a constant per environment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .frames import CONTROL_DIM, INPUT_DIM, POSE_DIM
from .nn import CHECKPOINT_VERSION, FeedforwardNet, hidden_width
from .rk4 import Rk4Config, rk4_net_backward, rk4_net_forward


@dataclass(frozen=True)
class AdaptResult:
    """Solution of one coefficient fit, with the system that produced it."""

    alpha: np.ndarray
    gram: np.ndarray
    rhs: np.ndarray
    lam: float
    n_samples: int


def least_squares_coefficients(deltas: np.ndarray, targets: np.ndarray,
                               lam: float) -> AdaptResult:
    """Fit alpha so that sum_i alpha_i * deltas[i] matches targets.

    deltas: (k, M, 6) basis predictions, targets: (M, 6). Gram and rhs are
    normalized by the sample count M so lam is scale-free in M. Cholesky
    with one jittered retry; failure after the retry raises.
    """
    deltas = np.asarray(deltas, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if deltas.ndim != 3 or deltas.shape[2] != POSE_DIM:
        raise ValueError(f"deltas must be (k, M, {POSE_DIM}), got {deltas.shape}")
    if targets.shape != deltas.shape[1:]:
        raise ValueError(f"targets shape {targets.shape} mismatches deltas {deltas.shape}")
    if lam < 0.0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    k, m, _ = deltas.shape
    if m == 0:
        raise ValueError("need at least one example transition")
    flat = deltas.reshape(k, m * POSE_DIM)
    gram = (flat @ flat.T) / m
    rhs = (flat @ targets.reshape(m * POSE_DIM)) / m
    alpha, lam_used = _solve_regularized(gram, rhs, lam)
    return AdaptResult(alpha=alpha, gram=gram, rhs=rhs, lam=lam_used, n_samples=m)


def _solve_regularized(gram, rhs, lam):
    k = gram.shape[0]
    eye = np.eye(k)
    try:
        cf = cho_factor(gram + lam * eye, lower=True)
        return cho_solve(cf, rhs), lam
    except np.linalg.LinAlgError:
        retry = lam * 10.0 if lam > 0.0 else 1e-12 * max(np.trace(gram) / k, 1.0)
        try:
            cf = cho_factor(gram + retry * eye, lower=True)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                f"Gram system not positive definite even with lam={retry:g}") from exc
        return cho_solve(cf, rhs), retry


def mean_alpha(alphas: np.ndarray) -> np.ndarray:
    """Average coefficient vector over environments, the unadapted prior."""
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.ndim != 2:
        raise ValueError(f"alphas must be (n_envs, k), got {alphas.shape}")
    return alphas.mean(axis=0)


class BasisEnsemble:
    """k independent network fields sharing input/output conventions."""

    def __init__(self, nets, cfg: Rk4Config):
        if not nets:
            raise ValueError("need at least one basis net")
        sizes = nets[0].layer_sizes
        if sizes[0] != INPUT_DIM + CONTROL_DIM or sizes[-1] != POSE_DIM:
            raise ValueError(f"basis nets must map {INPUT_DIM + CONTROL_DIM} -> "
                             f"{POSE_DIM}, got {sizes}")
        if any(n.layer_sizes != sizes for n in nets):
            raise ValueError("basis nets must share one architecture")
        self.nets = list(nets)
        self.cfg = cfg

    @classmethod
    def create(cls, k: int, rng: np.random.Generator, dt: float = 0.1,
               substeps: int = 1, hidden: int | None = None,
               n_hidden: int = 4, dtype=np.float64) -> "BasisEnsemble":
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        h = hidden_width(k) if hidden is None else int(hidden)
        sizes = (INPUT_DIM + CONTROL_DIM,) + (h,) * n_hidden + (POSE_DIM,)
        nets = [FeedforwardNet.create(sizes, rng, dtype=dtype) for _ in range(k)]
        return cls(nets, Rk4Config(dt, substeps))

    @property
    def k(self) -> int:
        return len(self.nets)

    def params(self) -> list[np.ndarray]:
        out = []
        for net in self.nets:
            out.extend(net.params())
        return out

    def deltas(self, inputs: np.ndarray, controls: np.ndarray) -> np.ndarray:
        """Per-basis pose changes, shape (k, B, 6)."""
        return np.stack([rk4_net_forward(n, inputs, controls, self.cfg)
                         for n in self.nets])

    def deltas_taped(self, inputs: np.ndarray, controls: np.ndarray):
        outs, tapes = [], []
        for net in self.nets:
            d, t = rk4_net_forward(net, inputs, controls, self.cfg, need_tape=True)
            outs.append(d)
            tapes.append(t)
        return np.stack(outs), tapes

    @staticmethod
    def combine(alpha: np.ndarray, deltas: np.ndarray) -> np.ndarray:
        """Linear combination over the basis axis.

        alpha is one shared coefficient vector (k,) or one per sample
        (B, k); deltas is (k, B, 6).
        """
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.ndim == 1:
            if alpha.shape != (deltas.shape[0],):
                raise ValueError(f"alpha shape {alpha.shape} mismatches k={deltas.shape[0]}")
            return np.einsum("i,ibd->bd", alpha, deltas)
        if alpha.shape != (deltas.shape[1], deltas.shape[0]):
            raise ValueError(f"alpha shape {alpha.shape} mismatches deltas {deltas.shape}")
        return np.einsum("bi,ibd->bd", alpha, deltas)

    def predict(self, inputs, controls, alpha) -> np.ndarray:
        return self.combine(alpha, self.deltas(inputs, controls))

    def backward_combined(self, tapes, alpha, upstream):
        """Gradients of sum(upstream * combine(alpha, deltas)) w.r.t. all
        net parameters (ordered like :meth:`params`) and the shared inputs.

        alpha is treated as constant. Returns (param_grads, input_grads)
        with input_grads of shape (B, 24).
        """
        alpha = np.asarray(alpha, dtype=np.float64)
        param_grads = []
        g_in = None
        for i, net in enumerate(self.nets):
            scale = alpha[i] if alpha.ndim == 1 else alpha[:, i:i + 1]
            pg, gi = rk4_net_backward(net, tapes[i], self.cfg, scale * upstream)
            param_grads.extend(pg)
            g_in = gi if g_in is None else g_in + gi
        return param_grads, g_in

    def adapt(self, inputs, controls, targets, lam: float = 1e-3) -> AdaptResult:
        """Closed-form coefficients from example transitions."""
        return least_squares_coefficients(self.deltas(inputs, controls),
                                          np.asarray(targets, dtype=np.float64), lam)

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        arrays = {
            "format_version": np.array(CHECKPOINT_VERSION, dtype=np.int64),
            "k": np.array(self.k, dtype=np.int64),
            "layer_sizes": np.array(self.nets[0].layer_sizes, dtype=np.int64),
            "dt": np.array(self.cfg.dt, dtype=np.float64),
            "substeps": np.array(self.cfg.substeps, dtype=np.int64),
        }
        for i, net in enumerate(self.nets):
            for j, (w, b) in enumerate(zip(net.weights, net.biases)):
                arrays[f"n{i}_w{j}"] = w
                arrays[f"n{i}_b{j}"] = b
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path) -> "BasisEnsemble":
        with np.load(path, allow_pickle=False) as data:
            version = int(data["format_version"])
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"checkpoint format version {version} unsupported")
            k = int(data["k"])
            sizes = tuple(int(s) for s in data["layer_sizes"])
            cfg = Rk4Config(float(data["dt"]), int(data["substeps"]))
            nets = []
            for i in range(k):
                ws = [data[f"n{i}_w{j}"] for j in range(len(sizes) - 1)]
                bs = [data[f"n{i}_b{j}"] for j in range(len(sizes) - 1)]
                nets.append(FeedforwardNet(sizes, ws, bs))
        return cls(nets, cfg)
