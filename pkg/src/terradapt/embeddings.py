"""Terrain context features under the vehicle.

Both modalities are 128 x 128 patches (12.8 m footprint at 0.1 m/px)
aligned with the vehicle heading; the pixel at index [64, 64] sits exactly
on the vehicle center. Elevation patches are centered at the vehicle's
altitude (value 0 at the center pixel). Semantic patches sample the class
raster with nearest-neighbor lookup and are treated downstream as a scalar
intensity field of class ids.

Two embedding routes produce the 8-d vectors the dynamics models consume:

* ``stats``: eight handcrafted statistics per patch, standardized by
  dataset moments. Cheap and deterministic; the default for pipelines.
* ``swae``: a sliced-Wasserstein autoencoder per modality compresses
  4 x 4 mean-pooled patches to a 64-d latent whose distribution is pulled
  toward a unit Gaussian, followed by a separately trained 64 -> 8
  compressor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .nn import AdamState, FeedforwardNet, adam_step

PATCH_SIZE = 128
PATCH_CENTER = PATCH_SIZE // 2
EMBED_DIM = 8
LATENT_DIM = 64
POOLED_SIDE = 32


# ---------------------------------------------------------------------------
# patch extraction
# ---------------------------------------------------------------------------

def elevation_patch(env, x: float, y: float, yaw: float,
                    size: int = PATCH_SIZE) -> np.ndarray:
    """Heading-aligned elevation patch, centered at the vehicle altitude."""
    cx, cy = x / env.resolution, y / env.resolution
    patch, _ = kernels.rotated_patch(env.elevation, cx, cy, yaw, size, 1.0,
                                     fill=np.nan)
    center = patch[size // 2, size // 2]
    if not np.isfinite(center):
        raise ValueError(f"vehicle center ({x:.2f}, {y:.2f}) outside the map")
    patch = np.where(np.isfinite(patch), patch, center)
    return patch - center


def semantic_patch(env, x: float, y: float, yaw: float,
                   size: int = PATCH_SIZE) -> np.ndarray:
    """Heading-aligned nearest-neighbor class-id patch as float64."""
    offs = (np.arange(size, dtype=np.float64) - size // 2)
    c, s = np.cos(yaw), np.sin(yaw)
    cx, cy = x / env.resolution, y / env.resolution
    px = cx + c * offs[np.newaxis, :] - s * offs[:, np.newaxis]
    py = cy + s * offs[np.newaxis, :] + c * offs[:, np.newaxis]
    n = env.n
    ix = np.clip(np.rint(px).astype(np.int64), 0, n - 1)
    iy = np.clip(np.rint(py).astype(np.int64), 0, n - 1)
    return env.semantics[iy, ix].astype(np.float64)


# ---------------------------------------------------------------------------
# handcrafted statistics
# ---------------------------------------------------------------------------

def patch_stats(patch: np.ndarray, resolution: float = 0.1) -> np.ndarray:
    """Eight summary statistics of one patch.

    [mean, std, min, max, mean|d/dx|, mean|d/dy|, center value,
     radial slope from center to the boundary ring].
    """
    if patch.ndim != 2 or patch.shape[0] != patch.shape[1]:
        raise ValueError(f"patch must be square, got {patch.shape}")
    size = patch.shape[0]
    center = patch[size // 2, size // 2]
    gx = np.abs(np.diff(patch, axis=1)).mean() / resolution
    gy = np.abs(np.diff(patch, axis=0)).mean() / resolution
    ring = np.concatenate([patch[0, :], patch[-1, :], patch[1:-1, 0],
                           patch[1:-1, -1]])
    half_extent = 0.5 * (size - 1) * resolution
    radial = (ring.mean() - center) / half_extent
    return np.array([patch.mean(), patch.std(), patch.min(), patch.max(),
                     gx, gy, center, radial])


def raw_stats_pair(env, x: float, y: float, yaw: float):
    """Unstandardized (elevation, semantic) stat vectors at one pose."""
    e = patch_stats(elevation_patch(env, x, y, yaw), env.resolution)
    s = patch_stats(semantic_patch(env, x, y, yaw), env.resolution)
    return e, s


@dataclass
class Standardizer:
    """Per-dimension affine normalization fit on training data."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, data: np.ndarray) -> "Standardizer":
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 2:
            raise ValueError("need a (N >= 2, d) matrix to fit moments")
        return cls(mean=data.mean(axis=0),
                   std=np.maximum(data.std(axis=0), 1e-8))

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(mean=np.zeros(dim), std=np.ones(dim))

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def state(self) -> dict:
        return {"mean": self.mean, "std": self.std}

    @classmethod
    def from_state(cls, state) -> "Standardizer":
        return cls(mean=np.asarray(state["mean"], dtype=np.float64),
                   std=np.asarray(state["std"], dtype=np.float64))


class StatsEmbedder:
    """Default embedding route: standardized handcrafted statistics."""

    mode = "stats"

    def __init__(self, std_elev: Standardizer | None = None,
                 std_sem: Standardizer | None = None):
        self.std_elev = std_elev or Standardizer.identity(EMBED_DIM)
        self.std_sem = std_sem or Standardizer.identity(EMBED_DIM)

    @classmethod
    def fit(cls, raw_elev: np.ndarray, raw_sem: np.ndarray) -> "StatsEmbedder":
        return cls(Standardizer.fit(raw_elev), Standardizer.fit(raw_sem))

    def from_raw(self, raw_elev, raw_sem):
        return self.std_elev.transform(raw_elev), self.std_sem.transform(raw_sem)

    def embed(self, env, x: float, y: float, yaw: float):
        e, s = raw_stats_pair(env, x, y, yaw)
        return self.std_elev.transform(e), self.std_sem.transform(s)


# ---------------------------------------------------------------------------
# sliced Wasserstein distance
# ---------------------------------------------------------------------------

def sliced_w2_sq(a: np.ndarray, b: np.ndarray, n_proj: int,
                 rng: np.random.Generator) -> float:
    """Squared sliced 2-Wasserstein distance between equal-size samples.

    Projects both point sets on n_proj random unit directions and compares
    sorted projections rank by rank. For singleton sets in 1-d this reduces
    to the squared distance between the points.
    """
    val, _ = _swd_core(np.asarray(a, dtype=np.float64),
                       np.asarray(b, dtype=np.float64), n_proj, rng,
                       need_grad=False)
    return val


def _swd_core(a, b, n_proj, rng, need_grad):
    if a.ndim != 2 or b.shape != a.shape:
        raise ValueError(f"need equal (N, d) samples, got {a.shape} vs {b.shape}")
    n, d = a.shape
    dirs = rng.normal(size=(n_proj, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa = a @ dirs.T
    pb = np.sort(b @ dirs.T, axis=0)
    order = np.argsort(pa, axis=0)
    pa_sorted = np.take_along_axis(pa, order, axis=0)
    diff = pa_sorted - pb
    val = float(np.mean(diff * diff))
    if not need_grad:
        return val, None
    g_proj = np.zeros_like(pa)
    np.put_along_axis(g_proj, order, 2.0 * diff / diff.size, axis=0)
    return val, g_proj @ dirs


# ---------------------------------------------------------------------------
# sliced Wasserstein autoencoder
# ---------------------------------------------------------------------------

def pool4(patch: np.ndarray) -> np.ndarray:
    """4 x 4 mean pooling of (..., 128, 128) down to (..., 32, 32)."""
    s = patch.shape
    return patch.reshape(s[:-2] + (POOLED_SIDE, 4, POOLED_SIDE, 4)).mean(
        axis=(-3, -1))


def upsample4(small: np.ndarray) -> np.ndarray:
    """Nearest-neighbor 4x upsampling of (..., 32, 32) to (..., 128, 128)."""
    return np.repeat(np.repeat(small, 4, axis=-2), 4, axis=-1)


class PatchAutoencoder:
    """Encoder/decoder over pooled patches with a Gaussian latent prior.

    Loss per batch is reconstruction MSE measured at full 128 x 128
    resolution (decoder output nearest-upsampled) plus beta times the
    squared sliced Wasserstein distance between the latent batch and a
    unit Gaussian sample.
    """

    def __init__(self, encoder: FeedforwardNet, decoder: FeedforwardNet,
                 beta: float = 1.0, n_proj: int = 32):
        if encoder.layer_sizes[-1] != decoder.layer_sizes[0]:
            raise ValueError("encoder/decoder latent widths differ")
        self.encoder = encoder
        self.decoder = decoder
        self.beta = beta
        self.n_proj = n_proj

    @classmethod
    def create(cls, rng: np.random.Generator, latent: int = LATENT_DIM,
               hidden: int = 256, beta: float = 1.0) -> "PatchAutoencoder":
        pooled = POOLED_SIDE * POOLED_SIDE
        enc = FeedforwardNet.create((pooled, hidden, latent), rng)
        dec = FeedforwardNet.create((latent, hidden, pooled), rng)
        return cls(enc, dec, beta=beta)

    @property
    def latent_dim(self) -> int:
        return self.encoder.layer_sizes[-1]

    def params(self):
        return self.encoder.params() + self.decoder.params()

    def encode(self, patches: np.ndarray) -> np.ndarray:
        flat = pool4(patches).reshape(-1, POOLED_SIDE * POOLED_SIDE)
        return self.encoder.forward(flat)

    def reconstruct(self, patches: np.ndarray) -> np.ndarray:
        r = self.decoder.forward(self.encode(patches))
        return upsample4(r.reshape(-1, POOLED_SIDE, POOLED_SIDE))

    def loss_and_grads(self, patches: np.ndarray, rng: np.random.Generator):
        """(total loss, recon MSE, param grads) for one batch of patches."""
        b = patches.shape[0]
        flat = pool4(patches).reshape(b, -1)
        z, enc_cache = self.encoder.forward_cached(flat)
        r, dec_cache = self.decoder.forward_cached(z)
        up = upsample4(r.reshape(b, POOLED_SIDE, POOLED_SIDE))
        resid = up - patches
        recon = float(np.mean(resid * resid))
        g_up = 2.0 * resid / resid.size
        g_r = g_up.reshape(b, POOLED_SIDE, 4, POOLED_SIDE, 4).sum(
            axis=(2, 4)).reshape(b, -1)
        dec_grads, g_z = self.decoder.backward(dec_cache, g_r)
        prior = rng.normal(size=z.shape)
        swd, g_z_swd = _swd_core(z, prior, self.n_proj, rng, need_grad=True)
        enc_grads, _ = self.encoder.backward(enc_cache, g_z + self.beta * g_z_swd)
        return recon + self.beta * swd, recon, enc_grads + dec_grads

    def train(self, patches: np.ndarray, steps: int, batch_size: int,
              lr: float, rng: np.random.Generator):
        """Adam on random minibatches; returns per-step total losses."""
        params = self.params()
        state = AdamState.for_params(params)
        losses = np.empty(steps)
        for step in range(steps):
            idx = rng.integers(0, patches.shape[0], size=batch_size)
            loss, _, grads = self.loss_and_grads(patches[idx], rng)
            adam_step(params, grads, state, lr)
            losses[step] = loss
        return losses


class LatentCompressor:
    """64 -> 8 bottleneck trained as an autoencoder over SWAE latents."""

    def __init__(self, encoder: FeedforwardNet, decoder: FeedforwardNet):
        self.encoder = encoder
        self.decoder = decoder

    @classmethod
    def create(cls, rng: np.random.Generator, latent: int = LATENT_DIM,
               out: int = EMBED_DIM) -> "LatentCompressor":
        enc = FeedforwardNet.create((latent, 32, 16, out), rng)
        dec = FeedforwardNet.create((out, 16, 32, latent), rng)
        return cls(enc, dec)

    def compress(self, z: np.ndarray) -> np.ndarray:
        return self.encoder.forward(z)

    def train(self, latents: np.ndarray, steps: int, batch_size: int,
              lr: float, rng: np.random.Generator):
        params = self.encoder.params() + self.decoder.params()
        state = AdamState.for_params(params)
        losses = np.empty(steps)
        for step in range(steps):
            idx = rng.integers(0, latents.shape[0], size=batch_size)
            x = latents[idx]
            h, ec = self.encoder.forward_cached(x)
            r, dc = self.decoder.forward_cached(h)
            resid = r - x
            losses[step] = float(np.mean(resid * resid))
            dgrads, gh = self.decoder.backward(dc, 2.0 * resid / resid.size)
            egrads, _ = self.encoder.backward(ec, gh)
            adam_step(params, egrads + dgrads, state, lr)
        return losses


class SwaeEmbedder:
    """Learned embedding route: SWAE latent then compressor, per modality."""

    mode = "swae"

    def __init__(self, ae_elev: PatchAutoencoder, ae_sem: PatchAutoencoder,
                 comp_elev: LatentCompressor, comp_sem: LatentCompressor):
        self.ae_elev = ae_elev
        self.ae_sem = ae_sem
        self.comp_elev = comp_elev
        self.comp_sem = comp_sem

    def embed(self, env, x: float, y: float, yaw: float):
        pe = elevation_patch(env, x, y, yaw)[np.newaxis]
        ps = semantic_patch(env, x, y, yaw)[np.newaxis]
        e = self.comp_elev.compress(self.ae_elev.encode(pe))[0]
        s = self.comp_sem.compress(self.ae_sem.encode(ps))[0]
        return e, s


# ---------------------------------------------------------------------------
# embedder persistence and batching
# ---------------------------------------------------------------------------

def _net_state(prefix: str, net: FeedforwardNet, out: dict) -> None:
    out[f"{prefix}_sizes"] = np.array(net.layer_sizes, dtype=np.int64)
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}_w{i}"] = w
        out[f"{prefix}_b{i}"] = b


def _net_from_state(prefix: str, state) -> FeedforwardNet:
    sizes = tuple(int(s) for s in state[f"{prefix}_sizes"])
    ws = [np.asarray(state[f"{prefix}_w{i}"]) for i in range(len(sizes) - 1)]
    bs = [np.asarray(state[f"{prefix}_b{i}"]) for i in range(len(sizes) - 1)]
    return FeedforwardNet(sizes, ws, bs)


def embedder_state(embedder) -> dict:
    """Flat array dict describing either embedder kind, checkpoint-ready."""
    out = {"mode": np.array(embedder.mode)}
    if embedder.mode == "stats":
        out["elev_mean"] = embedder.std_elev.mean
        out["elev_std"] = embedder.std_elev.std
        out["sem_mean"] = embedder.std_sem.mean
        out["sem_std"] = embedder.std_sem.std
        return out
    _net_state("ae_elev_enc", embedder.ae_elev.encoder, out)
    _net_state("ae_elev_dec", embedder.ae_elev.decoder, out)
    _net_state("ae_sem_enc", embedder.ae_sem.encoder, out)
    _net_state("ae_sem_dec", embedder.ae_sem.decoder, out)
    _net_state("comp_elev_enc", embedder.comp_elev.encoder, out)
    _net_state("comp_elev_dec", embedder.comp_elev.decoder, out)
    _net_state("comp_sem_enc", embedder.comp_sem.encoder, out)
    _net_state("comp_sem_dec", embedder.comp_sem.decoder, out)
    return out


def embedder_from_state(state) -> "StatsEmbedder | SwaeEmbedder":
    mode = str(state["mode"])
    if mode == "stats":
        return StatsEmbedder(
            Standardizer(np.asarray(state["elev_mean"]),
                         np.asarray(state["elev_std"])),
            Standardizer(np.asarray(state["sem_mean"]),
                         np.asarray(state["sem_std"])))
    if mode != "swae":
        raise ValueError(f"unknown embedder mode {mode!r}")
    return SwaeEmbedder(
        PatchAutoencoder(_net_from_state("ae_elev_enc", state),
                         _net_from_state("ae_elev_dec", state)),
        PatchAutoencoder(_net_from_state("ae_sem_enc", state),
                         _net_from_state("ae_sem_dec", state)),
        LatentCompressor(_net_from_state("comp_elev_enc", state),
                         _net_from_state("comp_elev_dec", state)),
        LatentCompressor(_net_from_state("comp_sem_enc", state),
                         _net_from_state("comp_sem_dec", state)))


def swae_traj_features(embedder: "SwaeEmbedder", env,
                       poses: np.ndarray) -> np.ndarray:
    """Learned features for every pose of a trajectory, batch-encoded."""
    n = len(poses)
    pe = np.empty((n, PATCH_SIZE, PATCH_SIZE))
    ps = np.empty_like(pe)
    for i, p in enumerate(poses):
        pe[i] = elevation_patch(env, p[0], p[1], p[5])
        ps[i] = semantic_patch(env, p[0], p[1], p[5])
    fe = embedder.comp_elev.compress(embedder.ae_elev.encode(pe))
    fs = embedder.comp_sem.compress(embedder.ae_sem.encode(ps))
    return np.concatenate([fe, fs], axis=1)


def collect_patches(envs, trajs_per_env, max_patches: int,
                    rng: np.random.Generator):
    """Sample training patches for the autoencoders across environments.

    ``trajs_per_env`` is a list (per env) of lists of trajectories; poses
    are drawn uniformly. Returns (elev (N,128,128), sem (N,128,128)).
    """
    pool = []
    for env, trajs in zip(envs, trajs_per_env):
        for traj in trajs:
            for i in range(len(traj.poses)):
                pool.append((env, traj.poses[i]))
    if not pool:
        raise ValueError("no poses to sample patches from")
    idx = rng.choice(len(pool), size=min(max_patches, len(pool)),
                     replace=False)
    pe = np.empty((len(idx), PATCH_SIZE, PATCH_SIZE))
    ps = np.empty_like(pe)
    for j, sel in enumerate(idx):
        env, pose = pool[sel]
        pe[j] = elevation_patch(env, pose[0], pose[1], pose[5])
        ps[j] = semantic_patch(env, pose[0], pose[1], pose[5])
    return pe, ps


def train_swae_embedder(envs, trajs_per_env, rng: np.random.Generator,
                        max_patches: int = 2000, swae_steps: int = 500,
                        swae_batch: int = 64, swae_lr: float = 1e-3,
                        beta: float = 1.0, hidden: int = 256,
                        latent: int = LATENT_DIM, comp_steps: int = 500,
                        comp_lr: float = 1e-3) -> "SwaeEmbedder":
    """Fit both autoencoders and their compressors on sampled patches."""
    pe, ps = collect_patches(envs, trajs_per_env, max_patches, rng)
    ae_e = PatchAutoencoder.create(rng, latent=latent, hidden=hidden, beta=beta)
    ae_s = PatchAutoencoder.create(rng, latent=latent, hidden=hidden, beta=beta)
    ae_e.train(pe, swae_steps, swae_batch, swae_lr, rng)
    ae_s.train(ps, swae_steps, swae_batch, swae_lr, rng)
    comp_e = LatentCompressor.create(rng, latent=latent)
    comp_s = LatentCompressor.create(rng, latent=latent)
    comp_e.train(ae_e.encode(pe), comp_steps, swae_batch, comp_lr, rng)
    comp_s.train(ae_s.encode(ps), comp_steps, swae_batch, comp_lr, rng)
    return SwaeEmbedder(ae_e, ae_s, comp_e, comp_s)


# ---------------------------------------------------------------------------
# precomputed planner lookup
# ---------------------------------------------------------------------------

class EmbeddingField:
    """Embeddings precomputed on a coarse grid for planner rollouts.

    Cells are computed with yaw 0 (the handcrafted statistics are largely
    orientation-insensitive) and queried by nearest cell center.
    """

    def __init__(self, origin: float, stride: float, elev: np.ndarray,
                 sem: np.ndarray):
        if elev.shape != sem.shape or elev.ndim != 3:
            raise ValueError("field arrays must both be (ny, nx, d)")
        self.origin = origin
        self.stride = stride
        self.elev = elev
        self.sem = sem

    @classmethod
    def build(cls, env, embedder, stride: float = 1.0,
              margin: float = 6.5) -> "EmbeddingField":
        margin = min(margin, 0.45 * env.size_m)  # keep small test maps usable
        lim = env.size_m - margin
        centers = np.arange(margin, lim + 1e-9, stride)
        ne = np.empty((len(centers), len(centers), EMBED_DIM))
        ns = np.empty_like(ne)
        for iy, y in enumerate(centers):
            for ix, x in enumerate(centers):
                e, s = embedder.embed(env, x, y, 0.0)
                ne[iy, ix] = e
                ns[iy, ix] = s
        return cls(float(centers[0]), stride, ne, ns)

    def query(self, x, y):
        """Nearest-cell embeddings; accepts scalars or arrays."""
        ny, nx = self.elev.shape[:2]
        ix = np.clip(np.rint((np.asarray(x) - self.origin) / self.stride),
                     0, nx - 1).astype(np.int64)
        iy = np.clip(np.rint((np.asarray(y) - self.origin) / self.stride),
                     0, ny - 1).astype(np.int64)
        return self.elev[iy, ix], self.sem[iy, ix]
