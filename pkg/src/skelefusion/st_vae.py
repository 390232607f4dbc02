"""Hierarchical spatio-temporal transformer VAE for skeleton sequences.

Every joint in every frame becomes one token. Missing joints are
replaced by a shared learned mask token and excluded from attention,
so unobserved coordinates can never influence the encoding or the
losses. Spatial attention runs over joints within each frame, temporal
attention over frames, and a pooled summary feeds the latent heads.
The decoder is temporal-only: it broadcasts a latent vector to frame
queries and reads out all joints per frame with a linear head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, layer_norm, where_mask
from .errors import ConfigError, ShapeError
from .skeleton import ConfidenceMask, SkeletonSequence

_NEG_INF = -1e30


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    Desk-scale defaults; full-scale values (d_model 768, 8+8 layers) are
    valid configuration, just not what the test suite trains.
    """

    joints: int
    dims: int = 2
    d_model: int = 64
    n_spatial_layers: int = 2
    n_temporal_layers: int = 2
    n_heads: int = 4
    latent_dim: int = 16
    t_max: int = 300

    def __post_init__(self):
        counts = {
            "joints": self.joints,
            "d_model": self.d_model,
            "n_spatial_layers": self.n_spatial_layers,
            "n_temporal_layers": self.n_temporal_layers,
            "n_heads": self.n_heads,
            "latent_dim": self.latent_dim,
            "t_max": self.t_max,
        }
        for name, value in counts.items():
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if self.dims not in (2, 3):
            raise ConfigError(f"dims must be 2 or 3, got {self.dims}")
        if self.d_model % self.n_heads:
            raise ConfigError(
                f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}"
            )


@dataclass
class TokenGrid:
    """Per-joint tokens ``[B, T, J, d_model]`` with their visibility mask."""

    tokens: Tensor
    mask: np.ndarray

    def __post_init__(self):
        if self.tokens.shape[:3] != self.mask.shape:
            raise ShapeError(
                f"token grid {self.tokens.shape} does not match mask {self.mask.shape}"
            )


@dataclass
class LatentDistribution:
    """Diagonal Gaussian over the latent space: mean and log-variance."""

    mu: Tensor | np.ndarray
    log_sigma_sq: Tensor | np.ndarray

    def numpy(self) -> tuple[np.ndarray, np.ndarray]:
        mu = self.mu.data if isinstance(self.mu, Tensor) else np.asarray(self.mu)
        lv = (
            self.log_sigma_sq.data
            if isinstance(self.log_sigma_sq, Tensor)
            else np.asarray(self.log_sigma_sq)
        )
        return mu, lv


def init_vae_params(config: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Seeded parameter registry: uniform(+-1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.Generator(np.random.PCG64(seed))
    d, L = config.d_model, config.latent_dim
    params: dict[str, Tensor] = {}

    def weight(name, fan_in, *shape):
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    def zeros(name, *shape):
        params[name] = Tensor(np.zeros(shape), requires_grad=True)

    def ones(name, *shape):
        params[name] = Tensor(np.ones(shape), requires_grad=True)

    weight("embed.coord.w", config.dims, config.dims, d)
    zeros("embed.coord.b", d)
    weight("embed.mask_token", d, d)
    weight("embed.joint_pos", d, config.joints, d)
    weight("embed.frame_pos", d, config.t_max, d)

    def block(prefix):
        ones(f"{prefix}.ln1.g", d)
        zeros(f"{prefix}.ln1.b", d)
        for nm in ("wq", "wk", "wv", "wo"):
            weight(f"{prefix}.attn.{nm}", d, d, d)
        for nm in ("bq", "bk", "bv", "bo"):
            zeros(f"{prefix}.attn.{nm}", d)
        ones(f"{prefix}.ln2.g", d)
        zeros(f"{prefix}.ln2.b", d)
        weight(f"{prefix}.ff.w1", d, d, 4 * d)
        zeros(f"{prefix}.ff.b1", 4 * d)
        weight(f"{prefix}.ff.w2", 4 * d, 4 * d, d)
        zeros(f"{prefix}.ff.b2", d)

    for i in range(config.n_spatial_layers):
        block(f"spatial.{i}")
    for i in range(config.n_temporal_layers):
        block(f"temporal.{i}")
    ones("encoder.ln.g", d)
    zeros("encoder.ln.b", d)
    weight("latent.mu.w", d, d, L)
    zeros("latent.mu.b", L)
    weight("latent.logvar.w", d, d, L)
    zeros("latent.logvar.b", L)

    weight("decoder.in.w", L, L, d)
    zeros("decoder.in.b", d)
    weight("decoder.frame_pos", d, config.t_max, d)
    for i in range(config.n_temporal_layers):
        block(f"decoder.{i}")
    ones("decoder.ln.g", d)
    zeros("decoder.ln.b", d)
    weight("decoder.head.w", d, d, config.joints * config.dims)
    zeros("decoder.head.b", config.joints * config.dims)
    return params


def _transformer_block(x: Tensor, params, prefix: str, n_heads: int, key_bias) -> Tensor:
    """Pre-norm block: masked MHSA + GELU feed-forward, both residual.

    ``x`` is ``[N, S, d]``; ``key_bias`` is an additive ``[N, 1, 1, S]``
    constant (0 for attendable keys, a large negative for masked ones).
    Linear layers run on ``[N * S, d]`` so each is a single dgemm.
    """
    N, S, d = x.shape
    dh = d // n_heads
    h = layer_norm(x, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"]).reshape(N * S, d)

    def heads(name):
        proj = h @ params[f"{prefix}.attn.w{name}"] + params[f"{prefix}.attn.b{name}"]
        return proj.reshape(N, S, n_heads, dh).swapaxes(1, 2)

    q, k, v = heads("q"), heads("k"), heads("v")
    logits = (q @ k.swapaxes(-2, -1)) * (1.0 / np.sqrt(dh))
    if key_bias is not None:
        logits = logits + key_bias
    ctx = logits.softmax(axis=-1) @ v
    merged = ctx.swapaxes(1, 2).reshape(N * S, d)
    out = merged @ params[f"{prefix}.attn.wo"] + params[f"{prefix}.attn.bo"]
    x = x + out.reshape(N, S, d)

    h2 = layer_norm(x, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"]).reshape(N * S, d)
    ff = (h2 @ params[f"{prefix}.ff.w1"] + params[f"{prefix}.ff.b1"]).gelu()
    ff = ff @ params[f"{prefix}.ff.w2"] + params[f"{prefix}.ff.b2"]
    return x + ff.reshape(N, S, d)


def _spatial_key_bias(mask: np.ndarray) -> np.ndarray:
    """Additive attention bias blocking masked joints as keys.

    Frames with no visible joint fall back to attending over everything
    (all tokens are then the shared mask token), which keeps the softmax
    well-defined.
    """
    B, T, J = mask.shape
    vis = mask.reshape(B * T, J).copy()
    vis[vis.sum(axis=1) == 0.0] = 1.0
    return ((1.0 - vis) * _NEG_INF)[:, None, None, :]


class SpatioTemporalVAE:
    """Config + parameter registry with the full encode/decode pipeline.

    All methods accept batched arrays (leading batch axis); the
    sequence-level helpers wrap single :class:`SkeletonSequence` inputs.
    """

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_vae_params(config, seed)

    # -- stages ----------------------------------------------------------

    def embed_joints(self, x: np.ndarray | Tensor, mask: np.ndarray) -> TokenGrid:
        """Tokenize coordinates; masked slots get the shared mask token.

        Joint and frame positional embeddings apply to every slot,
        observed or not. Coordinates are re-masked here, so values at
        masked positions can never leak in.
        """
        cfg, p = self.config, self.params
        B, T, J, D = x.shape
        if J != cfg.joints or D != cfg.dims:
            raise ConfigError(
                f"sequence has joints={J}, dims={D}; model expects "
                f"joints={cfg.joints}, dims={cfg.dims}"
            )
        if T > cfg.t_max:
            raise ConfigError(f"sequence length {T} exceeds t_max={cfg.t_max}")
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=np.float64))
        flat = (x * mask[:, :, :, None]).reshape(B * T * J, D)
        coord = (flat @ p["embed.coord.w"] + p["embed.coord.b"]).reshape(B, T, J, cfg.d_model)
        tokens = where_mask(mask[:, :, :, None], coord, p["embed.mask_token"])
        tokens = tokens + p["embed.joint_pos"].reshape(1, 1, J, cfg.d_model)
        tokens = tokens + p["embed.frame_pos"][:T].reshape(1, T, 1, cfg.d_model)
        return TokenGrid(tokens, mask)

    def spatial_encode(self, grid: TokenGrid) -> TokenGrid:
        """Self-attention over joints, independently per frame."""
        cfg = self.config
        B, T, J, d = grid.tokens.shape
        x = grid.tokens.reshape(B * T, J, d)
        bias = _spatial_key_bias(grid.mask)
        for i in range(cfg.n_spatial_layers):
            x = _transformer_block(x, self.params, f"spatial.{i}", cfg.n_heads, bias)
        return TokenGrid(x.reshape(B, T, J, d), grid.mask)

    def temporal_encode(self, grid: TokenGrid) -> tuple[Tensor, Tensor]:
        """Pool joints to frame tokens, attend over frames.

        Frame tokens average the visible joints' outputs (all joints when
        a frame is fully masked). Returns the per-frame encoding
        ``[B, T, d]`` and its mean-pooled summary ``[B, d]``.
        """
        cfg = self.config
        w = grid.mask.copy()
        w[w.sum(axis=2) == 0.0] = 1.0
        w = w / w.sum(axis=2, keepdims=True)
        frames = (grid.tokens * w[:, :, :, None]).sum(axis=2)
        for i in range(cfg.n_temporal_layers):
            frames = _transformer_block(frames, self.params, f"temporal.{i}", cfg.n_heads, None)
        frames = layer_norm(frames, self.params["encoder.ln.g"], self.params["encoder.ln.b"])
        return frames, frames.mean(axis=1)

    def encode_batch(self, x: np.ndarray, mask: np.ndarray) -> LatentDistribution:
        """embed -> spatial -> temporal -> linear heads, batched."""
        grid = self.spatial_encode(self.embed_joints(x, mask))
        _, pooled = self.temporal_encode(grid)
        p = self.params
        mu = pooled @ p["latent.mu.w"] + p["latent.mu.b"]
        logvar = (pooled @ p["latent.logvar.w"] + p["latent.logvar.b"]).clip(-10.0, 10.0)
        return LatentDistribution(mu, logvar)

    def encode(self, seq: SkeletonSequence, mask: ConfidenceMask | None = None) -> LatentDistribution:
        m = mask.mask if mask is not None else np.ones((seq.frames, seq.joints))
        if m.shape != (seq.frames, seq.joints):
            raise ShapeError(f"mask shape {m.shape} does not match sequence {(seq.frames, seq.joints)}")
        dist = self.encode_batch(seq.data[None], m[None])
        return LatentDistribution(dist.mu.reshape(self.config.latent_dim),
                                  dist.log_sigma_sq.reshape(self.config.latent_dim))

    def decode_batch(self, z: Tensor | np.ndarray, frames: int) -> Tensor:
        """Broadcast latents to frame queries and decode all joints."""
        cfg, p = self.config, self.params
        if frames < 1 or frames > cfg.t_max:
            raise ConfigError(f"frames must be in 1..{cfg.t_max}, got {frames}")
        if not isinstance(z, Tensor):
            z = Tensor(np.asarray(z, dtype=np.float64))
        B = z.shape[0]
        base = z @ p["decoder.in.w"] + p["decoder.in.b"]
        x = base.reshape(B, 1, cfg.d_model) + p["decoder.frame_pos"][:frames].reshape(1, frames, cfg.d_model)
        for i in range(cfg.n_temporal_layers):
            x = _transformer_block(x, p, f"decoder.{i}", cfg.n_heads, None)
        x = layer_norm(x, p["decoder.ln.g"], p["decoder.ln.b"]).reshape(B * frames, cfg.d_model)
        out = x @ p["decoder.head.w"] + p["decoder.head.b"]
        return out.reshape(B, frames, cfg.joints, cfg.dims)

    def decode(self, z: np.ndarray, frames: int, fps: float = 30.0) -> SkeletonSequence:
        z = np.asarray(z, dtype=np.float64)
        out = self.decode_batch(z[None], frames)
        return SkeletonSequence(out.data[0], fps=fps)

    def reconstruct(self, seq: SkeletonSequence, mask: ConfidenceMask | None = None) -> SkeletonSequence:
        """Decode the posterior mean back to a full sequence."""
        dist = self.encode(seq, mask)
        mu, _ = dist.numpy()
        return self.decode(mu, seq.frames, fps=seq.fps)


def reparameterize(dist: LatentDistribution, seed: int):
    """Draw ``z = mu + sigma * eps`` with seeded standard normal noise."""
    rng = np.random.Generator(np.random.PCG64(seed))
    if isinstance(dist.mu, Tensor):
        eps = rng.standard_normal(dist.mu.shape)
        return dist.mu + (dist.log_sigma_sq * 0.5).exp() * eps
    mu = np.asarray(dist.mu, dtype=np.float64)
    lv = np.asarray(dist.log_sigma_sq, dtype=np.float64)
    return mu + np.exp(0.5 * lv) * rng.standard_normal(mu.shape)


def recon_loss_mse(recon, target: np.ndarray, mask: np.ndarray):
    """Masked squared-error sum: visible joints only, no count normalization."""
    _check_loss_shapes(recon, target, mask)
    if isinstance(recon, Tensor):
        diff = recon - target
        return (diff * diff * mask[..., None]).sum()
    return float((((np.asarray(recon) - target) ** 2) * mask[..., None]).sum())


def recon_loss_l1(recon, target: np.ndarray, mask: np.ndarray):
    """Masked absolute-error sum over visible joints."""
    _check_loss_shapes(recon, target, mask)
    if isinstance(recon, Tensor):
        return ((recon - target).abs() * mask[..., None]).sum()
    return float((np.abs(np.asarray(recon) - target) * mask[..., None]).sum())


def _check_loss_shapes(recon, target, mask):
    rshape = recon.shape if isinstance(recon, Tensor) else np.asarray(recon).shape
    if rshape != np.asarray(target).shape:
        raise ShapeError(f"reconstruction shape {rshape} != target shape {np.asarray(target).shape}")
    if np.asarray(mask).shape != rshape[:-1]:
        raise ShapeError(f"mask shape {np.asarray(mask).shape} does not match joints {rshape[:-1]}")


def kl_loss(dist: LatentDistribution):
    """KL divergence to the standard normal; zero iff mu=0 and sigma^2=1."""
    if isinstance(dist.mu, Tensor):
        mu, lv = dist.mu, dist.log_sigma_sq
        return (mu * mu + lv.exp() - lv - 1.0).sum() * 0.5
    mu = np.asarray(dist.mu, dtype=np.float64)
    lv = np.asarray(dist.log_sigma_sq, dtype=np.float64)
    # expm1(x) - x is the nonnegative-by-construction form of e^x - x - 1.
    return float(0.5 * (mu**2 + (np.expm1(lv) - lv)).sum())


def total_loss(recon, kl, beta: float):
    """Weighted objective: reconstruction plus ``beta`` times the KL term."""
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    return recon + beta * kl


def per_visible_joint_mse(recon: np.ndarray, target: np.ndarray, mask: np.ndarray) -> float:
    """Mean squared error per visible joint-frame (for cross-rate comparison)."""
    visible = mask.sum()
    if visible == 0:
        return 0.0
    return float((((recon - target) ** 2) * mask[..., None]).sum() / visible)
