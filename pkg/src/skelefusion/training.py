"""Two-stage optimization: reconstruction pre-training, then conditioned
latent refinement with the first-stage weights frozen.

Reproducibility contract: (config, seed) fully determines every
checkpoint. All stochastic draws derive from ``SeedSequence([seed, tag,
counter])``, so resuming from a checkpoint replays the exact run.
Checkpoints are a custom binary container (header JSON + raw float64
payload + sha256) written byte-identically for identical runs.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .diffusion import (
    DiffusionConfig,
    NoiseSchedule,
    build_trajectory,
    diffusion_loss,
    init_denoiser_params,
)
from .errors import ConfigError, DataFormatError, DivergenceError, IntegrityError, VersionError
from .skeleton import ConfidenceMask, SkeletonSequence
from .st_vae import (
    ModelConfig,
    SpatioTemporalVAE,
    kl_loss,
    per_visible_joint_mse,
    recon_loss_l1,
    recon_loss_mse,
    reparameterize,
    total_loss,
)

CHECKPOINT_MAGIC = b"SKLFCKPT"
CHECKPOINT_VERSION = 1
DIVERGENCE_LIMIT = 1e6

_TAG_REPARAM = 101
_TAG_AUDIO_DROP = 102
_TAG_TRAJECTORY = 103


def derive_seed(*keys: int) -> int:
    """Stable scalar seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class TrainConfig:
    stage: str  # "vae" or "diffusion"
    loss_kind: str = "mse"  # "mse" or "l1"
    use_mask: bool = True
    beta: float = 1e-3
    lr: float = 1e-3
    batch_size: int = 1
    epochs: int = 1
    seq_len: int = 30
    seed: int = 0
    checkpoint_every: int = 0  # epochs between snapshots; 0 disables
    weight_decay: float = 1e-2
    warmup_steps: int = 100
    audio_drop_prob: float = 0.1
    max_steps: int | None = None

    def __post_init__(self):
        if self.stage not in ("vae", "diffusion"):
            raise ConfigError(f"stage must be 'vae' or 'diffusion', got {self.stage!r}")
        if self.loss_kind not in ("mse", "l1"):
            raise ConfigError(f"loss_kind must be 'mse' or 'l1', got {self.loss_kind!r}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.seq_len < 2:
            raise ConfigError(f"seq_len must be >= 2, got {self.seq_len}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class TrainItem:
    """One training example: sequence, optional mask, optional audio vector."""

    sequence: SkeletonSequence
    mask: ConfidenceMask | None = None
    audio: np.ndarray | None = None


@dataclass
class Checkpoint:
    """Everything needed to resume or deploy: configs, tensors, optimizer."""

    model_config: ModelConfig
    vae_params: dict[str, np.ndarray]
    train_config: TrainConfig | None = None
    diffusion_config: DiffusionConfig | None = None
    denoiser_params: dict[str, np.ndarray] | None = None
    schedule_sigmas: np.ndarray | None = None
    opt_m: dict[str, np.ndarray] = field(default_factory=dict)
    opt_v: dict[str, np.ndarray] = field(default_factory=dict)
    opt_step: int = 0
    step: int = 0

    def build_vae(self, trainable: bool = False) -> SpatioTemporalVAE:
        params = {
            name: Tensor(arr.copy(), requires_grad=trainable)
            for name, arr in self.vae_params.items()
        }
        return SpatioTemporalVAE(self.model_config, params=params)

    def build_denoiser(self, trainable: bool = False) -> dict[str, Tensor]:
        if self.denoiser_params is None:
            raise ConfigError("checkpoint has no denoiser parameters (train stage 'diffusion' first)")
        return {
            name: Tensor(arr.copy(), requires_grad=trainable)
            for name, arr in self.denoiser_params.items()
        }

    def schedule(self) -> NoiseSchedule:
        if self.schedule_sigmas is None:
            raise ConfigError("checkpoint has no noise schedule")
        return NoiseSchedule(self.schedule_sigmas.copy())


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict]


# -- AdamW ----------------------------------------------------------------


@dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def fresh(cls, params: dict[str, Tensor]) -> "AdamWState":
        return cls(
            m={k: np.zeros_like(t.data) for k, t in params.items()},
            v={k: np.zeros_like(t.data) for k, t in params.items()},
        )


def optimizer_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    lr: float,
    weight_decay: float = 1e-2,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update plus decoupled weight decay, in place."""
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for '{name}'")
        if not np.isfinite(g).all():
            raise DivergenceError(f"non-finite gradient in tensor '{name}'")
        m = state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        adaptive = (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.data = p.data - lr * adaptive - lr * weight_decay * p.data


# -- stage 1: reconstruction pre-training ----------------------------------


def _stack_items(dataset: list[TrainItem]) -> tuple[np.ndarray, np.ndarray]:
    if not dataset:
        raise ConfigError("dataset is empty")
    shape = dataset[0].sequence.data.shape
    xs, ms = [], []
    for item in dataset:
        if item.sequence.data.shape != shape:
            raise ConfigError(
                f"all sequences must share one shape; got {item.sequence.data.shape} and {shape}"
            )
        xs.append(item.sequence.data)
        if item.mask is None:
            ms.append(np.ones(shape[:2]))
        else:
            ms.append(item.mask.mask)
    return np.stack(xs), np.stack(ms)


def _recon_loss_fn(kind: str):
    return recon_loss_mse if kind == "mse" else recon_loss_l1


def train_vae(
    config: TrainConfig,
    dataset: list[TrainItem],
    model_config: ModelConfig,
    resume: Checkpoint | None = None,
    debug_grad_probe: bool = False,
    snapshot_dir=None,
) -> TrainResult:
    """Stage-1 training: minimize masked reconstruction plus weighted KL.

    Deterministic per (config, seed); per-step latent noise derives from
    the seed and step index, so resuming a checkpoint replays the exact
    remaining schedule.

    Raises:
        DivergenceError: If the loss goes non-finite or above 1e6; the
            exception carries the last snapshot when one was taken.
    """
    x_all, m_all = _stack_items(dataset)
    n_items, frames = x_all.shape[0], x_all.shape[1]
    if not config.use_mask:
        m_all = np.ones_like(m_all)

    if resume is not None:
        if resume.model_config != model_config:
            raise ConfigError(
                f"resume checkpoint config {resume.model_config} does not match {model_config}"
            )
        model = resume.build_vae(trainable=True)
        opt = AdamWState(
            m={k: v.copy() for k, v in resume.opt_m.items()},
            v={k: v.copy() for k, v in resume.opt_v.items()},
            step=resume.opt_step,
        )
        start_step = resume.step
    else:
        model = SpatioTemporalVAE(model_config, seed=derive_seed(config.seed, 0))
        opt = AdamWState.fresh(model.params)
        start_step = 0

    loss_fn = _recon_loss_fn(config.loss_kind)
    n_batches = (n_items + config.batch_size - 1) // config.batch_size
    total_steps = config.epochs * n_batches
    if config.max_steps is not None:
        total_steps = min(total_steps, config.max_steps)
    beta_warm = max(1, total_steps // 10)

    history: list[dict] = []
    last_snapshot: Checkpoint | None = None
    for step in range(start_step, total_steps):
        lo = (step % n_batches) * config.batch_size
        xb = x_all[lo : lo + config.batch_size]
        mb = m_all[lo : lo + config.batch_size]
        batch = xb.shape[0]

        for t in model.params.values():
            t.zero_grad()
        x_in = Tensor(xb, requires_grad=True) if debug_grad_probe else xb
        dist = model.encode_batch(x_in, mb)
        z = reparameterize(dist, derive_seed(config.seed, _TAG_REPARAM, step))
        recon = model.decode_batch(z, frames)
        recon_term = loss_fn(recon, xb, mb)
        kl_term = kl_loss(dist)
        beta_t = config.beta * min(1.0, step / beta_warm)
        loss = total_loss(recon_term, kl_term, beta_t) * (1.0 / batch)
        loss.backward()

        loss_value = float(loss.data)
        if not np.isfinite(loss_value) or loss_value > DIVERGENCE_LIMIT:
            raise DivergenceError(
                f"training diverged at step {step}: loss={loss_value}", checkpoint=last_snapshot
            )
        if debug_grad_probe:
            masked = mb[:, :, :, None] == 0.0
            if x_in.grad is not None and np.any(x_in.grad[np.broadcast_to(masked, x_in.grad.shape)] != 0.0):
                raise AssertionError("gradient leaked into masked joint coordinates")

        grads = {k: t.grad if t.grad is not None else np.zeros_like(t.data) for k, t in model.params.items()}
        lr_t = config.lr * min(1.0, (step + 1) / max(1, config.warmup_steps))
        optimizer_step(model.params, grads, opt, lr_t, config.weight_decay)

        history.append(
            {
                "step": step,
                "loss": loss_value,
                "recon": float(recon_term.data) / batch,
                "kl": float(kl_term.data) / batch,
                "mse_per_visible": per_visible_joint_mse(recon.data, xb, mb),
            }
        )
        epoch_done = (step + 1) % n_batches == 0
        epoch = (step + 1) // n_batches
        if config.checkpoint_every and epoch_done and epoch % config.checkpoint_every == 0:
            last_snapshot = _make_checkpoint(model, config, opt, step + 1)
            if snapshot_dir is not None:
                save_checkpoint(Path(snapshot_dir) / f"epoch{epoch:06d}.ckpt", last_snapshot)

    return TrainResult(_make_checkpoint(model, config, opt, total_steps), history)


def _make_checkpoint(
    model: SpatioTemporalVAE,
    config: TrainConfig,
    opt: AdamWState,
    step: int,
    diffusion_config: DiffusionConfig | None = None,
    denoiser: dict[str, Tensor] | None = None,
    schedule: NoiseSchedule | None = None,
) -> Checkpoint:
    return Checkpoint(
        model_config=model.config,
        vae_params={k: t.data.copy() for k, t in model.params.items()},
        train_config=config,
        diffusion_config=diffusion_config,
        denoiser_params={k: t.data.copy() for k, t in denoiser.items()} if denoiser else None,
        schedule_sigmas=schedule.sigmas.copy() if schedule else None,
        opt_m={k: v.copy() for k, v in opt.m.items()},
        opt_v={k: v.copy() for k, v in opt.v.items()},
        opt_step=opt.step,
        step=step,
    )


def params_digest(params: dict[str, Tensor] | dict[str, np.ndarray]) -> str:
    """Order-independent content hash of a tensor registry."""
    h = hashlib.sha256()
    for name in sorted(params):
        value = params[name]
        arr = value.data if isinstance(value, Tensor) else value
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    return h.hexdigest()


# -- stage 2: conditioned latent refinement --------------------------------


def train_diffusion(
    config: TrainConfig,
    dataset: list[TrainItem],
    vae_checkpoint: Checkpoint,
    diffusion_config: DiffusionConfig | None = None,
    schedule: NoiseSchedule | None = None,
    resume: Checkpoint | None = None,
) -> TrainResult:
    """Stage-2 training of the residual denoiser over frozen latents.

    Each item gets one fixed noised trajectory (seeded from the item
    index), and the audio vector is dropped for a seeded fraction of the
    steps so the unconditional path stays trained. The first-stage
    parameters are verified untouched by hash.
    """
    if not dataset:
        raise ConfigError("dataset is empty")
    vae = vae_checkpoint.build_vae(trainable=False)
    vae_hash = params_digest(vae.params)
    if schedule is None:
        schedule = vae_checkpoint.schedule() if vae_checkpoint.schedule_sigmas is not None else NoiseSchedule.geometric()
    if diffusion_config is None:
        diffusion_config = DiffusionConfig(latent_dim=vae.config.latent_dim, steps=schedule.steps)
    if diffusion_config.latent_dim != vae.config.latent_dim:
        raise ConfigError(
            f"diffusion latent_dim={diffusion_config.latent_dim} != model latent_dim={vae.config.latent_dim}"
        )
    if diffusion_config.steps != schedule.steps:
        raise ConfigError(f"diffusion steps={diffusion_config.steps} != schedule steps={schedule.steps}")

    trajectories, audio_vecs = [], []
    for i, item in enumerate(dataset):
        mask = item.mask if config.use_mask else None
        mu, _ = vae.encode(item.sequence, mask).numpy()
        trajectories.append(
            build_trajectory(mu, schedule, derive_seed(config.seed, _TAG_TRAJECTORY, i))
        )
        audio_vecs.append(None if item.audio is None else np.asarray(item.audio, dtype=np.float64))

    if resume is not None:
        den = resume.build_denoiser(trainable=True)
        opt = AdamWState(
            m={k: v.copy() for k, v in resume.opt_m.items()},
            v={k: v.copy() for k, v in resume.opt_v.items()},
            step=resume.opt_step,
        )
        start_step = resume.step
    else:
        den = init_denoiser_params(diffusion_config, seed=derive_seed(config.seed, 1))
        opt = AdamWState.fresh(den)
        start_step = 0

    n_items = len(dataset)
    total_steps = config.epochs * n_items
    if config.max_steps is not None:
        total_steps = min(total_steps, config.max_steps)

    history: list[dict] = []
    last_snapshot: Checkpoint | None = None
    for step in range(start_step, total_steps):
        i = step % n_items
        rng = np.random.Generator(np.random.PCG64(derive_seed(config.seed, _TAG_AUDIO_DROP, step)))
        drop = rng.random() < config.audio_drop_prob
        audio = None if drop else audio_vecs[i]

        for t in den.values():
            t.zero_grad()
        loss = diffusion_loss(trajectories[i], audio, den)
        loss.backward()
        loss_value = float(loss.data)
        if not np.isfinite(loss_value) or loss_value > DIVERGENCE_LIMIT:
            raise DivergenceError(
                f"training diverged at step {step}: loss={loss_value}", checkpoint=last_snapshot
            )
        grads = {k: t.grad if t.grad is not None else np.zeros_like(t.data) for k, t in den.items()}
        lr_t = config.lr * min(1.0, (step + 1) / max(1, config.warmup_steps))
        optimizer_step(den, grads, opt, lr_t, config.weight_decay)
        history.append({"step": step, "loss": loss_value, "item": i, "audio_dropped": bool(drop)})

        epoch_done = (step + 1) % n_items == 0
        epoch = (step + 1) // n_items
        if config.checkpoint_every and epoch_done and epoch % config.checkpoint_every == 0:
            last_snapshot = _make_checkpoint(
                vae, config, opt, step + 1, diffusion_config, den, schedule
            )

    if params_digest(vae.params) != vae_hash:
        raise AssertionError("stage-2 training mutated frozen first-stage parameters")
    return TrainResult(
        _make_checkpoint(vae, config, opt, total_steps, diffusion_config, den, schedule),
        history,
    )


# -- checkpoint container ---------------------------------------------------


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Serialize to the versioned binary container (byte-deterministic)."""
    sections: list[tuple[str, str, np.ndarray]] = []
    for name in sorted(ckpt.vae_params):
        sections.append(("vae", name, ckpt.vae_params[name]))
    if ckpt.denoiser_params is not None:
        for name in sorted(ckpt.denoiser_params):
            sections.append(("denoiser", name, ckpt.denoiser_params[name]))
    for name in sorted(ckpt.opt_m):
        sections.append(("opt_m", name, ckpt.opt_m[name]))
    for name in sorted(ckpt.opt_v):
        sections.append(("opt_v", name, ckpt.opt_v[name]))
    if ckpt.schedule_sigmas is not None:
        sections.append(("schedule", "sigmas", ckpt.schedule_sigmas))

    payload = b"".join(np.ascontiguousarray(arr, dtype=np.float64).tobytes() for _, _, arr in sections)
    header = {
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(ckpt.model_config),
        "train_config": asdict(ckpt.train_config) if ckpt.train_config else None,
        "diffusion_config": asdict(ckpt.diffusion_config) if ckpt.diffusion_config else None,
        "step": ckpt.step,
        "opt_step": ckpt.opt_step,
        "tensors": [
            {"section": sec, "name": name, "shape": list(arr.shape)} for sec, name, arr in sections
        ],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(payload)


def load_checkpoint(path, expected_model_config: ModelConfig | None = None) -> Checkpoint:
    """Read a checkpoint, verifying magic, version, checksum, and config.

    Raises:
        DataFormatError: Malformed container.
        VersionError: Unsupported container version.
        IntegrityError: Payload checksum mismatch (corruption).
        ConfigError: ``expected_model_config`` given and disagreeing.
    """
    raw = Path(path).read_bytes()
    if len(raw) < len(CHECKPOINT_MAGIC) + 12 or raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint file")
    off = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<I", raw, off)
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<Q", raw, off + 4)
    header_start = off + 12
    try:
        header = json.loads(raw[header_start : header_start + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"{path}: corrupt checkpoint header: {e}") from e
    payload = raw[header_start + header_len :]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise IntegrityError(f"{path}: payload checksum mismatch (file corrupted)")

    model_config = ModelConfig(**header["model_config"])
    if expected_model_config is not None and model_config != expected_model_config:
        raise ConfigError(
            f"{path}: checkpoint model config {model_config} does not match expected {expected_model_config}"
        )
    train_config = TrainConfig(**header["train_config"]) if header.get("train_config") else None
    diffusion_config = (
        DiffusionConfig(**header["diffusion_config"]) if header.get("diffusion_config") else None
    )

    sections: dict[str, dict[str, np.ndarray]] = {}
    cursor = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) * 8 if shape else 8
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=cursor).reshape(shape).copy()
        cursor += size
        sections.setdefault(entry["section"], {})[entry["name"]] = arr
    if cursor != len(payload):
        raise DataFormatError(f"{path}: payload length {len(payload)} != expected {cursor}")

    return Checkpoint(
        model_config=model_config,
        vae_params=sections.get("vae", {}),
        train_config=train_config,
        diffusion_config=diffusion_config,
        denoiser_params=sections.get("denoiser") or None,
        schedule_sigmas=sections.get("schedule", {}).get("sigmas"),
        opt_m=sections.get("opt_m", {}),
        opt_v=sections.get("opt_v", {}),
        opt_step=int(header["opt_step"]),
        step=int(header["step"]),
    )


def write_history_csv(path, history: list[dict]) -> None:
    """Training log as CSV with one row per step."""
    if not history:
        Path(path).write_text("")
        return
    cols = list(history[0].keys())
    lines = [",".join(cols)]
    for row in history:
        lines.append(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n")
