"""Command-line surface tying the pipeline together.

Exit codes: 0 success, 2 usage error (bad flags, missing files, config
conflicts), 3 runtime failure, 4 data-format error. All randomness is
seed-controlled through flags, so rerunning a command with the same
inputs produces byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import audio as audio_mod
from . import diffusion as diffusion_mod
from . import metrics as metrics_mod
from .errors import ConfigError, DataFormatError, SkeleFusionError
from .seqio import load_sequence, read_wav, save_sequence, write_wav
from .skeleton import ConfidenceMask, CorruptionSpec, SkeletonSequence, inject_occlusions
from .st_vae import ModelConfig
from .synth import synth_dance
from .training import (
    TrainConfig,
    TrainItem,
    load_checkpoint,
    save_checkpoint,
    train_diffusion,
    train_vae,
    write_history_csv,
)

USAGE_EXIT = 2
RUNTIME_EXIT = 3
DATA_EXIT = 4


class _UsageError(Exception):
    pass


def _require_file(path: Path) -> Path:
    if not path.exists():
        raise _UsageError(f"missing file: {path}")
    return path


# -- commands ----------------------------------------------------------------


def _cmd_synth(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seq, samples, rate = synth_dance(
        args.frames, args.joints, args.bpm, args.seed, fps=args.fps, sample_rate=args.sample_rate
    )
    save_sequence(out / "sequence.json", seq)
    write_wav(out / "audio.wav", samples, rate)
    print(f"wrote {out / 'sequence.json'} and {out / 'audio.wav'}")


def _cmd_corrupt(args) -> None:
    loaded = load_sequence(_require_file(Path(args.in_path)))
    spec = CorruptionSpec(args.rate, args.pattern, args.seed)
    corrupted, mask = inject_occlusions(loaded.sequence, spec)
    save_sequence(args.out, corrupted, mask)
    print(f"wrote {args.out} ({int(mask.mask.size - mask.visible_count())} joint-frames dropped)")


def _parse_config_file(path: Path) -> dict:
    text = _require_file(path).read_text()
    if text.lstrip().startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as e:
            raise DataFormatError(f"{path}: bad JSON config: {e}") from e
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataFormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = _coerce(value.strip())
    return values


def _coerce(text: str):
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


_MODEL_KEYS = ("dims", "d_model", "n_spatial_layers", "n_temporal_layers", "n_heads", "latent_dim", "t_max")
_TRAIN_KEYS = (
    "stage", "loss_kind", "use_mask", "beta", "lr", "batch_size", "epochs", "seq_len",
    "seed", "checkpoint_every", "weight_decay", "warmup_steps", "audio_drop_prob", "max_steps",
)


def _load_dataset(data_dir: Path, with_audio: bool, fps_hint: float = 30.0) -> list[TrainItem]:
    files = sorted(data_dir.glob("*.json"))
    if not files:
        raise _UsageError(f"no sequence files (*.json) in {data_dir}")
    items = []
    for f in files:
        loaded = load_sequence(f)
        vec = None
        if with_audio:
            wav = f.with_suffix(".wav")
            if wav.exists():
                samples, rate = read_wav(wav)
                track = audio_mod.extract_feature_track(
                    samples, rate, loaded.sequence.fps, t_motion=loaded.sequence.frames
                )
                vec = track.pooled()
        items.append(TrainItem(loaded.sequence, loaded.mask, vec))
    return items


def _cmd_train(args) -> None:
    cfg = _parse_config_file(Path(args.config))
    for override in args.set or []:
        if "=" not in override:
            raise _UsageError(f"--set expects key=value, got {override!r}")
        key, _, value = override.partition("=")
        cfg[key.strip()] = _coerce(value.strip())
    if args.stage:
        cfg["stage"] = args.stage
    if args.data:
        cfg["data_dir"] = args.data
    if args.seed is not None:
        cfg["seed"] = args.seed

    stage = cfg.get("stage")
    if stage not in ("vae", "diffusion"):
        raise _UsageError(f"stage must be 'vae' or 'diffusion', got {stage!r}")
    data_dir = cfg.get("data_dir")
    if not data_dir:
        raise _UsageError("config needs data_dir (or pass --data)")
    dataset = _load_dataset(Path(data_dir), with_audio=stage == "diffusion")

    train_cfg = TrainConfig(**{k: cfg[k] for k in _TRAIN_KEYS if k in cfg})
    if stage == "vae":
        seq = dataset[0].sequence
        model_cfg = ModelConfig(
            joints=seq.joints, **{k: cfg[k] for k in _MODEL_KEYS if k in cfg and k != "dims"},
            dims=seq.dims,
        )
        result = train_vae(train_cfg, dataset, model_cfg)
    else:
        vae_path = cfg.get("vae_ckpt") or args.vae_ckpt
        if not vae_path:
            raise _UsageError("diffusion stage needs vae_ckpt in config (or --vae-ckpt)")
        vae_ckpt = load_checkpoint(_require_file(Path(vae_path)))
        schedule = diffusion_mod.NoiseSchedule.geometric(steps=int(cfg.get("diffusion_steps", 50)))
        dcfg = diffusion_mod.DiffusionConfig(
            latent_dim=vae_ckpt.model_config.latent_dim,
            steps=schedule.steps,
            hidden_dim=int(cfg.get("hidden_dim", 64)),
        )
        result = train_diffusion(train_cfg, dataset, vae_ckpt, dcfg, schedule)

    save_checkpoint(args.out, result.checkpoint)
    if args.log:
        write_history_csv(args.log, result.history)
    print(f"wrote {args.out} (final loss {result.history[-1]['loss']:.6g})")


def _cmd_reconstruct(args) -> None:
    ckpt = load_checkpoint(_require_file(Path(args.ckpt)))
    loaded = load_sequence(_require_file(Path(args.in_path)))
    model = ckpt.build_vae()
    recon = model.reconstruct(loaded.sequence, loaded.mask)
    save_sequence(args.out, recon)
    print(f"wrote {args.out}")


def _cmd_generate(args) -> None:
    ckpt = load_checkpoint(_require_file(Path(args.ckpt)))
    if ckpt.denoiser_params is None:
        raise ConfigError("checkpoint has no denoiser; train stage 'diffusion' first")
    samples, rate = read_wav(_require_file(Path(args.audio)))
    track = audio_mod.extract_feature_track(samples, rate, args.fps, t_motion=args.frames)
    model = ckpt.build_vae()
    seq = diffusion_mod.sample(
        track.pooled(), ckpt.schedule(), ckpt.build_denoiser(), args.seed, args.frames, model, fps=args.fps
    )
    save_sequence(args.out, seq)
    print(f"wrote {args.out}")


def _load_dir_sequences(path: Path) -> list[SkeletonSequence]:
    if not path.is_dir():
        raise _UsageError(f"missing directory: {path}")
    files = sorted(path.glob("*.json"))
    if not files:
        raise _UsageError(f"no sequence files (*.json) in {path}")
    return [load_sequence(f).sequence for f in files]


def _cmd_evaluate(args) -> None:
    out = Path(args.out)
    if args.metric in ("fid", "sweep") and not args.real:
        raise _UsageError(f"--metric {args.metric} needs --real")
    if args.metric in ("fid", "diversity") and not args.gen:
        raise _UsageError(f"--metric {args.metric} needs --gen")
    if args.metric == "fid":
        real = [metrics_mod.feature_embed(s) for s in _load_dir_sequences(Path(args.real))]
        gen = [metrics_mod.feature_embed(s) for s in _load_dir_sequences(Path(args.gen))]
        value = metrics_mod.fid(
            metrics_mod.gaussian_stats(np.stack(real)), metrics_mod.gaussian_stats(np.stack(gen))
        )
        out.write_text(f"metric,value,feature_space\nfid,{value!r},descriptor\n")
        print(f"fid={value!r}")
    elif args.metric == "diversity":
        value = metrics_mod.diversity(_load_dir_sequences(Path(args.gen)))
        out.write_text(f"metric,value\ndiversity,{value!r}\n")
        print(f"diversity={value!r}")
    else:
        dataset = _load_dir_sequences(Path(args.real))
        reconstructors: dict[str, metrics_mod.Reconstructor] = {}
        if args.ckpt:
            model = load_checkpoint(_require_file(Path(args.ckpt))).build_vae()
            reconstructors["masked"] = lambda s, m: model.reconstruct(s, m)
        if args.ckpt_unmasked:
            unmasked = load_checkpoint(_require_file(Path(args.ckpt_unmasked))).build_vae()
            reconstructors["unmasked"] = lambda s, m: unmasked.reconstruct(s, None)
        if not reconstructors:
            reconstructors["identity"] = lambda s, m: s
        report = metrics_mod.robustness_sweep(
            reconstructors,
            dataset,
            rates=tuple(args.rates),
            seeds=tuple(args.seeds),
        )
        report.to_csv(out)
        report.to_json(out.with_suffix(".json"))
        print(f"wrote {out} and {out.with_suffix('.json')}")


def _cmd_render(args) -> None:
    loaded = load_sequence(_require_file(Path(args.in_path)))
    seq = loaded.sequence
    out = Path(args.out)
    if args.format == "csv":
        if str(out.parent) not in ("", "."):
            out.parent.mkdir(parents=True, exist_ok=True)
        _render_csv(seq, out)
        print(f"wrote {out}")
        return
    out.mkdir(parents=True, exist_ok=True)
    for t in range(seq.frames):
        (out / f"frame_{t:06d}.svg").write_text(_frame_svg(seq, t))
    print(f"wrote {seq.frames} SVG frames to {out}")


def _render_csv(seq: SkeletonSequence, path: Path) -> None:
    axes = "xyz"[: seq.dims]
    lines = ["frame,joint," + ",".join(axes)]
    for t in range(seq.frames):
        for j in range(seq.joints):
            coords = ",".join(repr(float(v)) for v in seq.data[t, j])
            lines.append(f"{t},{j},{coords}")
    path.write_text("\n".join(lines) + "\n")


def _frame_svg(seq: SkeletonSequence, t: int, size: int = 400) -> str:
    # Shared bounds across frames keep the figure stable over time.
    xy = seq.data[:, :, :2]
    lo = xy.reshape(-1, 2).min(axis=0)
    hi = xy.reshape(-1, 2).max(axis=0)
    span = max(float((hi - lo).max()), 1e-9)
    pad = 0.05 * span

    def to_px(p):
        x = (p[0] - lo[0] + pad) / (span + 2 * pad) * size
        y = size - (p[1] - lo[1] + pad) / (span + 2 * pad) * size
        return f"{x:.3f}", f"{y:.3f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for a, b in seq.edges or ():
        xa, ya = to_px(seq.data[t, a])
        xb, yb = to_px(seq.data[t, b])
        parts.append(
            f'<line x1="{xa}" y1="{ya}" x2="{xb}" y2="{yb}" stroke="black" stroke-width="2"/>'
        )
    for j in range(seq.joints):
        cx, cy = to_px(seq.data[t, j])
        parts.append(f'<circle cx="{cx}" cy="{cy}" r="3" fill="crimson"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# -- argument parsing ---------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skelefusion", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dance + click track")
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--joints", type=int, required=True)
    p.add_argument("--bpm", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("corrupt", help="drop joint-frames from a sequence")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--pattern", default="random-joint", choices=CorruptionSpec.PATTERNS)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_corrupt)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--config", required=True)
    p.add_argument("--stage", choices=("vae", "diffusion"))
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="override data_dir from the config")
    p.add_argument("--vae-ckpt", help="stage-1 checkpoint for the diffusion stage")
    p.add_argument("--seed", type=int)
    p.add_argument("--log", help="optional CSV training log path")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("reconstruct", help="reconstruct a corrupted sequence")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_reconstruct)

    p = sub.add_parser("generate", help="sample a dance conditioned on audio")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_generate)

    p = sub.add_parser("evaluate", help="FID / diversity / robustness sweep")
    p.add_argument("--metric", choices=("fid", "diversity", "sweep"), required=True)
    p.add_argument("--real", help="directory of reference sequences")
    p.add_argument("--gen", help="directory of generated sequences")
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt", help="masked-training checkpoint for sweep")
    p.add_argument("--ckpt-unmasked", help="unmasked-training checkpoint for sweep")
    p.add_argument("--rates", type=float, nargs="+", default=[0.05, 0.10, 0.15, 0.20])
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("render", help="stick-figure SVG frames or CSV dump")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("svg", "csv"), default="svg")
    p.set_defaults(fn=_cmd_render)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (_UsageError, ConfigError) as e:
        print(f"error: usage: {e}", file=sys.stderr)
        return USAGE_EXIT
    except DataFormatError as e:
        print(f"error: data-format: {e}", file=sys.stderr)
        return DATA_EXIT
    except (SkeleFusionError, OSError, ValueError) as e:
        print(f"error: runtime: {e}", file=sys.stderr)
        return RUNTIME_EXIT
    return 0


if __name__ == "__main__":
    sys.exit(main())
