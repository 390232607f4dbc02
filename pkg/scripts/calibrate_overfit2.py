"""Second calibration round: convergence speed of the stage-1 overfit."""

import time

import numpy as np

import skelefusion  # noqa: F401
import skelefusion.st_vae as SV
import skelefusion.training as T
from skelefusion.st_vae import ModelConfig, per_visible_joint_mse
from skelefusion.synth import synth_dance
from skelefusion.training import TrainConfig, TrainItem, train_vae

items = [TrainItem(synth_dance(30, 12, 120.0, seed=s)[0]) for s in range(4)]
orig_init = SV.init_vae_params

grid = [
    dict(lr=3e-3, lvb=-4.0, warmup=150, latent=16, fp_scale=1.0),
    dict(lr=5e-3, lvb=-4.0, warmup=300, latent=16, fp_scale=1.0),
    dict(lr=3e-3, lvb=-4.0, warmup=150, latent=16, fp_scale=3.0),
    dict(lr=3e-3, lvb=-6.0, warmup=150, latent=24, fp_scale=3.0),
]

for g in grid:
    def patched(cfg, seed=0, _g=g):
        p = orig_init(cfg, seed)
        p["latent.logvar.b"].data[:] = _g["lvb"]
        p["decoder.frame_pos"].data *= _g["fp_scale"]
        return p

    SV.init_vae_params = patched
    mc = ModelConfig(joints=12, dims=2, d_model=32, n_spatial_layers=2,
                     n_temporal_layers=2, n_heads=4, latent_dim=g["latent"], t_max=64)
    tc = TrainConfig(stage="vae", loss_kind="mse", beta=1e-3, lr=g["lr"],
                     batch_size=4, epochs=2000, seed=0, weight_decay=0.0,
                     warmup_steps=g["warmup"])
    t0 = time.perf_counter()
    try:
        res = train_vae(tc, items, mc)
    except Exception as e:
        print(f"{g} -> FAILED: {e}", flush=True)
        SV.init_vae_params = orig_init
        continue
    SV.init_vae_params = orig_init
    dt = time.perf_counter() - t0
    mses = [r["mse_per_visible"] for r in res.history]
    model = res.checkpoint.build_vae()
    dec = max(
        per_visible_joint_mse(model.reconstruct(it.sequence).data, it.sequence.data, np.ones((30, 12)))
        for it in items
    )
    curve = np.array([r["loss"] for r in res.history])
    smooth = np.convolve(curve, np.ones(20) / 20, mode="valid")
    print(
        f"{g} -> {dt:.0f}s mse@600={mses[599]:.2e} @1200={mses[1199]:.2e} "
        f"@2000={mses[-1]:.2e} decode_mu={dec:.2e} max_inc={np.diff(smooth).max():.2e}",
        flush=True,
    )
