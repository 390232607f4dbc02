import numpy as np
import pytest

from gradcheck import fd_max_rel_error
from skelefusion.diffusion import (
    DiffusionConfig,
    DiffusionTrajectory,
    NoiseSchedule,
    build_trajectory,
    denoise_residual,
    denoise_residual_batch,
    diffusion_loss,
    init_denoiser_params,
    initial_noise,
    refine_latent,
    sample,
    step,
)
from skelefusion.metrics import diversity
from skelefusion.st_vae import ModelConfig, SpatioTemporalVAE

LATENT = 4
TINY_DIFF = DiffusionConfig(latent_dim=LATENT, steps=6, hidden_dim=8, time_dim=4, audio_dim=35)


def tiny_params(seed=0, randomize_output=False):
    params = init_denoiser_params(TINY_DIFF, seed=seed)
    if randomize_output:
        rng = np.random.default_rng(seed + 1)
        params["den.out.w"].data[:] = rng.normal(scale=0.3, size=params["den.out.w"].shape)
        params["den.out.b"].data[:] = rng.normal(scale=0.3, size=params["den.out.b"].shape)
    return params


class TestNoiseSchedule:
    def test_geometric_default(self):
        s = NoiseSchedule.geometric()
        assert s.steps == 50
        assert s.sigmas[0] == 1.0
        assert np.isclose(s.sigmas[-1], 0.01)
        assert np.all(np.diff(s.sigmas) < 0)

    def test_rejects_non_decreasing(self):
        with pytest.raises(ValueError):
            NoiseSchedule(np.array([0.5, 0.5, 0.1]))
        with pytest.raises(ValueError):
            NoiseSchedule(np.array([0.1, 0.5]))
        with pytest.raises(ValueError):
            NoiseSchedule(np.array([1.0, -0.1]))

    def test_single_step_zero_allowed(self):
        s = NoiseSchedule(np.array([0.0]))
        assert s.steps == 1


class TestTrajectory:
    def test_row_zero_is_clean(self):
        z0 = np.array([1.0, -2.0, 0.5, 3.0])
        traj = build_trajectory(z0, NoiseSchedule.geometric(8), seed=1)
        assert traj.states.shape == (9, 4)
        assert np.array_equal(traj.states[0], z0)

    def test_zero_sigma_schedule_keeps_states_clean(self):
        z0 = np.array([1.0, 2.0, 3.0, 4.0])
        traj = build_trajectory(z0, NoiseSchedule(np.array([0.0])), seed=5)
        assert np.array_equal(traj.states[0], z0)
        assert np.array_equal(traj.states[1], z0)

    def test_deterministic(self):
        z0 = np.zeros(LATENT)
        a = build_trajectory(z0, NoiseSchedule.geometric(10), seed=3)
        b = build_trajectory(z0, NoiseSchedule.geometric(10), seed=3)
        assert np.array_equal(a.states, b.states)

    def test_final_state_variance_matches_sigma_max(self):
        sched = NoiseSchedule.geometric(10, sigma_max=0.7)
        z0 = np.zeros(LATENT)
        finals = np.array(
            [build_trajectory(z0, sched, seed=s).states[-1] for s in range(10_000)]
        )
        assert abs(finals.var() - 0.7**2) < 0.05 * 0.7**2

    def test_noise_grows_along_the_index(self):
        sched = NoiseSchedule.geometric(20)
        z0 = np.zeros(LATENT)
        spread = np.array(
            [build_trajectory(z0, sched, seed=s).states for s in range(300)]
        ).std(axis=(0, 2))
        assert spread[0] == 0.0
        assert spread[-1] > spread[5] > 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            DiffusionTrajectory(np.full((3, 2), np.nan))


class TestDenoiser:
    def test_zero_init_output_layer(self):
        params = tiny_params()
        rng = np.random.default_rng(0)
        for _ in range(5):
            z = rng.normal(size=LATENT)
            t = int(rng.integers(0, TINY_DIFF.steps))
            assert np.all(denoise_residual(z, t, None, params) == 0.0)
            assert np.all(denoise_residual(z, t, rng.normal(size=35), params) == 0.0)

    def test_deterministic(self):
        params = tiny_params(randomize_output=True)
        z = np.arange(LATENT, dtype=float)
        audio = np.linspace(0, 1, 35)
        a = denoise_residual(z, 2, audio, params)
        b = denoise_residual(z, 2, audio, params)
        assert np.array_equal(a, b)

    def test_null_conditioning_differs_from_audio(self):
        params = tiny_params(randomize_output=True)
        z = np.ones(LATENT)
        with_audio = denoise_residual(z, 1, np.full(35, 0.5), params)
        without = denoise_residual(z, 1, None, params)
        assert np.abs(with_audio - without).max() > 0.0

    def test_step_index_validation(self):
        params = tiny_params()
        with pytest.raises(ValueError):
            denoise_residual(np.zeros(LATENT), TINY_DIFF.steps, None, params)

    def test_straight_line_oracle(self):
        params = tiny_params(randomize_output=True)
        z = np.array([0.3, -0.2, 1.0, 0.5])
        t = 3
        audio = np.linspace(-1, 1, 35)

        def gelu(v):
            return 0.5 * v * (1.0 + np.tanh(np.sqrt(2 / np.pi) * (v + 0.044715 * v**3)))

        x = np.concatenate([z, params["den.time_embed"].data[t], audio])
        h = gelu(x @ params["den.l1.w"].data + params["den.l1.b"].data)
        h = gelu(h @ params["den.l2.w"].data + params["den.l2.b"].data)
        expected = h @ params["den.out.w"].data + params["den.out.b"].data
        got = denoise_residual(z, t, audio, params)
        assert np.abs(got - expected).max() < 1e-12


class TestStep:
    def test_zero_residual_is_identity(self):
        params = tiny_params()
        z = np.array([0.1, 0.2, 0.3, 0.4])
        assert np.array_equal(step(z, 0, None, params), z)

    def test_subtraction_identity_to_machine_precision(self):
        params = tiny_params(randomize_output=True)
        rng = np.random.default_rng(2)
        for _ in range(10):
            z = rng.normal(size=LATENT)
            t = int(rng.integers(0, TINY_DIFF.steps))
            out = step(z, t, None, params)
            residual = denoise_residual(z, t, None, params)
            assert np.abs((out + residual) - z).max() < 1e-15

    def test_constant_residual_can_zero_the_state(self):
        params = tiny_params()
        z = np.array([0.5, -1.0, 2.0, 0.25])
        params["den.out.b"].data[:] = z  # residual == z for every input
        assert np.all(step(z, 1, None, params) == 0.0)


class TestDiffusionLoss:
    def test_zero_when_residuals_reproduce_increments(self):
        # Linear trajectory: constant increment; a bias-only denoiser can
        # match it exactly. Dyadic values keep the arithmetic exact.
        inc = np.array([0.125, -0.25, 0.5, 0.0])
        states = np.cumsum(np.tile(inc, (5, 1)), axis=0) - inc
        traj = DiffusionTrajectory(states)
        params = tiny_params()
        params["den.out.b"].data[:] = -inc
        loss = diffusion_loss(traj, None, params)
        assert float(loss.data) == 0.0

    def test_zero_network_gives_sum_of_squared_increments(self):
        z0 = np.array([0.5, 0.5, -0.5, 1.0])
        traj = build_trajectory(z0, NoiseSchedule.geometric(6), seed=9)
        params = tiny_params()
        loss = diffusion_loss(traj, None, params)
        expected = ((traj.states[1:] - traj.states[:-1]) ** 2).sum()
        assert abs(float(loss.data) - expected) < 1e-12

    def test_nonnegative(self):
        params = tiny_params(randomize_output=True)
        traj = build_trajectory(np.zeros(LATENT), NoiseSchedule.geometric(6), seed=4)
        assert float(diffusion_loss(traj, np.zeros(35), params).data) >= 0.0

    def test_finite_difference_gradients(self):
        params = tiny_params(randomize_output=True)
        traj = build_trajectory(np.ones(LATENT) * 0.3, NoiseSchedule.geometric(6), seed=5)
        audio = np.linspace(0, 1, 35)
        norm = 1.0 / (traj.steps * LATENT)
        err = fd_max_rel_error(
            lambda: diffusion_loss(traj, audio, params) * norm, params, h=1e-4
        )
        assert err < 1e-4

    def test_null_path_gets_gradients_only_when_audio_absent(self):
        params = tiny_params(randomize_output=True)
        traj = build_trajectory(np.zeros(LATENT), NoiseSchedule.geometric(6), seed=6)
        for t in params.values():
            t.zero_grad()
        diffusion_loss(traj, np.ones(35), params).backward()
        assert params["den.null_audio"].grad is None
        for t in params.values():
            t.zero_grad()
        diffusion_loss(traj, None, params).backward()
        assert np.abs(params["den.null_audio"].grad).max() > 0.0


def tiny_decoder():
    cfg = ModelConfig(joints=3, dims=2, d_model=8, n_spatial_layers=1,
                      n_temporal_layers=1, n_heads=2, latent_dim=LATENT, t_max=12)
    return SpatioTemporalVAE(cfg, seed=5)


class TestSampler:
    def test_bit_identical_per_seed(self):
        decoder = tiny_decoder()
        params = tiny_params(randomize_output=True)
        sched = NoiseSchedule.geometric(6)
        a = sample(None, sched, params, seed=3, frames=5, decoder=decoder)
        b = sample(None, sched, params, seed=3, frames=5, decoder=decoder)
        assert np.array_equal(a.data, b.data)

    def test_zero_residual_network_decodes_initial_noise(self):
        decoder = tiny_decoder()
        params = tiny_params()
        sched = NoiseSchedule.geometric(6)
        out = sample(None, sched, params, seed=8, frames=4, decoder=decoder)
        z = initial_noise(sched, LATENT, seed=8)
        assert np.array_equal(out.data, decoder.decode(z, 4).data)

    def test_loop_equals_composition_of_steps(self):
        decoder = tiny_decoder()
        params = tiny_params(randomize_output=True)
        sched = NoiseSchedule.geometric(6)
        out = sample(np.full(35, 0.2), sched, params, seed=1, frames=4, decoder=decoder)
        z = initial_noise(sched, LATENT, seed=1)
        for t in range(sched.steps - 1, -1, -1):
            z = step(z, t, np.full(35, 0.2), params)
        assert np.array_equal(out.data, decoder.decode(z, 4).data)
        assert np.array_equal(z, refine_latent(initial_noise(sched, LATENT, 1), sched, np.full(35, 0.2), params))

    def test_distinct_seeds_give_diverse_motions(self):
        decoder = tiny_decoder()
        params = tiny_params(randomize_output=True)
        sched = NoiseSchedule.geometric(6)
        outs = [sample(None, sched, params, seed=s, frames=4, decoder=decoder) for s in (1, 2)]
        assert np.abs(outs[0].data - outs[1].data).max() > 0.0
        assert diversity(outs) > 0.0


def test_batch_and_single_residuals_agree():
    params = tiny_params(randomize_output=True)
    rng = np.random.default_rng(3)
    z = rng.normal(size=(4, LATENT))
    ts = np.array([0, 2, 2, 5])
    audio = rng.normal(size=35)
    batch = denoise_residual_batch(z, ts, audio, params).data
    for i in range(4):
        single = denoise_residual(z[i], int(ts[i]), audio, params)
        assert np.abs(batch[i] - single).max() < 1e-15
