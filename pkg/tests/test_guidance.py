import numpy as np
import pytest
import torch

from gradcheck import directional_grad_errors
from stylediff.backbone import NoiseSchedule, build_denoiser, DenoiserConfig, heun_step, sigma_steps
from stylediff.decompose import DataStyle, StlParams
from stylediff.errors import ConfigError, GatingError, ValidationError
from stylediff.guidance import (
    GuidanceConfig,
    GuidanceTrainConfig,
    KernelConfig,
    StyleLibrary,
    build_guidance,
    build_style_library,
    guidance_input,
    guide_component,
    sample_guided,
    thd_step,
    train_guidance,
)
from stylediff.transform import TransformParams, from_image, to_image

L, F = 24, 3
TRANSFORM = TransformParams(embedding=8, delay=3, width=8)
SCHEDULE = NoiseSchedule(steps=6)
BACKBONE_CFG = DenoiserConfig(in_channels=F, base_channels=8, channel_multipliers=(1, 2))
KERNEL = KernelConfig(
    transform=TRANSFORM, schedule=SCHEDULE, length=L, stl=StlParams(period=L)
)


@pytest.fixture(scope="module")
def backbone():
    return build_denoiser(BACKBONE_CFG, seed=0)


@pytest.fixture(scope="module")
def nets():
    cfg = GuidanceConfig(features=F, length=L, layers=1, model_dim=16, heads=2)
    return build_guidance(cfg, seed=1), build_guidance(cfg, seed=2)


def test_guidance_input_widths_match_feature_counts():
    # feature counts of the four benchmark datasets and their input widths
    for features, width in [(6, 13), (28, 57), (14, 29), (5, 11)]:
        comp = np.zeros((L, features))
        out = guidance_input(comp, comp, 0.5)
        assert out.shape == (L, width)


def test_guidance_input_layout_and_t_column():
    rng = np.random.default_rng(0)
    comp, style = rng.random((L, F)), rng.random((L, F))
    out = guidance_input(comp, style, 0.25)
    np.testing.assert_array_equal(out[:, :F], comp)
    np.testing.assert_array_equal(out[:, F : 2 * F], style)
    assert np.all(out[:, -1] == 0.25)
    with pytest.raises(ValidationError):
        guidance_input(comp, style[:, :2], 0.5)
    with pytest.raises(ValidationError):
        guidance_input(comp, style, 1.5)


def test_guide_component_shape_and_zero_weights(nets):
    net, _ = nets
    rng = np.random.default_rng(1)
    comp, style = rng.random((L, F)), rng.random((L, F))
    out = guide_component(net, comp, style, 0.5)
    assert out.shape == (L, F)

    zeroed = build_guidance(net.config, seed=0)
    with torch.no_grad():
        for p in zeroed.parameters():
            p.zero_()
    assert np.all(guide_component(zeroed, comp, style, 0.5) == 0.0)


def test_guidance_gradients_match_finite_differences():
    cfg = GuidanceConfig(features=2, length=6, layers=1, model_dim=8, heads=2)
    net = build_guidance(cfg, seed=3)
    rng = np.random.default_rng(4)
    x = torch.from_numpy(rng.standard_normal((3, 6, cfg.input_dim)))
    y = torch.from_numpy(rng.standard_normal((3, 6, 2)))
    loss_fn = lambda: torch.mean((net(x) - y) ** 2)
    errors = directional_grad_errors(net, loss_fn, directions=10, seed=5)
    assert errors.max() <= 1e-3


def test_guide_component_dim_mismatch(nets):
    net, _ = nets
    with pytest.raises(ConfigError):
        guide_component(net, np.zeros((L, F + 1)), np.zeros((L, F + 1)), 0.5)


def _noisy_state(seed, sigma_index=1):
    sigmas = sigma_steps(SCHEDULE)
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(F, 8, 8, generator=gen, dtype=torch.float64) * sigmas[sigma_index]


def test_thd_step_recomposition_identity(backbone, nets):
    x = _noisy_state(6)
    style = DataStyle(trend=np.zeros((L, F)), seasonal=np.zeros((L, F)))
    out, parts = thd_step(x, t=3, style=style, backbone=backbone, nets=nets, cfg=KERNEL, return_parts=True)
    recomposed = parts.guided_trend + parts.guided_seasonal + parts.residual
    np.testing.assert_array_equal(parts.series_out, recomposed)
    round_trip = from_image(out.numpy(), TRANSFORM, L)
    assert np.max(np.abs(round_trip - recomposed[0])) <= 1e-9


def test_thd_step_residual_passthrough_bitwise(backbone, nets):
    x = _noisy_state(7)
    style = DataStyle(trend=np.zeros((L, F)), seasonal=np.zeros((L, F)))
    _, parts = thd_step(x, 2, style, backbone, nets, KERNEL, return_parts=True)
    # residual re-derived from the decomposed series matches bitwise, and the
    # recomposition uses it without any transformation
    redone = KERNEL.decompose(parts.series_in[0])
    np.testing.assert_array_equal(parts.residual[0], redone.residual)
    np.testing.assert_array_equal(
        parts.series_out, parts.guided_trend + parts.guided_seasonal + parts.residual
    )


def test_thd_step_identity_guidance_equals_bare_step_plus_roundtrip(backbone):
    x = _noisy_state(8)
    identity = lambda comp, style, t: comp
    style = DataStyle(trend=np.zeros((L, F)), seasonal=np.zeros((L, F)))
    out = thd_step(x, 3, style, backbone, (identity, identity), KERNEL)
    sigmas = sigma_steps(SCHEDULE)
    i = KERNEL.total_steps - 3
    with torch.no_grad():
        bare = heun_step(backbone, x[None], sigmas[i], sigmas[i + 1])
    projected = to_image(from_image(bare.numpy(), TRANSFORM, L), TRANSFORM)
    assert np.max(np.abs(out.numpy() - projected[0])) <= 1e-9


def test_thd_step_rejects_boundary_steps(backbone, nets):
    x = _noisy_state(9)
    style = DataStyle(trend=np.zeros((L, F)), seasonal=np.zeros((L, F)))
    for t in (0, SCHEDULE.steps, SCHEDULE.steps + 3, -1):
        with pytest.raises(GatingError):
            thd_step(x, t, style, backbone, nets, KERNEL)


class CountingGuide:
    def __init__(self):
        self.calls = 0

    def __call__(self, comp, style, t):
        self.calls += 1
        return comp


def test_sample_guided_invokes_guidance_at_interior_steps_only(backbone):
    windows = np.random.default_rng(10).random((4, L, F))
    library = build_style_library(windows, KERNEL)
    counter = CountingGuide()
    out = sample_guided(backbone, (counter, counter), library, KERNEL, count=1, seed=0)
    # T - 1 interior steps, each guiding trend and seasonal once
    assert counter.calls == 2 * (SCHEDULE.steps - 1)
    assert out.values.shape == (1, L, F)


def test_sample_guided_determinism_and_provenance(backbone, nets):
    windows = np.random.default_rng(11).random((5, L, F))
    library = build_style_library(windows, KERNEL)
    one = sample_guided(backbone, nets, library, KERNEL, count=3, seed=7)
    two = sample_guided(backbone, nets, library, KERNEL, count=3, seed=7)
    np.testing.assert_array_equal(one.values, two.values)
    np.testing.assert_array_equal(one.style_indices, two.style_indices)
    assert one.values.shape == (3, L, F)
    for idx, source in zip(one.style_indices, one.style_sources):
        assert library.sources[int(idx)] == source


def test_sample_guided_fixed_style_and_errors(backbone, nets):
    windows = np.random.default_rng(12).random((4, L, F))
    library = build_style_library(windows, KERNEL)
    pinned = KernelConfig(
        transform=TRANSFORM,
        schedule=SCHEDULE,
        length=L,
        stl=StlParams(period=L),
        style_selection="fixed",
        style_index=2,
    )
    out = sample_guided(backbone, nets, library, pinned, count=2, seed=1)
    assert np.all(out.style_indices == 2)
    empty = StyleLibrary(
        trend=np.zeros((0, L, F)), seasonal=np.zeros((0, L, F)), sources=[]
    )
    with pytest.raises(ValidationError):
        sample_guided(backbone, nets, empty, KERNEL, count=1, seed=0)


def test_fourier_kernel_decomposer(backbone, nets):
    cfg = KernelConfig(
        transform=TRANSFORM, schedule=SCHEDULE, length=L, decomposer="fourier", fourier_cutoff=2
    )
    x = _noisy_state(13)
    style = DataStyle(trend=np.zeros((L, F)), seasonal=np.zeros((L, F)))
    out, parts = thd_step(x, 3, style, backbone, nets, cfg, return_parts=True)
    assert np.all(parts.residual == 0.0)
    assert out.shape == x.shape


def test_train_guidance_constant_dataset_learns_the_style(backbone):
    rng = np.random.default_rng(14)
    constants = rng.uniform(0.3, 0.8, size=64)
    windows = np.tile(constants[:, None, None], (1, L, F))
    model = GuidanceConfig(features=F, length=L, layers=1, model_dim=16, heads=2)
    train = GuidanceTrainConfig(
        epochs=150, batch_size=32, learning_rate=2e-3, pairs_per_sample=4
    )
    result = train_guidance(windows, backbone, model, train, KERNEL, seed=3)
    assert len(result.trend_history) == 150
    assert result.trend_history[-1] < result.trend_history[0]

    # the trained trend net should reproduce a constant style within 10% RMS
    probe = rng.uniform(0.3, 0.8)
    comp = rng.random((L, F))
    out = guide_component(result.trend_net, comp, np.full((L, F), probe), 0.5)
    rms = float(np.sqrt(np.mean((out - probe) ** 2)))
    assert rms <= 0.1 * probe


def test_train_guidance_is_deterministic(backbone):
    windows = np.random.default_rng(15).random((8, L, F))
    model = GuidanceConfig(features=F, length=L, layers=1, model_dim=8, heads=2)
    train = GuidanceTrainConfig(epochs=2, batch_size=8)
    one = train_guidance(windows, backbone, model, train, KERNEL, seed=4)
    two = train_guidance(windows, backbone, model, train, KERNEL, seed=4)
    np.testing.assert_array_equal(one.trend_history, two.trend_history)
    np.testing.assert_array_equal(one.seasonal_history, two.seasonal_history)


def test_train_guidance_validation(backbone):
    model = GuidanceConfig(features=F, length=L)
    train = GuidanceTrainConfig(epochs=1)
    with pytest.raises(ValidationError):
        train_guidance(np.zeros((0, L, F)), backbone, model, train, KERNEL, seed=0)
    with pytest.raises(ConfigError):
        train_guidance(np.zeros((4, L, F + 1)), backbone, model, train, KERNEL, seed=0)


def test_guidance_config_validation():
    with pytest.raises(ConfigError):
        GuidanceConfig(features=3, length=L, model_dim=10, heads=4)
    cfg = GuidanceConfig(features=6, length=L)
    assert cfg.input_dim == 13
    assert cfg.output_dim == 6
