"""Style-guided denoising kernels.

At every interior step of the sampling loop the current image is pulled back
to a series, split into trend / seasonal / residual, and the first two parts
are re-predicted by small transformer encoders conditioned on a real sample's
style and the normalized step index. The residual is kept untouched, the three
parts are summed, and the result is re-embedded for the next backbone step.
Boundary steps (t == 0 or t == T) bypass the kernel entirely.

Only these kernels carry learnable parameters besides the backbone; the
backbone is never retrained when styles change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .backbone import (
    Denoiser,
    NoiseSchedule,
    _as_generator,
    denoise,
    heun_step,
    sigma_steps,
)
from .decompose import DataStyle, StlParams, StyleComponents, fourier_split, stl_decompose
from .errors import ConfigError, GatingError, ValidationError
from .transform import TransformParams, from_image, to_image


@dataclass(frozen=True)
class GuidanceConfig:
    """Shape of one guidance transformer.

    The input rows are ``[component | style | t]``, so the input width is
    ``2 * features + 1`` and the output width is ``features``.
    """

    features: int
    length: int
    layers: int = 2
    model_dim: int = 64
    heads: int = 4
    ffn_dim: int | None = None

    def __post_init__(self):
        if self.features < 1 or self.length < 1 or self.layers < 1:
            raise ConfigError("features, length, and layers must be >= 1")
        if self.model_dim < self.heads or self.model_dim % self.heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} must be a multiple of heads {self.heads}"
            )
        if self.ffn_dim is None:
            object.__setattr__(self, "ffn_dim", 4 * self.model_dim)

    @property
    def input_dim(self) -> int:
        return 2 * self.features + 1

    @property
    def output_dim(self) -> int:
        return self.features


def guidance_input(component: np.ndarray, style_component: np.ndarray, t_norm: float) -> np.ndarray:
    """Rows ``[component | style | t_norm]`` -> shape ``(L, 2F + 1)``."""
    component = np.asarray(component, dtype=np.float64)
    style_component = np.asarray(style_component, dtype=np.float64)
    if component.shape != style_component.shape or component.ndim != 2:
        raise ValidationError(
            f"component {component.shape} and style {style_component.shape} "
            f"must both be (L, F)"
        )
    if not 0.0 <= t_norm <= 1.0:
        raise ValidationError(f"t_norm must lie in [0, 1], got {t_norm}")
    if not (np.all(np.isfinite(component)) and np.all(np.isfinite(style_component))):
        raise ValidationError("guidance inputs contain non-finite values")
    t_col = np.full((component.shape[0], 1), float(t_norm))
    return np.concatenate([component, style_component, t_col], axis=1)


class _EncoderBlock(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.attn_out = nn.Linear(dim, dim)
        self.norm1 = nn.LayerNorm(dim)
        self.ff1 = nn.Linear(dim, ffn_dim)
        self.ff2 = nn.Linear(ffn_dim, dim)
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        b, length, dim = h.shape
        dh = dim // self.heads
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        q = q.view(b, length, self.heads, dh).transpose(1, 2)
        k = k.view(b, length, self.heads, dh).transpose(1, 2)
        v = v.view(b, length, self.heads, dh).transpose(1, 2)
        att = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(dh), dim=-1)
        mixed = (att @ v).transpose(1, 2).reshape(b, length, dim)
        h = self.norm1(h + self.attn_out(mixed))
        return self.norm2(h + self.ff2(torch.nn.functional.gelu(self.ff1(h))))


class GuidanceNet(nn.Module):
    """Transformer encoder mapping (component, style, t) rows to a component.

    Learned per-position embeddings supply order information; each layer is
    post-norm self-attention followed by a feed-forward sublayer. The flat
    weight vector is ``named_parameters()`` in registration order.
    """

    def __init__(self, config: GuidanceConfig):
        super().__init__()
        self.config = config
        self.in_proj = nn.Linear(config.input_dim, config.model_dim)
        self.positions = nn.Parameter(torch.zeros(config.length, config.model_dim))
        self.blocks = nn.ModuleList(
            _EncoderBlock(config.model_dim, config.heads, config.ffn_dim)
            for _ in range(config.layers)
        )
        self.head = nn.Linear(config.model_dim, config.output_dim)
        nn.init.normal_(self.positions, std=0.02)

    @property
    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.config.input_dim or x.shape[-2] != self.config.length:
            raise ConfigError(
                f"expected input (..., {self.config.length}, {self.config.input_dim}), "
                f"got {tuple(x.shape)}"
            )
        h = self.in_proj(x) + self.positions
        for block in self.blocks:
            h = block(h)
        return self.head(h)


def build_guidance(config: GuidanceConfig, seed: int) -> GuidanceNet:
    """Deterministically initialized float64 guidance net."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        net = GuidanceNet(config)
    return net.double()


def guide_component(net, component: np.ndarray, style: np.ndarray, t_norm: float) -> np.ndarray:
    """Evaluate one guidance net on a single (L, F) component.

    ``net`` may also be any ``(component, style, t_norm) -> (L, F)`` callable,
    which lets tests substitute analytic kernels.
    """
    if not isinstance(net, GuidanceNet):
        return np.asarray(net(component, style, t_norm), dtype=np.float64)
    x = guidance_input(component, style, t_norm)
    dtype = next(net.parameters()).dtype
    with torch.no_grad():
        out = net(torch.from_numpy(x).to(dtype)[None])
    return out[0].double().numpy()


@dataclass
class StyleLibrary:
    """Styles extracted from real samples, with their source identifiers."""

    trend: np.ndarray
    seasonal: np.ndarray
    sources: list[str]

    def __post_init__(self):
        self.trend = np.asarray(self.trend, dtype=np.float64)
        self.seasonal = np.asarray(self.seasonal, dtype=np.float64)
        if self.trend.shape != self.seasonal.shape or self.trend.ndim != 3:
            raise ValidationError("trend/seasonal stacks must both be (n, L, F)")
        if len(self.sources) != self.trend.shape[0]:
            raise ValidationError("one source id per entry required")

    def __len__(self) -> int:
        return self.trend.shape[0]

    def entry(self, index: int) -> DataStyle:
        return DataStyle(trend=self.trend[index], seasonal=self.seasonal[index])


@dataclass(frozen=True)
class KernelConfig:
    """Everything a style-guided kernel needs besides the networks."""

    transform: TransformParams
    schedule: NoiseSchedule
    length: int
    decomposer: str = "stl"
    stl: StlParams = field(default_factory=StlParams)
    fourier_cutoff: int = 2
    style_selection: str = "random"
    style_index: int = 0

    def __post_init__(self):
        if self.decomposer not in ("stl", "fourier"):
            raise ConfigError(f"decomposer must be 'stl' or 'fourier', got {self.decomposer!r}")
        if self.style_selection not in ("random", "fixed"):
            raise ConfigError(
                f"style_selection must be 'random' or 'fixed', got {self.style_selection!r}"
            )
        if self.length < 1:
            raise ConfigError("length must be >= 1")

    @property
    def total_steps(self) -> int:
        return self.schedule.steps

    def decompose(self, series: np.ndarray) -> StyleComponents:
        if self.decomposer == "stl":
            return stl_decompose(series, self.stl)
        return fourier_split(series, self.fourier_cutoff)

    def extract_style(self, window: np.ndarray) -> DataStyle:
        parts = self.decompose(window)
        return DataStyle(trend=parts.trend, seasonal=parts.seasonal)


def build_style_library(
    windows: np.ndarray, cfg: KernelConfig, sources: list[str] | None = None
) -> StyleLibrary:
    """Extract the style of every window ``(n, L, F)`` under the kernel's decomposer."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[0] == 0:
        raise ValidationError(f"windows must be a non-empty (n, L, F) array, got {windows.shape}")
    trend = np.empty_like(windows)
    seasonal = np.empty_like(windows)
    for i in range(windows.shape[0]):
        style = cfg.extract_style(windows[i])
        trend[i] = style.trend
        seasonal[i] = style.seasonal
    if sources is None:
        sources = [f"window-{i}" for i in range(windows.shape[0])]
    return StyleLibrary(trend=trend, seasonal=seasonal, sources=list(sources))


@dataclass
class ThdParts:
    """Intermediates of one guided step, for inspection and tests."""

    series_in: np.ndarray
    trend: np.ndarray
    seasonal: np.ndarray
    residual: np.ndarray
    guided_trend: np.ndarray
    guided_seasonal: np.ndarray
    series_out: np.ndarray


def _style_batch(style: DataStyle, batch: int):
    trend = np.asarray(style.trend, dtype=np.float64)
    seasonal = np.asarray(style.seasonal, dtype=np.float64)
    if trend.ndim == 2:
        trend = np.broadcast_to(trend, (batch, *trend.shape))
        seasonal = np.broadcast_to(seasonal, (batch, *seasonal.shape))
    if trend.shape[0] != batch:
        raise ValidationError(f"style batch {trend.shape[0]} does not match x batch {batch}")
    return trend, seasonal


def _guide_batch(net, components: np.ndarray, styles: np.ndarray, t_norm: float) -> np.ndarray:
    if not isinstance(net, GuidanceNet):
        return np.stack(
            [
                np.asarray(net(components[i], styles[i], t_norm), dtype=np.float64)
                for i in range(components.shape[0])
            ]
        )
    t_col = np.full((*components.shape[:2], 1), float(t_norm))
    x = np.concatenate([components, styles, t_col], axis=2)
    dtype = next(net.parameters()).dtype
    with torch.no_grad():
        out = net(torch.from_numpy(x).to(dtype))
    return out.double().numpy()


def thd_step(
    x_t: torch.Tensor,
    t: int,
    style: DataStyle,
    backbone,
    nets: tuple,
    cfg: KernelConfig,
    return_parts: bool = False,
):
    """One interior guided step: backbone update, then hierarchical re-denoising.

    ``t`` counts down from ``T`` to 1 across the sampling loop; only
    ``0 < t < T`` is accepted here, boundary steps must call the bare backbone
    step instead. ``x_t`` may be one image ``(F, H, W)`` or a batch; a batch
    needs per-sample styles stacked as ``(B, L, F)`` arrays.
    """
    total = cfg.total_steps
    if not 0 < t < total:
        raise GatingError(
            f"guided steps run strictly inside (0, {total}); step t={t} must use the "
            f"unguided backbone"
        )
    single = x_t.ndim == 3
    x = x_t[None] if single else x_t
    sigmas = sigma_steps(cfg.schedule)
    step_index = total - t
    with torch.no_grad():
        x = heun_step(backbone, x, sigmas[step_index], sigmas[step_index + 1])

    series = from_image(x.double().numpy(), cfg.transform, cfg.length)
    batch = series.shape[0]
    trend = np.empty_like(series)
    seasonal = np.empty_like(series)
    residual = np.empty_like(series)
    for i in range(batch):
        parts = cfg.decompose(series[i])
        trend[i] = parts.trend
        seasonal[i] = parts.seasonal
        residual[i] = parts.residual

    style_trend, style_seasonal = _style_batch(style, batch)
    t_norm = t / total
    net_trend, net_seasonal = nets
    guided_trend = _guide_batch(net_trend, trend, style_trend, t_norm)
    guided_seasonal = _guide_batch(net_seasonal, seasonal, style_seasonal, t_norm)
    recomposed = guided_trend + guided_seasonal + residual

    out = torch.from_numpy(to_image(recomposed, cfg.transform)).to(x.dtype)
    if single:
        out = out[0]
    if not return_parts:
        return out
    parts = ThdParts(
        series_in=series,
        trend=trend,
        seasonal=seasonal,
        residual=residual,
        guided_trend=guided_trend,
        guided_seasonal=guided_seasonal,
        series_out=recomposed,
    )
    return out, parts


@dataclass
class GeneratedSamples:
    """Generated windows plus the identity of the style that guided each one."""

    values: np.ndarray
    style_indices: np.ndarray
    style_sources: list[str]


def sample_guided(
    backbone,
    nets: tuple,
    library: StyleLibrary,
    cfg: KernelConfig,
    count: int,
    seed: int,
) -> GeneratedSamples:
    """Run the full guided sampling loop for ``count`` windows.

    Each sample draws its own style (uniformly, unless the config pins an
    index), starts from Gaussian noise at ``sigma_max``, takes the first step
    with the bare backbone, guided steps for the rest of the schedule, and is
    converted back to a series at the end. Deterministic given ``seed``.
    """
    if count < 1:
        raise ValidationError("count must be >= 1")
    if len(library) == 0:
        raise ValidationError("style library is empty")
    total = cfg.total_steps
    sigmas = sigma_steps(cfg.schedule)

    if cfg.style_selection == "fixed":
        if not 0 <= cfg.style_index < len(library):
            raise ValidationError(
                f"style_index {cfg.style_index} outside library of {len(library)}"
            )
        indices = np.full(count, cfg.style_index, dtype=np.int64)
    else:
        indices = np.random.default_rng(seed).integers(0, len(library), size=count)
    style = DataStyle(trend=library.trend[indices], seasonal=library.seasonal[indices])

    dtype = next(backbone.parameters()).dtype if isinstance(backbone, Denoiser) else torch.float64
    gen = _as_generator(seed)
    shape = (
        library.trend.shape[2],
        cfg.transform.height,
        cfg.transform.width,
    )
    x = torch.randn((count, *shape), generator=gen, dtype=dtype) * sigmas[0]
    with torch.no_grad():
        for i in range(total):
            t = total - i
            if 0 < t < total:
                x = thd_step(x, t, style, backbone, nets, cfg)
            else:
                x = heun_step(backbone, x, sigmas[i], sigmas[i + 1])
    values = from_image(x.double().numpy(), cfg.transform, cfg.length)
    return GeneratedSamples(
        values=values,
        style_indices=indices,
        style_sources=[library.sources[int(i)] for i in indices],
    )


@dataclass(frozen=True)
class GuidanceTrainConfig:
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 1e-3
    pairs_per_sample: int = 1
    precision: str = "float64"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.pairs_per_sample < 1:
            raise ConfigError("epochs, batch_size, and pairs_per_sample must be >= 1")
        if self.precision not in ("float64", "float32"):
            raise ConfigError(f"precision must be float64 or float32, got {self.precision!r}")


@dataclass
class GuidanceTrainResult:
    trend_net: GuidanceNet
    seasonal_net: GuidanceNet
    trend_history: np.ndarray
    seasonal_history: np.ndarray


def _build_training_pairs(
    windows: np.ndarray,
    backbone,
    kernel: KernelConfig,
    library: StyleLibrary,
    pairs_per_sample: int,
    batch_size: int,
    seed: int,
):
    """Regression pairs mirroring the inference-time data flow.

    For each window and a random interior step t: corrupt its image at the
    noise level entering that step, run one backbone update exactly as the
    sampling loop would, pull the result back to a series, and decompose.
    Inputs are those components plus the window's own style and t / T; targets
    are the style components themselves. Feeding the nets the same
    partially-denoised iterates they will see at inference (rather than fully
    denoised estimates) is what keeps the guided trajectory stable.
    """
    n = windows.shape[0]
    total = kernel.total_steps
    sigmas = sigma_steps(kernel.schedule)
    rng = np.random.default_rng(seed)
    gen = _as_generator(seed + 1)

    rep = np.repeat(np.arange(n), pairs_per_sample)
    t_draw = rng.integers(1, total, size=rep.size)
    step_index = total - t_draw
    images = torch.from_numpy(to_image(windows[rep], kernel.transform))
    eps = torch.randn(images.shape, generator=gen, dtype=torch.float64)
    sigma_in = torch.from_numpy(sigmas[step_index])
    noised = images + sigma_in.reshape(-1, 1, 1, 1) * eps

    dtype = next(backbone.parameters()).dtype if isinstance(backbone, Denoiser) else torch.float64
    stepped = []
    with torch.no_grad():
        for start in range(0, rep.size, batch_size):
            stop = start + batch_size
            for i in np.unique(step_index[start:stop]):
                sel = np.nonzero(step_index[start:stop] == i)[0] + start
                out = heun_step(
                    backbone, noised[sel].to(dtype), sigmas[i], sigmas[i + 1]
                )
                stepped.append((sel, out.double()))
    series_images = torch.empty_like(noised)
    for sel, out in stepped:
        series_images[sel] = out
    series = from_image(series_images.numpy(), kernel.transform, kernel.length)

    comp_trend = np.empty_like(series)
    comp_seasonal = np.empty_like(series)
    for i in range(series.shape[0]):
        parts = kernel.decompose(series[i])
        comp_trend[i] = parts.trend
        comp_seasonal[i] = parts.seasonal

    t_norm = (t_draw / total)[:, None, None]
    t_col = np.broadcast_to(t_norm, (rep.size, kernel.length, 1))
    style_trend = library.trend[rep]
    style_seasonal = library.seasonal[rep]
    inputs_trend = np.concatenate([comp_trend, style_trend, t_col], axis=2)
    inputs_seasonal = np.concatenate([comp_seasonal, style_seasonal, t_col], axis=2)
    return (inputs_trend, style_trend), (inputs_seasonal, style_seasonal)


def _fit_regressor(
    config: GuidanceConfig,
    inputs: np.ndarray,
    targets: np.ndarray,
    train: GuidanceTrainConfig,
    seed: int,
):
    dtype = torch.float64 if train.precision == "float64" else torch.float32
    net = build_guidance(config, seed).to(dtype)
    x = torch.from_numpy(inputs).to(dtype)
    y = torch.from_numpy(targets).to(dtype)
    opt = torch.optim.Adam(net.parameters(), lr=train.learning_rate)
    gen = _as_generator(seed + 1)
    n = x.shape[0]
    history = []
    for _ in range(train.epochs):
        perm = torch.randperm(n, generator=gen)
        total = 0.0
        for start in range(0, n, train.batch_size):
            idx = perm[start : start + train.batch_size]
            pred = net(x[idx])
            loss = torch.mean((pred - y[idx]) ** 2)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach().double()) * len(idx)
        history.append(total / n)
    return net, np.asarray(history)


def train_guidance(
    windows: np.ndarray,
    backbone,
    model: GuidanceConfig,
    train: GuidanceTrainConfig,
    kernel: KernelConfig,
    seed: int,
    library: StyleLibrary | None = None,
) -> GuidanceTrainResult:
    """Fit the trend and seasonal guidance nets on a real dataset.

    Both nets regress onto the real samples' own style components with MSE and
    Adam. Deterministic given ``seed``; per-epoch mean losses are returned.
    """
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[0] == 0:
        raise ValidationError(f"windows must be a non-empty (n, L, F) array, got {windows.shape}")
    if model.features != windows.shape[2] or model.length != windows.shape[1]:
        raise ConfigError(
            f"guidance config ({model.length}, {model.features}) does not match "
            f"windows {windows.shape[1:]}"
        )
    if library is None:
        library = build_style_library(windows, kernel)
    (in_tr, tgt_tr), (in_se, tgt_se) = _build_training_pairs(
        windows, backbone, kernel, library, train.pairs_per_sample, train.batch_size, seed
    )
    trend_net, trend_hist = _fit_regressor(model, in_tr, tgt_tr, train, seed + 10)
    seasonal_net, seasonal_hist = _fit_regressor(model, in_se, tgt_se, train, seed + 20)
    return GuidanceTrainResult(
        trend_net=trend_net,
        seasonal_net=seasonal_net,
        trend_history=trend_hist,
        seasonal_history=seasonal_hist,
    )
