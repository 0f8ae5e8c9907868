"""Image-domain diffusion backbone.

A small U-net denoiser trained with the sigma-preconditioned denoising
objective and sampled with the deterministic second-order (Heun)
discretization of the probability-flow dynamics. Noise levels follow the
power-law schedule

    sigma_i = (smax^(1/rho) + i/(N-1) * (smin^(1/rho) - smax^(1/rho)))^rho

for i = 0..N-1, terminated by sigma_N = 0. All math runs in float64 unless a
caller casts the network down for speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, ValidationError
from .transform import TransformParams, to_image

DenoiserFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class NoiseSchedule:
    steps: int = 18
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0

    def __post_init__(self):
        if self.steps < 2:
            raise ConfigError(f"schedule needs at least 2 steps, got {self.steps}")
        if not 0 < self.sigma_min < self.sigma_max:
            raise ConfigError("need 0 < sigma_min < sigma_max")
        if self.rho <= 0:
            raise ConfigError("rho must be positive")


def sigma_steps(schedule: NoiseSchedule) -> np.ndarray:
    """Decreasing noise levels, length ``steps + 1`` with an exact 0 terminal."""
    n = schedule.steps
    inv_rho = 1.0 / schedule.rho
    ramp = np.arange(n) / (n - 1)
    sigmas = (
        schedule.sigma_max**inv_rho
        + ramp * (schedule.sigma_min**inv_rho - schedule.sigma_max**inv_rho)
    ) ** schedule.rho
    sigmas[0] = schedule.sigma_max
    sigmas[-1] = schedule.sigma_min
    return np.append(sigmas, 0.0)


@dataclass(frozen=True)
class DenoiserConfig:
    """Shape of the U-net denoiser.

    The spatial extent must survive ``len(channel_multipliers) - 1`` halvings.
    """

    in_channels: int
    image_height: int = 8
    image_width: int = 8
    base_channels: int = 32
    channel_multipliers: tuple[int, ...] = (1, 2, 2, 2)
    sigma_data: float = 0.5

    def __post_init__(self):
        if self.in_channels < 1:
            raise ConfigError("in_channels must be >= 1")
        if not self.channel_multipliers or any(m < 1 for m in self.channel_multipliers):
            raise ConfigError("channel_multipliers must be non-empty positive integers")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be >= 1")
        if self.sigma_data <= 0:
            raise ConfigError("sigma_data must be positive")
        factor = 2 ** (len(self.channel_multipliers) - 1)
        if self.image_height % factor or self.image_width % factor:
            raise ConfigError(
                f"image size {self.image_height}x{self.image_width} is not divisible "
                f"by the downsampling factor {factor}"
            )
        object.__setattr__(self, "channel_multipliers", tuple(self.channel_multipliers))


def _groups(channels: int) -> int:
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


class _ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, emb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, cout)
        self.norm2 = nn.GroupNorm(_groups(cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = h + self.emb_proj(emb)[:, :, None, None]
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return h + self.skip(x)


class Denoiser(nn.Module):
    """Raw U-net; call through :func:`denoise` for the preconditioned estimate.

    The flat weight vector referenced by checkpoints is the concatenation of
    ``named_parameters()`` in registration order, each flattened C-order.
    """

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        chans = [config.base_channels * m for m in config.channel_multipliers]
        levels = len(chans)
        emb_dim = 2 * config.base_channels

        self.time_embed = nn.Sequential(
            nn.Linear(1, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim)
        )
        self.conv_in = nn.Conv2d(config.in_channels, chans[0], 3, padding=1)
        self.down_blocks = nn.ModuleList(
            _ResBlock(chans[i], chans[i], emb_dim) for i in range(levels)
        )
        self.downsamples = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1)
            for i in range(levels - 1)
        )
        self.middle = _ResBlock(chans[-1], chans[-1], emb_dim)
        self.up_blocks = nn.ModuleList(
            _ResBlock(2 * chans[i], chans[i], emb_dim) for i in range(levels)
        )
        self.upsamples = nn.ModuleList(
            nn.Conv2d(chans[i + 1], chans[i], 3, padding=1) for i in range(levels - 1)
        )
        self.norm_out = nn.GroupNorm(_groups(chans[0]), chans[0])
        self.conv_out = nn.Conv2d(chans[0], config.in_channels, 3, padding=1)

    @property
    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, x: torch.Tensor, c_noise: torch.Tensor) -> torch.Tensor:
        emb = self.time_embed(c_noise.reshape(-1, 1).to(x.dtype))
        levels = len(self.down_blocks)
        h = self.conv_in(x)
        skips = []
        for i in range(levels):
            h = self.down_blocks[i](h, emb)
            skips.append(h)
            if i < levels - 1:
                h = self.downsamples[i](h)
        h = self.middle(h, emb)
        for i in reversed(range(levels)):
            h = self.up_blocks[i](torch.cat([h, skips[i]], dim=1), emb)
            if i > 0:
                h = torch.nn.functional.interpolate(h, scale_factor=2, mode="nearest")
                h = self.upsamples[i - 1](h)
        return self.conv_out(torch.nn.functional.silu(self.norm_out(h)))


def build_denoiser(config: DenoiserConfig, seed: int) -> Denoiser:
    """Deterministically initialized float64 denoiser."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        net = Denoiser(config)
    return net.double()


def _as_generator(seed: "int | torch.Generator") -> torch.Generator:
    if isinstance(seed, torch.Generator):
        return seed
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    return gen


def _sigma_tensor(sigma, ref: torch.Tensor) -> torch.Tensor:
    sig = torch.as_tensor(sigma, dtype=ref.dtype)
    if sig.ndim == 0:
        sig = sig.expand(ref.shape[0]) if ref.ndim == 4 else sig.reshape(1)
    if not torch.all(torch.isfinite(sig)) or not torch.all(sig > 0):
        raise ValidationError("sigma must be finite and positive")
    return sig


def precondition_coefficients(sigma, sigma_data: float):
    """The four sigma-dependent scalings applied around the raw network.

    c_skip = sd^2 / (s^2 + sd^2), c_out = s*sd / sqrt(s^2 + sd^2),
    c_in = 1 / sqrt(s^2 + sd^2), c_noise = ln(s) / 4.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    total = sigma**2 + sigma_data**2
    c_skip = sigma_data**2 / total
    c_out = sigma * sigma_data / np.sqrt(total)
    c_in = 1.0 / np.sqrt(total)
    c_noise = 0.25 * np.log(sigma)
    return c_skip, c_out, c_in, c_noise


def denoise(net, x: torch.Tensor, sigma) -> torch.Tensor:
    """Preconditioned clean-signal estimate D(x; sigma).

    ``net`` is a :class:`Denoiser`, or any ``(x, sigma) -> estimate`` callable,
    which is evaluated as-is (useful for analytic denoisers in tests).
    The score of the noised density is ``(denoise(net, x, s) - x) / s**2``.
    """
    if not torch.all(torch.isfinite(x)):
        raise ValidationError("x contains non-finite values")
    if not isinstance(net, Denoiser):
        _sigma_tensor(sigma, x)
        return net(x, sigma)
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    sig = _sigma_tensor(sigma, x).reshape(-1, 1, 1, 1)
    sd = net.config.sigma_data
    total = sig**2 + sd**2
    c_skip = sd**2 / total
    c_out = sig * sd / torch.sqrt(total)
    c_in = 1.0 / torch.sqrt(total)
    c_noise = 0.25 * torch.log(sig.reshape(-1))
    out = c_skip * x + c_out * net(c_in * x, c_noise)
    return out[0] if squeeze else out


def edm_loss_terms(net, batch: torch.Tensor, sigma: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """Per-sample weighted denoising errors for fixed noise draws.

    Returns ``lambda(sigma) * ||D(x + sigma*eps; sigma) - x||^2`` per sample;
    the loss is their mean. Splitting the draw from the reduction keeps the
    loss a deterministic function of the weights, which the finite-difference
    gradient checks rely on.
    """
    sd = net.config.sigma_data if isinstance(net, Denoiser) else 0.5
    sig = sigma.reshape(-1, 1, 1, 1)
    noised = batch + sig * eps
    est = denoise(net, noised, sigma)
    weight = (sig**2 + sd**2) / (sig * sd) ** 2
    return (weight * (est - batch) ** 2).sum(dim=(1, 2, 3))


def draw_noise_levels(
    count: int, generator: torch.Generator, dtype=torch.float64
) -> torch.Tensor:
    """Log-normal training noise levels: ln(sigma) ~ N(-1.2, 1.2^2)."""
    return torch.exp(torch.randn(count, generator=generator, dtype=dtype) * 1.2 - 1.2)


def edm_loss(net, batch: torch.Tensor, rng: "int | torch.Generator") -> torch.Tensor:
    """Mean weighted denoising loss over a batch ``(B, F, H, W)``."""
    if batch.ndim != 4 or batch.shape[0] == 0:
        raise ValidationError(f"batch must be a non-empty (B, F, H, W) tensor, got {tuple(batch.shape)}")
    gen = _as_generator(rng)
    sigma = draw_noise_levels(batch.shape[0], gen, dtype=batch.dtype)
    eps = torch.randn(batch.shape, generator=gen, dtype=batch.dtype)
    return edm_loss_terms(net, batch, sigma, eps).mean()


def heun_step(net, x: torch.Tensor, sigma_cur: float, sigma_next: float) -> torch.Tensor:
    """One deterministic reverse step from ``sigma_cur`` down to ``sigma_next``.

    Euler step along d = (x - D(x)) / sigma, with a trapezoidal correction
    whenever the target level is nonzero.
    """
    if not sigma_cur > sigma_next >= 0:
        raise ValidationError(
            f"need sigma_cur > sigma_next >= 0, got {sigma_cur} -> {sigma_next}"
        )
    d = (x - denoise(net, x, sigma_cur)) / sigma_cur
    x_next = x + (sigma_next - sigma_cur) * d
    if sigma_next > 0:
        d_next = (x_next - denoise(net, x_next, sigma_next)) / sigma_next
        x_next = x + (sigma_next - sigma_cur) * 0.5 * (d + d_next)
    return x_next


def sample_unguided(
    net,
    schedule: NoiseSchedule,
    count: int,
    rng: "int | torch.Generator",
    shape: tuple[int, int, int] | None = None,
) -> torch.Tensor:
    """Draw ``count`` images by integrating the full schedule from pure noise."""
    if count < 1:
        raise ValidationError("count must be >= 1")
    if shape is None:
        cfg = net.config
        shape = (cfg.in_channels, cfg.image_height, cfg.image_width)
    dtype = next(net.parameters()).dtype if isinstance(net, Denoiser) else torch.float64
    gen = _as_generator(rng)
    sigmas = sigma_steps(schedule)
    x = torch.randn((count, *shape), generator=gen, dtype=dtype) * sigmas[0]
    with torch.no_grad():
        for i in range(schedule.steps):
            x = heun_step(net, x, sigmas[i], sigmas[i + 1])
    return x


@dataclass(frozen=True)
class BackboneTrainConfig:
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 1e-4
    weight_decay: float = 0.0
    precision: str = "float64"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.precision not in ("float64", "float32"):
            raise ConfigError(f"precision must be float64 or float32, got {self.precision!r}")


@dataclass
class TrainResult:
    net: nn.Module
    loss_history: np.ndarray = field(repr=False)


def train_backbone(
    windows: np.ndarray,
    transform: TransformParams,
    config: DenoiserConfig,
    train: BackboneTrainConfig,
    seed: int,
) -> TrainResult:
    """Fit the denoiser on embedded windows ``(n, L, F)`` with AdamW.

    Fully deterministic given ``seed``: initialization, shuffling, and noise
    draws all derive from it. ``loss_history`` holds one mean per-sample loss
    per epoch.
    """
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[0] == 0:
        raise ValidationError(f"windows must be a non-empty (n, L, F) array, got {windows.shape}")
    if config.in_channels != windows.shape[2]:
        raise ConfigError(
            f"config.in_channels={config.in_channels} does not match F={windows.shape[2]}"
        )
    dtype = torch.float64 if train.precision == "float64" else torch.float32
    images = torch.from_numpy(to_image(windows, transform)).to(dtype)
    net = build_denoiser(config, seed).to(dtype)
    opt = torch.optim.AdamW(
        net.parameters(), lr=train.learning_rate, weight_decay=train.weight_decay
    )
    gen = _as_generator(seed + 1)
    n = images.shape[0]
    history = []
    for _ in range(train.epochs):
        perm = torch.randperm(n, generator=gen)
        total = 0.0
        for start in range(0, n, train.batch_size):
            idx = perm[start : start + train.batch_size]
            batch = images[idx]
            sigma = draw_noise_levels(len(idx), gen, dtype=dtype)
            eps = torch.randn(batch.shape, generator=gen, dtype=dtype)
            terms = edm_loss_terms(net, batch, sigma, eps)
            loss = terms.mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(terms.detach().double().sum())
        history.append(total / n)
    return TrainResult(net=net, loss_history=np.asarray(history))


def parameter_layout(net: nn.Module) -> list[tuple[str, tuple[int, ...]]]:
    """Documented flat-weight layout: (name, shape) in registration order."""
    return [(name, tuple(p.shape)) for name, p in net.named_parameters()]


def flatten_parameters(net: nn.Module) -> np.ndarray:
    parts = [p.detach().cpu().double().numpy().ravel() for _, p in net.named_parameters()]
    return np.concatenate(parts) if parts else np.zeros(0)


def load_flat_parameters(net: nn.Module, weights: np.ndarray) -> None:
    weights = np.asarray(weights, dtype=np.float64)
    if not np.all(np.isfinite(weights)):
        raise ValidationError("weights contain non-finite values")
    expected = sum(p.numel() for p in net.parameters())
    if weights.size != expected:
        raise ValidationError(f"expected {expected} weights, got {weights.size}")
    offset = 0
    with torch.no_grad():
        for _, p in net.named_parameters():
            chunk = weights[offset : offset + p.numel()].reshape(tuple(p.shape))
            p.copy_(torch.from_numpy(chunk).to(p.dtype))
            offset += p.numel()
