"""Distribution-similarity metrics for (real, generated) window sets.

Scalar metrics treat each feature's pooled values as a 1-D sample: histogram
KL / JS divergences, the exact empirical 1-Wasserstein distance, and the
two-sample Kolmogorov-Smirnov statistic, each averaged over features. The
learned scores follow the post-hoc convention: a small recurrent classifier
for the discriminative score and a train-on-synthetic / test-on-real one-step
predictor for the predictive score.

Zero-count histogram bins are guarded by flooring the log denominator at the
smoothing epsilon; true-zero numerator bins contribute nothing. This keeps
identical inputs at exactly zero divergence and disjoint supports at exactly
ln 2 for JS.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, InsufficientDataError, ValidationError


@dataclass(frozen=True)
class EvalConfig:
    histogram_bins: int = 50
    smoothing_epsilon: float = 1e-10
    classifier_hidden: int | None = None
    classifier_layers: int = 2
    classifier_epochs: int = 20
    classifier_batch: int = 128
    classifier_lr: float = 1e-2
    predictor_hidden: int | None = None
    predictor_layers: int = 2
    predictor_epochs: int = 20
    predictor_batch: int = 128
    predictor_lr: float = 1e-3
    train_fraction: float = 0.8
    replicates: int = 1

    def __post_init__(self):
        if self.histogram_bins < 2:
            raise ConfigError("histogram_bins must be >= 2")
        if self.smoothing_epsilon <= 0:
            raise ConfigError("smoothing_epsilon must be positive")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")


@dataclass
class MetricReport:
    """All six scores for one (real, generated) pair."""

    disc: float
    pred: float
    kl: float
    js: float
    wass: float
    ks: float
    seed: int = 0
    replicates: int = 1

    _FIELDS = ("disc", "pred", "kl", "js", "wass", "ks", "seed", "replicates")

    def to_text(self) -> str:
        return "".join(f"{name} = {getattr(self, name)!r}\n" for name in self._FIELDS)

    @staticmethod
    def csv_header() -> str:
        return ",".join(MetricReport._FIELDS)

    def csv_row(self) -> str:
        return ",".join(repr(getattr(self, name)) for name in self._FIELDS)


def _as_windows(dataset: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(dataset, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] == 0:
        raise ValidationError(f"{name} must be a non-empty (n, L, F) array, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def _pooled_pair(real_set, gen_set):
    real = _as_windows(real_set, "real_set")
    gen = _as_windows(gen_set, "gen_set")
    if real.shape[2] != gen.shape[2]:
        raise ValidationError(
            f"feature counts differ: real {real.shape[2]} vs generated {gen.shape[2]}"
        )
    features = real.shape[2]
    return (
        [real[:, :, f].ravel() for f in range(features)],
        [gen[:, :, f].ravel() for f in range(features)],
    )


def _histogram_pair(rv: np.ndarray, gv: np.ndarray, bins: int):
    lo = min(rv.min(), gv.min())
    hi = max(rv.max(), gv.max())
    if lo == hi:
        hi = lo + 1.0
    p = np.histogram(rv, bins=bins, range=(lo, hi))[0]
    q = np.histogram(gv, bins=bins, range=(lo, hi))[0]
    return p / p.sum(), q / q.sum()


def _kl_terms(p: np.ndarray, q: np.ndarray, eps: float) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / np.maximum(q[mask], eps))))


def kl_divergence(real_set, gen_set, cfg: EvalConfig = EvalConfig()) -> float:
    """Histogram KL(real || generated), averaged over features."""
    reals, gens = _pooled_pair(real_set, gen_set)
    values = []
    for rv, gv in zip(reals, gens):
        p, q = _histogram_pair(rv, gv, cfg.histogram_bins)
        values.append(_kl_terms(p, q, cfg.smoothing_epsilon))
    return float(np.mean(values))


def js_divergence(real_set, gen_set, cfg: EvalConfig = EvalConfig()) -> float:
    """Jensen-Shannon divergence (natural log), averaged over features."""
    reals, gens = _pooled_pair(real_set, gen_set)
    values = []
    for rv, gv in zip(reals, gens):
        p, q = _histogram_pair(rv, gv, cfg.histogram_bins)
        m = 0.5 * (p + q)
        values.append(
            0.5 * _kl_terms(p, m, cfg.smoothing_epsilon)
            + 0.5 * _kl_terms(q, m, cfg.smoothing_epsilon)
        )
    return float(np.mean(values))


def _w1_1d(a: np.ndarray, b: np.ndarray) -> float:
    a = np.sort(a)
    b = np.sort(b)
    grid = np.sort(np.concatenate([a, b]))
    deltas = np.diff(grid)
    cdf_a = np.searchsorted(a, grid[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, grid[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * deltas))


def _ks_1d(a: np.ndarray, b: np.ndarray) -> float:
    a = np.sort(a)
    b = np.sort(b)
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def wasserstein1(real_set, gen_set) -> float:
    """Exact empirical 1-Wasserstein distance between pooled marginals."""
    reals, gens = _pooled_pair(real_set, gen_set)
    return float(np.mean([_w1_1d(rv, gv) for rv, gv in zip(reals, gens)]))


def ks_statistic(real_set, gen_set) -> float:
    """Two-sample Kolmogorov-Smirnov statistic over pooled marginals."""
    reals, gens = _pooled_pair(real_set, gen_set)
    return float(np.mean([_ks_1d(rv, gv) for rv, gv in zip(reals, gens)]))


class _SeqClassifier(nn.Module):
    def __init__(self, features: int, hidden: int, layers: int):
        super().__init__()
        self.gru = nn.GRU(features, hidden, num_layers=layers, batch_first=True)
        self.out = nn.Linear(hidden, 1)

    def forward(self, x):
        _, state = self.gru(x)
        return self.out(state[-1]).squeeze(-1)


class _SeqPredictor(nn.Module):
    def __init__(self, features: int, hidden: int, layers: int):
        super().__init__()
        self.gru = nn.GRU(features, hidden, num_layers=layers, batch_first=True)
        self.out = nn.Linear(hidden, features)

    def forward(self, x):
        steps, _ = self.gru(x)
        return self.out(steps)


def _check_learned_inputs(real_set, gen_set):
    real = _as_windows(real_set, "real_set")
    gen = _as_windows(gen_set, "gen_set")
    if real.shape[1:] != gen.shape[1:]:
        raise ValidationError(
            f"window shapes differ: real {real.shape[1:]} vs generated {gen.shape[1:]}"
        )
    if real.shape[0] < 20 or gen.shape[0] < 20:
        raise InsufficientDataError(
            f"need at least 20 windows per side, got {real.shape[0]} and {gen.shape[0]}"
        )
    return real, gen


def _minibatches(n: int, batch: int, generator: torch.Generator):
    perm = torch.randperm(n, generator=generator)
    for start in range(0, n, batch):
        yield perm[start : start + batch]


def _disc_once(real: np.ndarray, gen: np.ndarray, cfg: EvalConfig, seed: int) -> float:
    rng = np.random.default_rng(seed)
    m = min(real.shape[0], gen.shape[0])
    r_idx = rng.permutation(real.shape[0])[:m]
    g_idx = rng.permutation(gen.shape[0])[:m]
    split = min(max(int(m * cfg.train_fraction), 1), m - 1)

    def tensors(idx_r, idx_g):
        x = np.concatenate([real[r_idx[idx_r]], gen[g_idx[idx_g]]])
        y = np.concatenate([np.ones(len(idx_r)), np.zeros(len(idx_g))])
        return torch.from_numpy(x).float(), torch.from_numpy(y).float()

    train_x, train_y = tensors(np.arange(split), np.arange(split))
    test_x, test_y = tensors(np.arange(split, m), np.arange(split, m))

    features = real.shape[2]
    hidden = cfg.classifier_hidden or features
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        net = _SeqClassifier(features, hidden, cfg.classifier_layers)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.classifier_lr)
    loss_fn = nn.BCEWithLogitsLoss()
    gen_t = torch.Generator()
    gen_t.manual_seed(seed + 1)
    for _ in range(cfg.classifier_epochs):
        for idx in _minibatches(train_x.shape[0], cfg.classifier_batch, gen_t):
            opt.zero_grad()
            loss = loss_fn(net(train_x[idx]), train_y[idx])
            loss.backward()
            opt.step()
    with torch.no_grad():
        acc = float(((net(test_x) > 0) == (test_y > 0.5)).float().mean())
    return abs(acc - 0.5)


def discriminative_score(real_set, gen_set, cfg: EvalConfig = EvalConfig(), seed: int = 0) -> float:
    """|held-out accuracy - 0.5| of a real-vs-generated classifier.

    0 means the sets are indistinguishable to the classifier; 0.5 means
    perfectly separable. Averaged over ``cfg.replicates`` reseeded runs.
    """
    real, gen = _check_learned_inputs(real_set, gen_set)
    scores = [_disc_once(real, gen, cfg, seed + r) for r in range(cfg.replicates)]
    return float(np.mean(scores))


def _pred_once(real: np.ndarray, gen: np.ndarray, cfg: EvalConfig, seed: int) -> float:
    features = real.shape[2]
    hidden = cfg.predictor_hidden or features
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        net = _SeqPredictor(features, hidden, cfg.predictor_layers)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.predictor_lr)
    loss_fn = nn.L1Loss()
    train_x = torch.from_numpy(gen[:, :-1, :]).float()
    train_y = torch.from_numpy(gen[:, 1:, :]).float()
    gen_t = torch.Generator()
    gen_t.manual_seed(seed + 1)
    for _ in range(cfg.predictor_epochs):
        for idx in _minibatches(train_x.shape[0], cfg.predictor_batch, gen_t):
            opt.zero_grad()
            loss = loss_fn(net(train_x[idx]), train_y[idx])
            loss.backward()
            opt.step()
    with torch.no_grad():
        test_x = torch.from_numpy(real[:, :-1, :]).float()
        test_y = torch.from_numpy(real[:, 1:, :]).float()
        mae = float(torch.mean(torch.abs(net(test_x) - test_y)))
    return mae


def predictive_score(real_set, gen_set, cfg: EvalConfig = EvalConfig(), seed: int = 0) -> float:
    """Train-on-synthetic test-on-real MAE of a one-step-ahead predictor."""
    real, gen = _check_learned_inputs(real_set, gen_set)
    scores = [_pred_once(real, gen, cfg, seed + r) for r in range(cfg.replicates)]
    return float(np.mean(scores))


@dataclass
class PcaProjection:
    real_points: np.ndarray
    gen_points: np.ndarray
    explained_variance: np.ndarray = field(repr=False)
    explained_ratio: np.ndarray = field(repr=False)


def pca_project(real_set, gen_set) -> PcaProjection:
    """Project flattened windows of both sets onto the top-2 joint PCA plane."""
    real = _as_windows(real_set, "real_set")
    gen = _as_windows(gen_set, "gen_set")
    if real.shape[1:] != gen.shape[1:]:
        raise ValidationError("real and generated windows must share (L, F)")
    flat = np.concatenate([real, gen]).reshape(real.shape[0] + gen.shape[0], -1)
    centered = flat - flat.mean(axis=0)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2]
    # deterministic sign: largest-magnitude loading of each component is positive
    for row in components:
        anchor = row[np.argmax(np.abs(row))]
        if anchor < 0:
            row *= -1.0
    coords = centered @ components.T
    denom = max(flat.shape[0] - 1, 1)
    variance = svals[:2] ** 2 / denom
    total = float(np.sum(svals**2) / denom)
    ratio = variance / total if total > 0 else np.zeros(2)
    return PcaProjection(
        real_points=coords[: real.shape[0]],
        gen_points=coords[real.shape[0] :],
        explained_variance=variance,
        explained_ratio=ratio,
    )


def metric_report(real_set, gen_set, cfg: EvalConfig = EvalConfig(), seed: int = 0) -> MetricReport:
    """All six metrics for one pair of window sets."""
    return MetricReport(
        disc=discriminative_score(real_set, gen_set, cfg, seed),
        pred=predictive_score(real_set, gen_set, cfg, seed),
        kl=kl_divergence(real_set, gen_set, cfg),
        js=js_divergence(real_set, gen_set, cfg),
        wass=wasserstein1(real_set, gen_set),
        ks=ks_statistic(real_set, gen_set),
        seed=seed,
        replicates=cfg.replicates,
    )
