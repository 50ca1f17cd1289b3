"""Diffusion action head: cosine noise schedule, deterministic DDIM sampling,
and a conditioned two-layer tanh perceptron denoiser trained on RMSE with
plain minibatch gradient descent.

Trajectories are arrays shaped ``(horizon, dims)``; batched code works on
flattened ``(batch, horizon * dims)`` arrays.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ShapeError, UsageError
from .rng import RandomStream
from .tensorfile import load_tensors, save_tensors

MAX_BETA = 0.999
TIME_EMBED_DIM = 8
RMSE_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    T: int
    s: float
    alpha_bar: np.ndarray  # length T + 1, alpha_bar[0] == 1
    betas: np.ndarray  # length T, betas[t - 1] belongs to step t


def build_schedule(T: int = 16, s: float = 0.008) -> NoiseSchedule:
    """Cosine schedule ``alpha_bar(t) = f(t) / f(0)``, ``f(t) = cos^2(((t/T + s)/(1 + s)) pi/2)``.

    Betas are clipped at 0.999; wherever a clip happens the cumulative
    product is carried forward from the clipped beta so that
    ``alpha_bar[t] = alpha_bar[t-1] * (1 - beta_t)`` always holds.
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise UsageError(f"number of diffusion steps must be a positive integer, got {T!r}")
    if not (s > 0 and math.isfinite(s)):
        raise UsageError(f"schedule offset s must be positive, got {s}")

    def f(t: float) -> float:
        return math.cos(((t / T + s) / (1.0 + s)) * math.pi / 2.0) ** 2

    f0 = f(0)
    alpha_bar = np.empty(T + 1)
    betas = np.empty(T)
    alpha_bar[0] = 1.0
    for t in range(1, T + 1):
        target = f(t) / f0
        beta = 1.0 - target / alpha_bar[t - 1]
        if beta > MAX_BETA:
            beta = MAX_BETA
            target = alpha_bar[t - 1] * (1.0 - beta)
        betas[t - 1] = beta
        alpha_bar[t] = target
    alpha_bar.setflags(write=False)
    betas.setflags(write=False)
    return NoiseSchedule(int(T), float(s), alpha_bar, betas)


def _check_step(schedule: NoiseSchedule, t: int, name: str = "t", low: int = 0) -> None:
    if not (isinstance(t, (int, np.integer)) and low <= t <= schedule.T):
        raise UsageError(f"{name} must be an integer in [{low}, {schedule.T}], got {t!r}")


def forward_diffuse(x0: np.ndarray, t: int, schedule: NoiseSchedule, noise: np.ndarray) -> np.ndarray:
    """Sample of the forward marginal: sqrt(ab_t) x0 + sqrt(1 - ab_t) noise."""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x0.shape != noise.shape:
        raise ShapeError(f"noise shape {noise.shape} does not match trajectory shape {x0.shape}")
    _check_step(schedule, t)
    ab = schedule.alpha_bar[t]
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * noise


def ddim_step(x_t: np.ndarray, eps_pred: np.ndarray, t: int, t_prev: int, schedule: NoiseSchedule,
              clip_x0: float | None = None) -> np.ndarray:
    """Deterministic (eta = 0) DDIM update from step ``t`` to ``t_prev``.

    ``clip_x0`` optionally clamps the clean-sample estimate to
    ``[-clip_x0, clip_x0]`` before re-noising (the usual ``clip_sample``
    option for actions normalized to [-1, 1]); the noise estimate is kept.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    if x_t.shape != eps_pred.shape:
        raise ShapeError(f"noise prediction shape {eps_pred.shape} does not match {x_t.shape}")
    _check_step(schedule, t, "t", low=1)
    _check_step(schedule, t_prev, "t_prev")
    if not t_prev < t:
        raise UsageError(f"DDIM must step backwards, got t={t}, t_prev={t_prev}")
    ab_t = schedule.alpha_bar[t]
    ab_prev = schedule.alpha_bar[t_prev]
    x0_hat = (x_t - math.sqrt(1.0 - ab_t) * eps_pred) / math.sqrt(ab_t)
    if clip_x0 is not None:
        x0_hat = np.clip(x0_hat, -clip_x0, clip_x0)
    if t_prev == 0:
        return x0_hat
    return math.sqrt(ab_prev) * x0_hat + math.sqrt(1.0 - ab_prev) * eps_pred


def timestep_embedding(t: np.ndarray | int, T: int) -> np.ndarray:
    """8-dim sinusoidal code of t/T: sin and cos at frequencies pi * 2**k, k = 0..3."""
    tau = np.atleast_1d(np.asarray(t, dtype=np.float64)) / T
    freqs = math.pi * 2.0 ** np.arange(TIME_EMBED_DIM // 2)
    ang = tau[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass(frozen=True)
class DenoiserConfig:
    horizon: int = 8
    dims: int = 8
    cond_dim: int = 256
    hidden: int = 64
    T: int = 16
    s: float = 0.008

    def __post_init__(self):
        for name in ("horizon", "dims", "hidden", "T"):
            if int(getattr(self, name)) < 1:
                raise UsageError(f"{name} must be >= 1")
        if self.cond_dim < 0:
            raise UsageError("cond_dim must be >= 0")

    @property
    def action_size(self) -> int:
        return self.horizon * self.dims

    @property
    def input_size(self) -> int:
        return self.action_size + TIME_EMBED_DIM + self.cond_dim

    def to_json(self) -> dict:
        return {"horizon": self.horizon, "dims": self.dims, "cond_dim": self.cond_dim,
                "hidden": self.hidden, "T": self.T, "s": self.s}


@dataclass(eq=False)
class DenoiserParams:
    config: DenoiserConfig
    w1: np.ndarray  # (hidden, input_size)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (action_size, hidden)
    b2: np.ndarray  # (action_size,)

    NAMES = ("w1", "b1", "w2", "b2")

    def __post_init__(self):
        c = self.config
        want = {"w1": (c.hidden, c.input_size), "b1": (c.hidden,),
                "w2": (c.action_size, c.hidden), "b2": (c.action_size,)}
        for name, shape in want.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"denoiser {name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise UsageError(f"denoiser {name} contains non-finite values")
            setattr(self, name, arr)

    @classmethod
    def init(cls, config: DenoiserConfig, rng: RandomStream) -> DenoiserParams:
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
        def uni(shape, fan_in, label):
            bound = 1.0 / math.sqrt(fan_in)
            return (2.0 * rng.fork(label).uniform(shape) - 1.0) * bound
        h, n_in, n_out = config.hidden, config.input_size, config.action_size
        return cls(config, uni((h, n_in), n_in, "w1"), uni((h,), n_in, "b1"),
                   uni((n_out, h), h, "w2"), uni((n_out,), h, "b2"))

    @classmethod
    def zeros(cls, config: DenoiserConfig) -> DenoiserParams:
        return cls(config, np.zeros((config.hidden, config.input_size)), np.zeros(config.hidden),
                   np.zeros((config.action_size, config.hidden)), np.zeros(config.action_size))

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.NAMES}

    def copy(self) -> DenoiserParams:
        return DenoiserParams(self.config, *(getattr(self, n).copy() for n in self.NAMES))

    def to_bytes(self) -> bytes:
        return b"".join(np.ascontiguousarray(getattr(self, n), dtype="<f8").tobytes() for n in self.NAMES)

    def save(self, path: str | os.PathLike) -> None:
        save_tensors(path, self.tensors(), kind="denoiser", config=self.config.to_json())

    @classmethod
    def load(cls, path: str | os.PathLike) -> DenoiserParams:
        tensors, config = load_tensors(path, kind="denoiser")
        return cls(DenoiserConfig(**config), *(tensors[n] for n in cls.NAMES))


def _denoiser_inputs(params: DenoiserParams, x_t: np.ndarray, t, cond: np.ndarray) -> np.ndarray:
    c = params.config
    x = np.asarray(x_t, dtype=np.float64).reshape(-1, c.action_size)
    batch = x.shape[0]
    cond = np.asarray(cond, dtype=np.float64)
    if cond.shape[-1:] != (c.cond_dim,) and not (c.cond_dim == 0 and cond.size == 0):
        raise ShapeError(f"conditioning length {cond.shape[-1:]} does not match cond_dim={c.cond_dim}")
    cond = cond.reshape(-1, c.cond_dim) if c.cond_dim else np.zeros((batch, 0))
    if cond.shape[0] == 1 and batch > 1:
        cond = np.broadcast_to(cond, (batch, c.cond_dim))
    if cond.shape != (batch, c.cond_dim):
        raise ShapeError(f"conditioning shape {cond.shape} does not match ({batch}, {c.cond_dim})")
    t = np.broadcast_to(np.asarray(t), (batch,))
    return np.concatenate([x, timestep_embedding(t, c.T), cond], axis=1)


def denoiser_forward(params: DenoiserParams, x_t: np.ndarray, t, cond: np.ndarray) -> np.ndarray:
    """Noise prediction shaped like ``x_t`` (a single trajectory or a batch)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    c = params.config
    flat_batch = x_t.ndim == 2 and x_t.shape[1] == c.action_size
    if x_t.shape[-2:] != (c.horizon, c.dims) and not flat_batch:
        raise ShapeError(f"trajectory shape {x_t.shape} does not match ({c.horizon}, {c.dims})")
    inp = _denoiser_inputs(params, x_t, t, cond)
    hidden = np.tanh(inp @ params.w1.T + params.b1)
    out = hidden @ params.w2.T + params.b2
    return out.reshape(x_t.shape)


def denoiser_loss_and_grads(params: DenoiserParams, x_t: np.ndarray, t: np.ndarray, cond: np.ndarray,
                            target: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Batch RMSE between prediction and ``target`` noise, with parameter gradients.

    d RMSE = d MSE / (2 max(RMSE, 1e-12)).
    """
    c = params.config
    inp = _denoiser_inputs(params, x_t, t, cond)
    target = np.asarray(target, dtype=np.float64).reshape(inp.shape[0], c.action_size)
    hidden = np.tanh(inp @ params.w1.T + params.b1)
    pred = hidden @ params.w2.T + params.b2
    diff = pred - target
    mse = float(np.mean(diff * diff))
    rmse = math.sqrt(mse)
    g_out = diff * (1.0 / (diff.size * max(rmse, RMSE_EPS)))
    g_w2 = g_out.T @ hidden
    g_b2 = g_out.sum(axis=0)
    g_pre = (g_out @ params.w2) * (1.0 - hidden * hidden)
    g_w1 = g_pre.T @ inp
    g_b1 = g_pre.sum(axis=0)
    return rmse, {"w1": g_w1, "b1": g_b1, "w2": g_w2, "b2": g_b2}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 0.05
    seed: int = 0
    lr_schedule: str = "constant"  # or "cosine": anneal to 0 over the run

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise UsageError("epochs must be >= 0 and batch_size >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise UsageError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise UsageError(f"learning rate must be finite and >= 0, got {self.learning_rate}")

    def rate(self, epoch: int) -> float:
        if self.lr_schedule == "constant" or self.epochs == 0:
            return self.learning_rate
        return 0.5 * self.learning_rate * (1.0 + math.cos(math.pi * epoch / self.epochs))


@dataclass(eq=False)
class TrainResult:
    params: DenoiserParams
    losses: list[float] = field(default_factory=list)  # mean batch RMSE per epoch

    def loss_trace(self) -> list[dict]:
        return [{"epoch": i + 1, "rmse": v} for i, v in enumerate(self.losses)]


def train_policy(dataset: Sequence[tuple[np.ndarray, np.ndarray]], cfg: TrainConfig,
                 config: DenoiserConfig | None = None, init: DenoiserParams | None = None) -> TrainResult:
    """Fit the denoiser to ``(conditioning, trajectory)`` pairs.

    Each epoch visits the samples in a seeded random order; every sample in a
    batch gets its own step ``t`` in 1..T and fresh noise. Identical inputs
    and seed reproduce the parameters byte for byte.
    """
    if not dataset:
        raise UsageError("training dataset is empty")
    conds = np.stack([np.asarray(c, dtype=np.float64).ravel() for c, _ in dataset])
    trajs = np.stack([np.asarray(a, dtype=np.float64) for _, a in dataset])
    if config is None:
        config = init.config if init is not None else DenoiserConfig(
            horizon=trajs.shape[1], dims=trajs.shape[2], cond_dim=conds.shape[1])
    if trajs.shape[1:] != (config.horizon, config.dims) or conds.shape[1] != config.cond_dim:
        raise ShapeError(f"dataset shapes {trajs.shape[1:]}/{conds.shape[1]} do not match denoiser config")
    flat = trajs.reshape(len(dataset), -1)
    root = RandomStream(cfg.seed, ("train",))
    params = init.copy() if init is not None else DenoiserParams.init(config, root.fork("init"))
    schedule = build_schedule(config.T, config.s)
    sqrt_ab = np.sqrt(schedule.alpha_bar)
    sqrt_1mab = np.sqrt(1.0 - schedule.alpha_bar)
    result = TrainResult(params)
    n = len(dataset)
    for epoch in range(cfg.epochs):
        erng = root.fork(f"epoch/{epoch}")
        order = np.argsort(erng.fork("order").uniform(n), kind="stable")
        draw = erng.fork("noise")
        batch_losses = []
        lr = cfg.rate(epoch)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            b = idx.size
            t = 1 + np.minimum((draw.uniform(b) * config.T).astype(np.int64), config.T - 1)
            eps = draw.normal((b, config.action_size))
            x_t = sqrt_ab[t][:, None] * flat[idx] + sqrt_1mab[t][:, None] * eps
            loss, grads = denoiser_loss_and_grads(params, x_t, t, conds[idx], eps)
            batch_losses.append(loss)
            if lr:
                for name, g in grads.items():
                    getattr(params, name).__isub__(lr * g)
        result.losses.append(float(np.mean(batch_losses)))
    return result


def sample_actions(params: DenoiserParams, cond: np.ndarray, schedule: NoiseSchedule | None,
                   rng: RandomStream, steps: Sequence[int] | None = None,
                   clip_x0: float | None = None) -> np.ndarray:
    """Run DDIM from unit Gaussian noise at step T down to 0.

    ``steps`` defaults to every integer T, T-1, ..., 0. Without ``clip_x0``
    the first step divides by sqrt(alpha_bar[T]) (about 3e-3 for the cosine
    schedule), so any error in the noise estimate there is amplified; pass
    ``clip_x0=1.0`` for actions normalized to [-1, 1].
    """
    c = params.config
    if schedule is None:
        schedule = build_schedule(c.T, c.s)
    if schedule.T != c.T:
        raise UsageError(f"schedule has T={schedule.T} but the denoiser was built for T={c.T}")
    if steps is None:
        steps = list(range(schedule.T, -1, -1))
    steps = list(steps)
    if steps[0] != schedule.T or steps[-1] != 0 or any(a <= b for a, b in zip(steps, steps[1:])):
        raise UsageError(f"DDIM step sequence must descend strictly from {schedule.T} to 0, got {steps}")
    x = rng.normal((c.horizon, c.dims))
    for t, t_prev in zip(steps, steps[1:]):
        eps = denoiser_forward(params, x, t, cond)
        x = ddim_step(x, eps, t, t_prev, schedule, clip_x0)
    return x
