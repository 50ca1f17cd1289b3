"""AugFusion: gated choice between one sequential corruption chain and a
Dirichlet-weighted mixture of independent chains, blended with the input.

Also hosts the exposure model used by the robustness benchmark.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .raster import Image
from .rng import RandomStream

PRIMITIVES = (
    "brightness",
    "contrast",
    "gamma",
    "exposure_gain",
    "gaussian_blur",
    "gaussian_noise",
    "saturation_shift",
)

# Magnitudes reached at severity 1.
MAX_BRIGHTNESS_SHIFT = 0.4
MAX_CONTRAST_CHANGE = 0.8
MAX_GAMMA_LOG2 = 1.5
MAX_EXPOSURE_STOPS = 3.0
MAX_BLUR_SIGMA = 3.0
MAX_NOISE_STD = 0.2
DISPLAY_GAMMA = 2.2

_LUMA = np.array([0.299, 0.587, 0.114])


def _direction(rng: RandomStream) -> float:
    return 1.0 if rng.uniform() < 0.5 else -1.0


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _blur(px: np.ndarray, sigma: float) -> np.ndarray:
    k = _gaussian_kernel(sigma)
    r = k.size // 2
    out = px
    for axis in (0, 1):
        pad = [(0, 0)] * 3
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="edge")
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for i, w in enumerate(k):
            acc += w * np.take(padded, np.arange(i, i + n), axis=axis)
        out = acc
    return out


def to_linear(px: np.ndarray) -> np.ndarray:
    return px ** DISPLAY_GAMMA


def from_linear(px: np.ndarray) -> np.ndarray:
    return np.clip(px, 0.0, 1.0) ** (1.0 / DISPLAY_GAMMA)


def apply_primitive(image: Image, op: str, severity: float, rng: RandomStream) -> Image:
    """Apply one corruption primitive at ``severity`` in [0, 1].

    Severity 0 returns the input unchanged for every primitive. Primitives
    with a direction (brighter/darker, more/less contrast...) draw it from
    ``rng``; ``gaussian_noise`` draws one normal per channel value.
    """
    if op not in PRIMITIVES:
        raise UsageError(f"unknown augmentation primitive {op!r}; expected one of {', '.join(PRIMITIVES)}")
    if not 0.0 <= severity <= 1.0:
        raise UsageError(f"severity must lie in [0, 1], got {severity}")
    if severity == 0.0:
        return image
    px = image.pixels
    if op == "brightness":
        out = px + _direction(rng) * MAX_BRIGHTNESS_SHIFT * severity
    elif op == "contrast":
        factor = 1.0 + _direction(rng) * MAX_CONTRAST_CHANGE * severity
        mean = float(np.mean(px @ _LUMA))
        out = mean + (px - mean) * factor
    elif op == "gamma":
        out = px ** (2.0 ** (_direction(rng) * MAX_GAMMA_LOG2 * severity))
    elif op == "exposure_gain":
        gain = 2.0 ** (_direction(rng) * MAX_EXPOSURE_STOPS * severity)
        out = from_linear(to_linear(px) * gain)
    elif op == "gaussian_blur":
        out = _blur(px, MAX_BLUR_SIGMA * severity)
    elif op == "gaussian_noise":
        out = px + MAX_NOISE_STD * severity * rng.normal(px.shape)
    else:  # saturation_shift
        gray = (px @ _LUMA)[..., None]
        out = gray + (px - gray) * (1.0 + _direction(rng) * severity)
    return Image.clamped(out)


@dataclass(frozen=True)
class OpSpec:
    name: str
    severity: tuple[float, float] = (0.1, 1.0)

    def __post_init__(self):
        if self.name not in PRIMITIVES:
            raise UsageError(f"unknown augmentation primitive {self.name!r}")
        lo, hi = (float(v) for v in self.severity)
        if not 0.0 <= lo <= hi <= 1.0:
            raise UsageError(f"severity range for {self.name} must satisfy 0 <= lo <= hi <= 1, got {self.severity}")
        object.__setattr__(self, "severity", (lo, hi))


DEFAULT_OPS = tuple(OpSpec(name) for name in PRIMITIVES)


@dataclass(frozen=True)
class AugFusionConfig:
    k: int = 3
    alpha: float = 1.0
    beta: float = 0.5
    lam: float = 0.5
    ops: tuple[OpSpec, ...] = field(default=DEFAULT_OPS)

    def __post_init__(self):
        if not isinstance(self.k, int) or self.k < 1:
            raise UsageError(f"k must be a positive integer, got {self.k!r}")
        if not self.alpha > 0:
            raise UsageError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise UsageError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0.0 <= self.lam <= 1.0:
            raise UsageError(f"lambda must lie in [0, 1], got {self.lam}")
        if not self.ops:
            raise UsageError("op set must not be empty")
        object.__setattr__(self, "ops", tuple(self.ops))

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "alpha": self.alpha,
            "beta": self.beta,
            "lambda": self.lam,
            "ops": [{"name": o.name, "severity": list(o.severity)} for o in self.ops],
        }

    @classmethod
    def from_json(cls, doc: dict) -> AugFusionConfig:
        known = {"k", "alpha", "beta", "lambda", "ops"}
        extra = set(doc) - known
        if extra:
            raise UsageError(f"unknown AugFusion config keys: {sorted(extra)}")
        kwargs = {}
        if "k" in doc:
            kwargs["k"] = doc["k"]
        if "alpha" in doc:
            kwargs["alpha"] = float(doc["alpha"])
        if "beta" in doc:
            kwargs["beta"] = float(doc["beta"])
        if "lambda" in doc:
            kwargs["lam"] = float(doc["lambda"])
        if "ops" in doc:
            ops = []
            for entry in doc["ops"]:
                if isinstance(entry, str):
                    ops.append(OpSpec(entry))
                else:
                    ops.append(OpSpec(entry["name"], tuple(entry.get("severity", (0.1, 1.0)))))
            kwargs["ops"] = tuple(ops)
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | os.PathLike) -> AugFusionConfig:
        with open(path) as f:
            return cls.from_json(json.load(f))


def sample_dirichlet(alpha: float, k: int, rng: RandomStream) -> np.ndarray:
    """Symmetric Dirichlet(alpha, ..., alpha) sample of length ``k``."""
    if not alpha > 0:
        raise UsageError(f"Dirichlet concentration must be positive, got {alpha}")
    if k < 1:
        raise UsageError(f"Dirichlet dimension must be >= 1, got {k}")
    if k == 1:
        return np.ones(1)
    g = rng.gamma(alpha, k)
    total = g.sum()
    if total == 0.0:
        # every gamma draw underflowed (tiny alpha); all mass to one vertex
        w = np.zeros(k)
        w[rng.integer(0, k - 1)] = 1.0
        return w
    return g / total


@dataclass(frozen=True)
class ChainStep:
    op: str
    severity: float
    rng: RandomStream


def sample_chain(cfg: AugFusionConfig, length: int, rng: RandomStream) -> list[ChainStep]:
    """Draw ``length`` primitives (with replacement) and their severities."""
    steps = []
    for j in range(length):
        step_rng = rng.fork(str(j))
        spec = step_rng.choice(cfg.ops)
        lo, hi = spec.severity
        severity = step_rng.uniform_range(lo, hi)
        steps.append(ChainStep(spec.name, severity, step_rng.fork("apply")))
    return steps


def apply_chain(image: Image, chain: list[ChainStep]) -> Image:
    for step in chain:
        image = apply_primitive(image, step.op, step.severity, step.rng)
    return image


def augfusion(image: Image, cfg: AugFusionConfig, rng: RandomStream) -> Image:
    """One AugFusion draw for ``image``; fully determined by ``rng``'s key.

    The gate value xi is drawn once per call. ``xi < beta`` applies a single
    chain of ``k`` primitives with the blend forced to 1; otherwise ``k``
    chains of random length 1..k are mixed with Dirichlet weights starting
    from a zero accumulator, and the mixture is blended with the input by
    ``cfg.lam``.
    """
    xi = rng.fork("gate").uniform()
    if xi < cfg.beta:
        branch = apply_chain(image, sample_chain(cfg, cfg.k, rng.fork("sequential")))
        return branch

    weights = sample_dirichlet(cfg.alpha, cfg.k, rng.fork("weights"))
    mix_rng = rng.fork("mixture")
    mixed = np.zeros_like(image.pixels)
    for i in range(cfg.k):
        chain_rng = mix_rng.fork(str(i))
        length = chain_rng.integer(1, cfg.k)
        mixed += weights[i] * apply_chain(image, sample_chain(cfg, length, chain_rng.fork("ops"))).pixels
    lam = cfg.lam
    return Image.clamped(lam * mixed + (1.0 - lam) * image.pixels)


def simulate_exposure(image: Image, exposure_ms: float, reference_ms: float) -> Image:
    """Re-expose an image taken at ``reference_ms`` as if shot at ``exposure_ms``.

    Linear-light gain exposure/reference after undoing a 2.2 display gamma;
    highlights saturate at 1.
    """
    if not exposure_ms > 0 or not reference_ms > 0:
        raise UsageError(f"exposures must be positive, got {exposure_ms} and {reference_ms}")
    gain = exposure_ms / reference_ms
    return Image.clamped(from_linear(to_linear(image.pixels) * gain))
