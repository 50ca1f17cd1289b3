"""Observation encoder: per-timestep feature assembly, a linear token
projection, and one single-head self-attention layer over the window of the
previous and current tokens.

Feature layout (length ``F = V + 8 + 10 + P``)::

    visual (V) | ee position (3), ee quaternion (4), gripper (1)
               | prompt position (3), quaternion (4), width (1), confidence (1), present flag (1)
               | task embedding (P)

The conditioning vector handed to the policy is the two attended tokens
concatenated, length ``2 * D``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import RobotState
from .errors import ShapeError, UsageError
from .geometry import GraspPrompt
from .rng import RandomStream
from .tensorfile import load_tensors, save_tensors

STATE_DIM = 8
PROMPT_DIM = 10


@dataclass(frozen=True)
class EncoderConfig:
    visual_dim: int = 64
    token_dim: int = 128
    task_dim: int = 16

    def __post_init__(self):
        if self.visual_dim < 0 or self.token_dim < 1 or self.task_dim < 0:
            raise UsageError(f"invalid encoder sizes {self}")

    @property
    def feature_dim(self) -> int:
        return self.visual_dim + STATE_DIM + PROMPT_DIM + self.task_dim

    def to_json(self) -> dict:
        # D, F, P as named in the sidecar, plus V for reconstruction
        return {"D": self.token_dim, "F": self.feature_dim, "P": self.task_dim, "V": self.visual_dim}

    @classmethod
    def from_json(cls, doc: dict) -> EncoderConfig:
        cfg = cls(visual_dim=doc["V"], token_dim=doc["D"], task_dim=doc["P"])
        if cfg.feature_dim != doc["F"]:
            raise ShapeError(f"sidecar F={doc['F']} disagrees with V + 18 + P = {cfg.feature_dim}")
        return cfg


@dataclass(frozen=True, eq=False)
class TaskPromptEmbedding:
    prompt_id: str
    vector: np.ndarray


class TaskVocabulary:
    """Fixed prompt-id to embedding table; vectors are N(0, 1/P) seeded per id."""

    def __init__(self, prompt_ids: Sequence[str], dim: int = 16, seed: int = 0):
        if len(set(prompt_ids)) != len(prompt_ids):
            raise UsageError("task vocabulary contains duplicate ids")
        self.dim = dim
        self.seed = seed
        root = RandomStream(seed, ("task",))
        self._table = {}
        for pid in prompt_ids:
            vec = root.fork(pid).normal(dim) / math.sqrt(dim) if dim else np.zeros(0)
            vec.setflags(write=False)
            self._table[pid] = TaskPromptEmbedding(pid, vec)

    def __contains__(self, prompt_id: str) -> bool:
        return prompt_id in self._table

    def __len__(self) -> int:
        return len(self._table)

    @property
    def ids(self) -> list[str]:
        return list(self._table)

    def lookup(self, prompt_id: str) -> TaskPromptEmbedding:
        try:
            return self._table[prompt_id]
        except KeyError:
            raise UsageError(f"unknown task prompt {prompt_id!r}; known: {sorted(self._table)}") from None


def assemble_features(visual: np.ndarray, state: RobotState, prompt: GraspPrompt | None,
                      task: TaskPromptEmbedding, config: EncoderConfig | None = None) -> np.ndarray:
    visual = np.asarray(visual, dtype=np.float64).ravel()
    task_vec = np.asarray(task.vector, dtype=np.float64).ravel()
    if config is not None:
        if visual.size != config.visual_dim:
            raise ShapeError(f"visual feature length {visual.size} does not match configured {config.visual_dim}")
        if task_vec.size != config.task_dim:
            raise ShapeError(f"task embedding length {task_vec.size} does not match configured {config.task_dim}")
    if prompt is None:
        prompt_part = np.zeros(PROMPT_DIM)
    else:
        prompt_part = np.concatenate([prompt.as_vector(), [1.0]])
    return np.concatenate([visual, state.as_vector(), prompt_part, task_vec])


@dataclass(eq=False)
class EncoderParams:
    config: EncoderConfig
    projection: np.ndarray  # (D, F)
    bias: np.ndarray  # (D,)
    wq: np.ndarray  # (D, D)
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    NAMES = ("projection", "bias", "wq", "wk", "wv", "wo")

    def __post_init__(self):
        d, f = self.config.token_dim, self.config.feature_dim
        want = {"projection": (d, f), "bias": (d,), "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d)}
        for name, shape in want.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"encoder {name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise UsageError(f"encoder {name} contains non-finite values")
            setattr(self, name, arr)

    @classmethod
    def init(cls, config: EncoderConfig, rng: RandomStream) -> EncoderParams:
        """Every entry uniform in [-1/sqrt(F), 1/sqrt(F)]."""
        bound = 1.0 / math.sqrt(config.feature_dim)
        d, f = config.token_dim, config.feature_dim
        shapes = {"projection": (d, f), "bias": (d,), "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d)}
        return cls(config, **{n: (2.0 * rng.fork(n).uniform(s) - 1.0) * bound for n, s in shapes.items()})

    def tensors(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in self.NAMES}

    def to_bytes(self) -> bytes:
        return b"".join(np.ascontiguousarray(getattr(self, n), dtype="<f8").tobytes() for n in self.NAMES)

    def save(self, path: str | os.PathLike) -> None:
        save_tensors(path, self.tensors(), kind="encoder", config=self.config.to_json())

    @classmethod
    def load(cls, path: str | os.PathLike) -> EncoderParams:
        tensors, config = load_tensors(path, kind="encoder")
        return cls(EncoderConfig.from_json(config), *(tensors[n] for n in cls.NAMES))


def project_token(params: EncoderParams, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1:] != (params.config.feature_dim,):
        raise ShapeError(f"feature length {features.shape[-1:]} does not match F={params.config.feature_dim}")
    return features @ params.projection.T + params.bias


def _check_window(params: EncoderParams, tokens: np.ndarray) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.shape != (2, params.config.token_dim):
        raise ShapeError(f"attention window must be 2 tokens of length {params.config.token_dim}, "
                         f"got shape {tokens.shape}")
    return tokens


def _softmax(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def attention_weights(params: EncoderParams, tokens: np.ndarray) -> np.ndarray:
    """The 2x2 softmax matrix; row i holds query i's weights over both tokens."""
    x = _check_window(params, tokens)
    q = x @ params.wq.T
    k = x @ params.wk.T
    return _softmax(q @ k.T / math.sqrt(params.config.token_dim))


def attend_window(params: EncoderParams, tokens: np.ndarray) -> np.ndarray:
    """Single-head scaled dot-product self-attention over (previous, current), flattened to 2D."""
    x = _check_window(params, tokens)
    a = attention_weights(params, x)
    return ((a @ (x @ params.wv.T)) @ params.wo.T).ravel()


def attend_window_backward(params: EncoderParams, tokens: np.ndarray,
                           grad_out: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of ``sum(grad_out * attend_window(tokens))``.

    Returns ``({"wq", "wk", "wv", "wo"}, d tokens)``.
    """
    x = _check_window(params, tokens)
    d = params.config.token_dim
    g = np.asarray(grad_out, dtype=np.float64).reshape(2, d)
    scale = 1.0 / math.sqrt(d)
    q, k, v = x @ params.wq.T, x @ params.wk.T, x @ params.wv.T
    a = _softmax(q @ k.T * scale)
    mixed = a @ v

    g_wo = g.T @ mixed
    g_mixed = g @ params.wo
    g_a = g_mixed @ v.T
    g_v = a.T @ g_mixed
    g_s = a * (g_a - np.sum(g_a * a, axis=1, keepdims=True)) * scale
    g_q = g_s @ k
    g_k = g_s.T @ q
    grads = {"wq": g_q.T @ x, "wk": g_k.T @ x, "wv": g_v.T @ x, "wo": g_wo}
    g_x = g_q @ params.wq + g_k @ params.wk + g_v @ params.wv
    return grads, g_x


def encode_window(params: EncoderParams, prev_features: np.ndarray, features: np.ndarray) -> np.ndarray:
    tokens = project_token(params, np.stack([prev_features, features]))
    return attend_window(params, tokens)


def encode_window_backward(params: EncoderParams, prev_features: np.ndarray, features: np.ndarray,
                           grad_out: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients of ``sum(grad_out * encode_window(...))``."""
    f = np.stack([np.asarray(prev_features, dtype=np.float64), np.asarray(features, dtype=np.float64)])
    tokens = project_token(params, f)
    grads, g_tokens = attend_window_backward(params, tokens, grad_out)
    grads["projection"] = g_tokens.T @ f
    grads["bias"] = g_tokens.sum(axis=0)
    return grads


def condition_sequence(params: EncoderParams, features: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Conditioning for every timestep of an episode; step 0 repeats its own token."""
    if len(features) == 0:
        return []
    tokens = project_token(params, np.stack([np.asarray(f, dtype=np.float64) for f in features]))
    out = []
    for t in range(len(tokens)):
        prev = tokens[t - 1] if t > 0 else tokens[0]
        out.append(attend_window(params, np.stack([prev, tokens[t]])))
    return out
