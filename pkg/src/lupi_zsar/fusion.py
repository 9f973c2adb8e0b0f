"""Cross-attention fusion of visual and object-semantic features, plus simpler fusions.

A 300-dim feature is viewed as ``S`` tokens of ``300 / S`` components so
that softmax attention between the two modalities is non-degenerate. With
``S = 1`` each attention map is a single weight of 1 and the module
reduces to the two value projections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigError, ShapeError

FUSION_MODES = ("cross_attention", "multiply", "concat", "add")

_PROJECTIONS = ("q_v", "k_v", "v_v", "q_o", "k_o", "v_o")


@dataclass
class AttentionParams:
    n_tokens: int
    q_v: Parameter
    k_v: Parameter
    v_v: Parameter
    q_o: Parameter
    k_o: Parameter
    v_o: Parameter

    @property
    def token_dim(self) -> int:
        return self.v_v.shape[0]

    @property
    def key_dim(self) -> int:
        return self.q_v.shape[1]

    def parameters(self) -> list[Parameter]:
        return [getattr(self, n) for n in _PROJECTIONS]

    @classmethod
    def init(cls, rng, feature_dim=300, n_tokens=10, key_dim=None, dtype=np.float64, prefix="attn."):
        token_dim = check_token_count(feature_dim, n_tokens)
        key_dim = token_dim if key_dim is None else int(key_dim)
        shapes = {"q": (token_dim, key_dim), "k": (token_dim, key_dim), "v": (token_dim, token_dim)}
        mats = {n: Parameter(prefix + n, ad.uniform_init(rng, token_dim, shapes[n[0]], dtype)) for n in _PROJECTIONS}
        return cls(n_tokens=n_tokens, **mats)


def check_token_count(feature_dim: int, n_tokens: int) -> int:
    if n_tokens < 1 or feature_dim % n_tokens:
        raise ConfigError(f"token count {n_tokens} does not divide feature dimension {feature_dim}")
    return feature_dim // n_tokens


def tokenize_vector(f, n_tokens: int) -> Tensor:
    """Row-major view of a (B, D) batch, or a single (D,) vector, as (B, S, D/S) tokens."""
    f = f if isinstance(f, Tensor) else Tensor(f)
    if f.data.ndim == 1:
        f = ad.reshape(f, (1, f.shape[0]))
    if f.data.ndim != 2:
        raise ShapeError(f"expected a vector or a (B, D) batch, got {f.shape}")
    d = check_token_count(f.shape[1], n_tokens)
    return ad.reshape(f, (f.shape[0], n_tokens, d))


def flatten_tokens(x: Tensor) -> Tensor:
    b, s, d = x.shape
    return ad.reshape(x, (b, s * d))


def _project(tokens: Tensor, w: Parameter) -> Tensor:
    b, s, d = tokens.shape
    flat = ad.reshape(tokens, (b * s, d))
    return ad.reshape(ad.matmul(flat, w), (b, s, w.shape[1]))


def _attend(queries: Tensor, keys: Tensor, values: Tensor, key_dim: int, keep=None) -> Tensor:
    scores = ad.scale(ad.matmul(queries, ad.transpose(keys)), 1.0 / math.sqrt(key_dim))
    weights = ad.softmax_rows(scores)
    if keep is not None:
        keep.append(weights.data)
    return ad.matmul(weights, values)


def mutual_attention(f_v, f_o, p: AttentionParams, attention_maps: list | None = None) -> tuple[Tensor, Tensor]:
    """Visual tokens attended by object queries, and object tokens attended by visual queries.

    Returns ``(f_v_hat, f_o_hat)`` flattened back to (B, D). When
    ``attention_maps`` is a list, the two softmax weight arrays are appended
    to it (visual-side first).
    """
    x_v = tokenize_vector(f_v, p.n_tokens)
    x_o = tokenize_vector(f_o, p.n_tokens)
    if x_v.shape != x_o.shape:
        raise ShapeError(f"modalities disagree: {x_v.shape} vs {x_o.shape}")
    if x_v.shape[2] != p.token_dim:
        raise ShapeError(f"token width {x_v.shape[2]} does not match projections ({p.token_dim})")
    q_v, k_v, v_v = _project(x_v, p.q_v), _project(x_v, p.k_v), _project(x_v, p.v_v)
    q_o, k_o, v_o = _project(x_o, p.q_o), _project(x_o, p.k_o), _project(x_o, p.v_o)
    f_v_hat = _attend(q_o, k_v, v_v, p.key_dim, attention_maps)
    f_o_hat = _attend(q_v, k_o, v_o, p.key_dim, attention_maps)
    return flatten_tokens(f_v_hat), flatten_tokens(f_o_hat)


def fuse_add(a, b) -> Tensor:
    return ad.add(a, b)


def cross_attention_fuse(f_v, f_o, p: AttentionParams) -> Tensor:
    return fuse_add(*mutual_attention(f_v, f_o, p))


def fuse_ablation(f_v, f_o, mode: str, proj: Parameter | None = None) -> Tensor:
    """Fusion without attention: elementwise product, sum, or projected concatenation."""
    if mode == "multiply":
        return ad.mul(f_v, f_o)
    if mode == "add":
        return ad.add(f_v, f_o)
    if mode == "concat":
        if proj is None:
            raise ConfigError("concat fusion requires a (2D, D) projection")
        f_v = f_v if isinstance(f_v, Tensor) else Tensor(f_v)
        if f_v.data.ndim == 1:
            out = ad.matmul(ad.concat(ad.reshape(f_v, (1, -1)), ad.reshape(f_o, (1, -1))), proj)
            return ad.reshape(out, (proj.shape[1],))
        return ad.matmul(ad.concat(f_v, f_o), proj)
    raise ConfigError(f"unknown ablation fusion mode {mode!r}")
