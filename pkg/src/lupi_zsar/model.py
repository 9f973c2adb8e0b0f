"""The zero-shot model: action head, hallucination MLP, fusion, losses and prediction.

Training fuses the visual feature with the class's true object semantics
and regresses the result onto the class name embedding; the hallucinator
learns, separately, to reproduce the object semantics from the backbone
feature. At test time the hallucinated vector stands in for the object
semantics and the fused vector is matched to unseen-class embeddings by
cosine distance.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .embeddings import ClassSemantics
from .errors import ConfigError, DataError, ShapeError
from .fusion import FUSION_MODES, AttentionParams, check_token_count, cross_attention_fuse, fuse_ablation

MODES = ("baseline", "pi_train_only", "full")
DTYPES = {"float64": np.float64, "float32": np.float32}


@dataclass(frozen=True)
class ModelConfig:
    backbone_dim: int = 512
    embed_dim: int = 300
    hidden_dims: tuple[int, ...] = (512, 512, 512)
    n_tokens: int = 10
    key_dim: int | None = None
    mode: str = "full"
    fusion: str = "cross_attention"
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {tuple(DTYPES)}, got {self.dtype!r}")
        if len(self.hidden_dims) != 3:
            raise ConfigError("the hallucinator has exactly three hidden layers")
        if min(self.backbone_dim, self.embed_dim, *self.hidden_dims) < 1:
            raise ConfigError("layer widths must be positive")
        if self.fusion == "cross_attention":
            check_token_count(self.embed_dim, self.n_tokens)
            if self.key_dim is not None and self.key_dim < 1:
                raise ConfigError("key_dim must be positive")

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


@dataclass
class ModelParams:
    """Trainable parameters in a fixed order, plus non-trainable buffers."""

    config: ModelConfig
    params: dict[str, Parameter]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    seed: int | None = None
    epoch: int = 0

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def __getitem__(self, name) -> Parameter:
        return self.params[name]

    def group(self, prefix: str) -> list[Parameter]:
        return [p for n, p in self.params.items() if n.startswith(prefix)]

    @property
    def attention(self) -> AttentionParams:
        if self.config.fusion != "cross_attention":
            raise ConfigError(f"no attention parameters in {self.config.fusion!r} fusion")
        g = {n.split(".", 1)[1]: p for n, p in self.params.items() if n.startswith("attn.")}
        return AttentionParams(n_tokens=self.config.n_tokens, **g)

    def copy(self) -> "ModelParams":
        params = {n: Parameter(n, p.data.copy()) for n, p in self.params.items()}
        return ModelParams(self.config, params, {k: v.copy() for k, v in self.buffers.items()}, self.seed, self.epoch)


def hallucinator_layers(config: ModelConfig) -> list[tuple[int, int]]:
    widths = [config.backbone_dim, *config.hidden_dims, config.embed_dim]
    return list(zip(widths[:-1], widths[1:]))


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, from a seeded PCG64 stream."""
    rng = np.random.Generator(np.random.PCG64(seed))
    dt = config.np_dtype
    D = config.embed_dim
    params: dict[str, Parameter] = {}

    def linear(prefix, fan_in, fan_out):
        params[prefix + ".weight"] = Parameter(prefix + ".weight", ad.uniform_init(rng, fan_in, (fan_in, fan_out), dt))
        params[prefix + ".bias"] = Parameter(prefix + ".bias", np.zeros(fan_out, dtype=dt))

    linear("action", config.backbone_dim, D)
    for i, (fi, fo) in enumerate(hallucinator_layers(config)):
        linear(f"halluc.{i}", fi, fo)
    if config.fusion == "cross_attention":
        attn = AttentionParams.init(rng, D, config.n_tokens, config.key_dim, dt)
        params.update({p.name: p for p in attn.parameters()})
    elif config.fusion == "concat":
        params["concat.proj"] = Parameter("concat.proj", ad.uniform_init(rng, 2 * D, (2 * D, D), dt))
    return ModelParams(config, params, seed=seed)


def _batch(params: ModelParams, x) -> Tensor:
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=params.config.np_dtype)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.config.backbone_dim:
        raise ShapeError(f"expected backbone features of width {params.config.backbone_dim}, got shape {x.shape}")
    return Tensor(x)


def action_head(params: ModelParams, x) -> Tensor:
    return ad.linear_forward(_batch(params, x), params["action.weight"], params["action.bias"])


def hallucinate(params: ModelParams, x) -> Tensor:
    h = _batch(params, x)
    n = len(params.config.hidden_dims) + 1
    for i in range(n):
        h = ad.linear_forward(h, params[f"halluc.{i}.weight"], params[f"halluc.{i}.bias"])
        if i < n - 1:
            h = ad.relu(h)
    return h


def fuse(params: ModelParams, f_v, f_o) -> Tensor:
    fusion = params.config.fusion
    if fusion == "cross_attention":
        return cross_attention_fuse(f_v, f_o, params.attention)
    return fuse_ablation(f_v, f_o, fusion, params.params.get("concat.proj"))


class Losses(NamedTuple):
    total: Tensor
    action: Tensor
    hallucinate: Tensor | None


def _lookup(table: ClassSemantics, class_ids: Sequence[str], what: str, dtype) -> np.ndarray:
    missing = sorted({c for c in class_ids if c not in table})
    if missing:
        raise DataError(f"no {what} for classes {missing}")
    return table.rows(class_ids).astype(dtype)


def forward_train(params: ModelParams, x, class_ids: Sequence[str], semantics: ClassSemantics,
                  pi: ClassSemantics | None = None) -> Losses:
    """Joint training loss for one batch.

    ``full`` adds the hallucination regression to the action loss;
    ``pi_train_only`` fuses with object semantics but trains no hallucinator;
    ``baseline`` regresses the raw visual feature onto the class embedding.
    """
    mode = params.config.mode
    dt = params.config.np_dtype
    f_y = _lookup(semantics, class_ids, "class semantics", dt)
    f_v = action_head(params, x)
    if mode == "baseline":
        l_action = ad.squared_l2_loss(f_v, f_y)
        return Losses(l_action, l_action, None)
    if pi is None:
        raise DataError(f"mode {mode!r} requires object semantics")
    f_o = Tensor(_lookup(pi, class_ids, "object semantics", dt))
    l_action = ad.squared_l2_loss(fuse(params, f_v, f_o), f_y)
    if mode == "pi_train_only":
        return Losses(l_action, l_action, None)
    l_halluc = ad.squared_l2_loss(hallucinate(params, x), f_o)
    return Losses(ad.add(l_action, l_halluc), l_action, l_halluc)


def forward_test(params: ModelParams, x) -> np.ndarray:
    """Joint embedding for unseen-class matching, shape (B, embed_dim)."""
    mode = params.config.mode
    f_v = action_head(params, x)
    if mode == "baseline":
        return f_v.data
    if mode == "full":
        f_o = hallucinate(params, x)
    else:
        surrogate = params.buffers.get("object_surrogate")
        if surrogate is None:
            raise ConfigError("pi_train_only model has no object surrogate; fit it first")
        f_o = Tensor(np.tile(surrogate.astype(params.config.np_dtype), (f_v.shape[0], 1)))
    return fuse(params, f_v, f_o).data


def cosine_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DataError("cosine distance is undefined for a zero-norm vector")
    return float(1.0 - (a @ b) / (na * nb))


def cosine_distances(queries, candidates) -> np.ndarray:
    """Pairwise cosine distances, (Q, D) x (C, D) -> (Q, C)."""
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    c = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    qn = np.linalg.norm(q, axis=1)
    cn = np.linalg.norm(c, axis=1)
    if np.any(qn == 0) or np.any(cn == 0):
        raise DataError("cosine distance is undefined for a zero-norm vector")
    # einsum rather than BLAS: identical rows must give bit-identical distances for stable tie-breaking
    return 1.0 - np.einsum("qd,cd->qc", q, c) / np.outer(qn, cn)


def rank_classes(queries, semantics: ClassSemantics, top_n: int | None = None) -> np.ndarray:
    """Indices into ``semantics`` sorted by ascending cosine distance, per query.

    Equal distances keep class-list order (stable sort).
    """
    n = len(semantics) if top_n is None else top_n
    if not 1 <= n <= len(semantics):
        raise ConfigError(f"top_n={top_n} outside [1, {len(semantics)}]")
    d = cosine_distances(queries, semantics.vectors)
    return np.argsort(d, axis=1, kind="stable")[:, :n]


def predict(query, semantics: ClassSemantics, top_n: int = 1) -> list[str]:
    """Unseen class ids nearest to a single joint embedding, best first."""
    idx = rank_classes(np.asarray(query)[None, :], semantics, top_n)[0]
    return [semantics.class_ids[i] for i in idx]
