"""Parameters and forward pass of the hypercomplex prompt-aware recommender.

Every node carries one embedding per modality (``id``, ``visual``,
``textual``).  An embedding of width ``N * cw`` is read as ``N`` hypercomplex
components of width ``cw`` laid out contiguously, component 0 first.

Forward pipeline per modality: layer-0 embeddings -> bipartite propagation ->
layer sum plus prompt (``bar``) -> hypercomplex mutual-information
enhancement (``hat``).  The three ``hat`` blocks are scaled by softmax
attention weights and concatenated; item rows are then smoothed once by the
fused item-item operator.
"""
from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import cdalgebra
from .errors import ConfigError, FormatError
from .graphs import ITEM_GRAPH_NORMS, ItemItemGraph, build_knn_graph, build_norm_adj, propagate
from .ops import softmax, xavier_uniform

MODALITIES = ("id", "visual", "textual")
CONTENT_MODALITIES = ("visual", "textual")
ENCODER_MODES = ("full", "split", "mlp")

# grids searched over, keyed by hyperparameter name
DEFAULT_GRIDS = {
    "n_layers": [1, 2, 3],
    "reg_weight": [1e-2, 1e-3, 1e-4],
    "ssl_weight": [1e-2, 1e-3, 1e-4],
    "n_exp": [0, 1, 2, 3],
}


@dataclass
class HyperParams:
    n_exp: int = 1
    d: int = 64
    n_layers: int = 2
    knn_k: int = 10
    reg_weight: float = 1e-3
    ssl_weight: float = 1e-3
    learning_rate: float = 1e-4
    batch_size: int = 2048
    patience: int = 20
    max_epochs: int = 1000
    seed: int = 2024
    encoder_mode: str = "full"
    no_prompt: bool = False
    no_mi: bool = False
    no_ssl: bool = False
    explicit_prompt: bool = False
    sign_align: str = "minimize"
    layer_agg: str = "sum"
    item_graph_norm: str = "sym"
    freeze_alpha: bool = False
    ssl_on: str = "hat"
    ssl_batch_only: bool = False
    eps_init: float = 0.1
    clip_norm: float | None = None
    dtype: str = "float32"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.n_exp, int) or not 0 <= self.n_exp <= cdalgebra.MAX_EXP:
            raise ConfigError(f"n_exp must be in [0, {cdalgebra.MAX_EXP}], got {self.n_exp}")
        if self.d < 1:
            raise ConfigError("d must be positive")
        if self.n_layers < 0:
            raise ConfigError("n_layers must be >= 0")
        if self.knn_k < 1:
            raise ConfigError("knn_k must be >= 1")
        for name in ("learning_rate",):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("reg_weight", "ssl_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size, patience and max_epochs must be >= 1")
        choices = {
            "encoder_mode": ENCODER_MODES,
            "sign_align": ("minimize", "literal"),
            "layer_agg": ("sum", "mean"),
            "item_graph_norm": ITEM_GRAPH_NORMS,
            "ssl_on": ("hat", "bar"),
            "dtype": ("float32", "float64"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.encoder_mode != "full" and self.d % self.num_components:
            raise ConfigError(
                f"encoder_mode={self.encoder_mode} needs d divisible by {self.num_components}, got d={self.d}"
            )
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError("clip_norm must be > 0 when set")

    @property
    def num_components(self) -> int:
        return cdalgebra.num_components(self.n_exp)

    @property
    def component_width(self) -> int:
        return self.d if self.encoder_mode == "full" else self.d // self.num_components

    @property
    def width(self) -> int:
        """Width of one modality representation."""
        return self.num_components * self.component_width

    @property
    def ego_width(self) -> int:
        """Width of layer-0 embeddings before any per-component compression."""
        return self.d if self.encoder_mode == "split" else self.num_components * self.d

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def replace(self, **changes) -> "HyperParams":
        return HyperParams(**{**asdict(self), **changes})

    @classmethod
    def field_names(cls) -> tuple:
        return tuple(f.name for f in fields(cls))


@dataclass
class ModelInputs:
    """Frozen, non-trainable inputs: graphs and raw content features."""

    num_users: int
    num_items: int
    adj: object
    features: dict
    item_graph: ItemItemGraph

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items


def build_inputs(train_pairs, num_users, num_items, features: dict, hp: HyperParams) -> ModelInputs:
    """Build the bipartite adjacency and frozen kNN item graphs."""
    dtype = hp.np_dtype
    feats = {}
    for m in CONTENT_MODALITIES:
        if m not in features:
            raise ConfigError(f"missing {m} features")
        f = features[m]
        f = f.values if hasattr(f, "values") else np.asarray(f)
        if f.shape[0] != num_items:
            raise ConfigError(f"{m} features have {f.shape[0]} rows, expected {num_items}")
        feats[m] = np.ascontiguousarray(f, dtype=dtype)
    graphs = {m: build_knn_graph(feats[m], hp.knn_k) for m in CONTENT_MODALITIES}
    return ModelInputs(
        num_users=num_users,
        num_items=num_items,
        adj=build_norm_adj(train_pairs, num_users, num_items, dtype=dtype),
        features=feats,
        item_graph=ItemItemGraph(graphs, k=hp.knn_k),
    )


def param_shapes(hp: HyperParams, num_users: int, num_items: int, feature_dims: dict) -> dict:
    n_nodes = num_users + num_items
    shapes = {}
    for m in MODALITIES:
        shapes[f"user.{m}"] = (num_users, hp.ego_width)
    shapes["item.id"] = (num_items, hp.ego_width)
    for m in CONTENT_MODALITIES:
        shapes[f"proj.{m}"] = (feature_dims[m], hp.ego_width)
    if hp.encoder_mode == "mlp":
        for m in MODALITIES:
            shapes[f"compress.{m}"] = (hp.d, hp.component_width)
    for m in MODALITIES:
        shapes[f"prompt.{m}"] = (n_nodes, hp.width)
    shapes["eps"] = (2,)
    shapes["beta"] = (len(MODALITIES),)
    shapes["alpha"] = (len(CONTENT_MODALITIES),)
    return shapes


def init_params(hp: HyperParams, num_users: int, num_items: int, feature_dims: dict,
                seed: int | None = None, rng=None) -> dict:
    """Xavier-uniform matrices, ``eps = eps_init``, zero attention logits."""
    if rng is None:
        rng = np.random.default_rng(hp.seed if seed is None else seed)
    dtype = hp.np_dtype
    params = {}
    for name, shape in param_shapes(hp, num_users, num_items, feature_dims).items():
        if name == "eps":
            params[name] = np.full(shape, hp.eps_init, dtype=dtype)
        elif name in ("beta", "alpha"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = xavier_uniform(rng, shape, dtype=dtype)
    return params


def compress_components(raw, compress, num_components):
    """Map each ``d``-wide component to ``d / N`` with a shared linear layer."""
    rows = raw.shape[0]
    comps = raw.reshape(rows, num_components, -1)
    return (comps @ compress).reshape(rows, -1)


def encode_item_modality(features, proj, mode: str = "full", num_components: int = 2, compress=None):
    """Project frozen content features into item embeddings.

    ``full`` and ``split`` are a plain linear projection (the layout decides
    how the result is cut into components); ``mlp`` additionally compresses
    each component with ``compress``.
    """
    if mode not in ENCODER_MODES:
        raise ConfigError(f"unknown encoder mode {mode!r}")
    out = np.asarray(features) @ proj
    if out.shape[1] % num_components:
        raise ConfigError(f"projected width {out.shape[1]} not divisible by {num_components} components")
    if mode == "mlp":
        if compress is None:
            raise ConfigError("mlp mode needs a compression matrix")
        out = compress_components(out, compress, num_components)
    return out


def prompt_compensate(layer_outputs, prompt=None, agg: str = "sum"):
    total = layer_outputs[0].copy()
    for h in layer_outputs[1:]:
        total += h
    if agg == "mean":
        total /= len(layer_outputs)
    if prompt is not None:
        total = total + prompt
    return total


def rowwise_cd_mul(x, y, num_components):
    rows = x.shape[0]
    return cdalgebra.cd_mul(
        x.reshape(rows, num_components, -1), y.reshape(rows, num_components, -1)
    ).reshape(rows, -1)


def mi_enhance(bar_id, bar_v, bar_t, eps1, eps2, num_components, no_mi: bool = False):
    """Return ``(hat_id, hat_v, hat_t, prod_v, prod_t)``; products are ``None`` when disabled."""
    if no_mi:
        return bar_id, bar_v, bar_t, None, None
    prod_v = rowwise_cd_mul(bar_id, bar_v, num_components)
    prod_t = rowwise_cd_mul(bar_id, bar_t, num_components)
    return bar_id, bar_v + eps1 * prod_v, bar_t + eps2 * prod_t, prod_v, prod_t


def fuse_and_enhance(hats, beta, item_op, num_users):
    """Concatenate attention-scaled modality blocks, then add one item-graph hop to item rows.

    Returns ``(users, items_enhanced, fused_all)``.
    """
    w = softmax(beta)
    dtype = hats[0].dtype
    fused = np.concatenate([hats[i] * dtype.type(w[i]) for i in range(len(hats))], axis=1)
    items = fused[num_users:]
    enhanced = items + np.asarray(item_op @ items)
    return fused[:num_users], enhanced, fused


def predict_scores(user_vec, item_mat):
    return np.asarray(item_mat) @ np.asarray(user_vec)


@dataclass
class ForwardTrace:
    num_users: int
    raw: dict
    ego: dict
    layers: dict
    bar: dict
    mi: dict
    hat: dict
    beta_w: np.ndarray
    fused: np.ndarray
    item_op: object
    items_enhanced: np.ndarray

    @property
    def users(self) -> np.ndarray:
        return self.fused[: self.num_users]

    @property
    def items(self) -> np.ndarray:
        return self.items_enhanced


def ego_embeddings(params: dict, inputs: ModelInputs, hp: HyperParams):
    """Layer-0 embeddings per modality; returns ``(raw, ego)`` (equal unless mlp mode)."""
    raw, ego = {}, {}
    for m in MODALITIES:
        if m == "id":
            items = params["item.id"]
        else:
            items = inputs.features[m] @ params[f"proj.{m}"]
        raw[m] = np.concatenate([params[f"user.{m}"], items], axis=0)
        if hp.encoder_mode == "mlp":
            ego[m] = compress_components(raw[m], params[f"compress.{m}"], hp.num_components)
        else:
            ego[m] = raw[m]
    return raw, ego


def forward(params: dict, inputs: ModelInputs, hp: HyperParams) -> ForwardTrace:
    raw, ego = ego_embeddings(params, inputs, hp)
    layers, bar = {}, {}
    for m in MODALITIES:
        layers[m] = propagate(inputs.adj, ego[m], hp.n_layers)
        prompt = None if hp.no_prompt else params[f"prompt.{m}"]
        bar[m] = prompt_compensate(layers[m], prompt, hp.layer_agg)
    eps = params["eps"]
    hat_id, hat_v, hat_t, prod_v, prod_t = mi_enhance(
        bar["id"], bar["visual"], bar["textual"], eps[0], eps[1], hp.num_components, hp.no_mi
    )
    hat = {"id": hat_id, "visual": hat_v, "textual": hat_t}
    item_op = inputs.item_graph.operator(params["alpha"], hp.item_graph_norm, dtype=hp.np_dtype)
    _, enhanced, fused = fuse_and_enhance([hat[m] for m in MODALITIES], params["beta"], item_op, inputs.num_users)
    return ForwardTrace(
        num_users=inputs.num_users,
        raw=raw,
        ego=ego,
        layers=layers,
        bar=bar,
        mi={"visual": prod_v, "textual": prod_t},
        hat=hat,
        beta_w=softmax(params["beta"]),
        fused=fused,
        item_op=item_op,
        items_enhanced=enhanced,
    )


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_MAGIC = b"HPMC"
CHECKPOINT_VERSION = 1


def _entries(params: dict, adam=None):
    yield from params.items()
    if adam is not None:
        for name in params:
            yield f"adam.m/{name}", adam.m[name]
        for name in params:
            yield f"adam.v/{name}", adam.v[name]
        yield "adam.t", np.array([adam.t])


def save_checkpoint(path, params: dict, adam=None) -> None:
    """Write ``HPMC`` v1: count, then (name_len u32, name, numel u64, float32[numel]) per tensor."""
    entries = list(_entries(params, adam))
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(entries)))
        for name, value in entries:
            key = name.encode("utf-8")
            arr = np.ascontiguousarray(value, dtype="<f4").ravel()
            fh.write(struct.pack("<I", len(key)))
            fh.write(key)
            fh.write(struct.pack("<Q", arr.size))
            fh.write(arr.tobytes())


def read_checkpoint(path) -> dict:
    blob = Path(path).read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    version, count = struct.unpack_from("<IQ", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pos = 16
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (numel,) = struct.unpack_from("<Q", blob, pos)
            pos += 8
            if pos + 4 * numel > len(blob):
                raise FormatError(f"{path}: truncated tensor {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f4", count=numel, offset=pos).copy()
            pos += 4 * numel
    except struct.error:
        raise FormatError(f"{path}: truncated checkpoint") from None
    if pos != len(blob):
        raise FormatError(f"{path}: trailing bytes")
    return out


def load_checkpoint(path, template: dict, dtype=None):
    """Restore parameters (and Adam state if stored) shaped like ``template``.

    Parameter names must match ``template`` exactly.
    """
    from .optim import AdamState

    raw = read_checkpoint(path)
    names = {k for k in raw if not k.startswith("adam.")}
    if names != set(template):
        missing = sorted(set(template) - names)
        extra = sorted(names - set(template))
        raise FormatError(f"{path}: parameter names differ (missing {missing}, unexpected {extra})")

    def shaped(name, like):
        arr = raw[name]
        if arr.size != like.size:
            raise FormatError(f"{path}: {name!r} has {arr.size} values, expected {like.size}")
        return arr.reshape(like.shape).astype(dtype or like.dtype)

    params = {k: shaped(k, v) for k, v in template.items()}
    adam = None
    if "adam.t" in raw:
        adam = AdamState(
            m={k: shaped(f"adam.m/{k}", v) for k, v in template.items()},
            v={k: shaped(f"adam.v/{k}", v) for k, v in template.items()},
            t=int(raw["adam.t"][0]),
        )
    return params, adam
