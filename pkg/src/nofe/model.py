"""Graph Kernel Operator: lift, kernel message passing, projection.

All dense products are accumulated column by column with plain elementwise
numpy operations, and neighbour sums are taken over per-component sorted
messages.  Every node's output is therefore a function of the values in its
receptive field only, bit for bit, regardless of node labelling or of where
the node sits in the arrays.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import NumericError, ValidationError
from .graph import DomainGraph, DualGraph

AFFINITY_MODES = ("row", "row_excl_target")
KERNEL_OUT_SCALE = 1e-2


@dataclass(frozen=True)
class ModelConfig:
    d_f: int
    d_x: int
    d_h: int = 64
    kw: int = 16
    kd: int = 2
    k: int = 5
    k_cross: int = 5
    T: int = 3
    d_g: int = 3
    affinity_norm: str = "row"
    seed: int = 0

    def __post_init__(self):
        for name in ("d_f", "d_x", "d_h", "kw", "kd", "k", "k_cross", "T", "d_g"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.d_g >= self.d_f:
            raise ValidationError(f"d_g={self.d_g} must be smaller than d_f={self.d_f}")
        if self.affinity_norm not in AFFINITY_MODES:
            raise ValidationError(f"affinity_norm must be one of {AFFINITY_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)


def _mlp_layout(prefix: str, cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    widths = [2 * cfg.d_x] + [cfg.kw] * cfg.kd + [cfg.d_h * cfg.d_h]
    out = []
    for layer, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        out.append((f"{prefix}kernel.{layer}.weight", (fan_out, fan_in)))
        out.append((f"{prefix}kernel.{layer}.bias", (fan_out,)))
    return out


def _branch_layout(prefix: str, cfg: ModelConfig):
    return [
        (f"{prefix}L.weight", (cfg.d_h, cfg.d_f)),
        (f"{prefix}L.bias", (cfg.d_h,)),
        (f"{prefix}W_self", (cfg.d_h, cfg.d_h)),
    ] + _mlp_layout(prefix, cfg)


def param_layout(cfg: ModelConfig, dual: bool = False) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) list; this order is also the checkpoint order."""
    head = [("P.weight", (cfg.d_g, cfg.d_h)), ("P.bias", (cfg.d_g,))]
    if not dual:
        return _branch_layout("", cfg) + head
    return _branch_layout("source.", cfg) + _branch_layout("target.", cfg) + _mlp_layout("cross.", cfg) + head


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, np.ndarray]
    dual: bool = False

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self) -> list[str]:
        return [name for name, _ in param_layout(self.config, self.dual)]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()}, self.dual)

    def kernel_layers(self, prefix: str = "") -> list[tuple[np.ndarray, np.ndarray]]:
        return [
            (self.tensors[f"{prefix}kernel.{i}.weight"], self.tensors[f"{prefix}kernel.{i}.bias"])
            for i in range(self.config.kd + 1)
        ]


def _uniform_layer(rng, shape, scale=1.0):
    s = np.sqrt(6.0 / shape[1])
    return rng.uniform(-s, s, size=shape) * scale


def _init_into(tensors, layout, rng, kd):
    for name, shape in layout:
        if name.endswith("bias"):
            tensors[name] = np.zeros(shape)
        else:
            scale = KERNEL_OUT_SCALE if name.endswith(f"kernel.{kd}.weight") else 1.0
            tensors[name] = _uniform_layer(rng, shape, scale)


def init_params(config: ModelConfig, seed: int | None = None) -> ModelParams:
    """He-uniform weights, zero biases; the kernel output layer is scaled by 1e-2."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    tensors: dict[str, np.ndarray] = {}
    _init_into(tensors, param_layout(config), rng, config.kd)
    return ModelParams(config, tensors)


def dual_from_point(params: ModelParams, seed: int | None = None) -> ModelParams:
    """Seed a super-resolution model from a point-to-point model.

    Source and target branches both start as copies of the point model; the
    cross kernel is freshly initialised.
    """
    if params.dual:
        return params.copy()
    cfg = params.config
    tensors: dict[str, np.ndarray] = {}
    for prefix in ("source.", "target."):
        for name, _ in _branch_layout("", cfg):
            tensors[prefix + name] = params[name].copy()
    rng = np.random.default_rng((cfg.seed if seed is None else seed, 1))
    _init_into(tensors, _mlp_layout("cross.", cfg), rng, cfg.kd)
    tensors["P.weight"] = params["P.weight"].copy()
    tensors["P.bias"] = params["P.bias"].copy()
    return ModelParams(cfg, tensors, dual=True)


def affine(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """``x @ weight.T + bias`` accumulated one input column at a time."""
    if bias is None:
        out = np.zeros((x.shape[0], weight.shape[0]))
    else:
        out = np.repeat(bias[None, :], x.shape[0], axis=0)
    for m in range(weight.shape[1]):
        out += x[:, m : m + 1] * weight[:, m]
    return out


def ordered_sum(terms: np.ndarray) -> np.ndarray:
    """Sum over axis 1 after sorting each component, so the result depends only on the multiset."""
    s = np.sort(terms, axis=1)
    acc = s[:, 0].copy()
    for m in range(1, s.shape[1]):
        acc += s[:, m]
    return acc


def kernel_mlp(layers, attrs: np.ndarray, keep: list | None = None) -> np.ndarray:
    a = attrs
    for layer, (w, b) in enumerate(layers):
        pre = affine(a, w, b)
        if keep is not None:
            keep.append((a, pre))
        a = np.maximum(pre, 0.0) if layer < len(layers) - 1 else pre
    return a


def kernel_matrices(params: ModelParams, attrs: np.ndarray, prefix: str = "", keep=None) -> np.ndarray:
    attrs = np.atleast_2d(np.asarray(attrs, dtype=np.float64))
    d_h = params.config.d_h
    if attrs.shape[1] != 2 * params.config.d_x:
        raise ValidationError(f"edge attributes must have length {2 * params.config.d_x}, got {attrs.shape[1]}")
    flat = kernel_mlp(params.kernel_layers(prefix), attrs, keep)
    return flat.reshape(attrs.shape[0], d_h, d_h)


def kernel_matrix(params: ModelParams, edge_attr, prefix: str = "") -> np.ndarray:
    """Kernel matrix ``K(i, j)`` for a single edge attribute vector (row-major reshape)."""
    edge_attr = np.asarray(edge_attr, dtype=np.float64)
    if edge_attr.ndim != 1:
        raise ValidationError("edge_attr must be a vector")
    return kernel_matrices(params, edge_attr[None, :], prefix)[0]


def messages(K: np.ndarray, h_send: np.ndarray) -> np.ndarray:
    """Per-edge ``K_e @ h_e``."""
    out = K[:, :, 0] * h_send[:, 0:1]
    for b in range(1, K.shape[2]):
        out += K[:, :, b] * h_send[:, b : b + 1]
    return out


def _check_finite(h: np.ndarray, step: int, what: str = "hidden state"):
    if not np.isfinite(h).all():
        node = int(np.flatnonzero(~np.isfinite(h).all(axis=1))[0])
        raise NumericError(f"non-finite {what} at node {node}, step {step}")


def _check_inputs(params: ModelParams, graph: DomainGraph, values: np.ndarray):
    cfg = params.config
    if values.shape != (graph.n_nodes, cfg.d_f):
        raise ValidationError(f"values shape {values.shape} does not match ({graph.n_nodes}, {cfg.d_f})")
    if graph.edge_attrs.shape[1] != 2 * cfg.d_x:
        raise ValidationError("graph domain dimension does not match the model")


@dataclass
class BranchTrace:
    """Intermediate values of one message-passing branch, kept for backprop."""

    mlp: list = field(default_factory=list)
    K: np.ndarray | None = None
    h: list = field(default_factory=list)
    pre: list = field(default_factory=list)


def _step(params, prefix, graph, K, h):
    msg = messages(K, h[graph.edges[:, 1]])
    return affine(h, params[f"{prefix}W_self"]) + ordered_sum(msg.reshape(graph.n_nodes, graph.k, -1))


def forward(params: ModelParams, graph: DomainGraph, values, trace: BranchTrace | None = None) -> np.ndarray:
    """Point-to-point embedding ``z`` of shape ``(N, d_g)``."""
    if params.dual:
        raise ValidationError("forward expects a point-to-point model; use forward_dual")
    values = np.asarray(values, dtype=np.float64)
    _check_inputs(params, graph, values)
    keep = trace.mlp if trace is not None else None
    K = kernel_matrices(params, graph.edge_attrs, keep=keep)
    h = affine(values, params["L.weight"], params["L.bias"])
    _check_finite(h, 0)
    if trace is not None:
        trace.K = K
        trace.h.append(h)
    for t in range(params.config.T):
        pre = _step(params, "", graph, K, h)
        h = np.maximum(pre, 0.0)
        _check_finite(h, t + 1)
        if trace is not None:
            trace.pre.append(pre)
            trace.h.append(h)
    return affine(h, params["P.weight"], params["P.bias"])


@dataclass
class DualTrace:
    source: BranchTrace = field(default_factory=BranchTrace)
    target: BranchTrace = field(default_factory=BranchTrace)
    cross_mlp: list = field(default_factory=list)
    K_cross: np.ndarray | None = None
    target_inner: list = field(default_factory=list)  # ReLU output before cross messages
    target_pre_cross: list = field(default_factory=list)


def forward_dual(params: ModelParams, dual: DualGraph, trace: DualTrace | None = None) -> np.ndarray:
    """Embeddings at the query nodes, shape ``(N_q, d_g)``.

    Information flows source -> target only; source states never read
    target states.
    """
    if not params.dual:
        raise ValidationError("forward_dual expects a dual model; see dual_from_point")
    cfg = params.config
    src, tgt = dual.source, dual.target
    _check_inputs(params, src, dual.source_values)
    if dual.init_features.shape != (tgt.n_nodes, cfg.d_f):
        raise ValidationError("query features do not match the model input dimension")

    tr = trace
    Ks = kernel_matrices(params, src.edge_attrs, "source.", keep=tr.source.mlp if tr else None)
    Kt = kernel_matrices(params, tgt.edge_attrs, "target.", keep=tr.target.mlp if tr else None)
    Kc = kernel_matrices(params, dual.cross_attrs, "cross.", keep=tr.cross_mlp if tr else None)
    hs = affine(dual.source_values, params["source.L.weight"], params["source.L.bias"])
    ht = affine(dual.init_features, params["target.L.weight"], params["target.L.bias"])
    _check_finite(hs, 0, "source state")
    _check_finite(ht, 0, "query state")
    if tr is not None:
        tr.source.K, tr.target.K, tr.K_cross = Ks, Kt, Kc
        tr.source.h.append(hs)
        tr.target.h.append(ht)
    for t in range(cfg.T):
        pre_s = _step(params, "source.", src, Ks, hs)
        pre_t = _step(params, "target.", tgt, Kt, ht)
        hs = np.maximum(pre_s, 0.0)
        inner = np.maximum(pre_t, 0.0)
        cross = ordered_sum(messages(Kc, hs[dual.cross_edges[:, 1]]).reshape(tgt.n_nodes, dual.k_cross, -1))
        pre_c = inner + cross
        ht = np.maximum(pre_c, 0.0)
        _check_finite(hs, t + 1, "source state")
        _check_finite(ht, t + 1, "query state")
        if tr is not None:
            tr.source.pre.append(pre_s)
            tr.source.h.append(hs)
            tr.target.pre.append(pre_t)
            tr.target_inner.append(inner)
            tr.target_pre_cross.append(pre_c)
            tr.target.h.append(ht)
    return affine(ht, params["P.weight"], params["P.bias"])
