"""Student-t affinities, KL objective, exact gradients and AdamW training."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import NumericError, ValidationError
from .graph import DomainGraph, DualGraph, FunctionSample, build_dual_graph, build_knn_graph
from .model import (
    AFFINITY_MODES,
    BranchTrace,
    DualTrace,
    ModelConfig,
    ModelParams,
    dual_from_point,
    forward,
    forward_dual,
    init_params,
)

log = logging.getLogger(__name__)

Q_FLOOR = 1e-12


@dataclass
class AffinityTable:
    values: np.ndarray  # one entry per graph edge, in edge order
    edges: np.ndarray
    norm_mode: str = "row"


@dataclass
class TrainConfig:
    epochs: int = 25
    lr0: float = 1e-5
    lr_decay: float = 0.5
    lr_step: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if not self.lr0 > 0:
            raise ValidationError("lr0 must be positive")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch index."""
        return self.lr0 * self.lr_decay ** (epoch // self.lr_step)


@dataclass
class TrainState:
    params: ModelParams
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    epoch: int = 0
    lr: float = 0.0
    history: list = field(default_factory=list)

    @classmethod
    def fresh(cls, params: ModelParams, lr: float = 0.0) -> "TrainState":
        zeros = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        return cls(params, zeros, {k: z.copy() for k, z in zeros.items()}, lr=lr)


class EpochRecord(NamedTuple):
    epoch: int
    mean_loss: float
    lr: float


def _student_t(values: np.ndarray, edges: np.ndarray):
    diff = values[edges[:, 0]] - values[edges[:, 1]]
    return diff, 1.0 / (1.0 + np.einsum("ij,ij->i", diff, diff))


def _normalise(kappa: np.ndarray, n: int, k: int, mode: str):
    kap = kappa.reshape(n, k)
    total = kap.sum(axis=1, keepdims=True)
    denom = total if mode == "row" else total - kap
    return (kap / denom).ravel(), total, denom


def affinities(values, graph: DomainGraph, mode: str = "row") -> AffinityTable:
    """Per-edge student-t affinities, normalised over each receiving node's edges.

    ``row`` divides by the full row sum; ``row_excl_target`` leaves the
    target edge out of the denominator, so entries may exceed 1.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] != graph.n_nodes:
        raise ValidationError(f"{values.shape[0]} value rows for a graph of {graph.n_nodes} nodes")
    if mode not in AFFINITY_MODES:
        raise ValidationError(f"unknown affinity mode {mode!r}")
    if mode == "row_excl_target" and graph.k < 2:
        raise ValidationError("row_excl_target needs at least two neighbours per node")
    _, kappa = _student_t(values, graph.edges)
    a, _, _ = _normalise(kappa, graph.n_nodes, graph.k, mode)
    return AffinityTable(a, graph.edges, mode)


def kl_divergence(p: AffinityTable, q: AffinityTable) -> float:
    if p.values.shape != q.values.shape or not np.array_equal(p.edges, q.edges):
        raise ValidationError("affinity tables are not aligned on the same edge list")
    return float(np.sum(p.values * (np.log(p.values) - np.log(np.maximum(q.values, Q_FLOOR)))))


def _kl_backward(p: np.ndarray, z: np.ndarray, graph: DomainGraph, mode: str):
    """KL(p || q(z)) and its gradient with respect to ``z``."""
    diff, kappa = _student_t(z, graph.edges)
    q, total, denom = _normalise(kappa, graph.n_nodes, graph.k, mode)
    terms = p * (np.log(p) - np.log(np.maximum(q, Q_FLOOR)))
    loss = float(np.sum(terms))
    if not np.isfinite(loss):
        e = int(np.flatnonzero(~np.isfinite(terms))[0])
        i, j = graph.edges[e]
        raise NumericError(f"non-finite loss term on edge {e} ({i}, {j})")

    dq = np.where(q > Q_FLOOR, -p / np.maximum(q, Q_FLOOR), 0.0).reshape(graph.n_nodes, graph.k)
    kap = kappa.reshape(graph.n_nodes, graph.k)
    if mode == "row":
        dkap = dq / total - np.sum(dq * kap, axis=1, keepdims=True) / total**2
    else:
        c = dq * kap / denom**2
        dkap = dq / denom - (np.sum(c, axis=1, keepdims=True) - c)
    dr = -dkap.ravel() * kappa**2
    ddiff = 2.0 * dr[:, None] * diff
    dz = np.zeros_like(z)
    np.add.at(dz, graph.edges[:, 0], ddiff)
    np.add.at(dz, graph.edges[:, 1], -ddiff)
    return loss, dz


def _mlp_backward(layers, keep, dout, grads, prefix):
    for layer in range(len(layers) - 1, -1, -1):
        a, pre = keep[layer]
        if layer < len(layers) - 1:
            dout = dout * (pre > 0)
        grads[f"{prefix}kernel.{layer}.weight"] += dout.T @ a
        grads[f"{prefix}kernel.{layer}.bias"] += dout.sum(axis=0)
        dout = dout @ layers[layer][0]


def _message_backward(K, h_send, dpre_recv, dK, dh, senders):
    """Adjoint of ``msg_e = K_e @ h_send_e`` accumulated into ``dK`` and ``dh``."""
    dK += dpre_recv[:, :, None] * h_send[:, None, :]
    np.add.at(dh, senders, np.einsum("eab,ea->eb", K, dpre_recv))


def _branch_backward(params, prefix, graph, tr: BranchTrace, dh_top, grads, extra_dh=None):
    """Backprop through T message-passing steps; returns (dK, dh0).

    ``extra_dh[t]`` is added to the gradient of ``h^(t)`` before it is used
    (the cross messages feed on source states this way).
    """
    W = params[f"{prefix}W_self"]
    dK = np.zeros_like(tr.K)
    dh = dh_top
    recv, send = graph.edges[:, 0], graph.edges[:, 1]
    for t in range(len(tr.pre) - 1, -1, -1):
        if extra_dh is not None:
            dh = dh + extra_dh[t + 1]
        dpre = dh * (tr.pre[t] > 0)
        h_prev = tr.h[t]
        grads[f"{prefix}W_self"] += dpre.T @ h_prev
        dh = dpre @ W
        _message_backward(tr.K, h_prev[send], dpre[recv], dK, dh, send)
    if extra_dh is not None:
        dh = dh + extra_dh[0]
    return dK, dh


def _finish_branch(params, prefix, tr, dK, dh0, inputs, grads):
    grads[f"{prefix}L.weight"] += dh0.T @ inputs
    grads[f"{prefix}L.bias"] += dh0.sum(axis=0)
    _mlp_backward(params.kernel_layers(prefix), tr.mlp, dK.reshape(dK.shape[0], -1), grads, prefix)


def _zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


def loss_and_gradients(params: ModelParams, graph: DomainGraph, values, p: AffinityTable | None = None):
    """KL loss of the point-to-point model and exact gradients for every tensor.

    ReLU has derivative 0 at exactly 0.
    """
    values = np.asarray(values, dtype=np.float64)
    mode = params.config.affinity_norm
    if p is None:
        p = affinities(values, graph, mode)
    tr = BranchTrace()
    z = forward(params, graph, values, trace=tr)
    loss, dz = _kl_backward(p.values, z, graph, mode)

    grads = _zero_grads(params)
    h_top = tr.h[-1]
    grads["P.weight"] += dz.T @ h_top
    grads["P.bias"] += dz.sum(axis=0)
    dK, dh0 = _branch_backward(params, "", graph, tr, dz @ params["P.weight"], grads)
    _finish_branch(params, "", tr, dK, dh0, values, grads)
    return loss, grads


def loss_and_gradients_dual(params: ModelParams, dual: DualGraph, query_values, p: AffinityTable | None = None):
    """KL loss on the query graph for the super-resolution model.

    ``query_values`` are the true field values at the query nodes; they only
    enter the target affinities, never the forward pass.
    """
    mode = params.config.affinity_norm
    if p is None:
        p = affinities(query_values, dual.target, mode)
    tr = DualTrace()
    z = forward_dual(params, dual, trace=tr)
    loss, dz = _kl_backward(p.values, z, dual.target, mode)

    grads = _zero_grads(params)
    T = params.config.T
    grads["P.weight"] += dz.T @ tr.target.h[-1]
    grads["P.bias"] += dz.sum(axis=0)

    tgt, src = dual.target, dual.source
    Wt = params["target.W_self"]
    dKt = np.zeros_like(tr.target.K)
    dKc = np.zeros_like(tr.K_cross)
    dhs_extra = [np.zeros_like(h) for h in tr.source.h]
    q_idx, s_idx = dual.cross_edges[:, 0], dual.cross_edges[:, 1]
    recv, send = tgt.edges[:, 0], tgt.edges[:, 1]
    dh = dz @ params["P.weight"]
    for t in range(T - 1, -1, -1):
        dpre_c = dh * (tr.target_pre_cross[t] > 0)
        _message_backward(tr.K_cross, tr.source.h[t + 1][s_idx], dpre_c[q_idx], dKc, dhs_extra[t + 1], s_idx)
        dpre_t = dpre_c * (tr.target.pre[t] > 0)
        h_prev = tr.target.h[t]
        grads["target.W_self"] += dpre_t.T @ h_prev
        dh = dpre_t @ Wt
        _message_backward(tr.target.K, h_prev[send], dpre_t[recv], dKt, dh, send)
    _finish_branch(params, "target.", tr.target, dKt, dh, dual.init_features, grads)
    _mlp_backward(params.kernel_layers("cross."), tr.cross_mlp, dKc.reshape(dKc.shape[0], -1), grads, "cross.")

    dKs, dhs0 = _branch_backward(
        params, "source.", src, tr.source, np.zeros_like(tr.source.h[-1]), grads, extra_dh=dhs_extra
    )
    _finish_branch(params, "source.", tr.source, dKs, dhs0, dual.source_values, grads)
    return loss, grads


def adamw_step(state: TrainState, grads: dict[str, np.ndarray], config: TrainConfig, lr: float | None = None) -> TrainState:
    """Adam with bias correction and decoupled weight decay; updates ``state`` in place."""
    lr = state.lr if lr is None else lr
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, theta in state.params.tensors.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        theta *= 1.0 - lr * config.weight_decay
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return state


def _check_dataset(dataset, cfg: ModelConfig):
    if not dataset:
        raise ValidationError("training needs at least one sample")
    for s in dataset:
        if s.d_f != cfg.d_f or s.d_x != cfg.d_x:
            raise ValidationError(
                f"sample {s.sample_id!r} has d_x={s.d_x}, d_f={s.d_f}; model expects {cfg.d_x}, {cfg.d_f}"
            )


def _run_epochs(state, items, step_fn, train_cfg, rng, label):
    for epoch in range(train_cfg.epochs):
        state.epoch = epoch
        state.lr = train_cfg.lr_at(epoch)
        losses = []
        for idx in rng.permutation(len(items)):
            try:
                loss, grads = step_fn(state.params, items[idx])
            except NumericError as exc:
                raise NumericError(f"{label}: epoch {epoch + 1}, sample {idx}: {exc}") from exc
            adamw_step(state, grads, train_cfg)
            losses.append(loss)
        record = EpochRecord(epoch + 1, float(np.mean(losses)), state.lr)
        state.history.append(record)
        log.info("epoch %d  loss %.6f  lr %.3g", *record)
    return state


def train(
    dataset: list[FunctionSample],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    seed: int,
    init: ModelParams | None = None,
) -> tuple[ModelParams, list[EpochRecord]]:
    """Point-to-point training, one AdamW step per sample graph."""
    _check_dataset(dataset, model_cfg)
    params = init.copy() if init is not None else init_params(model_cfg, seed)
    items = []
    for s in dataset:
        g = build_knn_graph(s, model_cfg.k)
        items.append((g, s.values, affinities(s.values, g, model_cfg.affinity_norm)))
    state = TrainState.fresh(params)
    rng = np.random.default_rng((seed, 2))
    _run_epochs(state, items, lambda prm, it: loss_and_gradients(prm, *it), train_cfg, rng, "train")
    return state.params, state.history


def split_for_superres(sample: FunctionSample, n_input: int, n_query: int, rng) -> tuple[FunctionSample, FunctionSample]:
    """Disjoint random input/query subsets of one sample."""
    if n_input + n_query > sample.n_points:
        raise ValidationError(
            f"sample {sample.sample_id!r} has {sample.n_points} points, need {n_input} + {n_query}"
        )
    perm = rng.permutation(sample.n_points)
    src = np.sort(perm[:n_input])
    qry = np.sort(perm[n_input : n_input + n_query])
    return sample.subset(src), sample.subset(qry)


def train_superres(
    dataset: list[FunctionSample],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    seed: int,
    n_input: int,
    n_query: int,
    init: ModelParams | None = None,
) -> tuple[ModelParams, list[EpochRecord]]:
    """Train the dual-graph model with query points drawn from each sample.

    The query values are held out of the forward pass and only define the
    target affinities.
    """
    _check_dataset(dataset, model_cfg)
    base = init if init is not None else init_params(model_cfg, seed)
    params = dual_from_point(base, seed)
    rng = np.random.default_rng((seed, 3))
    items = []
    for s in dataset:
        src, qry = split_for_superres(s, n_input, n_query, rng)
        dual = build_dual_graph(src, qry.coords, model_cfg.k, model_cfg.k_cross)
        items.append((dual, qry.values, affinities(qry.values, dual.target, model_cfg.affinity_norm)))
    state = TrainState.fresh(params)
    _run_epochs(state, items, lambda prm, it: loss_and_gradients_dual(prm, *it), train_cfg, rng, "train-superres")
    return state.params, state.history


def write_loss_history(path, history: list[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "lr"])
        for rec in history:
            writer.writerow([rec.epoch, repr(rec.mean_loss), repr(rec.lr)])
