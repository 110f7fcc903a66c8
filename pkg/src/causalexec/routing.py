"""Dual-channel routing: a symbolic compatibility channel over a
knowledge graph, a hierarchical-attention channel over clustered
primitive embeddings, and conservation-regularized fusion of the two
into a causal influence matrix W in [0,1]^{n x n}.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ag
from . import numerics as nx
from .primitives import LAYER_INDEX, PrimitiveBase
from .typesys import format_type, signature_similarity

KG_LABELS = ("compatible", "incompatible", "subsumes", "entails")
POSITIVE_LABELS = ("compatible", "subsumes", "entails")

EMBED_LAYER_DIM = 4
EMBED_HASH_BUCKETS = 8
EMBED_DIM = EMBED_LAYER_DIM + 2 * EMBED_HASH_BUCKETS


class RoutingError(ValueError):
    pass


# ---------------------------------------------------------------------
# knowledge graph
# ---------------------------------------------------------------------

@dataclass
class KnowledgeGraph:
    """Labeled weighted edges over primitive ids and type names."""

    entities: set = field(default_factory=set)
    edges: dict = field(default_factory=dict)  # (src, dst) -> (label, weight)

    def add_edge(self, src: str, dst: str, label: str, weight: float) -> None:
        if src == dst:
            raise RoutingError("knowledge graph forbids self-loops")
        if label not in KG_LABELS:
            raise RoutingError(f"unknown edge label {label!r}")
        if not 0.0 <= weight <= 1.0:
            raise RoutingError(f"edge weight {weight} outside [0,1]")
        self.entities.add(src)
        self.entities.add(dst)
        self.edges[(src, dst)] = (label, float(weight))

    def incompatible(self, src: str, dst: str) -> bool:
        e = self.edges.get((src, dst))
        return e is not None and e[0] == "incompatible"

    def positive_weight(self, src: str, dst: str) -> float:
        e = self.edges.get((src, dst))
        if e is None or e[0] not in POSITIVE_LABELS:
            return 0.0
        return e[1]

    def save_text(self, path: str) -> None:
        with open(path, "w") as fh:
            for (src, dst), (label, weight) in sorted(self.edges.items()):
                fh.write(f"edge {src} {dst} {label} {weight!r}\n")

    @staticmethod
    def load_text(path: str) -> "KnowledgeGraph":
        kg = KnowledgeGraph()
        with open(path) as fh:
            for ln, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 5 or parts[0] != "edge":
                    raise RoutingError(f"line {ln}: expected 'edge src dst label w'")
                kg.add_edge(parts[1], parts[2], parts[3], float(parts[4]))
        return kg


def kg_consistency(kg: KnowledgeGraph, src: str, dst: str) -> float:
    """Truncated 2-hop aggregation of positive edge weights in [0,1]."""
    direct = kg.positive_weight(src, dst)
    two_hop = 0.0
    for mid in kg.entities:
        if mid in (src, dst):
            continue
        w1 = kg.positive_weight(src, mid)
        if w1 == 0.0:
            continue
        w2 = kg.positive_weight(mid, dst)
        if w2 > 0.0:
            two_hop = max(two_hop, w1 * w2)
    return float(np.clip(max(direct, 0.5 * two_hop), 0.0, 1.0))


# ---------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------

def _hash_bucket(text: str) -> int:
    return zlib.crc32(text.encode()) % EMBED_HASH_BUCKETS


def embed_primitives(prims: Sequence[PrimitiveBase]) -> np.ndarray:
    """Layer one-hot plus hashed input/output signature features."""
    out = np.zeros((len(prims), EMBED_DIM))
    for i, p in enumerate(prims):
        out[i, LAYER_INDEX[p.layer]] = 1.0
        for _, t in p.in_sig.slots:
            out[i, EMBED_LAYER_DIM + _hash_bucket(format_type(t))] += 1.0
        for _, t in p.out_sig.slots:
            out[i, EMBED_LAYER_DIM + EMBED_HASH_BUCKETS + _hash_bucket(format_type(t))] += 1.0
        span = out[i, EMBED_LAYER_DIM:]
        total = span.sum()
        if total > 0:
            out[i, EMBED_LAYER_DIM:] = span / total
    return out


# ---------------------------------------------------------------------
# trainable routing parameters
# ---------------------------------------------------------------------

@dataclass
class RoutingParams:
    """Flat trainable vector: symbolic affine head, entailment bilinear
    form, per-head attention projections, and the channel gate."""

    context_dim: int
    n_heads: int = 4
    head_dim: int = 5
    theta: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.theta is None:
            self.theta = np.zeros(self.n_params)

    @property
    def n_params(self) -> int:
        sym = 3 + 1
        ent = self.context_dim * (2 * EMBED_DIM)
        attn = 2 * self.n_heads * EMBED_DIM * self.head_dim
        gate = 1
        return sym + ent + attn + gate

    def _off(self):
        sym = 3 + 1
        ent = self.context_dim * (2 * EMBED_DIM)
        attn = 2 * self.n_heads * EMBED_DIM * self.head_dim
        return sym, sym + ent, sym + ent + attn

    def sym_slice(self, theta):
        return theta[: self._off()[0]]

    def ent_matrix(self, theta):
        a, b, _ = self._off()
        return ag.reshape(theta[a:b], (self.context_dim, 2 * EMBED_DIM))

    def head_projections(self, theta):
        _, b, c = self._off()
        block = theta[b:c]
        per = EMBED_DIM * self.head_dim
        heads = []
        for h in range(self.n_heads):
            wq = ag.reshape(block[2 * h * per:(2 * h + 1) * per], (EMBED_DIM, self.head_dim))
            wk = ag.reshape(block[(2 * h + 1) * per:(2 * h + 2) * per], (EMBED_DIM, self.head_dim))
            heads.append((wq, wk))
        return heads

    def beta(self, theta):
        return ag.sigmoid(theta[self.n_params - 1])

    @staticmethod
    def initialized(context_dim: int, rng: np.random.Generator,
                    n_heads: int = 4, head_dim: int = 5) -> "RoutingParams":
        p = RoutingParams(context_dim, n_heads, head_dim)
        theta = rng.uniform(-0.1, 0.1, size=p.n_params)
        # symbolic head starts by trusting the type-similarity feature
        theta[0] = 1.0
        theta[p.n_params - 1] = 0.0  # gate starts at 1/2
        p.theta = theta
        return p


# ---------------------------------------------------------------------
# symbolic channel
# ---------------------------------------------------------------------

def pairwise_features(
    prims: Sequence[PrimitiveBase], kg: KnowledgeGraph
) -> tuple[np.ndarray, np.ndarray]:
    """(n, n, 2) array of [signature similarity, kg consistency] plus the
    boolean keep-mask (False where the kg marks the pair incompatible)."""
    n = len(prims)
    feats = np.zeros((n, n, 2))
    keep = np.ones((n, n), dtype=bool)
    for i, pi in enumerate(prims):
        for j, pj in enumerate(prims):
            feats[i, j, 0] = signature_similarity(pi.out_sig, pj.in_sig)
            feats[i, j, 1] = kg_consistency(kg, pi.id, pj.id)
            if kg.incompatible(pi.id, pj.id):
                keep[i, j] = False
    return feats, keep


def symbolic_weights(
    prims: Sequence[PrimitiveBase],
    kg: KnowledgeGraph,
    context: np.ndarray,
    params: RoutingParams,
    theta=None,
):
    """Row-stochastic logical compatibility matrix.

    Pre-softmax scores are an affine map of [type subsumption, kg
    consistency, contextual entailment]; incompatible pairs are hard
    masked and come out exactly zero.
    """
    theta = params.theta if theta is None else theta
    n = len(prims)
    feats, keep = pairwise_features(prims, kg)
    emb = embed_primitives(prims)
    m = params.ent_matrix(theta)
    ctx_row = ag.matmul(context, m)  # (2*EMBED_DIM,)
    pair = np.concatenate(
        [
            np.repeat(emb, n, axis=0),
            np.tile(emb, (n, 1)),
        ],
        axis=1,
    )  # (n*n, 2*EMBED_DIM)
    entail = ag.tanh(ag.matmul(pair, ctx_row))  # (n*n,)
    w = params.sym_slice(theta)
    scores = (
        w[0] * feats[:, :, 0].ravel()
        + w[1] * feats[:, :, 1].ravel()
        + w[2] * entail
        + w[3]
    )
    scores = ag.reshape(scores, (n, n))
    return ag.masked_softmax(scores, keep, axis=-1), keep


# ---------------------------------------------------------------------
# sub-symbolic channel
# ---------------------------------------------------------------------

def balanced_kmeans(
    points: np.ndarray, k: int, iters: int = 20
) -> np.ndarray:
    """Deterministic capacity-bounded k-means.

    Farthest-point initialization (ties to the lowest index), then
    ``iters`` rounds of capped nearest-center assignment in index order
    with center re-estimation.  No cluster exceeds ceil(n / k) members,
    which is what makes the attention cost bound exact.
    """
    n = points.shape[0]
    if not 1 <= k <= n:
        raise RoutingError(f"need 1 <= k <= {n}, got {k}")
    cap = int(np.ceil(n / k))
    centers_idx = [int(np.argmax(np.linalg.norm(points - points.mean(axis=0), axis=1)))]
    while len(centers_idx) < k:
        d = np.min(
            np.stack([np.linalg.norm(points - points[c], axis=1) for c in centers_idx]),
            axis=0,
        )
        d[centers_idx] = -1.0
        centers_idx.append(int(np.argmax(d)))
    centers = points[centers_idx].copy()

    assign = np.zeros(n, dtype=int)
    for _ in range(iters):
        counts = np.zeros(k, dtype=int)
        new_assign = np.zeros(n, dtype=int)
        for i in range(n):
            d = np.linalg.norm(centers - points[i], axis=1)
            order = np.lexsort((np.arange(k), d))  # ties to lowest index
            for c in order:
                if counts[c] < cap:
                    new_assign[i] = c
                    counts[c] += 1
                    break
        if np.array_equal(new_assign, assign):
            assign = new_assign
            break
        assign = new_assign
        for c in range(k):
            members = points[assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return assign


@dataclass
class SubsymbolicResult:
    w_sub: object  # (n, n) ndarray or tape node
    clusters: np.ndarray
    op_count: int
    w_intra: object
    w_inter: object


def subsymbolic_weights(
    prims: Sequence[PrimitiveBase],
    context: np.ndarray,
    k: int,
    params: RoutingParams,
    theta=None,
) -> SubsymbolicResult:
    """Hierarchical attention: full attention inside balanced clusters,
    cluster-level attention between layer-order-permissible clusters
    broadcast uniformly into the blocks, gated by beta.

    ``op_count`` is the number of pairwise score slots evaluated
    (each intra-cluster member pair and each permissible ordered cluster
    pair counted once, independent of head count).
    """
    theta = params.theta if theta is None else theta
    n = len(prims)
    emb = embed_primitives(prims)
    clusters = balanced_kmeans(emb, k)
    heads = params.head_projections(theta)
    scale = 1.0 / np.sqrt(params.head_dim)

    member_lists = [np.where(clusters == c)[0] for c in range(k)]
    op_count = sum(len(m) ** 2 for m in member_lists)

    intra_parts = []
    for members in member_lists:
        if len(members) == 0:
            continue
        sub = emb[members]
        acc = None
        for wq, wk in heads:
            q = ag.matmul(sub, wq)
            kk = ag.matmul(sub, wk)
            s = ag.matmul(q, ag.transpose(kk)) * scale
            a = ag.softmax(s, axis=-1)
            acc = a if acc is None else acc + a
        intra_parts.append((members, acc * (1.0 / len(heads))))

    # cluster layer = majority member layer, ties to the lower layer
    cluster_layer = np.zeros(k, dtype=int)
    for c, members in enumerate(member_lists):
        if len(members) == 0:
            continue
        idx = [LAYER_INDEX[prims[i].layer] for i in members]
        counts = np.bincount(idx, minlength=4)
        cluster_layer[c] = int(np.argmax(counts))
    permissible = np.zeros((k, k), dtype=bool)
    for a in range(k):
        for b in range(k):
            if len(member_lists[a]) and len(member_lists[b]):
                permissible[a, b] = cluster_layer[a] <= cluster_layer[b]
    op_count += int(permissible.sum())

    cluster_emb = np.stack(
        [emb[m].mean(axis=0) if len(m) else np.zeros(EMBED_DIM) for m in member_lists]
    )
    acc = None
    for wq, wk in heads:
        q = ag.matmul(cluster_emb, wq)
        kk = ag.matmul(cluster_emb, wk)
        s = ag.matmul(q, ag.transpose(kk)) * scale
        a = ag.masked_softmax(s, permissible, axis=-1)
        acc = a if acc is None else acc + a
    c_inter = acc * (1.0 / len(heads))

    # assemble dense matrices (tape-friendly scatter via index matrices)
    intra_full = np.zeros((n, n))
    tracked = any(ag.is_node(part) for _, part in intra_parts) or ag.is_node(c_inter)
    if not tracked:
        for members, block in intra_parts:
            intra_full[np.ix_(members, members)] = ag.value_of(block)
        inter_full = ag.value_of(c_inter)[clusters[:, None], clusters[None, :]]
        inter_full = inter_full * permissible[clusters[:, None], clusters[None, :]]
        beta = float(ag.value_of(params.beta(theta)))
        w_sub = beta * intra_full + (1.0 - beta) * inter_full
        return SubsymbolicResult(w_sub, clusters, op_count, intra_full, inter_full)

    # differentiable path: build with scatter-free masks
    intra_node = 0.0
    for members, block in intra_parts:
        scatter = np.zeros((n, len(members)))
        scatter[members, np.arange(len(members))] = 1.0
        intra_node = intra_node + ag.matmul(scatter, ag.matmul(block, scatter.T))
    sel = np.zeros((n, k))
    sel[np.arange(n), clusters] = 1.0
    inter_node = ag.matmul(sel, ag.matmul(c_inter, sel.T))
    keep = permissible[clusters[:, None], clusters[None, :]].astype(float)
    inter_node = inter_node * keep
    beta = params.beta(theta)
    w_sub = intra_node * beta + inter_node * (1.0 - beta)
    return SubsymbolicResult(w_sub, clusters, op_count, intra_node, inter_node)


def _transpose(x):
    if ag.is_node(x):
        n, m = x.shape
        out = ag.reshape(x, (n, m))
        # transpose via double reshape is wrong; use matmul with identity
        return _t_node(out)
    return np.asarray(x).T


def _t_node(x):
    val = ag.value_of(x).T

    def backward(g):
        return [np.asarray(g).T]

    from .autodiff import Node

    return Node(val, (x,), backward)


def hierarchical_op_count_bound(n: int, k: int) -> int:
    """K * ceil(n/K)^2 + K^2, the exact desk-scale cost ceiling."""
    return k * int(np.ceil(n / k)) ** 2 + k * k


# ---------------------------------------------------------------------
# causal flow and conservation
# ---------------------------------------------------------------------

@dataclass
class FlowReport:
    flow: np.ndarray
    info: np.ndarray
    strength: np.ndarray
    ext_in: np.ndarray
    ext_out: np.ndarray
    dissipation: np.ndarray
    residual: float


def flow_matrix(w, info, strength):
    """F[i, j] = W[i, j] * info[i] * strength[i, j] (flow from i to j)."""
    return w * np.asarray(info)[:, None] * strength if not ag.is_node(w) else (
        w * np.asarray(info)[:, None] * strength
    )


def flow_residual(w, info, strength):
    """Sum over nodes of squared (inflow - outflow); tape-friendly."""
    f = flow_matrix(w, info, strength)
    imbalance = ag.sum_(f, axis=0) - ag.sum_(f, axis=1)
    return ag.sum_(ag.square(imbalance))


def causal_flow(
    w: np.ndarray,
    info: np.ndarray,
    strength: np.ndarray,
    ext_in: Optional[np.ndarray] = None,
    ext_out: Optional[np.ndarray] = None,
) -> FlowReport:
    w = np.asarray(w, dtype=np.float64)
    info = np.asarray(info, dtype=np.float64)
    strength = np.asarray(strength, dtype=np.float64)
    n = w.shape[0]
    if w.shape != (n, n) or strength.shape != (n, n) or info.shape != (n,):
        raise RoutingError("dimension mismatch")
    if np.any(info < 0):
        raise RoutingError("information content must be nonnegative")
    if np.any(strength < 0) or np.any(strength > 1):
        raise RoutingError("causal strength must lie in [0,1]")
    ext_in = np.zeros(n) if ext_in is None else np.asarray(ext_in, dtype=np.float64)
    ext_out = np.zeros(n) if ext_out is None else np.asarray(ext_out, dtype=np.float64)
    f = flow_matrix(w, info, strength)
    inflow = f.sum(axis=0)
    outflow = f.sum(axis=1)
    dissipation = np.maximum(0.0, inflow + ext_in - outflow - ext_out)
    residual = float(np.sum((inflow - outflow) ** 2))
    return FlowReport(f, info, strength, ext_in, ext_out, dissipation, residual)


# ---------------------------------------------------------------------
# interventional causal strength
# ---------------------------------------------------------------------

def estimate_causal_strength(
    world,
    source: str,
    target: str,
    n_samples: int,
    rng: np.random.Generator,
    grid: Optional[Sequence[float]] = None,
) -> float:
    """Mean interventional shift of the target when forcing the source,
    averaged over a declared grid and clipped into [0,1].

    Discrete worlds enumerate exactly and use total-variation distance;
    continuous worlds Monte-Carlo the mean-shift |E[Y|do(x)] - E[Y]|.
    """
    names = list(world.variables)
    if source not in names or target not in names:
        raise RoutingError(f"world lacks variable mapping for {source!r}/{target!r}")
    j = names.index(target)
    if getattr(world, "is_discrete", False):
        base = world.marginals()[_fsm_step(world, target)]
        diffs = []
        for v in world.support(source):
            shifted = world.marginals({source: v})[_fsm_step(world, target)]
            diffs.append(0.5 * float(np.abs(shifted - base).sum()))
        return float(np.clip(np.mean(diffs), 0.0, 1.0))

    base = world.sample(n_samples, rng)
    base_mean = float(base[:, j].mean())
    i = names.index(source)
    if grid is None:
        mu, sd = float(base[:, i].mean()), float(base[:, i].std())
        sd = sd if sd > 0 else 1.0
        grid = [mu + t * sd for t in (-2.0, -1.0, 0.0, 1.0, 2.0)]
    diffs = []
    for v in grid:
        shifted = world.intervene({source: v}, n_samples, rng)
        diffs.append(abs(float(shifted[:, j].mean()) - base_mean))
    return float(np.clip(np.mean(diffs), 0.0, 1.0))


def _fsm_step(world, name: str) -> int:
    return list(world.variables).index(name)


# ---------------------------------------------------------------------
# conservation fusion
# ---------------------------------------------------------------------

@dataclass
class FuseResult:
    w: np.ndarray
    trace: list[float]


def fuse(
    w_sym: np.ndarray,
    w_sub: np.ndarray,
    info: np.ndarray,
    strength: np.ndarray,
    lam1: float = 0.5,
    lam2: float = 0.5,
    iters: int = 3,
    hard_mask: Optional[np.ndarray] = None,
) -> FuseResult:
    """Projected gradient descent on the conservation objective
    residual(F(W)) + lam1 ||W - W_sym||^2 + lam2 ||W - W_sub||^2 over
    [0,1]^{n x n}; entries under ``hard_mask`` are pinned to zero.

    Backtracking keeps the returned objective trace nonincreasing.
    """
    if lam1 < 0 or lam2 < 0:
        raise RoutingError("fusion penalties must be nonnegative")
    w_sym = np.asarray(w_sym, dtype=np.float64)
    w_sub = np.asarray(w_sub, dtype=np.float64)
    n = w_sym.shape[0]
    forbid = (
        np.zeros((n, n), dtype=bool) if hard_mask is None
        else np.asarray(hard_mask, dtype=bool)
    )

    def objective(flat):
        w = ag.reshape(flat, (n, n))
        loss = flow_residual(w, info, strength)
        d1 = w - w_sym
        d2 = w - w_sub
        return loss + lam1 * ag.sum_(ag.square(d1)) + lam2 * ag.sum_(ag.square(d2))

    def projection(flat):
        w = nx.project_box(flat.reshape(n, n), 0.0, 1.0)
        w[forbid] = 0.0
        return w.ravel()

    w0 = 0.5 * (w_sym + w_sub)
    cfg = nx.OptimizerConfig(max_iters=iters, tol=1e-15, convex=True)
    res = nx.descend(objective, w0.ravel(), cfg, projection=projection)
    return FuseResult(res.x.reshape(n, n), res.trace)


# ---------------------------------------------------------------------
# the full routing pass
# ---------------------------------------------------------------------

@dataclass
class RoutingState:
    w_sym: np.ndarray
    w_sub: np.ndarray
    w: np.ndarray
    beta: float
    clusters: np.ndarray
    lam1: float
    lam2: float
    context: np.ndarray
    embeddings: np.ndarray
    op_count: int
    fuse_trace: list[float]
    info: np.ndarray
    strength: np.ndarray


def route(
    prims: Sequence[PrimitiveBase],
    kg: KnowledgeGraph,
    context: np.ndarray,
    params: RoutingParams,
    k: int,
    info: Optional[np.ndarray] = None,
    strength: Optional[np.ndarray] = None,
    lam1: float = 0.5,
    lam2: float = 0.5,
    iters: int = 3,
) -> RoutingState:
    """Symbolic and sub-symbolic channels fused under conservation.

    ``info`` defaults to unit information content and ``strength`` to
    all-ones when no interventional estimates are supplied.
    """
    n = len(prims)
    w_sym_node, keep = symbolic_weights(prims, kg, context, params)
    w_sym = ag.value_of(w_sym_node)
    sub = subsymbolic_weights(prims, context, k, params)
    w_sub = ag.value_of(sub.w_sub)
    info = np.ones(n) if info is None else np.asarray(info, dtype=np.float64)
    strength = (
        np.ones((n, n)) if strength is None
        else np.asarray(strength, dtype=np.float64)
    )
    fused = fuse(
        w_sym, w_sub, info, strength, lam1=lam1, lam2=lam2, iters=iters,
        hard_mask=~keep,
    )
    return RoutingState(
        w_sym=w_sym,
        w_sub=w_sub,
        w=fused.w,
        beta=float(ag.value_of(params.beta(params.theta))),
        clusters=sub.clusters,
        lam1=lam1,
        lam2=lam2,
        context=np.asarray(context, dtype=np.float64),
        embeddings=embed_primitives(prims),
        op_count=sub.op_count,
        fuse_trace=fused.trace,
        info=info,
        strength=strength,
    )


def weights_to_csv(w: np.ndarray, ids: Sequence[str], path: str) -> None:
    with open(path, "w") as fh:
        fh.write("," + ",".join(ids) + "\n")
        for i, row in enumerate(np.asarray(w)):
            fh.write(ids[i] + "," + ",".join(repr(float(v)) for v in row) + "\n")


def weights_from_csv(path: str) -> tuple[np.ndarray, list[str]]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")[1:]
        rows = []
        for line in fh:
            parts = line.strip().split(",")
            rows.append([float(v) for v in parts[1:]])
    return np.asarray(rows), header
