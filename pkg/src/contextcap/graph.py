"""Object-relationship graph network over detected-object features.

Builds a directed K-nearest-neighbor graph (cosine similarity) over the
unmasked object features, runs T message-passing steps where each edge
(i, j) carries message f([v_i, v_j - v_i]) and each node sums its outgoing
messages, adds the original features back through a skip connection, and
runs one extra message step on the enhanced nodes to produce edge features
for the encoder.

Edge selection depends only on the input features, so edge_index can be
precomputed once per sample and reused across training steps.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError


@dataclass
class GraphConfig:
    d_vis: int
    K: int = 5
    T: int = 2
    hidden_dim: int = None

    def __post_init__(self):
        if self.hidden_dim is None:
            self.hidden_dim = self.d_vis
        if self.K < 1:
            raise ContractError(f"K must be >= 1, got {self.K}")
        if self.T < 1:
            raise ContractError(f"T must be >= 1, got {self.T}")
        if self.d_vis < 1 or self.hidden_dim < 1:
            raise ContractError("d_vis and hidden_dim must be >= 1")


class Mlp:
    """Two-layer MLP with relu, input 2*D_vis, output D_vis."""

    def __init__(self, d_in, d_hidden, d_out, rng, dtype=None):
        def glorot(fan_in, fan_out):
            scale = np.sqrt(2.0 / (fan_in + fan_out))
            w = rng.standard_normal((fan_in, fan_out)) * scale
            return Tensor(w, requires_grad=True, dtype=dtype)

        self.w1 = glorot(d_in, d_hidden)
        self.b1 = Tensor(np.zeros(d_hidden), requires_grad=True, dtype=dtype)
        self.w2 = glorot(d_hidden, d_out)
        self.b2 = Tensor(np.zeros(d_out), requires_grad=True, dtype=dtype)

    def __call__(self, x):
        h = ad.relu(ad.add(ad.matmul(x, self.w1), self.b1))
        return ad.add(ad.matmul(h, self.w2), self.b2)

    def named_parameters(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


class GraphParams:
    """Per-step message MLPs plus the fresh-parameter edge-feature MLP."""

    def __init__(self, config, rng, dtype=None):
        self.config = config
        d, h = config.d_vis, config.hidden_dim
        self.steps = [Mlp(2 * d, h, d, rng, dtype) for _ in range(config.T)]
        self.edge_mlp = Mlp(2 * d, h, d, rng, dtype)

    def named_parameters(self):
        params = {}
        for t, mlp in enumerate(self.steps):
            for name, p in mlp.named_parameters().items():
                params[f"step{t}.{name}"] = p
        for name, p in self.edge_mlp.named_parameters().items():
            params[f"edge_mlp.{name}"] = p
        return params


@dataclass
class GraphOutput:
    enhanced_nodes: Tensor
    edge_features: Tensor
    edge_index: np.ndarray


def build_edges(object_feats, object_mask, K):
    """Directed cosine-similarity top-K edges among unmasked nodes.

    Each unmasked node i gets edges (i, j) to its min(K, n_real - 1)
    most similar unmasked neighbors, self-loops excluded, ties broken
    toward the lower index.  Returns an (M, 2) int array.
    """
    feats = np.asarray(object_feats, dtype=np.float64)
    mask = np.asarray(object_mask, dtype=bool)
    real = np.flatnonzero(mask)
    if real.size <= 1:
        return np.zeros((0, 2), dtype=np.int64)
    sub = feats[real]
    norms = np.maximum(np.linalg.norm(sub, axis=1), 1e-12)
    sims = (sub @ sub.T) / np.outer(norms, norms)
    k = min(K, real.size - 1)
    edges = []
    for a, i in enumerate(real):
        ranked = sorted(
            (b for b in range(real.size) if b != a),
            key=lambda b: (-sims[a, b], real[b]),
        )
        for b in ranked[:k]:
            edges.append((i, real[b]))
    return np.asarray(edges, dtype=np.int64)


def message_step(nodes, edge_index, f_step):
    """Per-edge messages f([v_i, v_j - v_i]) as an (M, D) tensor."""
    src = edge_index[:, 0]
    dst = edge_index[:, 1]
    v_i = ad.index_rows(nodes, src)
    v_j = ad.index_rows(nodes, dst)
    inp = ad.concat([v_i, ad.sub(v_j, v_i)], axis=1)
    return f_step(inp)


def aggregate(messages, edge_index, n_nodes):
    """Sum each node's outgoing-edge messages; edgeless nodes get zeros."""
    return ad.scatter_add_rows(messages, edge_index[:, 0], n_nodes)


def run_graph(object_feats, object_mask, config, params, edge_index=None):
    """T message-passing steps, skip connection, and the extra edge step.

    With all-zero MLP weights the output nodes equal the input features
    bitwise (only the skip path contributes).  Masked rows stay zero and
    never influence unmasked outputs.
    """
    nodes0 = object_feats if isinstance(object_feats, Tensor) else Tensor(object_feats)
    n_nodes = nodes0.data.shape[0]
    if edge_index is None:
        edge_index = build_edges(nodes0.data, object_mask, config.K)
    if edge_index.shape[0] == 0:
        empty = Tensor(np.zeros((0, config.d_vis), dtype=nodes0.data.dtype))
        return GraphOutput(enhanced_nodes=nodes0, edge_features=empty, edge_index=edge_index)
    nodes = nodes0
    for f_step in params.steps:
        messages = message_step(nodes, edge_index, f_step)
        nodes = aggregate(messages, edge_index, n_nodes)
    enhanced = ad.add(nodes, nodes0)
    edge_features = message_step(enhanced, edge_index, params.edge_mlp)
    return GraphOutput(enhanced_nodes=enhanced, edge_features=edge_features, edge_index=edge_index)
