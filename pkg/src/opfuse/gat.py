"""Multi-head GATv2 message passing with polarity edge attributes.

Per head, the unnormalized score of node ``i`` attending to ``j`` is

    score(i, j) = aᵀ · LeakyReLU(Θ_s h_i + Θ_t h_j + Θ_e e_ij)

with the implicit self-loop ``j = i`` carrying a zero edge attribute.
Coefficients are softmax-normalized over ``N(i) ∪ {i}`` where
``N(i) = {j | (i, j) ∈ E}``, and messages are ``h'_i = Σ_j α_ij Θ_t h_j``.
Head outputs are concatenated.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .data import POLARITIES
from .graphs import GraphEmpty, OpinionGraph


class GatParams:
    """Weights for one GATv2 layer: per head Θ_s, Θ_t (d_out, d_in), Θ_e (d_out, 3), a."""

    def __init__(self, d_in: int, d_out: int, heads: int, leaky_slope: float = 0.2,
                 rng: np.random.Generator | None = None, prefix: str = "gat"):
        self.d_in = d_in
        self.d_out = d_out
        self.heads = heads
        self.leaky_slope = leaky_slope
        self.prefix = prefix
        rng = rng if rng is not None else np.random.default_rng(0)
        scale = np.sqrt(2.0 / (d_in + d_out))
        e_dim = len(POLARITIES)
        self.theta_s = [Tensor(scale * rng.standard_normal((d_out, d_in)), requires_grad=True)
                        for _ in range(heads)]
        self.theta_t = [Tensor(scale * rng.standard_normal((d_out, d_in)), requires_grad=True)
                        for _ in range(heads)]
        self.theta_e = [Tensor(scale * rng.standard_normal((d_out, e_dim)), requires_grad=True)
                        for _ in range(heads)]
        self.attn = [Tensor(rng.standard_normal((d_out, 1)) / np.sqrt(d_out),
                            requires_grad=True)
                     for _ in range(heads)]

    @property
    def out_width(self) -> int:
        return self.heads * self.d_out

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for k in range(self.heads):
            out[f"{self.prefix}.h{k}.theta_s"] = self.theta_s[k]
            out[f"{self.prefix}.h{k}.theta_t"] = self.theta_t[k]
            out[f"{self.prefix}.h{k}.theta_e"] = self.theta_e[k]
            out[f"{self.prefix}.h{k}.attn"] = self.attn[k]
        return out


def gat_layer(graph: OpinionGraph, params: GatParams,
              collect_attention: list | None = None) -> Tensor:
    """One round of attention message passing; returns (|V|, heads * d_out).

    When ``collect_attention`` is given, the per-node coefficient arrays are
    appended to it as (node, head, neighborhood weights) triples.
    """
    n_nodes = graph.num_nodes
    if n_nodes == 0:
        raise GraphEmpty("gat_layer on an empty graph")
    if graph.features.shape[1] != params.d_in:
        raise ShapeError(
            f"node features have width {graph.features.shape[1]}, "
            f"layer expects {params.d_in}")

    # Neighborhood of i follows the out-edge convention N(i) = {j | (i, j) in E}.
    neighbors: list[list[tuple[int, int]]] = [[] for _ in range(n_nodes)]
    for edge_idx, (src, dst) in enumerate(graph.edges):
        neighbors[src].append((dst, edge_idx))

    zero_attr_row = ad.zeros((1, params.d_out))
    head_rows: list[list[Tensor]] = [[] for _ in range(n_nodes)]
    for k in range(params.heads):
        src_proj = ad.matmul(graph.features, ad.transpose(params.theta_s[k]))
        tgt_proj = ad.matmul(graph.features, ad.transpose(params.theta_t[k]))
        edge_proj = (ad.matmul(graph.edge_attr, ad.transpose(params.theta_e[k]))
                     if graph.edges else None)
        for i in range(n_nodes):
            targets = [j for j, _ in neighbors[i]] + [i]
            edge_ids = [e for _, e in neighbors[i]]
            messages = ad.gather_rows(tgt_proj, targets)
            if edge_ids:
                attr = ad.concat([ad.gather_rows(edge_proj, edge_ids), zero_attr_row],
                                 axis=0)
            else:
                attr = ad.zeros((1, params.d_out))
            pre = ad.leaky_relu(
                ad.add(ad.add(ad.gather_rows(src_proj, [i]), messages), attr),
                params.leaky_slope)
            scores = ad.matmul(pre, params.attn[k])
            alpha = ad.softmax(scores, axis=0)
            if collect_attention is not None:
                collect_attention.append((i, k, alpha.data.reshape(-1).copy()))
            head_rows[i].append(ad.matmul(ad.transpose(alpha), messages))

    rows = [ad.concat(parts, axis=1) if len(parts) > 1 else parts[0]
            for parts in head_rows]
    return ad.concat(rows, axis=0) if len(rows) > 1 else rows[0]


def readout(node_feats: Tensor, graph: OpinionGraph) -> Tensor:
    """Sum-pool node vectors into one (1, width) graph vector."""
    if graph.num_nodes == 0:
        raise GraphEmpty("readout on an empty graph")
    return ad.tsum(node_feats, axis=0, keepdims=True)


def aggregate_sentences(readouts: list[Tensor], mapping: list[int],
                        num_sentences: int, width: int) -> tuple[list[Tensor], list[bool]]:
    """Mean of each sentence's graph readouts.

    ``mapping[m]`` assigns readout ``m`` to its parent sentence.  Sentences
    with no graphs get a zero vector and are flagged.
    """
    if len(readouts) != len(mapping):
        raise ShapeError(f"{len(readouts)} readouts but {len(mapping)} mapping entries")
    per_sentence: list[list[Tensor]] = [[] for _ in range(num_sentences)]
    for vec, sentence in zip(readouts, mapping):
        if not 0 <= sentence < num_sentences:
            raise ShapeError(f"mapping entry {sentence} outside [0, {num_sentences})")
        per_sentence[sentence].append(vec)
    outputs: list[Tensor] = []
    no_opinion: list[bool] = []
    for vecs in per_sentence:
        if not vecs:
            outputs.append(ad.zeros((1, width)))
            no_opinion.append(True)
        elif len(vecs) == 1:
            outputs.append(vecs[0])
            no_opinion.append(False)
        else:
            outputs.append(ad.tmean(ad.concat(vecs, axis=0), axis=0, keepdims=True))
            no_opinion.append(False)
    return outputs, no_opinion
