"""Fusion of pooled text features with aggregated opinion-graph features.

Three strategies, searched as a hyperparameter:

* ``cat``  — linear projection of the concatenated pair back to width d.
* ``gate`` — sigmoid gate blending the two vectors elementwise.
* ``attn`` — dot-product attention with the graph vector as query and the
  token-level states as keys and values.

The fused vector is folded back through a scaled residual,
``H_R = H_seq + α_res · H_f``, before the classification head.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

FUSION_TYPES: tuple[str, ...] = ("cat", "gate", "attn")


class FusionParams:
    """Trainable weights for one fusion strategy at text width ``d``.

    Also owns the linear projection taking the graph readout width down
    to ``d`` (bias-free so opinion-free zero vectors stay exactly zero).
    """

    def __init__(self, fusion_type: str, d: int, graph_width: int,
                 rng: np.random.Generator | None = None, prefix: str = "fusion"):
        if fusion_type not in FUSION_TYPES:
            raise ValueError(f"unknown fusion type {fusion_type!r}")
        self.fusion_type = fusion_type
        self.d = d
        self.prefix = prefix
        rng = rng if rng is not None else np.random.default_rng(0)
        self.graph_projection = Tensor(
            np.sqrt(2.0 / (graph_width + d)) * rng.standard_normal((graph_width, d)),
            requires_grad=True)
        self.weight: Tensor | None = None
        self.bias: Tensor | None = None
        if fusion_type in ("cat", "gate"):
            self.weight = Tensor(
                np.sqrt(2.0 / (3 * d)) * rng.standard_normal((2 * d, d)),
                requires_grad=True)
            self.bias = Tensor(np.zeros((1, d)), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        out = {f"{self.prefix}.graph_projection": self.graph_projection}
        if self.weight is not None:
            out[f"{self.prefix}.{self.fusion_type}.weight"] = self.weight
            out[f"{self.prefix}.{self.fusion_type}.bias"] = self.bias
        return out

    def project_graph(self, graph_vec: Tensor) -> Tensor:
        return ad.matmul(graph_vec, self.graph_projection)


def fuse(h_seq: Tensor, h_graph: Tensor, h_tokens: Tensor,
         params: FusionParams) -> Tensor:
    """Combine (1, d) text and graph vectors into the fused (1, d) vector."""
    d = params.d
    if h_seq.shape != (1, d) or h_graph.shape != (1, d):
        raise ShapeError(
            f"fuse expects (1, {d}) inputs, got {h_seq.shape} and {h_graph.shape}")
    if params.fusion_type == "cat":
        joined = ad.concat([h_seq, h_graph], axis=1)
        return ad.add(ad.matmul(joined, params.weight), params.bias)
    if params.fusion_type == "gate":
        joined = ad.concat([h_seq, h_graph], axis=1)
        gate = ad.sigmoid(ad.add(ad.matmul(joined, params.weight), params.bias))
        return ad.add(ad.mul(gate, h_seq), ad.mul(ad.sub(1.0, gate), h_graph))
    # attn: query = graph vector; keys/values = token states
    if h_tokens.shape[1] != d:
        raise ShapeError(f"token states width {h_tokens.shape[1]} != {d}")
    scores = ad.mul(ad.matmul(h_tokens, ad.transpose(h_graph)), 1.0 / np.sqrt(d))
    alpha = ad.softmax(scores, axis=0)
    return ad.matmul(ad.transpose(alpha), h_tokens)


def residual(h_seq: Tensor, h_fused: Tensor, alpha_res: float) -> Tensor:
    """H_R = H_seq + α_res · H_f."""
    if h_seq.shape != h_fused.shape:
        raise ShapeError(f"residual widths differ: {h_seq.shape} vs {h_fused.shape}")
    return ad.add(h_seq, ad.mul(h_fused, float(alpha_res)))


class ClassifierHead:
    """Affine map from the final representation to class logits."""

    def __init__(self, d: int, n_classes: int, rng: np.random.Generator | None = None,
                 prefix: str = "head"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.prefix = prefix
        self.weight = Tensor(np.sqrt(1.0 / d) * rng.standard_normal((d, n_classes)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros((1, n_classes)), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        return {f"{self.prefix}.weight": self.weight, f"{self.prefix}.bias": self.bias}

    def __call__(self, h: Tensor) -> Tensor:
        return ad.add(ad.matmul(h, self.weight), self.bias)
