"""Model configuration and the assembled opinion-fusion classifier."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import EMOTIONS, Record
from .encoder import FileEncoder, ToyEncoder
from .fusion import FUSION_TYPES, ClassifierHead, FusionParams, fuse, residual
from .gat import GatParams, aggregate_sentences, gat_layer, readout
from .graphs import ROLES, GraphEmpty, OpinionGraph, build_subgraph

log = logging.getLogger(__name__)

ARCHITECTURES = ("fused", "text_only")
BATCH_SIZES = (8, 16, 32, 64)
GAT_OUT_DIMS = (384, 256, 192, 96)
GAT_HEADS = (2, 3, 4, 6, 8)
ALPHA_RES_VALUES = (0.25, 0.5, 0.75, 1.0)
# 0.0 switches the residual off entirely, reducing the fused model to the
# text-only baseline; allowed in configs, never part of the sweep grid.
ALPHA_RES_ALLOWED = (0.0,) + ALPHA_RES_VALUES


class ConfigError(Exception):
    def __init__(self, field_name: str, message: str):
        self.field_name = field_name
        super().__init__(f"config field '{field_name}': {message}")


@dataclass
class EncoderConfig:
    provider: str = "toy"          # "toy" | "file"
    width: int = 64
    layers: int = 2
    heads: int = 4
    vocab_buckets: int = 16384
    states_path: str | None = None


@dataclass
class GatConfig:
    out_dim: int = 96
    heads: int = 2
    depth: int = 1
    leaky_slope: float = 0.2
    role_embedding: bool = False


@dataclass
class FusionConfig:
    type: str = "cat"
    alpha_res: float = 0.5


@dataclass
class OptimizerConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 20
    patience: int = 5
    weighted_loss: bool = False


@dataclass
class ModelConfig:
    architecture: str = "fused"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    gat: GatConfig = field(default_factory=GatConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0

    def validate(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ConfigError("architecture", f"must be one of {ARCHITECTURES}")
        if self.encoder.provider not in ("toy", "file"):
            raise ConfigError("encoder.provider", "must be 'toy' or 'file'")
        if self.encoder.width <= 0:
            raise ConfigError("encoder.width", "must be positive")
        if self.encoder.provider == "toy":
            if self.encoder.width % self.encoder.heads != 0:
                raise ConfigError("encoder.heads",
                                  f"must divide width {self.encoder.width}")
            if self.encoder.vocab_buckets <= 0:
                raise ConfigError("encoder.vocab_buckets", "must be positive")
        if self.encoder.provider == "file" and not self.encoder.states_path:
            raise ConfigError("encoder.states_path", "required for the file provider")
        if self.optimizer.batch_size not in BATCH_SIZES:
            raise ConfigError("optimizer.batch_size", f"must be one of {BATCH_SIZES}")
        if self.optimizer.epochs < 1:
            raise ConfigError("optimizer.epochs", "must be >= 1")
        if self.optimizer.patience < 1:
            raise ConfigError("optimizer.patience", "must be >= 1")
        if self.optimizer.learning_rate <= 0:
            raise ConfigError("optimizer.learning_rate", "must be positive")
        if self.architecture == "fused":
            if self.fusion.type not in FUSION_TYPES:
                raise ConfigError("fusion.type", f"must be one of {FUSION_TYPES}")
            if self.fusion.alpha_res not in ALPHA_RES_ALLOWED:
                raise ConfigError("fusion.alpha_res",
                                  f"must be one of {ALPHA_RES_ALLOWED}")
            if self.gat.heads not in GAT_HEADS:
                raise ConfigError("gat.heads", f"must be one of {GAT_HEADS}")
            if self.gat.out_dim <= 0:
                raise ConfigError("gat.out_dim", "must be positive")
            if self.encoder.provider == "file" and self.gat.out_dim not in GAT_OUT_DIMS:
                raise ConfigError(
                    "gat.out_dim",
                    f"must be one of {GAT_OUT_DIMS} with the file provider")
            if self.gat.depth < 1:
                raise ConfigError("gat.depth", "must be >= 1")
            if not 0.0 < self.gat.leaky_slope < 1.0:
                raise ConfigError("gat.leaky_slope", "must lie in (0, 1)")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        def build(section_cls, key):
            data = obj.get(key, {})
            if not isinstance(data, dict):
                raise ConfigError(key, "must be an object")
            known = {f for f in section_cls.__dataclass_fields__}
            unknown = set(data) - known
            if unknown:
                raise ConfigError(f"{key}.{sorted(unknown)[0]}", "unknown field")
            return section_cls(**data)

        known_top = {"architecture", "encoder", "gat", "fusion", "optimizer", "seed"}
        unknown_top = set(obj) - known_top
        if unknown_top:
            raise ConfigError(sorted(unknown_top)[0], "unknown field")
        config = cls(
            architecture=obj.get("architecture", "fused"),
            encoder=build(EncoderConfig, "encoder"),
            gat=build(GatConfig, "gat"),
            fusion=build(FusionConfig, "fusion"),
            optimizer=build(OptimizerConfig, "optimizer"),
            seed=int(obj.get("seed", 0)),
        )
        config.validate()
        return config

    @classmethod
    def load(cls, path: str | Path) -> "ModelConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError("file", f"invalid JSON ({exc.msg})") from exc
        return cls.from_json(obj)


class OpinionFusionModel:
    """Encoder -> opinion sub-graphs -> GATv2 -> fusion -> classifier.

    With ``architecture == "text_only"`` the graph path is skipped and the
    head applies directly to the pooled text vector; with ``alpha_res == 0``
    the fused path reproduces those logits exactly (nesting property).
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None):
        config.validate()
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        enc = config.encoder
        if enc.provider == "toy":
            self.encoder = ToyEncoder(width=enc.width, layers=enc.layers,
                                      heads=enc.heads, vocab_buckets=enc.vocab_buckets,
                                      rng=rng)
        else:
            self.encoder = FileEncoder(enc.states_path, width=enc.width)

        self.gat_layers: list[GatParams] = []
        self.role_embedding: Tensor | None = None
        self.fusion_params: FusionParams | None = None
        if config.architecture == "fused":
            d_in = enc.width
            for depth in range(config.gat.depth):
                layer = GatParams(d_in=d_in, d_out=config.gat.out_dim,
                                  heads=config.gat.heads,
                                  leaky_slope=config.gat.leaky_slope,
                                  rng=rng, prefix=f"gat.l{depth}")
                self.gat_layers.append(layer)
                d_in = layer.out_width
            if config.gat.role_embedding:
                self.role_embedding = Tensor(
                    0.1 * rng.standard_normal((len(ROLES), enc.width)),
                    requires_grad=True)
            self.fusion_params = FusionParams(
                config.fusion.type, d=enc.width,
                graph_width=self.gat_layers[-1].out_width, rng=rng)
        self.head = ClassifierHead(enc.width, len(EMOTIONS), rng=rng)

    @property
    def graph_width(self) -> int:
        return self.gat_layers[-1].out_width if self.gat_layers else 0

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        params.update(self.encoder.parameters())
        for layer in self.gat_layers:
            params.update(layer.parameters())
        if self.role_embedding is not None:
            params["role_embedding"] = self.role_embedding
        if self.fusion_params is not None:
            params.update(self.fusion_params.parameters())
        params.update(self.head.parameters())
        return params

    def graph_vector(self, record: Record, enc_out, seq) -> tuple[Tensor, bool]:
        """Aggregated opinion representation for one record, plus a no-opinion flag."""
        readouts: list[Tensor] = []
        for opinion in record.opinions:
            try:
                graph = build_subgraph(record, opinion, enc_out, seq,
                                       role_embedding=self.role_embedding)
            except GraphEmpty as exc:
                log.warning("skipping opinion graph: %s", exc)
                continue
            for layer in self.gat_layers:
                graph = _with_features(graph, gat_layer(graph, layer))
            readouts.append(readout(graph.features, graph))
        aggregated, flags = aggregate_sentences(
            readouts, [0] * len(readouts), 1, self.graph_width)
        return aggregated[0], flags[0]

    def forward_record(self, record: Record, force_text_only: bool = False) -> Tensor:
        """Class logits (1, C) for one record."""
        seq, enc_out = self.encoder.encode_record(record)
        h_seq = enc_out.pooled
        if self.config.architecture == "text_only" or force_text_only:
            return self.head(h_seq)
        graph_vec, _ = self.graph_vector(record, enc_out, seq)
        h_graph = self.fusion_params.project_graph(graph_vec)
        h_fused = fuse(h_seq, h_graph, enc_out.hidden, self.fusion_params)
        h_final = residual(h_seq, h_fused, self.config.fusion.alpha_res)
        return self.head(h_final)

    def forward_batch(self, records: list[Record]) -> Tensor:
        rows = [self.forward_record(r) for r in records]
        return ad.concat(rows, axis=0) if len(rows) > 1 else rows[0]

    def predict(self, records: list[Record]) -> list[dict]:
        """Greedy predictions without tape recording."""
        out = []
        for record in records:
            logits = self.forward_record(record).data.reshape(-1)
            pred = EMOTIONS[int(np.argmax(logits))]
            out.append({
                "id": record.id,
                "gold": record.emotion,
                "pred": pred,
                "logits": [float(x) for x in logits],
            })
        return out


def _with_features(graph: OpinionGraph, feats: Tensor) -> OpinionGraph:
    return OpinionGraph(structure=graph.structure, features=feats,
                        edge_attr=graph.edge_attr)
