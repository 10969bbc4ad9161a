"""Text encoders behind a provider boundary.

Two providers produce the same contract — token-level hidden states
``(|T|, d)`` plus a pooled ``(1, d)`` sequence vector:

* ``ToyEncoder``: trainable hashed-vocabulary embeddings, sinusoidal
  positions, and a small stack of self-attention blocks.
* ``FileEncoder``: frozen per-record states exported from any external
  encoder, carried in an ``OPFUSE-ENC-1`` container together with the
  exporting tokenizer's offsets.

All offsets are character offsets into the record text, the same space
the annotation spans use.
"""

from __future__ import annotations

import re
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Record, Span

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class EncoderError(Exception):
    pass


class NoTokenOverlap(Exception):
    """A span intersects no token's character range."""


@dataclass(frozen=True)
class Token:
    text: str        # lowercased surface form
    span: Span       # offsets into the original text


TokenSequence = tuple[Token, ...]


@dataclass
class EncoderOutput:
    hidden: Tensor   # (|T|, d); |T| >= 1 even for empty input
    pooled: Tensor   # (1, d)

    @property
    def width(self) -> int:
        return self.hidden.shape[1]


def tokenize(text: str) -> TokenSequence:
    """Split into word/punctuation tokens with offsets into the original text."""
    return tuple(
        Token(text=m.group(0).lower(), span=Span(m.start(), m.end()))
        for m in _TOKEN_RE.finditer(text)
    )


def hash_bucket(token_text: str, buckets: int) -> int:
    """Stable vocabulary hash; identical across runs and processes."""
    return zlib.crc32(token_text.encode("utf-8")) % buckets


def sinusoidal_positions(length: int, width: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    dim = np.arange(width, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * np.floor(dim / 2.0)) / width)
    enc = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return enc


class ToyEncoder:
    """Small trainable transformer encoder over hashed token buckets."""

    def __init__(self, width: int = 64, layers: int = 2, heads: int = 4,
                 vocab_buckets: int = 16384, rng: np.random.Generator | None = None):
        if width % heads != 0:
            raise EncoderError(f"width {width} not divisible by heads {heads}")
        self.width = width
        self.layers = layers
        self.heads = heads
        self.head_dim = width // heads
        self.vocab_buckets = vocab_buckets
        rng = rng if rng is not None else np.random.default_rng(0)
        self._params: dict[str, Tensor] = {}
        scale = 1.0 / np.sqrt(width)
        self._params["embedding"] = Tensor(
            0.1 * rng.standard_normal((vocab_buckets, width)), requires_grad=True)
        for layer in range(layers):
            for head in range(heads):
                for name in ("wq", "wk", "wv"):
                    self._params[f"block{layer}.h{head}.{name}"] = Tensor(
                        scale * rng.standard_normal((width, self.head_dim)),
                        requires_grad=True)
            self._params[f"block{layer}.wo"] = Tensor(
                scale * rng.standard_normal((width, width)), requires_grad=True)
            self._params[f"block{layer}.ffn_w1"] = Tensor(
                scale * rng.standard_normal((width, 2 * width)), requires_grad=True)
            self._params[f"block{layer}.ffn_b1"] = Tensor(
                np.zeros((1, 2 * width)), requires_grad=True)
            self._params[f"block{layer}.ffn_w2"] = Tensor(
                (1.0 / np.sqrt(2 * width)) * rng.standard_normal((2 * width, width)),
                requires_grad=True)
            self._params[f"block{layer}.ffn_b2"] = Tensor(
                np.zeros((1, width)), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        return {f"encoder.{name}": p for name, p in self._params.items()}

    def encode(self, seq: TokenSequence) -> EncoderOutput:
        buckets = [hash_bucket(tok.text, self.vocab_buckets) for tok in seq]
        if not buckets:
            buckets = [0]  # synthetic padding token for empty input
        x = ad.gather_rows(self._params["embedding"], buckets)
        x = ad.add(x, sinusoidal_positions(len(buckets), self.width))
        for layer in range(self.layers):
            x = ad.add(x, self._attention(layer, x))
            x = ad.add(x, self._ffn(layer, x))
        pooled = ad.tmean(x, axis=0, keepdims=True)
        return EncoderOutput(hidden=x, pooled=pooled)

    def _attention(self, layer: int, x: Tensor) -> Tensor:
        outs = []
        inv_sqrt = 1.0 / np.sqrt(self.head_dim)
        for head in range(self.heads):
            q = ad.matmul(x, self._params[f"block{layer}.h{head}.wq"])
            k = ad.matmul(x, self._params[f"block{layer}.h{head}.wk"])
            v = ad.matmul(x, self._params[f"block{layer}.h{head}.wv"])
            scores = ad.mul(ad.matmul(q, ad.transpose(k)), inv_sqrt)
            alpha = ad.softmax(scores, axis=1)
            outs.append(ad.matmul(alpha, v))
        merged = ad.concat(outs, axis=1) if len(outs) > 1 else outs[0]
        return ad.matmul(merged, self._params[f"block{layer}.wo"])

    def _ffn(self, layer: int, x: Tensor) -> Tensor:
        h = ad.add(ad.matmul(x, self._params[f"block{layer}.ffn_w1"]),
                   self._params[f"block{layer}.ffn_b1"])
        h = ad.leaky_relu(h, 0.2)
        return ad.add(ad.matmul(h, self._params[f"block{layer}.ffn_w2"]),
                      self._params[f"block{layer}.ffn_b2"])

    def encode_record(self, record: Record) -> tuple[TokenSequence, EncoderOutput]:
        seq = tokenize(record.text)
        return seq, self.encode(seq)


def span_pool(output: EncoderOutput, seq: TokenSequence, span: Span) -> Tensor:
    """Mean hidden state over all tokens whose character range meets the span."""
    indices = [i for i, tok in enumerate(seq) if tok.span.overlaps(span)]
    if not indices:
        raise NoTokenOverlap(f"span [{span.start}, {span.end}) overlaps no token")
    return ad.tmean(ad.gather_rows(output.hidden, indices), axis=0, keepdims=True)


ENC_MAGIC = b"OPFUSE-ENC-1\n"


def write_encoder_states(path: str | Path,
                         entries: Sequence[tuple[str, Sequence[tuple[int, int]],
                                                 np.ndarray, np.ndarray]]) -> None:
    """Write per-record hidden states exported from an external encoder.

    Each entry is (record id, token offsets, hidden (T, d), pooled (d,) or (1, d)).
    """
    with open(path, "wb") as fh:
        fh.write(ENC_MAGIC)
        fh.write(struct.pack("<q", len(entries)))
        for rid, offsets, hidden, pooled in entries:
            hidden = np.ascontiguousarray(hidden, dtype="<f8")
            pooled = np.ascontiguousarray(pooled, dtype="<f8").reshape(-1)
            n_tokens, width = hidden.shape
            if len(offsets) != n_tokens:
                raise EncoderError(
                    f"record {rid!r}: {len(offsets)} offsets for {n_tokens} hidden rows")
            if pooled.shape[0] != width:
                raise EncoderError(f"record {rid!r}: pooled width {pooled.shape[0]} != {width}")
            rid_bytes = rid.encode("utf-8")
            fh.write(struct.pack("<q", len(rid_bytes)))
            fh.write(rid_bytes)
            fh.write(struct.pack("<qq", width, n_tokens))
            for start, end in offsets:
                fh.write(struct.pack("<qq", start, end))
            fh.write(hidden.tobytes())
            fh.write(pooled.tobytes())


@dataclass
class StoredStates:
    offsets: tuple[tuple[int, int], ...]
    hidden: np.ndarray
    pooled: np.ndarray


def read_encoder_states(path: str | Path) -> dict[str, StoredStates]:
    records: dict[str, StoredStates] = {}
    with open(path, "rb") as fh:
        magic = fh.read(len(ENC_MAGIC))
        if magic != ENC_MAGIC:
            raise EncoderError(f"{path}: not an OPFUSE-ENC-1 state file")
        (count,) = struct.unpack("<q", fh.read(8))
        for _ in range(count):
            (rid_len,) = struct.unpack("<q", fh.read(8))
            rid = fh.read(rid_len).decode("utf-8")
            width, n_tokens = struct.unpack("<qq", fh.read(16))
            offsets = tuple(struct.unpack("<qq", fh.read(16)) for _ in range(n_tokens))
            hidden = np.frombuffer(fh.read(n_tokens * width * 8), dtype="<f8")
            hidden = hidden.reshape(n_tokens, width).copy()
            pooled = np.frombuffer(fh.read(width * 8), dtype="<f8").copy()
            records[rid] = StoredStates(offsets=offsets, hidden=hidden, pooled=pooled)
    return records


class FileEncoder:
    """Frozen provider backed by an exported state file, keyed by record id."""

    def __init__(self, path: str | Path, width: int):
        self.path = str(path)
        self.width = width
        self._records = read_encoder_states(path)

    def parameters(self) -> dict[str, Tensor]:
        return {}

    def load_precomputed(self, record_id: str) -> tuple[TokenSequence, EncoderOutput]:
        stored = self._records.get(record_id)
        if stored is None:
            raise EncoderError(f"{self.path}: no stored states for record id {record_id!r}")
        if stored.hidden.shape[1] != self.width:
            raise EncoderError(
                f"{self.path}: record {record_id!r} has width {stored.hidden.shape[1]}, "
                f"model configured for {self.width}")
        seq = tuple(Token(text="", span=Span(start, end)) for start, end in stored.offsets)
        output = EncoderOutput(hidden=Tensor(stored.hidden), pooled=Tensor(stored.pooled[None, :]))
        return seq, output

    def encode_record(self, record: Record) -> tuple[TokenSequence, EncoderOutput]:
        seq, output = self.load_precomputed(record.id)
        # Surface forms are reconstructed from the record text so exports and
        # live tokenization stay interchangeable downstream.
        seq = tuple(
            Token(text=record.text[t.span.start:t.span.end].lower(), span=t.span)
            for t in seq
        )
        return seq, output
