"""Synthetic corpora for capability checks.

``make_planted_corpus`` builds records whose emotion label is a
deterministic function of (opinion polarity, which role spans are present)
while every text token is noise drawn from a small pool.  A text-only
model can at best learn the label prior; a model that reads the opinion
graphs can recover the label exactly.

``make_reference_corpus`` reproduces the published split sizes and label
percentages so distribution validation can be exercised end to end.

``make_gate_favoring_setup`` writes a frozen-encoder corpus whose label is
the XNOR of a text-borne sign and a graph-borne sign; additive fusion
(cat) is provably at chance there while gated fusion can separate it.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import (EMOTIONS, INTENSITIES, POLARITIES, REFERENCE_PERCENTAGES,
                   REFERENCE_TOTALS, SPLITS, Corpus, OpinionAnnotation, Record,
                   Span, dump_corpus)
from .encoder import write_encoder_states

# Role patterns used by the planted rule; combined with the three
# polarities they index the twelve emotion labels bijectively.
PLANTED_PATTERNS: tuple[tuple[str, ...], ...] = (
    ("sentiment_expression", "holder"),
    ("sentiment_expression", "holder", "target"),
    ("sentiment_expression", "holder", "target", "qualifier"),
    ("sentiment_expression", "holder", "target", "qualifier", "aspect_term"),
)

# Fixed token slot per role; the remaining slots hold filler noise.
_ROLE_SLOTS: dict[str, tuple[int, int]] = {
    "holder": (0, 1),
    "target": (1, 2),
    "sentiment_expression": (2, 4),
    "qualifier": (4, 5),
    "aspect_term": (5, 6),
}


def planted_label(pattern_idx: int, polarity_idx: int) -> str:
    return EMOTIONS[pattern_idx * len(POLARITIES) + polarity_idx]


def _token_char_spans(words: list[str]) -> list[Span]:
    spans = []
    cursor = 0
    for word in words:
        spans.append(Span(cursor, cursor + len(word)))
        cursor += len(word) + 1
    return spans


def _planted_record(rid: str, split: str, pattern_idx: int, polarity_idx: int,
                    rng: np.random.Generator, tokens_per_text: int,
                    noise_vocab: int) -> Record:
    words = [f"w{int(rng.integers(noise_vocab))}" for _ in range(tokens_per_text)]
    text = " ".join(words)
    token_spans = _token_char_spans(words)
    fields: dict[str, Span] = {}
    for role in PLANTED_PATTERNS[pattern_idx]:
        lo, hi = _ROLE_SLOTS[role]
        fields[role] = Span(token_spans[lo].start, token_spans[hi - 1].end)
    opinion = OpinionAnnotation(
        polarity=POLARITIES[polarity_idx],
        intensity=INTENSITIES[int(rng.integers(len(INTENSITIES)))],
        aspect_category="planted",
        target_entity="planted",
        **fields,
    )
    return Record(id=rid, split=split, text=text,
                  emotion=planted_label(pattern_idx, polarity_idx),
                  opinions=(opinion,))


def make_planted_corpus(n_train: int = 2000, n_dev: int = 400, n_test: int = 400,
                        seed: int = 0, tokens_per_text: int = 10,
                        noise_vocab: int = 64) -> Corpus:
    """Corpus whose label is determined by (polarity, role pattern) alone."""
    if tokens_per_text < 6:
        raise ValueError("planted layout needs at least 6 token slots")
    rng = np.random.default_rng(seed)
    records: list[Record] = []
    combos = len(PLANTED_PATTERNS) * len(POLARITIES)
    for split, count in (("train", n_train), ("dev", n_dev), ("test", n_test)):
        for i in range(count):
            combo = int(rng.integers(combos))
            records.append(_planted_record(
                rid=f"{split}-{i:05d}", split=split,
                pattern_idx=combo // len(POLARITIES),
                polarity_idx=combo % len(POLARITIES),
                rng=rng, tokens_per_text=tokens_per_text,
                noise_vocab=noise_vocab))
    return Corpus(records)


def chance_rate(corpus: Corpus, split: str) -> float:
    """Accuracy of the best constant prediction on a split."""
    counts: dict[str, int] = {}
    records = corpus.split(split)
    for record in records:
        counts[record.emotion] = counts.get(record.emotion, 0) + 1
    return max(counts.values()) / len(records)


def reference_counts() -> dict[str, dict[str, int]]:
    """Integer per-split label counts matching the published percentages.

    Plain rounding of pct * total reproduces the split totals exactly and
    keeps every percentage within 0.01 points of the published value.
    """
    out: dict[str, dict[str, int]] = {}
    for split in SPLITS:
        total = REFERENCE_TOTALS[split]
        counts = {label: round(REFERENCE_PERCENTAGES[split][label] * total / 100.0)
                  for label in EMOTIONS}
        if sum(counts.values()) != total:
            raise AssertionError(f"rounded counts for {split} do not sum to {total}")
        out[split] = counts
    return out


def make_reference_corpus(seed: int = 0) -> Corpus:
    """Corpus with exactly the published split sizes and label breakdown."""
    rng = np.random.default_rng(seed)
    counts = reference_counts()
    records: list[Record] = []
    for split in SPLITS:
        labels: list[str] = []
        for label in EMOTIONS:
            labels.extend([label] * counts[split][label])
        rng.shuffle(labels)
        for i, label in enumerate(labels):
            text = f"ticker note {i} for {label}"
            opinions: tuple[OpinionAnnotation, ...] = ()
            if i % 3 == 0:
                opinions = (OpinionAnnotation(
                    sentiment_expression=Span(0, 6),
                    polarity=POLARITIES[i % len(POLARITIES)],
                    intensity="average", aspect_category="note",
                    target_entity="ticker"),)
            records.append(Record(id=f"{split}-{i:05d}", split=split, text=text,
                                  emotion=label, opinions=opinions))
    return Corpus(records)


def make_gate_favoring_setup(out_dir: str | Path, n_train: int = 240,
                             n_dev: int = 120, width: int = 8,
                             seed: int = 0) -> tuple[Path, Path]:
    """Write a corpus + frozen encoder states where only multiplicative
    fusion can recover the label.

    The pooled vector carries a sign ``a`` on dimension 0; the opinion
    span's token states carry a sign ``b`` on dimension 1.  The label is
    XNOR(a, b), so any model whose logits are affine in the two feature
    vectors (cat fusion: the single-node graph path is linear end to end)
    stays at chance.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records: list[Record] = []
    entries = []
    text = "t0 t1 t2 t3"
    offsets = [(0, 2), (3, 5), (6, 8), (9, 11)]
    for split, count in (("train", n_train), ("dev", n_dev)):
        for i in range(count):
            a = 1.0 if rng.integers(2) else -1.0
            b = 1.0 if rng.integers(2) else -1.0
            label = EMOTIONS[0] if (a > 0) == (b > 0) else EMOTIONS[1]
            rid = f"{split}-{i:05d}"
            hidden = 0.05 * rng.standard_normal((4, width))
            hidden[0, 0] += a
            hidden[1, 1] += b
            hidden[2, 1] += b
            pooled = 0.02 * rng.standard_normal(width)
            pooled[0] += a
            opinion = OpinionAnnotation(
                sentiment_expression=Span(3, 8),
                polarity="positive" if b > 0 else "negative",
                intensity="average", aspect_category="xnor", target_entity="xnor")
            records.append(Record(id=rid, split=split, text=text,
                                  emotion=label, opinions=(opinion,)))
            entries.append((rid, offsets, hidden, pooled))
    corpus_path = out / "gate_corpus.jsonl"
    states_path = out / "gate_states.bin"
    dump_corpus(Corpus(records), corpus_path)
    write_encoder_states(states_path, entries)
    return corpus_path, states_path
