"""Minibatch training with dev-set model selection and early stopping."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tape, cross_entropy
from .checkpoint import restore_into, save_checkpoint
from .data import EMOTIONS, Corpus
from .evaluation import macro_f1, write_predictions
from .model import ModelConfig, OpinionFusionModel
from .optim import Adam

log = logging.getLogger(__name__)


class TrainingError(Exception):
    pass


@dataclass
class EpochStats:
    epoch: int
    loss: float
    dev_macro_f1: float


@dataclass
class TrainResult:
    model: OpinionFusionModel
    log_rows: list[EpochStats]
    best_epoch: int
    best_dev_f1: float
    dev_predictions: list[dict]

    def log_csv(self) -> str:
        lines = ["epoch,loss,dev_macro_f1"]
        for row in self.log_rows:
            lines.append(f"{row.epoch},{row.loss!r},{row.dev_macro_f1!r}")
        return "\n".join(lines) + "\n"


def class_weights_from(records) -> list[float]:
    """Inverse-frequency weights, normalized so a balanced corpus gives 1.0."""
    counts = {label: 0 for label in EMOTIONS}
    for record in records:
        counts[record.emotion] += 1
    total = sum(counts.values())
    n_present = sum(1 for v in counts.values() if v > 0)
    return [total / (n_present * counts[label]) if counts[label] else 0.0
            for label in EMOTIONS]


def train_model(config: ModelConfig, corpus: Corpus,
                out_dir: str | Path | None = None) -> TrainResult:
    """Train per the config; keeps the best-dev checkpoint.

    With ``out_dir`` set, writes ``checkpoint.bin``, ``training_log.csv``
    and ``dev_predictions.jsonl`` there.  Fixed config + seed reproduces
    the log and prediction files byte for byte.
    """
    config.validate()
    train_records = corpus.split("train")
    dev_records = corpus.split("dev")
    if not train_records:
        raise TrainingError("corpus has no train split")
    if not dev_records:
        raise TrainingError("corpus has no dev split")

    rng = np.random.default_rng(config.seed)
    model_rng, shuffle_rng = rng.spawn(2)
    model = OpinionFusionModel(config, rng=model_rng)
    params = model.parameters()
    optimizer = Adam(params, lr=config.optimizer.learning_rate)
    weights = (class_weights_from(train_records)
               if config.optimizer.weighted_loss else None)
    label_index = {label: i for i, label in enumerate(EMOTIONS)}

    best_state: dict[str, np.ndarray] | None = None
    best_f1 = -1.0
    best_epoch = -1
    rows: list[EpochStats] = []
    batch_size = config.optimizer.batch_size

    for epoch in range(1, config.optimizer.epochs + 1):
        order = shuffle_rng.permutation(len(train_records))
        total_loss = 0.0
        for start in range(0, len(order), batch_size):
            batch = [train_records[i] for i in order[start:start + batch_size]]
            labels = [label_index[r.emotion] for r in batch]
            with Tape() as tape:
                logits = model.forward_batch(batch)
                loss = cross_entropy(logits, labels, class_weights=weights)
            grads = tape.backward(loss)
            optimizer.step(grads)
            total_loss += loss.item() * len(batch)
        epoch_loss = total_loss / len(train_records)

        dev_preds = model.predict(dev_records)
        dev_f1 = macro_f1([p["gold"] for p in dev_preds],
                          [p["pred"] for p in dev_preds])
        rows.append(EpochStats(epoch=epoch, loss=epoch_loss, dev_macro_f1=dev_f1))
        log.info("epoch %d: loss %.5f dev macro-F1 %.3f", epoch, epoch_loss, dev_f1)

        if dev_f1 > best_f1:
            best_f1 = dev_f1
            best_epoch = epoch
            best_state = {name: p.data.copy() for name, p in params.items()}
        elif epoch - best_epoch >= config.optimizer.patience:
            log.info("early stop at epoch %d (best epoch %d)", epoch, best_epoch)
            break

    assert best_state is not None
    restore_into(params, best_state)
    dev_predictions = model.predict(dev_records)

    result = TrainResult(model=model, log_rows=rows, best_epoch=best_epoch,
                         best_dev_f1=best_f1, dev_predictions=dev_predictions)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "checkpoint.bin", params)
        (out / "training_log.csv").write_text(result.log_csv(), encoding="utf-8")
        write_predictions(out / "dev_predictions.jsonl", dev_predictions)
    return result
