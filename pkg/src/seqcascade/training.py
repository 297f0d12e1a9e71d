"""Batched joint training: Adam with gradient clipping, per-epoch dev
evaluation via greedy decoding, early stopping, and checkpointing."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import Checkpoint, assign_parameters
from .config import ModelConfig
from .corpus import LevelSchema, SequenceExample, Vocabulary, token_matches
from .errors import DataError, TrainingError
from .model import CascadeModel, EncodedExample, build_model

log = logging.getLogger(__name__)


def encode_examples(
    examples: list[SequenceExample],
    schemas: list[LevelSchema],
    vocab: Vocabulary,
    with_targets: bool = True,
) -> list[EncodedExample]:
    """Resolve segmented examples to ids; target sequences get a trailing
    <EOS>, unknown source units map to <UNK>."""
    out = []
    eos = vocab.eos_id
    for ex in examples:
        if ex.source_units is None:
            raise DataError("examples must be segmented before encoding")
        target_ids = {}
        if with_targets:
            for schema in schemas:
                units = ex.target_units[schema.name]
                target_ids[schema.name] = vocab.encode(units) + [eos]
        out.append(
            EncodedExample(
                source_ids=vocab.encode(ex.source_units, allow_unk=True),
                target_ids=target_ids,
                n_tokens=len(ex.source_tokens),
                meta=dict(ex.meta),
            )
        )
    return out


class Batch:
    """A group of examples plus their padded-matrix views.

    Pad positions are masked out of loss and attention: the model consumes
    exactly the unmasked prefix of every row, so adding pure-pad columns can
    never change the loss.
    """

    def __init__(self, examples: list[EncodedExample]):
        self.examples = examples

    def __len__(self) -> int:
        return len(self.examples)

    @staticmethod
    def _pad(rows: list[list[int]], pad_id: int, width: int | None = None):
        width = width or max(len(r) for r in rows)
        mat = np.full((len(rows), width), pad_id, dtype=np.int64)
        mask = np.zeros((len(rows), width), dtype=bool)
        for i, r in enumerate(rows):
            mat[i, : len(r)] = r
            mask[i, : len(r)] = True
        return mat, mask

    def padded_source(self, pad_id: int, width: int | None = None):
        return self._pad([ex.source_ids for ex in self.examples], pad_id, width)

    def padded_targets(self, level: str, pad_id: int, width: int | None = None):
        return self._pad([ex.target_ids[level] for ex in self.examples], pad_id, width)

    @classmethod
    def from_padded(
        cls,
        source: tuple[np.ndarray, np.ndarray],
        targets: dict[str, tuple[np.ndarray, np.ndarray]],
        n_tokens: list[int],
    ) -> "Batch":
        """Rebuild a batch from padded matrices; masked positions are dropped
        before any computation touches them."""
        src_mat, src_mask = source
        examples = []
        for i in range(src_mat.shape[0]):
            target_ids = {
                level: [int(x) for x in mat[i][mask[i]]]
                for level, (mat, mask) in targets.items()
            }
            examples.append(
                EncodedExample(
                    source_ids=[int(x) for x in src_mat[i][src_mask[i]]],
                    target_ids=target_ids,
                    n_tokens=n_tokens[i],
                )
            )
        return cls(examples)


def make_batches(
    examples: list[EncodedExample],
    batch_size: int,
    rng: np.random.Generator,
    bucket_window: int = 8,
) -> list[Batch]:
    """Seeded shuffle, then sort by source length inside windows of
    `bucket_window` batches to limit padding waste, then shuffle batch order.
    The bucketing is a throughput decision with no semantic effect."""
    if not examples:
        raise DataError("cannot batch an empty dataset")
    order = rng.permutation(len(examples))
    window = max(1, batch_size * bucket_window)
    arranged: list[EncodedExample] = []
    for start in range(0, len(order), window):
        chunk = [examples[i] for i in order[start:start + window]]
        chunk.sort(key=lambda ex: len(ex.source_ids))
        arranged.extend(chunk)
    batches = [
        Batch(arranged[i:i + batch_size]) for i in range(0, len(arranged), batch_size)
    ]
    batch_order = rng.permutation(len(batches))
    return [batches[i] for i in batch_order]


@dataclass
class TrainState:
    """Parameters plus Adam moment accumulators and early-stop bookkeeping."""

    params: dict[str, "ad.Tensor"]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    best_metric: float = -math.inf
    epochs_since_improvement: int = 0

    def __post_init__(self):
        for name, t in self.params.items():
            self.m.setdefault(name, np.zeros_like(t.data, dtype=np.float64))
            self.v.setdefault(name, np.zeros_like(t.data, dtype=np.float64))


def adam_step(
    state: TrainState,
    grads: dict[str, np.ndarray],
    lr: float = 5e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> TrainState:
    """Bias-corrected Adam update in place; gradients must be clipped first."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in {name}")
    state.step += 1
    t = state.step
    correct1 = 1.0 - beta1 ** t
    correct2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        g = g.astype(np.float64, copy=False)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        update = (lr * (m / correct1)) / (np.sqrt(v / correct2) + eps)
        p = state.params[name]
        p.data = (p.data.astype(np.float64) - update).astype(p.data.dtype)
    return state


@dataclass
class EpochRow:
    epoch: int
    total_loss: float
    task_losses: dict[str, float]
    dev_accuracies: dict[str, float]
    dev_mean: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[EpochRow]
    best_epoch: int
    aborted: bool = False


@dataclass
class TaskEvaluation:
    accuracy: float
    exact_match: float
    matches: int
    positions: int


def evaluate_model(
    model: CascadeModel, examples: list[SequenceExample]
) -> dict[str, TaskEvaluation]:
    """Greedy-decode every sentence and score reconstructed tokens against
    gold; a token with any wrong character or component counts as wrong."""
    totals = {s.name: [0, 0, 0] for s in model.schemas}  # matches, positions, exact sentences
    for ex in examples:
        encoded = encode_examples([ex], model.schemas, model.vocab, with_targets=False)[0]
        pred = model.predict(encoded.source_ids, n_tokens=encoded.n_tokens)
        for schema in model.schemas:
            gold_units = ex.target_units[schema.name]
            matches, denom = token_matches(pred.units[schema.name], gold_units, schema)
            slot = totals[schema.name]
            slot[0] += matches
            slot[1] += denom
            slot[2] += int(matches == denom)
    out = {}
    for name, (matches, positions, exact) in totals.items():
        out[name] = TaskEvaluation(
            accuracy=matches / positions if positions else 1.0,
            exact_match=exact / len(examples) if examples else 1.0,
            matches=matches,
            positions=positions,
        )
    return out


def train(
    config: ModelConfig,
    schemas: list[LevelSchema],
    vocab: Vocabulary,
    train_examples: list[SequenceExample],
    dev_examples: list[SequenceExample],
    init_params: dict[str, np.ndarray] | None = None,
) -> TrainResult:
    """Epoch loop: shuffle/batch, forward, backward, clip, Adam; evaluate all
    tasks on dev after each epoch; early-stop on the mean dev token accuracy;
    keep the best checkpoint.  Divergence aborts with the last good state."""
    config.validate()
    model = build_model(config, schemas, vocab)
    if init_params is not None:
        assign_parameters(model, init_params)
    encoded = encode_examples(train_examples, schemas, vocab)
    batch_rng = np.random.default_rng([config.seed, 1])
    dropout_rng = np.random.default_rng([config.seed, 2])
    model.set_dropout_rng(dropout_rng)
    params = model.parameters()
    state = TrainState(params=params)
    best_params = {name: t.data.copy() for name, t in params.items()}
    best_epoch = 0
    rows: list[EpochRow] = []
    aborted = False

    for epoch in range(1, config.max_epochs + 1):
        epoch_nll = {s.name: 0.0 for s in schemas}
        epoch_units = {s.name: 0 for s in schemas}
        failed = False
        for batch in make_batches(encoded, config.batch_size, batch_rng):
            ad.tape_reset()
            model.zero_grad()
            result = model.forward_batch(batch.examples, training=True)
            total = float(result.total.data)
            if not math.isfinite(total):
                log.error("epoch %d: loss diverged (%.3g), aborting", epoch, total)
                failed = True
                break
            ad.backward(result.total)
            grads = {name: t.grad for name, t in params.items() if t.grad is not None}
            ad.clip_gradients(grads.values(), config.clip_norm)
            try:
                adam_step(state, grads, lr=config.learning_rate)
            except TrainingError:
                log.exception("epoch %d: optimizer abort", epoch)
                failed = True
                break
            for name, tensor in result.task_tensors.items():
                epoch_nll[name] += float(tensor.data) * result.unit_counts[name]
                epoch_units[name] += result.unit_counts[name]
        ad.tape_reset()
        if failed:
            aborted = True
            break

        task_losses = {
            name: epoch_nll[name] / max(1, epoch_units[name]) for name in epoch_nll
        }
        scores = evaluate_model(model, dev_examples)
        dev_accuracies = {name: ev.accuracy for name, ev in scores.items()}
        dev_mean = sum(dev_accuracies.values()) / len(dev_accuracies)
        rows.append(
            EpochRow(
                epoch=epoch,
                total_loss=sum(task_losses.values()),
                task_losses=task_losses,
                dev_accuracies=dev_accuracies,
                dev_mean=dev_mean,
            )
        )
        log.info(
            "epoch %d: loss %.4f, dev %s",
            epoch, rows[-1].total_loss,
            " ".join(f"{k}={v:.4f}" for k, v in dev_accuracies.items()),
        )

        if dev_mean > state.best_metric:
            state.best_metric = dev_mean
            state.epochs_since_improvement = 0
            best_params = {name: t.data.copy() for name, t in params.items()}
            best_epoch = epoch
        else:
            state.epochs_since_improvement += 1
        if config.target_metric is not None and dev_mean >= config.target_metric:
            break
        if state.epochs_since_improvement > config.patience:
            break

    checkpoint = Checkpoint(
        config=config, vocab=vocab, schemas=schemas, params=best_params
    )
    return TrainResult(checkpoint=checkpoint, log=rows, best_epoch=best_epoch, aborted=aborted)


def write_training_log(path, rows: list[EpochRow], schemas: list[LevelSchema],
                       header_lines: list[str] | None = None) -> None:
    """Tab-separated per-epoch log: epoch, total loss, per-task losses, dev
    accuracies, and their mean."""
    names = [s.name for s in schemas]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        cols = (["epoch", "loss"] + [f"loss_{n}" for n in names]
                + [f"dev_{n}" for n in names] + ["dev_mean"])
        fh.write("\t".join(cols) + "\n")
        for row in rows:
            values = [str(row.epoch), f"{row.total_loss:.6f}"]
            values += [f"{row.task_losses[n]:.6f}" for n in names]
            values += [f"{row.dev_accuracies[n]:.6f}" for n in names]
            values.append(f"{row.dev_mean:.6f}")
            fh.write("\t".join(values) + "\n")
