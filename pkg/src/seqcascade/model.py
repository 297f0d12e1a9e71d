"""The multi-task cascade: one encoder, I decoders in fixed order, each
decoder attending to the encoder and to every previous decoder."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import layers
from .autodiff import Tensor
from .config import ModelConfig
from .corpus import LevelSchema, Vocabulary
from .errors import EmptyInputError, SchemaError
from .symbols import SOT

NEG_BIAS = -1e9  # additive logit mask; underflows to exactly zero probability


@dataclass
class MemoryList:
    """Hidden-state matrices available to the next decoder: the encoder
    memory first, then one entry per already-run decoder."""

    entries: list[tuple[Tensor, np.ndarray]] = field(default_factory=list)

    def append(self, memory: Tensor, mask: np.ndarray) -> None:
        self.entries.append((memory, mask))

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class LossReport:
    """Per-task mean cross-entropies, their sum, and the unit counts that
    entered each mean."""

    task_losses: dict[str, float]
    total: float
    unit_counts: dict[str, int]
    accuracies: dict[str, float] | None = None


@dataclass
class ForwardResult:
    """Joint forward pass: the differentiable loss tensors plus the float
    report."""

    total: Tensor
    task_tensors: dict[str, Tensor]
    unit_counts: dict[str, int]

    @property
    def report(self) -> LossReport:
        task_losses = {k: float(v.data) for k, v in self.task_tensors.items()}
        return LossReport(task_losses, float(self.total.data), dict(self.unit_counts))


@dataclass
class EncodedExample:
    """One sentence resolved to vocabulary ids.  Target sequences carry their
    trailing <EOS> id."""

    source_ids: list[int]
    target_ids: dict[str, list[int]]
    n_tokens: int
    meta: dict = field(default_factory=dict)


@dataclass
class Prediction:
    units: dict[str, list[str]]
    ids: dict[str, list[int]]
    attention: dict[str, list[list[np.ndarray]]]  # per task: per step: one weight vector per memory
    truncated: dict[str, bool]


class Decoder:
    def __init__(self, index: int, level: LevelSchema, config: ModelConfig,
                 rng: np.random.Generator):
        h = config.hidden_dim
        cells = []
        for depth in range(config.decoder_layers):
            input_dim = config.embed_dim + h if depth == 0 else h
            cells.append(layers.LstmCellParams(input_dim, h, rng))
        self.stack = layers.LstmStack(cells, dropout_p=config.dropout)
        # attention 0 looks at the encoder; attention k >= 1 at decoder k
        self.attentions = [
            layers.AttentionParams(h, h, h, rng) for _ in range(index)
        ]
        self.index = index
        self.level = level


class CascadeModel:
    """Shared embedding, bidirectional encoder, and a chain of decoders whose
    contexts are fused by plain summation."""

    def __init__(self, config: ModelConfig, schemas: list[LevelSchema],
                 vocab: Vocabulary, rng: np.random.Generator):
        config.validate()
        if [s.name for s in schemas] != list(config.tasks):
            raise SchemaError("schema order must match the configured task order")
        for schema in schemas:
            missing = [s for s in schema.symbols if s not in vocab]
            if missing:
                raise SchemaError(
                    f"level {schema.name!r} symbols missing from vocabulary: {missing[:5]}"
                )
        self.config = config
        self.schemas = schemas
        self.vocab = vocab
        self.embedding = layers.SharedEmbedding(len(vocab), config.embed_dim, rng)
        h = config.hidden_dim
        self.encoder_layers = []
        for depth in range(config.encoder_layers):
            input_dim = config.embed_dim if depth == 0 else h
            fwd = layers.LstmCellParams(input_dim, h, rng)
            bwd = layers.LstmCellParams(input_dim, h, rng)
            merge_w = layers.uniform_param(rng, (2 * h, h))
            merge_b = layers.uniform_param(rng, (1, h))
            self.encoder_layers.append((fwd, bwd, merge_w, merge_b))
        self.decoders = [
            Decoder(i, schema, config, rng)
            for i, schema in enumerate(schemas, start=1)
        ]
        self._dropout_rng: np.random.Generator | None = None
        self._level_bias: dict[str, Tensor] = {}
        self._level_bias_no_eos: dict[str, Tensor] = {}
        for s in schemas:
            bias = self._make_bias(s.symbols)
            self._level_bias[s.name] = Tensor(bias.reshape(1, -1))
            no_eos = bias.copy()
            no_eos[vocab.eos_id] = NEG_BIAS
            self._level_bias_no_eos[s.name] = Tensor(no_eos.reshape(1, -1))
        self._legal_ids = {
            s.name: frozenset(vocab.id(sym) for sym in s.symbols) for s in schemas
        }

    # ------------------------------------------------------------------

    def _make_bias(self, symbols: list[str]) -> np.ndarray:
        bias = np.full(len(self.vocab), NEG_BIAS, dtype=ad.default_dtype())
        for s in symbols:
            bias[self.vocab.id(s)] = 0.0
        return bias

    def set_dropout_rng(self, rng: np.random.Generator | None) -> None:
        self._dropout_rng = rng

    def parameters(self) -> dict[str, Tensor]:
        """Stable dotted-path parameter map (checkpoint & smart-init order)."""
        params: dict[str, Tensor] = {"embedding.table": self.embedding.table}
        for depth, (fwd, bwd, merge_w, merge_b) in enumerate(self.encoder_layers):
            for name, t in fwd.named():
                params[f"encoder.{depth}.fwd.{name}"] = t
            for name, t in bwd.named():
                params[f"encoder.{depth}.bwd.{name}"] = t
            params[f"encoder.{depth}.merge.w"] = merge_w
            params[f"encoder.{depth}.merge.b"] = merge_b
        for decoder in self.decoders:
            base = f"decoder.{decoder.index}"
            for depth, cell in enumerate(decoder.stack.layers):
                for name, t in cell.named():
                    params[f"{base}.stack.{depth}.{name}"] = t
            for k, attn in enumerate(decoder.attentions):
                for name, t in attn.named():
                    params[f"{base}.attn.{k}.{name}"] = t
        return params

    def zero_grad(self) -> None:
        for t in self.parameters().values():
            t.zero_grad()

    # ------------------------------------------------------------------
    # forward

    def encode(self, source_ids: list[int], training: bool = False) -> tuple[Tensor, np.ndarray]:
        if not source_ids:
            raise EmptyInputError("cannot encode an empty sequence")
        p = self.config.dropout
        rng = self._dropout_rng
        emb = self.embedding.lookup(source_ids)
        emb = ad.dropout(emb, p, training, rng)
        stack = []
        merges = []
        for fwd, bwd, merge_w, merge_b in self.encoder_layers:
            stack.extend((fwd, bwd))
            merges.append((merge_w, merge_b))
        memory = layers.run_stack(
            emb, stack, bidirectional=True, dropout_p=p,
            training=training, rng=rng, merges=merges,
        )
        return memory, np.ones(len(source_ids), dtype=bool)

    def _start_decoder(self, decoder: Decoder, memories: MemoryList):
        if len(memories) != len(decoder.attentions):
            raise SchemaError(
                f"decoder {decoder.index} expects {len(decoder.attentions)} memories, "
                f"got {len(memories)}"
            )
        cells = decoder.stack.start()
        states = decoder.stack.initial_state()
        keys = [
            attn.project_keys(mem)
            for (mem, _), attn in zip(memories.entries, decoder.attentions)
        ]
        return cells, states, keys

    def _decode_step(self, decoder: Decoder, cells, states, keys, memories: MemoryList,
                     prev_id: int, prev_fused: Tensor, bias: Tensor, training: bool):
        p = self.config.dropout
        rng = self._dropout_rng
        emb = ad.dropout(self.embedding.lookup([prev_id]), p, training, rng)
        x = ad.concat_cols([emb, prev_fused])
        h_top, states = decoder.stack.step(cells, x, states, training, rng)
        contexts = []
        weights = []
        for (mem, mask), attn, key in zip(memories.entries, decoder.attentions, keys):
            ctx, w = layers.attend(h_top, mem, mask, attn, projected_keys=key)
            contexts.append(ctx)
            weights.append(w)
        fused = layers.fuse_contexts(contexts)
        pre = ad.dropout(fused, p, training, rng)
        logits = layers.project_output(pre, self.embedding)
        logits = ad.add(logits, bias)
        return logits, h_top, fused, states, weights

    def decode_teacher_forced(
        self, i: int, memories: MemoryList, gold_ids: list[int], training: bool = False
    ) -> tuple[Tensor, Tensor]:
        """Run decoder i over the gold sequence (start marker first), return
        the (T, V) level-masked logits and the (T, h) hidden-state memory."""
        decoder = self.decoders[i - 1]
        schema = decoder.level
        legal = self._legal_ids[schema.name]
        outside = [g for g in gold_ids if g not in legal]
        if outside:
            raise SchemaError(
                f"gold symbol {self.vocab.symbol(outside[0])!r} outside level "
                f"{schema.name!r}"
            )
        if not gold_ids:
            raise EmptyInputError(f"empty gold sequence for level {schema.name!r}")
        bias = self._level_bias[schema.name]
        cells, states, keys = self._start_decoder(decoder, memories)
        prev = self.vocab.sos_id(schema.name)
        prev_fused = Tensor(np.zeros((1, self.config.hidden_dim)))
        logit_rows = []
        h_rows = []
        for t in range(len(gold_ids)):
            logits, h_top, fused, states, _ = self._decode_step(
                decoder, cells, states, keys, memories, prev, prev_fused, bias, training
            )
            logit_rows.append(logits)
            h_rows.append(h_top)
            prev = gold_ids[t]
            prev_fused = fused
        return ad.stack_rows(logit_rows), ad.stack_rows(h_rows)

    def forward_batch(self, batch: list[EncodedExample], training: bool = True) -> ForwardResult:
        """Teacher-forced joint loss over a batch; per-task losses are mean
        cross-entropies over all target positions in the batch."""
        sums: dict[str, Tensor | None] = {s.name: None for s in self.schemas}
        counts: dict[str, int] = {s.name: 0 for s in self.schemas}
        for example in batch:
            memory, mask = self.encode(example.source_ids, training)
            memories = MemoryList([(memory, mask)])
            for i, schema in enumerate(self.schemas, start=1):
                gold = example.target_ids.get(schema.name)
                if gold is None:
                    raise SchemaError(f"example missing level {schema.name!r}")
                logits, h_i = self.decode_teacher_forced(i, memories, gold, training)
                nll = ad.cross_entropy(logits, gold, reduction="sum")
                sums[schema.name] = nll if sums[schema.name] is None else ad.add(sums[schema.name], nll)
                counts[schema.name] += len(gold)
                memories.append(h_i, np.ones(len(gold), dtype=bool))
        task_tensors: dict[str, Tensor] = {}
        total: Tensor | None = None
        for schema in self.schemas:
            mean = ad.scale(sums[schema.name], 1.0 / counts[schema.name])
            task_tensors[schema.name] = mean
            total = mean if total is None else ad.add(total, mean)
        return ForwardResult(total=total, task_tensors=task_tensors, unit_counts=counts)

    def forward_train(self, example: EncodedExample, training: bool = True) -> ForwardResult:
        return self.forward_batch([example], training)

    # ------------------------------------------------------------------
    # inference

    def length_cap(self, source_len: int) -> int:
        return math.ceil(1.5 * source_len) + 10

    def _infer_token_count(self, source_ids: list[int]) -> int:
        sot = self.vocab.id(SOT) if SOT in self.vocab else -1
        n = sum(1 for s in source_ids if s == sot)
        return n if n > 0 else len(source_ids)

    def predict(self, source_ids: list[int], n_tokens: int | None = None) -> Prediction:
        """Greedy cascade decoding; each task's realized hidden states become
        memory for the next task."""
        with ad.no_grad():
            memory, mask = self.encode(source_ids, training=False)
            memories = MemoryList([(memory, mask)])
            cap = self.length_cap(len(source_ids))
            if n_tokens is None:
                n_tokens = self._infer_token_count(source_ids)
            eos = self.vocab.eos_id
            units: dict[str, list[str]] = {}
            ids: dict[str, list[int]] = {}
            attention: dict[str, list[list[np.ndarray]]] = {}
            truncated: dict[str, bool] = {}
            for i, schema in enumerate(self.schemas, start=1):
                decoder = self.decoders[i - 1]
                fixed_steps = n_tokens if schema.kind == "token-label" else None
                # schema-constrained levels emit one label per token: no <EOS>
                bias = (self._level_bias_no_eos if fixed_steps is not None
                        else self._level_bias)[schema.name]
                cells, states, keys = self._start_decoder(decoder, memories)
                prev = self.vocab.sos_id(schema.name)
                prev_fused = Tensor(np.zeros((1, self.config.hidden_dim)))
                out_ids: list[int] = []
                h_rows = []
                trace: list[list[np.ndarray]] = []
                was_truncated = False
                limit = fixed_steps if fixed_steps is not None else cap
                for _ in range(limit):
                    logits, h_top, fused, states, weights = self._decode_step(
                        decoder, cells, states, keys, memories, prev, prev_fused,
                        bias, training=False,
                    )
                    h_rows.append(h_top)
                    trace.append(weights)
                    symbol = int(np.argmax(logits.data[0]))
                    if symbol == eos and fixed_steps is None:
                        break
                    out_ids.append(symbol)
                    prev = symbol
                    prev_fused = fused
                else:
                    was_truncated = fixed_steps is None
                if fixed_steps is not None:
                    # run the would-be <EOS> step so this memory matches the
                    # teacher-forced shape downstream decoders trained against
                    _, h_top, _, states, weights = self._decode_step(
                        decoder, cells, states, keys, memories, prev, prev_fused,
                        self._level_bias[schema.name], training=False,
                    )
                    h_rows.append(h_top)
                    trace.append(weights)
                units[schema.name] = self.vocab.decode(out_ids)
                ids[schema.name] = out_ids
                attention[schema.name] = trace
                truncated[schema.name] = was_truncated
                memories.append(
                    ad.stack_rows(h_rows), np.ones(len(h_rows), dtype=bool)
                )
        return Prediction(units=units, ids=ids, attention=attention, truncated=truncated)


def build_model(
    config: ModelConfig,
    schemas: list[LevelSchema],
    vocab: Vocabulary,
) -> CascadeModel:
    """Assemble a cascade with parameters drawn uniformly from [-0.1, 0.1]
    (forget-gate biases start at 1.0), seeded by config.seed."""
    rng = np.random.default_rng(config.seed)
    return CascadeModel(config, schemas, vocab, rng)
