"""LSTM stacks, additive attention, and the tied embedding/projection."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import EmptyInputError, MaskError, ShapeError

GATES = ("i", "f", "o", "c")


def uniform_param(rng: np.random.Generator, shape, low=-0.1, high=0.1) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


class LstmCellParams:
    """One LSTM layer: per-gate input and recurrent matrices plus biases.

    Gate order is input, forget, output, candidate.  The forget-gate bias is
    initialized to 1.0 so memory persists early in training.
    """

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        for gate in GATES:
            setattr(self, f"w_{gate}", uniform_param(rng, (input_dim, hidden_dim)))
            setattr(self, f"u_{gate}", uniform_param(rng, (hidden_dim, hidden_dim)))
            b = uniform_param(rng, (1, hidden_dim))
            if gate == "f":
                b.data[:] = 1.0
            setattr(self, f"b_{gate}", b)

    def named(self):
        for gate in GATES:
            for prefix in ("w", "u", "b"):
                name = f"{prefix}_{gate}"
                yield name, getattr(self, name)

    def fused(self) -> tuple[Tensor, Tensor, Tensor]:
        """Concatenate the four gates column-wise; recorded on the tape so
        gradients land back on the per-gate tensors."""
        w = ad.concat_cols([getattr(self, f"w_{g}") for g in GATES])
        u = ad.concat_cols([getattr(self, f"u_{g}") for g in GATES])
        b = ad.concat_cols([getattr(self, f"b_{g}") for g in GATES])
        return w, u, b

    def zero_state(self) -> tuple[Tensor, Tensor]:
        z = np.zeros((1, self.hidden_dim))
        return Tensor(z), Tensor(z.copy())


def lstm_step(x_t: Tensor, state: tuple[Tensor, Tensor], params: LstmCellParams) -> tuple[Tensor, Tensor]:
    """One LSTM recurrence with sigmoid gates and tanh candidate/output."""
    h, c = state
    if x_t.shape != (1, params.input_dim) or h.shape != (1, params.hidden_dim):
        raise ShapeError(
            f"lstm_step: x {x_t.shape}, h {h.shape} vs params "
            f"({params.input_dim}, {params.hidden_dim})"
        )

    def gate(name, fn):
        pre = ad.add(
            ad.add(ad.matmul(x_t, getattr(params, f"w_{name}")),
                   ad.matmul(h, getattr(params, f"u_{name}"))),
            getattr(params, f"b_{name}"),
        )
        return fn(pre)

    i = gate("i", ad.sigmoid)
    f = gate("f", ad.sigmoid)
    o = gate("o", ad.sigmoid)
    g = gate("c", ad.tanh)
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


class _FusedCell:
    """Runtime view of a cell with the gate matrices pre-concatenated.

    Mathematically identical to `lstm_step` up to float reassociation; two
    matmuls per step instead of eight.
    """

    def __init__(self, params: LstmCellParams):
        self.h = params.hidden_dim
        self.w, self.u, self.b = params.fused()

    def step(self, x_t: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        h, c = state
        pre = ad.add(ad.add(ad.matmul(x_t, self.w), ad.matmul(h, self.u)), self.b)
        n = self.h
        i = ad.sigmoid(ad.slice_cols(pre, 0, n))
        f = ad.sigmoid(ad.slice_cols(pre, n, 2 * n))
        o = ad.sigmoid(ad.slice_cols(pre, 2 * n, 3 * n))
        g = ad.tanh(ad.slice_cols(pre, 3 * n, 4 * n))
        c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
        h_new = ad.mul(o, ad.tanh(c_new))
        return h_new, c_new


class LstmStack:
    """Unidirectional multi-layer LSTM advanced one timestep at a time."""

    def __init__(self, layers: Sequence[LstmCellParams], dropout_p: float = 0.0):
        if not layers:
            raise ShapeError("LstmStack needs at least one layer")
        self.layers = list(layers)
        self.dropout_p = dropout_p

    def initial_state(self):
        return [layer.zero_state() for layer in self.layers]

    def start(self):
        """Build the fused per-layer views for one forward pass."""
        return [_FusedCell(layer) for layer in self.layers]

    def step(self, cells, x_t: Tensor, states, training=False, rng=None):
        new_states = []
        h = x_t
        for depth, (cell, state) in enumerate(zip(cells, states)):
            if depth > 0:
                h = ad.dropout(h, self.dropout_p, training, rng)
            h, c = cell.step(h, state)
            new_states.append((h, c))
        return h, new_states


def run_stack(
    inputs: Tensor,
    stack: Sequence[LstmCellParams],
    bidirectional: bool = False,
    dropout_p: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
    merges: Sequence[tuple[Tensor, Tensor]] | None = None,
) -> Tensor:
    """Run a (T, d) sequence through stacked LSTM layers, returning the
    per-timestep hidden states of the top layer as (T, h).

    Bidirectional mode pairs layers as (forward, backward) and needs one
    `merges` entry per pair: a (2h, h) projection plus bias that folds the
    two directions back to width h.
    """
    if inputs.data.ndim != 2 or inputs.shape[0] == 0:
        raise EmptyInputError("run_stack needs a nonempty (T, d) input")
    if bidirectional:
        if len(stack) % 2 != 0:
            raise ShapeError("bidirectional stack needs forward/backward layer pairs")
        pairs = [(stack[k], stack[k + 1]) for k in range(0, len(stack), 2)]
        if merges is None or len(merges) != len(pairs):
            raise ShapeError("bidirectional run_stack needs one merge projection per pair")
    seq = ad.split_rows(inputs)
    t_len = len(seq)

    def sweep(layer: LstmCellParams, rows, reverse: bool):
        cell = _FusedCell(layer)
        state = layer.zero_state()
        order = range(t_len - 1, -1, -1) if reverse else range(t_len)
        outputs: list[Tensor | None] = [None] * t_len
        for t in order:
            h, c = cell.step(rows[t], state)
            state = (h, c)
            outputs[t] = h
        return outputs

    rows = seq
    if bidirectional:
        for depth, ((fwd, bwd), (merge_w, merge_b)) in enumerate(zip(pairs, merges)):
            if depth > 0:
                dropped = ad.dropout(ad.stack_rows(rows), dropout_p, training, rng)
                rows = ad.split_rows(dropped)
            f_out = sweep(fwd, rows, reverse=False)
            b_out = sweep(bwd, rows, reverse=True)
            rows = [
                ad.add(ad.matmul(ad.concat_cols([f, b]), merge_w), merge_b)
                for f, b in zip(f_out, b_out)
            ]
    else:
        for depth, layer in enumerate(stack):
            if depth > 0:
                dropped = ad.dropout(ad.stack_rows(rows), dropout_p, training, rng)
                rows = ad.split_rows(dropped)
            rows = sweep(layer, rows, reverse=False)
    return ad.stack_rows(rows)


class AttentionParams:
    """Additive attention: score(q, m) = v . tanh(q Wq + m Wk)."""

    def __init__(self, query_dim: int, key_dim: int, attn_dim: int, rng: np.random.Generator):
        self.query_proj = uniform_param(rng, (query_dim, attn_dim))
        self.key_proj = uniform_param(rng, (key_dim, attn_dim))
        self.score = uniform_param(rng, (attn_dim, 1))

    def named(self):
        yield "query_proj", self.query_proj
        yield "key_proj", self.key_proj
        yield "score", self.score

    def project_keys(self, memory: Tensor) -> Tensor:
        """Precompute (S, A) key projections once per memory."""
        return ad.matmul(memory, self.key_proj)


def attend(
    query: Tensor,
    memory: Tensor,
    mask: np.ndarray | None,
    params: AttentionParams,
    projected_keys: Tensor | None = None,
) -> tuple[Tensor, np.ndarray]:
    """Additive attention of a (1, h) query over (S, h) memory rows.

    Returns the (1, h) context vector and the attention weights (masked
    positions are exactly zero).  Pass `projected_keys` to reuse key
    projections across decoding steps.
    """
    s = memory.shape[0]
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (s,):
            raise ShapeError("attention mask length mismatch")
        if not mask.any():
            raise MaskError("attention over fully masked memory")
    keys = projected_keys if projected_keys is not None else params.project_keys(memory)
    q = ad.matmul(query, params.query_proj)
    scores = ad.matmul(ad.tanh(ad.add(keys, q)), params.score)  # (S, 1)
    weights = ad.softmax(_as_row(scores), mask=None if mask is None else mask.reshape(1, -1))
    context = ad.matmul(weights, memory)
    return context, weights.data.reshape(-1).copy()


def _as_row(col: Tensor) -> Tensor:
    """(S, 1) -> (1, S) transpose as a recorded op."""
    out = Tensor(col.data.T.copy())

    def bwd(g):
        return ((col, g.T.copy()),)

    ad._record((col,), (out,), bwd)
    return out


def fuse_contexts(contexts: Sequence[Tensor]) -> Tensor:
    """Elementwise sum of equally sized context vectors (no gating)."""
    if not contexts:
        raise ShapeError("fuse_contexts of nothing")
    fused = contexts[0]
    for c in contexts[1:]:
        fused = ad.add(fused, c)
    return fused


class SharedEmbedding:
    """One table over the joint symbol vocabulary, used for every lookup and,
    transposed, as the output projection of every decoder."""

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator):
        self.table = uniform_param(rng, (vocab_size, dim))

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def lookup(self, ids: Sequence[int]) -> Tensor:
        return ad.embedding_lookup(self.table, ids)


def project_output(hidden: Tensor, embedding: SharedEmbedding) -> Tensor:
    """Tied-weight logits over the full vocabulary: hidden @ table^T."""
    if hidden.shape[1] != embedding.dim:
        raise ShapeError(
            f"project_output: hidden width {hidden.shape[1]} vs embedding dim {embedding.dim}"
        )
    return ad.matmul_nt(hidden, embedding.table)
