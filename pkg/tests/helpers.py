"""Shared test scaffolding: synthetic corpora, tag grammars, and the
finite-difference gradient oracle."""

from __future__ import annotations

import math

import numpy as np

from seqcascade import autodiff as ad
from seqcascade.config import ModelConfig
from seqcascade.corpus import (
    LevelSchema,
    SequenceExample,
    build_vocabulary,
    segment_corpus,
)
from seqcascade.model import build_model
from seqcascade.training import encode_examples

# ---------------------------------------------------------------------------
# three-task corpus: class label, char transduction, componentized tags

TOY_ALPHABET = "abdu"
TOY_CLASSES = ["arabizi", "foreign", "emotag"]
_ROT = {c: TOY_ALPHABET[(i + 1) % len(TOY_ALPHABET)] for i, c in enumerate(TOY_ALPHABET)}


def toy_transduce(token: str) -> str:
    return "".join(_ROT[c] for c in token)


def toy_class(token: str) -> str:
    return TOY_CLASSES[len(token) % 3]


def toy_tag(token: str) -> str:
    t = toy_transduce(token)
    core = "PV" if t[0] in "aeiou" else "NN"
    return f"{core}_SUBJ:{len(t)}{'M' if len(t) % 2 else 'F'}S"


def toy3_schemas() -> list[LevelSchema]:
    return [
        LevelSchema("cls", "token-label"),
        LevelSchema("xlit", "char"),
        LevelSchema("pos", "patb-tag"),
    ]


def toy3_corpus(n_sentences: int, seed: int) -> list[SequenceExample]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_sentences):
        k = int(rng.integers(2, 5))
        tokens = [
            "".join(rng.choice(list(TOY_ALPHABET), size=int(rng.integers(1, 4))))
            for _ in range(k)
        ]
        out.append(
            SequenceExample(
                source_tokens=tokens,
                targets={
                    "cls": [toy_class(t) for t in tokens],
                    "xlit": [toy_transduce(t) for t in tokens],
                    "pos": [toy_tag(t) for t in tokens],
                },
                meta={"sid": i},
            )
        )
    return out


def prepared_toy3(n_sentences: int = 32, seed: int = 7):
    schemas = toy3_schemas()
    examples = toy3_corpus(n_sentences, seed)
    segment_corpus(examples, schemas, "char")
    vocab = build_vocabulary(examples, schemas)
    return schemas, vocab, examples


def toy3_config(**overrides) -> ModelConfig:
    base = dict(
        tasks=["cls", "xlit", "pos"], embed_dim=64, hidden_dim=64,
        encoder_layers=1, decoder_layers=1, dropout=0.0,
        learning_rate=5e-3, batch_size=2, max_epochs=500, patience=1000,
        seed=11, target_metric=1.0,
    )
    base.update(overrides)
    return ModelConfig(**base)


# ---------------------------------------------------------------------------
# two-level morpho corpus: coarse core tags plus rich dot-feature labels

RICH_ALPHABET = "abdegimnorstu"
RICH_VOWELS = set("aeiou")
_CORES = ["NA", "VB", "AD", "PR"]


def rich_core(token: str) -> str:
    """Coarse tag from the token's boundary characters."""
    return _CORES[2 * int(token[0] in RICH_VOWELS) + int(token[-1] in RICH_VOWELS)]


def rich_label(token: str) -> str:
    """Rich label: the core tag plus dot-separated feature components, each a
    deterministic function of the token's surface."""
    vowels = sum(c in RICH_VOWELS for c in token)
    parts = [
        rich_core(token),
        f"G{int(token[0] in RICH_VOWELS)}",
        f"H{int(token[-1] in RICH_VOWELS)}",
        f"K{vowels % 2}",
        f"M{len(token) % 5}",
    ]
    return ".".join(parts)


def rich_schemas(char_decoding: bool = True) -> list[LevelSchema]:
    morpho_kind = "tiger-label" if char_decoding else "token-label"
    pos_kind = "token-label"
    return [LevelSchema("pos", pos_kind), LevelSchema("morpho", morpho_kind)]


def rich_corpus(n_sentences: int, seed: int) -> list[SequenceExample]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_sentences):
        k = int(rng.integers(3, 7))
        tokens = [
            "".join(rng.choice(list(RICH_ALPHABET), size=int(rng.integers(2, 7))))
            for _ in range(k)
        ]
        out.append(
            SequenceExample(
                source_tokens=tokens,
                targets={
                    "pos": [rich_core(t) for t in tokens],
                    "morpho": [rich_label(t) for t in tokens],
                },
                meta={"sid": i},
            )
        )
    return out


# ---------------------------------------------------------------------------
# grammar-based tag samplers (independent of the componentizer under test)

_PATB_CORES = ["PV", "IV", "NN", "NOUN", "PREP", "PRON", "DET", "ADJ", "PVSUFF", "IVSUFF", "PRT"]
_PATB_FEATS = ["SUBJ", "IO", "DO", "OBJ", "GEN", "QUANT"]


def sample_patb_tag(rng: np.random.Generator) -> str:
    """Random tag from the concatenative grammar: cores with optional feature
    bundles, joined by '-' (core-core), '+', or bracketed groups."""

    def features() -> str:
        out = ""
        if rng.random() < 0.5:
            out += "_" + str(rng.choice(_PATB_FEATS))
        if rng.random() < 0.5:
            out += ":" + str(rng.integers(1, 4))
            for _ in range(int(rng.integers(0, 3))):
                out += str(rng.choice(list("MFSD")))
        if rng.random() < 0.2:
            out += "_" + str(rng.integers(1, 4))
            if rng.random() < 0.8:
                out += str(rng.choice(list("SP")))
        return out

    def segment() -> str:
        return str(rng.choice(_PATB_CORES)) + features()

    parts = [segment()]
    for _ in range(int(rng.integers(0, 3))):
        joiner = rng.choice(["-", "+", "[]"], p=[0.4, 0.4, 0.2])
        if joiner == "-":
            # '-' joins two bare cores
            if not parts[-1][-1].isalpha() or not parts[-1].isalnum():
                joiner = "+"
        if joiner == "[]":
            inner = segment()
            if rng.random() < 0.5:
                inner += "+" + segment()
            parts.append("[" + inner + "]")
        elif joiner == "-":
            parts.append("-" + str(rng.choice(_PATB_CORES)) + features())
        else:
            parts.append("+" + segment())
    return "".join(parts)


def sample_tiger_label(rng: np.random.Generator) -> str:
    core = str(rng.choice(["ADJA", "NN", "VVFIN", "KON", "APPR", "ART", "PPER"]))
    n = int(rng.integers(0, 5))
    feats = [str(rng.choice(["PoS", "Nom", "Acc", "Dat", "Sg", "Pl", "Masc", "Fem", "Neut", "3"]))
             for _ in range(n)]
    return ".".join([core] + feats)


def random_token(rng: np.random.Generator, alphabet: str = "abcdefgh", max_len: int = 8) -> str:
    return "".join(rng.choice(list(alphabet), size=int(rng.integers(1, max_len + 1))))


# ---------------------------------------------------------------------------
# finite differences

EPS = 1e-3


def fd_gradients(loss_fn, tensor: ad.Tensor, eps: float = EPS) -> np.ndarray:
    """Central finite differences of loss_fn() w.r.t. every entry of `tensor`."""
    flat = tensor.data.reshape(-1)
    grad = np.zeros_like(flat)
    with ad.no_grad():
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = loss_fn()
            flat[k] = orig - eps
            down = loss_fn()
            flat[k] = orig
            grad[k] = (up - down) / (2 * eps)
    return grad.reshape(tensor.data.shape)


def assert_grad_close(analytic: np.ndarray, numeric: np.ndarray,
                      rtol: float = 1e-3, atol: float = 1e-6, label: str = ""):
    analytic = np.zeros_like(numeric) if analytic is None else analytic
    diff = np.abs(analytic - numeric)
    bound = rtol * np.maximum(np.abs(analytic), np.abs(numeric)) + atol
    if not (diff <= bound).all():
        worst = float((diff - bound).max())
        raise AssertionError(
            f"gradient mismatch{' for ' + label if label else ''}: "
            f"worst excess {worst:.3e}, max diff {float(diff.max()):.3e}"
        )


# ---------------------------------------------------------------------------
# tiny cascade for gradient oracles (vocab 10, hidden <= 8, 3 tasks)


def tiny_cascade():
    """Cascade small enough for exhaustive finite differences: joint vocab of
    exactly 10 symbols, hidden width 6, three one-layer decoders."""
    schemas = [
        LevelSchema("cls", "token-label"),
        LevelSchema("xlit", "char"),
        LevelSchema("pos", "patb-tag"),
    ]
    ex = SequenceExample(
        source_tokens=["ab", "a"],
        targets={"cls": ["a", "b"], "xlit": ["b", "ab"], "pos": ["b", "a"]},
        meta={"sid": 0},
    )
    examples = [ex]
    segment_corpus(examples, schemas, "char")
    vocab = build_vocabulary(examples, schemas)
    assert len(vocab) == 10
    config = ModelConfig(
        tasks=["cls", "xlit", "pos"], embed_dim=6, hidden_dim=6,
        encoder_layers=1, decoder_layers=1, dropout=0.0, seed=5,
    )
    model = build_model(config, schemas, vocab)
    encoded = encode_examples(examples, schemas, vocab)
    return model, encoded, schemas, vocab


def count_parameters(model) -> int:
    return sum(t.data.size for t in model.parameters().values())


def log_uniform_loss(n_symbols: int) -> float:
    return math.log(n_symbols)
