"""Corpus machinery: unit segmentation, level schemas, vocabulary building,
column-format I/O, and the strict token-level accuracy metric."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

from . import tags
from .errors import DataError, SchemaError, TagError
from .symbols import EOS, EOT, FIXED_RESERVED, PAD, SOT, UNK, sos_marker

log = logging.getLogger(__name__)

LEVEL_KINDS = ("char", "patb-tag", "tiger-label", "token-label")


@dataclass
class LevelSchema:
    """Declarative description of one annotation level.

    `kind` selects unit granularity and the reconstruction rule:

    ==============  ===================  =========================
    kind            granularity          reconstruction
    ==============  ===================  =========================
    char            char-with-markers    join characters
    patb-tag        tag-components       PATB tag reconstruction
    tiger-label     tag-components       dot-label concatenation
    token-label     token-label          identity
    ==============  ===================  =========================
    """

    name: str
    kind: str
    symbols: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in LEVEL_KINDS:
            raise SchemaError(f"unknown level kind {self.kind!r} for level {self.name!r}")

    @property
    def granularity(self) -> str:
        return {
            "char": "char-with-markers",
            "patb-tag": "tag-components",
            "tiger-label": "tag-components",
            "token-label": "token-label",
        }[self.kind]

    @property
    def uses_markers(self) -> bool:
        return self.kind != "token-label"

    def units_for_token(self, token: str) -> list[str]:
        if self.kind == "char":
            return segment_chars(token)
        if self.kind == "patb-tag":
            return tags.componentize_pos_tag(token)
        if self.kind == "tiger-label":
            return tags.componentize_tiger_label(token)
        return [token]

    def reconstruct_token(self, group: list[str]) -> str:
        """Inverse of `units_for_token` on one marker-delimited group."""
        if self.kind == "char":
            if len(group) < 2 or group[0] != SOT or group[-1] != EOT:
                raise TagError("character group must sit between <SOT>/<EOT>")
            inner = group[1:-1]
            if any(u in (SOT, EOT) for u in inner):
                raise TagError("nested token markers")
            if not inner:
                raise TagError("empty token between markers")
            return "".join(inner)
        if self.kind == "patb-tag":
            return tags.reconstruct_pos_tag(group)
        if self.kind == "tiger-label":
            return tags.reconstruct_tiger_label(group)
        if len(group) != 1:
            raise TagError("token-label group must hold exactly one unit")
        return group[0]

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "symbols": list(self.symbols)}

    @classmethod
    def from_dict(cls, d: dict) -> "LevelSchema":
        return cls(name=d["name"], kind=d["kind"], symbols=list(d["symbols"]))


@dataclass
class SequenceExample:
    """One sentence: source tokens plus one token-aligned annotation list per
    level, and (after segmentation) the per-level unit sequences."""

    source_tokens: list[str]
    targets: dict[str, list[str]] = field(default_factory=dict)
    source_units: list[str] | None = None
    target_units: dict[str, list[str]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def validate_aligned(self) -> None:
        n = len(self.source_tokens)
        for level, toks in self.targets.items():
            if len(toks) != n:
                raise DataError(
                    f"level {level!r} has {len(toks)} annotations for {n} tokens",
                    location=self.meta.get("origin"),
                )


# ---------------------------------------------------------------------------
# segmentation


def segment_chars(token: str) -> list[str]:
    """Wrap a token's Unicode scalar values in start/end markers."""
    if not token:
        raise DataError("cannot segment an empty token")
    if any(c.isspace() for c in token):
        raise DataError(f"token contains whitespace: {token!r}")
    return [SOT, *token, EOT]


def concat_sentence(units_per_token: list[list[str]]) -> list[str]:
    """Concatenate per-token unit lists; boundaries stay recoverable from the
    marker pairs."""
    flat: list[str] = []
    for units in units_per_token:
        flat.extend(units)
    return flat


def split_sentence(units: list[str], schema: LevelSchema) -> list[list[str]]:
    """Strict inverse of `concat_sentence` for well-formed unit sequences."""
    groups = regroup_tokens(units, schema)
    bad = [g for g, ok in groups if not ok]
    if bad:
        raise DataError(f"malformed unit grouping near {bad[0]!r}")
    return [g for g, _ in groups]


def regroup_tokens(units: list[str], schema: LevelSchema) -> list[tuple[list[str], bool]]:
    """Regroup a flat unit stream into per-token groups.

    Marker-free levels treat every unit as its own token.  For marker levels,
    unpaired markers close the current token, and any group touched by a
    marker violation is flagged ill-formed (it can never match gold).
    """
    if not schema.uses_markers:
        return [([u], True) for u in units]
    groups: list[tuple[list[str], bool]] = []
    current: list[str] | None = None
    ok = True
    for u in units:
        if u == SOT:
            if current is not None:
                groups.append((current, False))
            current, ok = [u], True
        elif u == EOT:
            if current is None:
                groups.append(([u], False))
            else:
                current.append(u)
                groups.append((current, ok))
                current = None
        else:
            if current is None:
                current, ok = [u], False
            else:
                current.append(u)
    if current is not None:
        groups.append((current, False))
    return groups


def segment_source(tokens: list[str], decoding: str) -> list[str]:
    """Build the encoder's unit sequence for one sentence.

    char: marker-wrapped characters; token: whole tokens; token+char: the
    marker-wrapped characters of each token followed by the token itself.
    """
    if decoding == "char":
        return concat_sentence([segment_chars(t) for t in tokens])
    if decoding == "token":
        return list(tokens)
    if decoding == "token+char":
        per_token = [segment_chars(t) + [t] for t in tokens]
        return concat_sentence(per_token)
    raise DataError(f"unknown decoding mode {decoding!r}")


def segment_example(example: SequenceExample, schemas: list[LevelSchema], decoding: str = "char") -> None:
    """Populate `source_units` and `target_units` in place."""
    example.validate_aligned()
    example.source_units = segment_source(example.source_tokens, decoding)
    for schema in schemas:
        toks = example.targets[schema.name]
        example.target_units[schema.name] = concat_sentence(
            [schema.units_for_token(t) for t in toks]
        )


def segment_corpus(
    examples: list[SequenceExample], schemas: list[LevelSchema], decoding: str = "char"
) -> None:
    """Segment a whole corpus, pinning componentization failures to their
    file locations."""
    for ex in examples:
        ex.validate_aligned()
        lines = ex.meta.get("lines") or [None] * len(ex.source_tokens)
        origin = ex.meta.get("origin", "")
        path = origin.rsplit(":", 1)[0] if origin else "?"

        def loc(i):
            lineno = lines[i] if i < len(lines) else None
            return f"{path}:{lineno}" if lineno else (origin or None)

        units: list[str] = []
        for i, token in enumerate(ex.source_tokens):
            try:
                units.extend(segment_source([token], decoding))
            except (DataError, TagError) as e:
                raise DataError(f"source token {token!r}: {e}", location=loc(i)) from e
        ex.source_units = units
        for schema in schemas:
            units = []
            for i, token in enumerate(ex.targets[schema.name]):
                try:
                    units.extend(schema.units_for_token(token))
                except (DataError, TagError) as e:
                    raise DataError(
                        f"level {schema.name!r}, token {token!r}: {e}", location=loc(i)
                    ) from e
            ex.target_units[schema.name] = units


def apply_tiger_two_level(
    examples: list[SequenceExample], core_level: str, full_level: str
) -> None:
    """Derive the coarse level from the rich one: the core level becomes the
    substring before the first '.' of each full label."""
    for ex in examples:
        full = ex.targets[full_level]
        ex.targets[core_level] = [tags.derive_tiger_levels(lbl)[0] for lbl in full]


# ---------------------------------------------------------------------------
# vocabulary


class Vocabulary:
    """Bijective symbol/id mapping with frequency counts.

    Ids 0-4 hold <PAD>, <UNK>, <SOT>, <EOT>, <EOS>; one <SOS:level> marker per
    level follows in cascade order, then corpus symbols by descending
    frequency (ties broken lexicographically).
    """

    def __init__(self, symbols: list[str], counts: dict[str, int]):
        self.symbols = list(symbols)
        self.counts = dict(counts)
        self.index = {s: i for i, s in enumerate(self.symbols)}
        if len(self.index) != len(self.symbols):
            raise SchemaError("duplicate symbols in vocabulary")

    @classmethod
    def build(cls, unit_sequences, level_names: list[str]) -> "Vocabulary":
        counter: Counter[str] = Counter()
        for units in unit_sequences:
            counter.update(units)
        reserved = list(FIXED_RESERVED) + [sos_marker(n) for n in level_names]
        body = sorted(
            (s for s in counter if s not in reserved),
            key=lambda s: (-counter[s], s),
        )
        symbols = reserved + body
        return cls(symbols, {s: counter.get(s, 0) for s in symbols})

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self.index

    def id(self, symbol: str) -> int:
        return self.index[symbol]

    def symbol(self, idx: int) -> str:
        return self.symbols[idx]

    def encode(self, units: list[str], allow_unk: bool = False) -> list[int]:
        if allow_unk:
            unk = self.index[UNK]
            return [self.index.get(u, unk) for u in units]
        try:
            return [self.index[u] for u in units]
        except KeyError as e:
            raise SchemaError(f"symbol {e.args[0]!r} not in vocabulary") from None

    def decode(self, ids: list[int]) -> list[str]:
        return [self.symbols[i] for i in ids]

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    def sos_id(self, level_name: str) -> int:
        return self.index[sos_marker(level_name)]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for i, s in enumerate(self.symbols):
                fh.write(f"{i}\t{s}\t{self.counts.get(s, 0)}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        symbols: list[str] = []
        counts: dict[str, int] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise DataError("vocabulary line needs id, symbol, count",
                                    location=f"{path}:{lineno}")
                idx, sym, cnt = parts
                if int(idx) != len(symbols):
                    raise DataError("vocabulary ids out of order",
                                    location=f"{path}:{lineno}")
                symbols.append(sym)
                counts[sym] = int(cnt)
        return cls(symbols, counts)


def build_vocabulary(
    examples: list[SequenceExample], schemas: list[LevelSchema]
) -> Vocabulary:
    """Joint vocabulary over source and every level, with the level schemas'
    legal symbol sets filled in from what the corpus actually contains."""

    def all_units():
        for ex in examples:
            if ex.source_units is None:
                raise DataError("examples must be segmented before vocabulary building")
            yield ex.source_units
            for schema in schemas:
                yield ex.target_units[schema.name]

    vocab = Vocabulary.build(all_units(), [s.name for s in schemas])
    for schema in schemas:
        seen: set[str] = set(schema.symbols)
        for ex in examples:
            seen.update(ex.target_units[schema.name])
        seen.add(EOS)
        schema.symbols = sorted(seen)
    return vocab


# ---------------------------------------------------------------------------
# column-format corpus I/O


def load_column_corpus(
    path,
    source_column: int,
    level_columns: dict[str, int],
    genre_column: int | None = None,
) -> list[SequenceExample]:
    """Read a UTF-8 tab-separated corpus: one token per line, one column per
    level, blank line between sentences, '#' lines ignored."""
    needed = max([source_column, *level_columns.values()]
                 + ([genre_column] if genre_column is not None else []))
    examples: list[SequenceExample] = []
    tokens: list[str] = []
    targets: dict[str, list[str]] = {name: [] for name in level_columns}
    lines: list[int] = []
    genre = None
    start_line = None

    def flush():
        nonlocal tokens, targets, lines, genre, start_line
        if tokens:
            ex = SequenceExample(
                source_tokens=tokens,
                targets={k: v for k, v in targets.items()},
                meta={"sid": len(examples), "origin": f"{path}:{start_line}",
                      "lines": lines},
            )
            if genre is not None:
                ex.meta["genre"] = genre
            ex.validate_aligned()
            examples.append(ex)
        tokens = []
        targets = {name: [] for name in level_columns}
        lines = []
        genre = None
        start_line = None

    with open(path, encoding="utf-8") as fh:
        lineno = 0
        for line in fh:
            lineno += 1
            line = line.rstrip("\n")
            if line.startswith("#"):
                continue
            if not line.strip():
                flush()
                continue
            cols = line.split("\t")
            if len(cols) <= needed:
                raise DataError(
                    f"expected at least {needed + 1} columns, found {len(cols)}",
                    location=f"{path}:{lineno}",
                )
            for value in cols[: needed + 1]:
                if value == "" or any(c.isspace() for c in value):
                    raise DataError(
                        "empty or whitespace-bearing field", location=f"{path}:{lineno}"
                    )
            if start_line is None:
                start_line = lineno
            tokens.append(cols[source_column])
            lines.append(lineno)
            for name, col in level_columns.items():
                targets[name].append(cols[col])
            if genre_column is not None:
                genre = cols[genre_column]
        flush()
    if not examples:
        log.warning("empty corpus: %s", path)
    return examples


def write_column_corpus(
    path,
    examples: list[SequenceExample],
    source_column: int,
    level_columns: dict[str, int],
    header_lines: list[str] | None = None,
) -> None:
    """Inverse of `load_column_corpus` (byte-identical round trip for
    LF-normalized files without comments)."""
    n_cols = max([source_column, *level_columns.values()]) + 1
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for header in header_lines or []:
            fh.write(f"# {header}\n")
        for k, ex in enumerate(examples):
            if k:
                fh.write("\n")
            for i, token in enumerate(ex.source_tokens):
                row = ["_"] * n_cols
                row[source_column] = token
                for name, col in level_columns.items():
                    row[col] = ex.targets[name][i]
                fh.write("\t".join(row) + "\n")


def read_comment_header(path) -> list[str]:
    """Leading '#' comment lines of a corpus file, with the marker stripped."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            out.append(line[1:].strip())
    return out


# ---------------------------------------------------------------------------
# accuracy


def token_matches(
    pred_units: list[str], gold_units: list[str], schema: LevelSchema
) -> tuple[int, int]:
    """(matching positions, scored positions) after regrouping both unit
    streams into tokens and reconstructing them.

    A token counts only when its whole reconstructed form matches gold; a
    token-count mismatch scores every unmatched position as wrong.
    """

    def rebuild(units):
        out = []
        for group, ok in regroup_tokens(units, schema):
            if not ok:
                out.append(None)
                continue
            try:
                out.append(schema.reconstruct_token(group))
            except TagError:
                out.append(None)
        return out

    pred = rebuild(pred_units)
    gold = rebuild(gold_units)
    denom = max(len(pred), len(gold))
    matches = sum(
        1
        for p, g in zip(pred, gold)
        if p is not None and g is not None and p == g
    )
    return matches, denom


def token_accuracy(pred_units: list[str], gold_units: list[str], schema: LevelSchema) -> float:
    """Fraction of token positions whose fully reconstructed form matches
    gold exactly; one wrong character or component makes the token wrong."""
    matches, denom = token_matches(pred_units, gold_units, schema)
    if denom == 0:
        return 1.0
    return matches / denom


# ---------------------------------------------------------------------------
# corpus statistics


@dataclass
class SplitStats:
    name: str
    sentences: int
    tokens: int
    word_types: int
    label_types: dict[str, int]
    word_type_oov_pct: float | None = None
    label_token_oov_pct: dict[str, float] | None = None


def corpus_stats(
    splits: dict[str, list[SequenceExample]],
    level_names: list[str],
    train_split: str = "train",
) -> list[SplitStats]:
    """Per-split token/type/label counts plus OOV rates against the training
    split.  Word OOV is type-level (unseen types / split types); label OOV is
    token-level (tokens carrying an unseen label / tokens)."""
    train_types: set[str] = set()
    train_labels: dict[str, set[str]] = {lev: set() for lev in level_names}
    for ex in splits.get(train_split, []):
        train_types.update(ex.source_tokens)
        for lev in level_names:
            train_labels[lev].update(ex.targets[lev])

    out = []
    for name, examples in splits.items():
        types: set[str] = set()
        n_tokens = 0
        label_types: dict[str, set[str]] = {lev: set() for lev in level_names}
        oov_label_tokens = {lev: 0 for lev in level_names}
        for ex in examples:
            n_tokens += len(ex.source_tokens)
            types.update(ex.source_tokens)
            for lev in level_names:
                label_types[lev].update(ex.targets[lev])
                oov_label_tokens[lev] += sum(
                    1 for t in ex.targets[lev] if t not in train_labels[lev]
                )
        stats = SplitStats(
            name=name,
            sentences=len(examples),
            tokens=n_tokens,
            word_types=len(types),
            label_types={lev: len(s) for lev, s in label_types.items()},
        )
        if name != train_split:
            stats.word_type_oov_pct = (
                100.0 * len(types - train_types) / len(types) if types else 0.0
            )
            stats.label_token_oov_pct = {
                lev: (100.0 * oov_label_tokens[lev] / n_tokens if n_tokens else 0.0)
                for lev in level_names
            }
        out.append(stats)
    return out


def format_stats_report(stats: list[SplitStats], level_names: list[str]) -> str:
    """Plain-text table: sentences, tokens, dictionary sizes, and OOV rates.

    Percentages are printed with two decimals (standard float rounding).
    """
    lines = []
    header = ["split", "sentences", "tokens", "word types"]
    for lev in level_names:
        header.append(f"{lev} labels")
    header += ["word-type OOV%"] + [f"{lev} label-token OOV%" for lev in level_names]
    lines.append("\t".join(header))
    for s in stats:
        row = [s.name, str(s.sentences), str(s.tokens), str(s.word_types)]
        row += [str(s.label_types[lev]) for lev in level_names]
        row.append("-" if s.word_type_oov_pct is None else f"{s.word_type_oov_pct:.2f}")
        for lev in level_names:
            if s.label_token_oov_pct is None:
                row.append("-")
            else:
                row.append(f"{s.label_token_oov_pct[lev]:.2f}")
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"
