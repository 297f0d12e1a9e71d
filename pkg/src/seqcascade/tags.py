"""Morphosyntactic tag componentization and exact reconstruction.

Complex tags are rare as wholes but their pieces are frequent, so sequence
models predict component streams instead.  Two tag families are supported:

* PATB-style concatenative tags such as
  ``PV-PVSUFF_SUBJ:3MS+[PREP+PRON_2S]PVSUFF_IO:2S``.  Cores are alphanumeric
  runs; ``:`` and ``_`` introduce feature bundles; ``+`` ``[`` ``]`` are
  structural and kept as standalone components.  A digit-leading bundle is
  split into its digit head (``:3``) plus one ``@``-prefixed component per
  remaining character (``@M`` ``@S``) so reconstruction can re-fuse them.
  ``-`` only ever separates two cores; it is dropped here and re-inserted
  between adjacent core components on reconstruction.

* Dot-separated labels such as ``ADJA.PoS.Nom.Sg.Masc``: the tail components
  keep their leading dot (``.PoS``) so plain concatenation restores the label.

Component sequences are wrapped in <SOT>/<EOT> so token boundaries survive
sentence-level concatenation.  Every componentizer is an exact bijection on
the tags it accepts; anything unrecoverable raises `TagError` naming the
offending span.
"""

from __future__ import annotations

import re

from .errors import TagError
from .symbols import EOT, SOT

_CORE_RE = re.compile(r"[A-Za-z][A-Za-z0-9]*")
_ALNUM_RE = re.compile(r"[A-Za-z0-9]+")
_STRUCTURAL = frozenset("+[]")


def _is_core(component: str) -> bool:
    return bool(_CORE_RE.fullmatch(component))


def componentize_pos_tag(tag: str) -> list[str]:
    """Split a PATB-style tag into components, wrapped in <SOT>/<EOT>."""
    if not tag:
        raise TagError("empty tag")
    components: list[str] = []
    pos = 0
    n = len(tag)
    pending_dash = False
    while pos < n:
        ch = tag[pos]
        if ch in _STRUCTURAL:
            if pending_dash:
                raise TagError("'-' must join two cores", span=tag[max(0, pos - 2):pos + 1])
            components.append(ch)
            pos += 1
        elif ch == "-":
            if pending_dash or not components or not _is_core(components[-1]):
                raise TagError("'-' must join two cores", span=tag[max(0, pos - 2):pos + 1])
            pending_dash = True
            pos += 1
        elif ch in ":_":
            if pending_dash:
                raise TagError("'-' must join two cores", span=tag[max(0, pos - 2):pos + 1])
            m = _ALNUM_RE.match(tag, pos + 1)
            if not m:
                raise TagError("feature delimiter with no bundle", span=tag[pos:pos + 2])
            bundle = m.group()
            if bundle[0].isdigit():
                head = re.match(r"\d+", bundle).group()
                components.append(ch + head)
                components.extend("@" + c for c in bundle[len(head):])
            else:
                components.append(ch + bundle)
            pos = m.end()
        else:
            m = _CORE_RE.match(tag, pos)
            if not m:
                raise TagError("unexpected character", span=tag[pos:pos + 1])
            components.append(m.group())
            pending_dash = False
            pos = m.end()
    if pending_dash:
        raise TagError("trailing '-'", span=tag[-1:])
    return [SOT, *components, EOT]


def reconstruct_pos_tag(components: list[str]) -> str:
    """Exact inverse of `componentize_pos_tag` on its image."""
    inner = _strip_markers(components)
    parts: list[str] = []
    prev: str | None = None
    for comp in inner:
        if not comp:
            raise TagError("empty component")
        if comp.startswith("@"):
            if len(comp) != 2:
                raise TagError("'@' component must carry exactly one character", span=comp)
            parts.append(comp[1])
        elif comp in _STRUCTURAL or comp[0] in ":_":
            parts.append(comp)
        elif _is_core(comp):
            if prev is not None and _is_core(prev):
                parts.append("-")
            parts.append(comp)
        else:
            raise TagError("unrecognized component", span=comp)
        prev = comp
    return "".join(parts)


def derive_tiger_levels(full_label: str) -> tuple[str, str]:
    """Project a rich dot-separated label onto (core tag, full label)."""
    if not full_label:
        raise TagError("empty label")
    core = full_label.split(".", 1)[0]
    return core, full_label


def componentize_tiger_label(full_label: str) -> list[str]:
    """Split a dot-separated label: head plain, tail components keep their dot."""
    parts = full_label.split(".")
    if not parts[0]:
        raise TagError("label starts with '.'", span=full_label[:2])
    components = [parts[0]] + ["." + p for p in parts[1:]]
    return [SOT, *components, EOT]


def reconstruct_tiger_label(components: list[str]) -> str:
    inner = _strip_markers(components)
    if not inner:
        raise TagError("no components between markers")
    return "".join(inner)


def _strip_markers(components: list[str]) -> list[str]:
    if len(components) < 2 or components[0] != SOT or components[-1] != EOT:
        raise TagError("components must sit between one <SOT>/<EOT> pair")
    inner = components[1:-1]
    if SOT in inner or EOT in inner:
        raise TagError("nested token markers")
    return inner
