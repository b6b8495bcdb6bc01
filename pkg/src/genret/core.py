"""Sentence templates and ranking-problem records.

A template is a whitespace-separated sequence of literal tokens and two slot
kinds, an attribute slot ``{A}`` and an object slot ``{O}``.  Rendering fills
slots with concrete words and yields a flat token tuple; multi-word values
contribute one token each, so ``{O} is {A}`` with object "traffic light" and
attribute "red" renders to ``("traffic", "light", "is", "red")``.

Words are case-folded exactly once, at ingestion.  Comparisons downstream are
plain string equality.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence, Union

from .errors import RenderError, SchemaError, TemplateSyntaxError


def normalize_word(word: str) -> str:
    """Collapse whitespace and lowercase. The single case-folding point."""
    if not isinstance(word, str):
        raise SchemaError(f"word must be a string, got {type(word).__name__}")
    norm = " ".join(word.split()).lower()
    if not norm:
        raise SchemaError("word is empty")
    return norm


def tokenize(word: str) -> tuple[str, ...]:
    """Split a (possibly multi-word) value into lowercase tokens."""
    return tuple(normalize_word(word).split())


def stable_seed(*parts: object) -> int:
    """Derive a reproducible 63-bit seed from arbitrary key parts.

    Built on sha256 rather than hash() so results survive interpreter
    restarts and PYTHONHASHSEED.
    """
    blob = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big") >> 1


class Slot(Enum):
    """The two fillable template positions."""

    ATTRIBUTE = "A"
    OBJECT = "O"


TemplateElement = Union[Slot, str]  # str elements are literal tokens


@dataclass(frozen=True)
class Template:
    """Parsed sentence template.

    `elements` mixes Slot members and literal token strings.  `name` is the
    identifier recorded in score caches; by default it is the spec string
    itself (see parse_template).
    """

    elements: tuple[TemplateElement, ...]
    name: str

    def __post_init__(self):
        if not self.elements:
            raise TemplateSyntaxError("template has no elements")
        if not any(isinstance(e, Slot) for e in self.elements):
            raise TemplateSyntaxError("template has no slots")
        if not self.name or not self.name.strip():
            raise TemplateSyntaxError("template name is empty")
        for e in self.elements:
            if isinstance(e, Slot):
                continue
            if not e or e.split() != [e] or "{" in e or "}" in e:
                raise TemplateSyntaxError(f"bad literal token {e!r}")

    @property
    def slots(self) -> frozenset[Slot]:
        return frozenset(e for e in self.elements if isinstance(e, Slot))

    @property
    def spec(self) -> str:
        return format_template(self)


def parse_template(spec: str, name: str | None = None) -> Template:
    """Parse a template spec like ``"{A} {O} is {A}"``.

    Elements are whitespace separated.  ``{A}`` and ``{O}`` are slots, any
    other brace use is an error, everything else is a literal token.  The
    template name defaults to the normalized spec string.
    """
    if not isinstance(spec, str) or not spec.strip():
        raise TemplateSyntaxError("empty template spec")
    elements: list[TemplateElement] = []
    for piece in spec.split():
        if piece == "{A}":
            elements.append(Slot.ATTRIBUTE)
        elif piece == "{O}":
            elements.append(Slot.OBJECT)
        elif "{" in piece or "}" in piece:
            raise TemplateSyntaxError(f"malformed braces in {piece!r}")
        else:
            elements.append(piece)
    tpl = Template(tuple(elements), name="pending")
    canonical = format_template(tpl)
    return Template(tpl.elements, name=name if name is not None else canonical)


def format_template(t: Template) -> str:
    """Inverse of parse_template, up to whitespace normalization."""
    pieces = []
    for e in t.elements:
        pieces.append("{%s}" % e.value if isinstance(e, Slot) else e)
    return " ".join(pieces)


def render(t: Template, attribute: str | None = None, obj: str | None = None) -> tuple[str, ...]:
    """Fill slots and return the token sequence.

    Only slots present in the template need a word; a missing word for a
    present slot raises RenderError.  Values run through tokenize, so they
    are case-folded here if nothing upstream did it.
    """
    out: list[str] = []
    for e in t.elements:
        if e is Slot.ATTRIBUTE:
            if attribute is None:
                raise RenderError(f"template {t.name!r} needs an attribute word")
            out.extend(tokenize(attribute))
        elif e is Slot.OBJECT:
            if obj is None:
                raise RenderError(f"template {t.name!r} needs an object word")
            out.extend(tokenize(obj))
        else:
            out.append(e)
    return tuple(out)


# The four canonical specs, in the order reports print them.
CANONICAL_TEMPLATE_SPECS: tuple[str, ...] = (
    "{A}",
    "{O} is {A}",
    "{A} {O}",
    "{A} {O} is {A}",
)


def canonical_templates() -> tuple[Template, ...]:
    return tuple(parse_template(s) for s in CANONICAL_TEMPLATE_SPECS)


class AnchorKind(str, Enum):
    """Kind of the anchor word in a ranking instance.

    An instance with an OBJECT anchor ranks attribute candidates, and vice
    versa; `ranked` gives the candidates' kind.
    """

    OBJECT = "object"
    ATTRIBUTE = "attribute"

    @property
    def ranked(self) -> "AnchorKind":
        return AnchorKind.ATTRIBUTE if self is AnchorKind.OBJECT else AnchorKind.OBJECT


class Method(str, Enum):
    """Scoring method tag."""

    GENERATIVE = "generative"
    CONTRASTIVE = "contrastive"


@dataclass(frozen=True)
class RankingInstance:
    """One ranking problem: an anchor word plus a candidate list to order.

    positives are indices into `candidates`.  negatives_explicit, when
    present, marks candidates known to be false; candidates in neither set
    are unlabeled.  region is an optional (x, y, w, h) pixel box that
    backends may use to crop; it is carried opaquely everywhere else.
    """

    image_id: str
    anchor_kind: AnchorKind
    anchor: str
    candidates: tuple[str, ...]
    positives: frozenset[int]
    region: tuple[float, float, float, float] | None = None
    negatives_explicit: frozenset[int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "anchor_kind", AnchorKind(self.anchor_kind))
        object.__setattr__(self, "anchor", normalize_word(self.anchor))
        object.__setattr__(
            self, "candidates", tuple(normalize_word(c) for c in self.candidates)
        )
        object.__setattr__(self, "positives", frozenset(self.positives))
        if self.region is not None:
            region = tuple(self.region)
            if len(region) != 4:
                raise SchemaError(f"region must have 4 entries, got {len(region)}")
            object.__setattr__(self, "region", region)
        if self.negatives_explicit is not None:
            object.__setattr__(
                self, "negatives_explicit", frozenset(self.negatives_explicit)
            )
        if not self.image_id:
            raise SchemaError("image_id is empty")
        if not self.candidates:
            raise SchemaError("candidate list is empty")
        if len(set(self.candidates)) != len(self.candidates):
            raise SchemaError(f"duplicate candidates in instance for {self.anchor!r}")
        if not self.positives:
            raise SchemaError("positives is empty")
        n = len(self.candidates)
        if not all(isinstance(i, int) and 0 <= i < n for i in self.positives):
            raise SchemaError("positive index out of range")
        if self.negatives_explicit is not None:
            if not all(isinstance(i, int) and 0 <= i < n for i in self.negatives_explicit):
                raise SchemaError("explicit-negative index out of range")
            if self.positives & self.negatives_explicit:
                raise SchemaError("positives and explicit negatives overlap")

    def labels(self) -> dict[int, int]:
        """Candidate index -> binary label, for labeled candidates only.

        With explicit negatives, only listed indices are labeled; without
        them every non-positive candidate counts as a negative.
        """
        out = {i: 1 for i in self.positives}
        if self.negatives_explicit is None:
            for i in range(len(self.candidates)):
                if i not in self.positives:
                    out[i] = 0
        else:
            for i in self.negatives_explicit:
                out[i] = 0
        return out


@dataclass(frozen=True)
class ScoredInstance:
    """A RankingInstance plus one score per candidate (lower is better).

    per_token holds the per-position loss terms for generative scoring
    (None for contrastive).  Ranking order is ascending score with ties
    broken by candidate index; see scoring.ranking_order.
    """

    instance: RankingInstance
    template_name: str
    method: Method
    scores: tuple[float, ...]
    per_token: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        if len(self.scores) != len(self.instance.candidates):
            raise SchemaError("one score per candidate required")
        if not all(math.isfinite(s) for s in self.scores):
            raise SchemaError("scores must be finite")
        if self.per_token is not None:
            per = tuple(tuple(float(x) for x in row) for row in self.per_token)
            object.__setattr__(self, "per_token", per)
            if len(per) != len(self.scores):
                raise SchemaError("one per_token row per candidate required")


def instance_to_dict(inst: RankingInstance) -> dict:
    return {
        "image_id": inst.image_id,
        "region": list(inst.region) if inst.region is not None else None,
        "anchor_kind": inst.anchor_kind.value,
        "anchor": inst.anchor,
        "candidates": list(inst.candidates),
        "positives": sorted(inst.positives),
        "negatives_explicit": (
            sorted(inst.negatives_explicit) if inst.negatives_explicit is not None else None
        ),
    }


_INSTANCE_FIELDS = {
    "image_id", "region", "anchor_kind", "anchor",
    "candidates", "positives", "negatives_explicit",
}


def instance_from_dict(d: dict) -> RankingInstance:
    if not isinstance(d, dict):
        raise SchemaError("instance record must be an object")
    missing = _INSTANCE_FIELDS - {"region", "negatives_explicit"} - set(d)
    if missing:
        raise SchemaError(f"instance record missing fields: {sorted(missing)}")
    unknown = set(d) - _INSTANCE_FIELDS
    if unknown:
        raise SchemaError(f"instance record has unknown fields: {sorted(unknown)}")
    try:
        return RankingInstance(
            image_id=str(d["image_id"]),
            anchor_kind=AnchorKind(d["anchor_kind"]),
            anchor=d["anchor"],
            candidates=tuple(d["candidates"]),
            positives=frozenset(d["positives"]),
            region=tuple(d["region"]) if d.get("region") is not None else None,
            negatives_explicit=(
                frozenset(d["negatives_explicit"])
                if d.get("negatives_explicit") is not None
                else None
            ),
        )
    except (ValueError, TypeError, KeyError) as exc:
        raise SchemaError(f"bad instance record: {exc}") from exc


def write_instances(path: str | Path, instances: Iterable[RankingInstance]) -> None:
    """Write instances as JSONL, one object per line, keys in fixed order."""
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_dict(inst), sort_keys=True))
            fh.write("\n")


def read_instances(path: str | Path) -> list[RankingInstance]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
            try:
                out.append(instance_from_dict(record))
            except SchemaError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return out
