"""Ranking-benchmark construction from scene-graph annotations.

Input is the common scene-graph JSON layout: a list of images, each with
annotated boxes carrying object names and attribute lists.  From a training
split we count object/attribute co-occurrence, then build fixed-size ranking
instances whose negatives are chosen hardest-first: by conditional
probability given the anchor word, falling back to marginal priors when the
conditional table runs dry.

Two mirrored modes share one code path.  mode=ATTRIBUTE ranks attribute
candidates against an object anchor; mode=OBJECT swaps the roles, anchoring
on one of the box's attributes and ranking object candidates.

A candidate is never used as a negative when the (anchor, candidate) pairing
is realized elsewhere on the same image: such a word is true in context and
would poison the negative set.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import AnchorKind, RankingInstance, normalize_word, stable_seed
from .errors import BuilderError, SchemaError, StatsError


@dataclass(frozen=True)
class BoxAnnotation:
    """One annotated box: pixel rect, object name, attribute words."""

    box: tuple[float, float, float, float]
    obj: str
    attributes: tuple[str, ...]


@dataclass(frozen=True)
class SceneGraphRecord:
    """All annotated boxes of one image."""

    image_id: str
    boxes: tuple[BoxAnnotation, ...]


def _dedup(words: Iterable[str]) -> tuple[str, ...]:
    seen: dict[str, None] = {}
    for w in words:
        seen.setdefault(normalize_word(w), None)
    return tuple(seen)


def parse_scene_graph(source) -> list[SceneGraphRecord]:
    """Parse scene-graph JSON (path, or already-loaded list).

    Documented subset per image: image_id, objects[{x, y, w, h, names,
    attributes?}].  Multi-name boxes keep their first name; words are
    lowercased here and never again.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            source = json.load(fh)
    if not isinstance(source, list):
        raise SchemaError("scene-graph JSON must be a list of image records")
    records = []
    for i, entry in enumerate(source):
        if not isinstance(entry, dict) or "image_id" not in entry:
            raise SchemaError(f"image record #{i} missing image_id")
        boxes = []
        for j, ob in enumerate(entry.get("objects", [])):
            where = f"image {entry['image_id']} object #{j}"
            names = ob.get("names")
            if not names:
                raise SchemaError(f"{where}: empty names")
            try:
                box = (ob["x"], ob["y"], ob["w"], ob["h"])
            except KeyError as exc:
                raise SchemaError(f"{where}: missing box field {exc}") from exc
            boxes.append(
                BoxAnnotation(
                    box=box,
                    obj=normalize_word(names[0]),
                    attributes=_dedup(ob.get("attributes") or ()),
                )
            )
        records.append(SceneGraphRecord(image_id=str(entry["image_id"]), boxes=tuple(boxes)))
    return records


def record_to_dict(record: SceneGraphRecord) -> dict:
    """Inverse of parse_scene_graph for one record."""
    objects = []
    for bx in record.boxes:
        x, y, w, h = bx.box
        objects.append(
            {"x": x, "y": y, "w": w, "h": h,
             "names": [bx.obj], "attributes": list(bx.attributes)}
        )
    return {"image_id": record.image_id, "objects": objects}


def write_scene_graph(path: str | Path, records: Iterable[SceneGraphRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([record_to_dict(r) for r in records], fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass(frozen=True)
class CooccurrenceStats:
    """Pair counts plus the derived, pre-sorted ranking tables.

    Ranked sequences are (word, probability) tuples in descending
    probability, ties broken lexicographically, which makes every consumer
    of these tables deterministic for free.
    """

    pair_counts: dict[tuple[str, str], int]
    object_counts: dict[str, int]
    attribute_counts: dict[str, int]
    attrs_given_object: dict[str, tuple[tuple[str, float], ...]]
    objects_given_attr: dict[str, tuple[tuple[str, float], ...]]
    object_prior: tuple[tuple[str, float], ...]
    attribute_prior: tuple[tuple[str, float], ...]

    def conditional(self, anchor_kind: AnchorKind, anchor: str, word: str) -> float:
        """P(word | anchor), 0.0 for unseen pairs."""
        table = (
            self.attrs_given_object if anchor_kind is AnchorKind.OBJECT
            else self.objects_given_attr
        )
        for w, p in table.get(anchor, ()):
            if w == word:
                return p
        return 0.0


def _ranked(pairs: dict[str, float]) -> tuple[tuple[str, float], ...]:
    return tuple(sorted(pairs.items(), key=lambda kv: (-kv[1], kv[0])))


def build_stats(records: Sequence[SceneGraphRecord]) -> CooccurrenceStats:
    """Count co-occurrence over a training split and derive ranking tables."""
    records = list(records)
    if not records:
        raise StatsError("no records to build statistics from")
    pair_counts: dict[tuple[str, str], int] = {}
    object_counts: dict[str, int] = {}
    attribute_counts: dict[str, int] = {}
    for rec in records:
        for bx in rec.boxes:
            object_counts[bx.obj] = object_counts.get(bx.obj, 0) + 1
            for a in bx.attributes:
                attribute_counts[a] = attribute_counts.get(a, 0) + 1
                pair_counts[(bx.obj, a)] = pair_counts.get((bx.obj, a), 0) + 1

    by_obj: dict[str, dict[str, float]] = {}
    by_attr: dict[str, dict[str, float]] = {}
    for (o, a), c in pair_counts.items():
        by_obj.setdefault(o, {})[a] = c
        by_attr.setdefault(a, {})[o] = c
    attrs_given_object = {
        o: _ranked({a: c / sum(t.values()) for a, c in t.items()})
        for o, t in by_obj.items()
    }
    objects_given_attr = {
        a: _ranked({o: c / sum(t.values()) for o, c in t.items()})
        for a, t in by_attr.items()
    }
    n_boxes = sum(object_counts.values())
    n_attr = sum(attribute_counts.values())
    object_prior = _ranked({o: c / n_boxes for o, c in object_counts.items()})
    attribute_prior = (
        _ranked({a: c / n_attr for a, c in attribute_counts.items()}) if n_attr else ()
    )
    return CooccurrenceStats(
        pair_counts=pair_counts,
        object_counts=object_counts,
        attribute_counts=attribute_counts,
        attrs_given_object=attrs_given_object,
        objects_given_attr=objects_given_attr,
        object_prior=object_prior,
        attribute_prior=attribute_prior,
    )


@dataclass(frozen=True)
class NegativePlan:
    """The negative-selection outcome before shuffling.

    `conditional` holds hard negatives in non-increasing conditional
    probability given the anchor; `fallback` holds the prior-ordered filler
    appended after the conditional table was exhausted.  Kept as a separate
    artifact so audits can check ordering without reverse-engineering the
    shuffled instance.
    """

    anchor: str
    positives: tuple[str, ...]
    excluded: frozenset[str]
    conditional: tuple[str, ...]
    fallback: tuple[str, ...]

    @property
    def negatives(self) -> tuple[str, ...]:
        return self.conditional + self.fallback


def select_negatives(
    need: int,
    conditional_ranked: Sequence[tuple[str, float]],
    prior_ranked: Sequence[tuple[str, float]],
    skip: frozenset[str],
) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Pick `need` negatives, hardest first.

    Walks the conditional ranking, then the prior ranking, skipping `skip`
    and anything already chosen.  Raises BuilderError on shortfall.
    """
    chosen: dict[str, None] = {}
    for w, _ in conditional_ranked:
        if len(chosen) >= need:
            break
        if w not in skip:
            chosen.setdefault(w, None)
    n_cond = len(chosen)
    for w, _ in prior_ranked:
        if len(chosen) >= need:
            break
        if w not in skip and w not in chosen:
            chosen.setdefault(w, None)
    if len(chosen) < need:
        raise BuilderError(
            f"vocabulary exhausted: needed {need} negatives, found {len(chosen)}"
        )
    words = tuple(chosen)
    return words[:n_cond], words[n_cond:]


def plan_instance(
    record: SceneGraphRecord,
    anchor_box_index: int,
    stats: CooccurrenceStats,
    total: int = 50,
    mode: AnchorKind = AnchorKind.ATTRIBUTE,
    anchor: str | None = None,
) -> NegativePlan:
    """Compute anchor, positives, exclusions and negatives for one box.

    mode names the ranked (candidate) kind.  For mode=OBJECT the anchor is
    an attribute of the box; it defaults to the first one listed.
    """
    mode = AnchorKind(mode)
    try:
        box = record.boxes[anchor_box_index]
    except IndexError as exc:
        raise BuilderError(
            f"image {record.image_id} has no box #{anchor_box_index}"
        ) from exc
    if not box.attributes:
        raise BuilderError(
            f"image {record.image_id} box #{anchor_box_index} has no attributes"
        )
    others = [b for i, b in enumerate(record.boxes) if i != anchor_box_index]

    if mode is AnchorKind.ATTRIBUTE:
        if anchor is not None and normalize_word(anchor) != box.obj:
            raise BuilderError("attribute mode anchors on the box object name")
        anchor_word = box.obj
        positives = box.attributes
        excluded = frozenset(
            a for b in others if b.obj == anchor_word for a in b.attributes
        )
        cond = stats.attrs_given_object.get(anchor_word, ())
        prior = stats.attribute_prior
    else:
        anchor_word = normalize_word(anchor) if anchor is not None else box.attributes[0]
        if anchor_word not in box.attributes:
            raise BuilderError(
                f"anchor attribute {anchor_word!r} not on box #{anchor_box_index}"
            )
        positives = (box.obj,)
        excluded = frozenset(b.obj for b in others if anchor_word in b.attributes)
        cond = stats.objects_given_attr.get(anchor_word, ())
        prior = stats.object_prior

    if len(positives) > total:
        raise BuilderError(
            f"{len(positives)} ground-truth words exceed total={total}"
        )
    skip = frozenset(positives) | excluded
    conditional, fallback = select_negatives(
        total - len(positives), cond, prior, skip
    )
    return NegativePlan(
        anchor=anchor_word,
        positives=positives,
        excluded=excluded,
        conditional=conditional,
        fallback=fallback,
    )


def build_instance(
    record: SceneGraphRecord,
    anchor_box_index: int,
    stats: CooccurrenceStats,
    total: int = 50,
    mode: AnchorKind = AnchorKind.ATTRIBUTE,
    seed: int = 0,
    anchor: str | None = None,
) -> RankingInstance:
    """Build one shuffled ranking instance for a box.

    Candidate order is a deterministic permutation seeded per (seed,
    image, box, mode), so rebuilding a split with the same seed is
    byte-identical.
    """
    mode = AnchorKind(mode)
    plan = plan_instance(record, anchor_box_index, stats, total, mode, anchor)
    words = plan.positives + plan.negatives
    rng = np.random.default_rng(
        stable_seed(seed, record.image_id, anchor_box_index, mode.value)
    )
    perm = rng.permutation(len(words))
    candidates = tuple(words[i] for i in perm)
    pos_words = set(plan.positives)
    positives = frozenset(i for i, w in enumerate(candidates) if w in pos_words)
    return RankingInstance(
        image_id=record.image_id,
        anchor_kind=mode.ranked,  # candidates of kind `mode` anchor on the other kind
        anchor=plan.anchor,
        candidates=candidates,
        positives=positives,
        region=record.boxes[anchor_box_index].box,
        negatives_explicit=None,
    )


def build_split(
    records: Sequence[SceneGraphRecord],
    stats: CooccurrenceStats,
    mode: AnchorKind = AnchorKind.ATTRIBUTE,
    seed: int = 0,
    total: int = 50,
) -> tuple[list[RankingInstance], dict]:
    """Build instances for every eligible box of every record.

    Output order is (image_id, box index).  Returns the instances plus a
    manifest dict with counts and the config hash.
    """
    mode = AnchorKind(mode)
    instances = []
    images = set()
    for rec in sorted(records, key=lambda r: r.image_id):
        for i, bx in enumerate(rec.boxes):
            if not bx.attributes:
                continue
            instances.append(build_instance(rec, i, stats, total, mode, seed))
            images.add(rec.image_id)
    config = {"mode": mode.value, "seed": seed, "total": total}
    manifest = {
        **config,
        "n_records": len(records),
        "n_images": len(images),
        "n_instances": len(instances),
        "config_hash": hashlib.sha256(
            json.dumps(config, sort_keys=True).encode()
        ).hexdigest(),
    }
    return instances, manifest
