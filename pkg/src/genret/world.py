"""Synthetic worlds with an exactly enumerable caption distribution.

A world fixes object and attribute vocabularies, a compatibility relation,
and per-pair attribute priors.  Scenes are sampled from a world: each entity
gets a uniform object and an independent draw of its compatible attributes.

The caption process for a scene is deliberately tiny so it can be enumerated
in closed form: pick an entity uniformly, pick one of two phrasings
uniformly ("{A} {O}" or "{O} is {A}"), pick one of the entity's attributes
uniformly, render.  Entities with no attributes emit their bare object word
with the entity's full probability mass.  caption_process returns that
distribution with rational weights, so it sums to 1 exactly; everything the
oracle backend answers is derived from it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import (
    AnchorKind,
    RankingInstance,
    normalize_word,
    parse_template,
    render,
    stable_seed,
    tokenize,
)
from .dataset import BoxAnnotation, SceneGraphRecord, select_negatives
from .errors import BuilderError, SchemaError, WorldError

# The two phrasings the caption process can emit, with equal probability.
CAPTION_TEMPLATE_SPECS: tuple[str, ...] = ("{A} {O}", "{O} is {A}")
CAPTION_TEMPLATES = tuple(parse_template(s) for s in CAPTION_TEMPLATE_SPECS)


@dataclass(frozen=True)
class WorldSpec:
    """Vocabularies, compatibility, attribute priors and the sampling seed."""

    objects: tuple[str, ...]
    attributes: tuple[str, ...]
    compatibility: dict[str, tuple[str, ...]]
    attribute_prior: dict[tuple[str, str], float]
    rng_seed: int = 0

    def __post_init__(self):
        objects = tuple(normalize_word(o) for o in self.objects)
        attributes = tuple(normalize_word(a) for a in self.attributes)
        object.__setattr__(self, "objects", objects)
        object.__setattr__(self, "attributes", attributes)
        if not objects:
            raise WorldError("world needs at least one object")
        if not attributes:
            raise WorldError("world needs at least one attribute")
        if len(set(objects)) != len(objects) or len(set(attributes)) != len(attributes):
            raise WorldError("duplicate vocabulary words")
        compat = {
            normalize_word(o): tuple(sorted(normalize_word(a) for a in attrs))
            for o, attrs in self.compatibility.items()
        }
        object.__setattr__(self, "compatibility", compat)
        obj_set, attr_set = set(objects), set(attributes)
        for o, attrs in compat.items():
            if o not in obj_set:
                raise WorldError(f"compatibility lists unknown object {o!r}")
            for a in attrs:
                if a not in attr_set:
                    raise WorldError(f"compatibility lists unknown attribute {a!r}")
        prior = {
            (normalize_word(o), normalize_word(a)): float(p)
            for (o, a), p in self.attribute_prior.items()
        }
        object.__setattr__(self, "attribute_prior", prior)
        for (o, a), p in prior.items():
            if not 0.0 < p <= 1.0:
                raise WorldError(f"prior for ({o!r}, {a!r}) must be in (0, 1], got {p}")
            if a not in compat.get(o, ()):
                raise WorldError(f"prior given for incompatible pair ({o!r}, {a!r})")

    def vocabulary(self) -> tuple[str, ...]:
        """All tokens any caption of this world can contain, sorted."""
        tokens: set[str] = set()
        for w in self.objects + self.attributes:
            tokens.update(tokenize(w))
        for tpl in CAPTION_TEMPLATES:
            tokens.update(e for e in tpl.elements if isinstance(e, str))
        return tuple(sorted(tokens))


@dataclass(frozen=True)
class Entity:
    obj: str
    attributes: tuple[str, ...]


@dataclass(frozen=True)
class SyntheticScene:
    """A sampled scene: entities plus one synthetic pixel box per entity."""

    scene_id: str
    entities: tuple[Entity, ...]
    boxes: tuple[tuple[float, float, float, float], ...]

    def __post_init__(self):
        if not self.entities:
            raise WorldError("scene needs at least one entity")
        if len(self.boxes) != len(self.entities):
            raise WorldError("one box per entity required")


def random_world(
    seed: int = 0,
    n_objects: int = 20,
    n_attributes: int = 60,
    attrs_per_object: int = 5,
    prior_low: float = 0.15,
    prior_high: float = 0.6,
) -> WorldSpec:
    """Generate a world with overlapping compatibility sets.

    Attribute vocabulary defaults to 60 so that 50-candidate attribute
    ranking instances are constructible.  Every object gets 1..attrs_per_object
    compatible attributes with priors drawn uniformly from the given range.
    """
    rng = np.random.default_rng(seed)
    objects = tuple(f"obj{i:02d}" for i in range(n_objects))
    attributes = tuple(f"attr{i:02d}" for i in range(n_attributes))
    compat: dict[str, tuple[str, ...]] = {}
    prior: dict[tuple[str, str], float] = {}
    for o in objects:
        k = int(rng.integers(1, attrs_per_object + 1))
        picks = sorted(rng.choice(n_attributes, size=k, replace=False).tolist())
        compat[o] = tuple(attributes[i] for i in picks)
        for a in compat[o]:
            prior[(o, a)] = float(rng.uniform(prior_low, prior_high))
    return WorldSpec(
        objects=objects,
        attributes=attributes,
        compatibility=compat,
        attribute_prior=prior,
        rng_seed=seed,
    )


class SceneSampler:
    """Deterministic scene stream: same world seed, same scenes, in order."""

    def __init__(self, spec: WorldSpec):
        self.spec = spec
        self._rng = np.random.default_rng(spec.rng_seed)
        self._ordinal = 0

    def sample_scene(self, n_entities: int) -> SyntheticScene:
        if n_entities < 1:
            raise WorldError("scene needs at least one entity")
        spec = self.spec
        entities = []
        boxes = []
        for _ in range(n_entities):
            obj = spec.objects[int(self._rng.integers(len(spec.objects)))]
            attrs = tuple(
                a
                for a in spec.compatibility.get(obj, ())
                if self._rng.random() < spec.attribute_prior.get((obj, a), 0.0)
            )
            entities.append(Entity(obj=obj, attributes=attrs))
            x, y = (int(v) for v in self._rng.integers(0, 800, size=2))
            w, h = (int(v) for v in self._rng.integers(20, 220, size=2))
            boxes.append((x, y, w, h))
        scene = SyntheticScene(
            scene_id=f"scene-{self._ordinal:06d}",
            entities=tuple(entities),
            boxes=tuple(boxes),
        )
        self._ordinal += 1
        return scene


def sample_scenes(spec: WorldSpec, entity_counts: Iterable[int]) -> list[SyntheticScene]:
    sampler = SceneSampler(spec)
    return [sampler.sample_scene(n) for n in entity_counts]


def caption_process(scene: SyntheticScene) -> dict[tuple[str, ...], Fraction]:
    """Exact caption distribution of a scene.

    Weights are Fractions and sum to 1 exactly.  Identical captions from
    different entities simply accumulate mass.
    """
    n = len(scene.entities)
    dist: dict[tuple[str, ...], Fraction] = {}
    for ent in scene.entities:
        w_ent = Fraction(1, n)
        if not ent.attributes:
            cap = tokenize(ent.obj)
            dist[cap] = dist.get(cap, Fraction(0)) + w_ent
            continue
        w = w_ent * Fraction(1, 2) * Fraction(1, len(ent.attributes))
        for tpl in CAPTION_TEMPLATES:
            for a in ent.attributes:
                cap = render(tpl, attribute=a, obj=ent.obj)
                dist[cap] = dist.get(cap, Fraction(0)) + w
    return dist


def _world_rankings(spec: WorldSpec):
    """Prior-derived ranking tables, shaped like the co-occurrence ones."""
    by_obj: dict[str, dict[str, float]] = {}
    by_attr: dict[str, dict[str, float]] = {}
    for (o, a), p in spec.attribute_prior.items():
        by_obj.setdefault(o, {})[a] = p
        by_attr.setdefault(a, {})[o] = p

    def ranked(table: dict[str, float]):
        total = sum(table.values())
        return tuple(sorted(((w, p / total) for w, p in table.items()),
                            key=lambda kv: (-kv[1], kv[0])))

    attrs_given_object = {o: ranked(t) for o, t in by_obj.items()}
    objects_given_attr = {a: ranked(t) for a, t in by_attr.items()}
    attr_marginal: dict[str, float] = {}
    for (o, a), p in spec.attribute_prior.items():
        attr_marginal[a] = attr_marginal.get(a, 0.0) + p
    # zero-prior attributes fill the tail of the fallback tier (weight 0,
    # lexicographic), so any candidate count up to |attributes| is buildable
    for a in spec.attributes:
        attr_marginal.setdefault(a, 0.0)
    attribute_prior_ranked = ranked(attr_marginal) if attr_marginal else ()
    # objects are drawn uniformly, so the object prior is flat; the ranked
    # form degenerates to lexicographic order
    object_prior_ranked = tuple(
        (o, 1.0 / len(spec.objects)) for o in sorted(spec.objects)
    )
    return attrs_given_object, objects_given_attr, attribute_prior_ranked, object_prior_ranked


def make_instances(
    spec: WorldSpec,
    scene: SyntheticScene,
    n_candidates: int,
    anchor_kind: AnchorKind,
    seed: int = 0,
) -> list[RankingInstance]:
    """Build ranking instances for a scene, with world-prior hard negatives.

    anchor_kind is the anchor word's kind: OBJECT anchors rank attribute
    candidates (one instance per entity that has attributes), ATTRIBUTE
    anchors rank object candidates (one instance per distinct attribute in
    the scene, positives being every object bearing it).  Negative selection
    follows the dataset-builder policy, with the world's priors standing in
    for counted statistics.
    """
    anchor_kind = AnchorKind(anchor_kind)
    attrs_go, objs_ga, attr_prior, obj_prior = _world_rankings(spec)
    out: list[RankingInstance] = []

    if anchor_kind is AnchorKind.OBJECT:
        if n_candidates > len(spec.attributes):
            raise BuilderError(
                f"n_candidates={n_candidates} exceeds attribute vocabulary "
                f"({len(spec.attributes)})"
            )
        for idx, ent in enumerate(scene.entities):
            if not ent.attributes:
                continue
            positives = ent.attributes
            if len(positives) > n_candidates:
                raise BuilderError("entity has more attributes than n_candidates")
            excluded = frozenset(
                a
                for j, other in enumerate(scene.entities)
                if j != idx and other.obj == ent.obj
                for a in other.attributes
            )
            cond, fallback = select_negatives(
                n_candidates - len(positives),
                attrs_go.get(ent.obj, ()),
                attr_prior,
                frozenset(positives) | excluded,
            )
            words = positives + cond + fallback
            rng = np.random.default_rng(
                stable_seed(seed, scene.scene_id, idx, anchor_kind.value)
            )
            candidates = tuple(words[i] for i in rng.permutation(len(words)))
            pos = set(positives)
            out.append(
                RankingInstance(
                    image_id=scene.scene_id,
                    anchor_kind=AnchorKind.OBJECT,
                    anchor=ent.obj,
                    candidates=candidates,
                    positives=frozenset(
                        i for i, w in enumerate(candidates) if w in pos
                    ),
                    region=scene.boxes[idx],
                )
            )
        return out

    if n_candidates > len(spec.objects):
        raise BuilderError(
            f"n_candidates={n_candidates} exceeds object vocabulary "
            f"({len(spec.objects)})"
        )
    seen_attrs = sorted({a for ent in scene.entities for a in ent.attributes})
    for a in seen_attrs:
        bearers: dict[str, None] = {}
        for ent in scene.entities:
            if a in ent.attributes:
                bearers.setdefault(ent.obj, None)
        positives = tuple(bearers)
        if len(positives) > n_candidates:
            raise BuilderError("attribute has more bearers than n_candidates")
        cond, fallback = select_negatives(
            n_candidates - len(positives),
            objs_ga.get(a, ()),
            obj_prior,
            frozenset(positives),
        )
        words = positives + cond + fallback
        rng = np.random.default_rng(
            stable_seed(seed, scene.scene_id, a, anchor_kind.value)
        )
        candidates = tuple(words[i] for i in rng.permutation(len(words)))
        pos = set(positives)
        out.append(
            RankingInstance(
                image_id=scene.scene_id,
                anchor_kind=AnchorKind.ATTRIBUTE,
                anchor=a,
                candidates=candidates,
                positives=frozenset(i for i, w in enumerate(candidates) if w in pos),
                region=None,
            )
        )
    return out


def scenes_to_records(scenes: Iterable[SyntheticScene]) -> list[SceneGraphRecord]:
    """Export scenes in the scene-graph record shape the dataset builder eats."""
    records = []
    for sc in scenes:
        boxes = tuple(
            BoxAnnotation(box=box, obj=ent.obj, attributes=ent.attributes)
            for ent, box in zip(sc.entities, sc.boxes)
        )
        records.append(SceneGraphRecord(image_id=sc.scene_id, boxes=boxes))
    return records


# ---------------------------------------------------------------------------
# serialization

def world_to_dict(spec: WorldSpec) -> dict:
    prior: dict[str, dict[str, float]] = {}
    for (o, a), p in sorted(spec.attribute_prior.items()):
        prior.setdefault(o, {})[a] = p
    return {
        "objects": list(spec.objects),
        "attributes": list(spec.attributes),
        "compatibility": {o: list(v) for o, v in sorted(spec.compatibility.items())},
        "attribute_prior": prior,
        "rng_seed": spec.rng_seed,
    }


def world_from_dict(d: dict) -> WorldSpec:
    try:
        prior = {
            (o, a): float(p)
            for o, table in d["attribute_prior"].items()
            for a, p in table.items()
        }
        return WorldSpec(
            objects=tuple(d["objects"]),
            attributes=tuple(d["attributes"]),
            compatibility={o: tuple(v) for o, v in d["compatibility"].items()},
            attribute_prior=prior,
            rng_seed=int(d["rng_seed"]),
        )
    except (KeyError, TypeError, AttributeError) as exc:
        raise SchemaError(f"bad world record: {exc}") from exc


def write_world(path: str | Path, spec: WorldSpec) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(world_to_dict(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_world(path: str | Path) -> WorldSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return world_from_dict(json.load(fh))


def scene_to_dict(scene: SyntheticScene) -> dict:
    return {
        "scene_id": scene.scene_id,
        "entities": [
            {"object": e.obj, "attributes": list(e.attributes)} for e in scene.entities
        ],
        "boxes": [list(b) for b in scene.boxes],
    }


def scene_from_dict(d: dict) -> SyntheticScene:
    try:
        return SyntheticScene(
            scene_id=str(d["scene_id"]),
            entities=tuple(
                Entity(obj=e["object"], attributes=tuple(e["attributes"]))
                for e in d["entities"]
            ),
            boxes=tuple(tuple(b) for b in d["boxes"]),
        )
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"bad scene record: {exc}") from exc


def write_scenes(path: str | Path, scenes: Iterable[SyntheticScene]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sc in scenes:
            fh.write(json.dumps(scene_to_dict(sc), sort_keys=True))
            fh.write("\n")


def read_scenes(path: str | Path) -> list[SyntheticScene]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(scene_from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
    return out
