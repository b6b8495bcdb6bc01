"""From raw scene-graph annotations to a reproducible benchmark split.

Walks the dataset path end to end: messy annotations are normalized,
co-occurrence statistics drive hard-negative selection, and the resulting
instances serialize byte-identically under the same seed.
"""

import json
import tempfile
from pathlib import Path

from genret import (
    AnchorKind,
    build_split,
    build_stats,
    parse_scene_graph,
    plan_instance,
    write_instances,
)

RAW = [
    {
        "image_id": 101,
        "objects": [
            {"x": 0, "y": 0, "w": 80, "h": 60, "names": ["Cat", "feline"],
             "attributes": ["Black", "black", "Small"]},
            {"x": 40, "y": 10, "w": 70, "h": 50, "names": ["cat"],
             "attributes": ["white"]},
            {"x": 200, "y": 80, "w": 90, "h": 90, "names": ["dog"],
             "attributes": ["black"]},
        ],
    },
    {
        "image_id": 102,
        "objects": [
            {"x": 5, "y": 5, "w": 60, "h": 40, "names": ["cat"],
             "attributes": ["fluffy", "small"]},
            {"x": 100, "y": 20, "w": 50, "h": 30, "names": ["dog"],
             "attributes": ["brown"]},
        ],
    },
    {
        "image_id": 103,
        "objects": [
            {"x": 0, "y": 0, "w": 40, "h": 40, "names": ["bird"],
             "attributes": ["red", "small"]},
            {"x": 60, "y": 0, "w": 45, "h": 35, "names": ["cat"],
             "attributes": ["black"]},
        ],
    },
]


def main():
    records = parse_scene_graph(RAW)
    first = records[0].boxes[0]
    print(f"normalized first box: obj={first.obj!r} attributes={first.attributes}")
    print("  (first name wins, words lowercase, duplicates dropped)")

    stats = build_stats(records)
    print("\nP(attribute | cat), ranked:")
    for word, p in stats.attrs_given_object["cat"]:
        print(f"  {word:8s} {p:.3f}")

    # total is capped by the corpus: the img-101 white cat can reach only
    # 3 negatives once its sibling box's attributes are excluded
    plan = plan_instance(records[0], 0, stats, total=4, mode=AnchorKind.ATTRIBUTE)
    print(f"\nplan for image 101 box 0 (anchor {plan.anchor!r}):")
    print(f"  positives   {plan.positives}")
    print(f"  excluded    {sorted(plan.excluded)}  # on-image, other cat boxes")
    print(f"  conditional {plan.conditional}  # co-occur with cat, hard first")
    print(f"  fallback    {plan.fallback}  # global prior fills the rest")

    split, manifest = build_split(
        records, stats, mode=AnchorKind.ATTRIBUTE, seed=7, total=4
    )
    print(f"\nbuild_split -> {len(split)} instances")
    print("manifest:", json.dumps(manifest, indent=2))

    with tempfile.TemporaryDirectory() as tmp:
        a, b = Path(tmp, "a.jsonl"), Path(tmp, "b.jsonl")
        write_instances(a, split)
        write_instances(b, build_split(records, stats, mode=AnchorKind.ATTRIBUTE,
                                       seed=7, total=4)[0])
        print(f"rebuild with the same seed is byte-identical: "
              f"{a.read_bytes() == b.read_bytes()}")
        print("first line of the split:")
        print(" ", a.read_text().splitlines()[0])


if __name__ == "__main__":
    main()
