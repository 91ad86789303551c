"""Mine relation and attribution test cases from annotated scene graphs.

Pipeline per scene: keep objects at least a quarter of the image in both
dimensions, pair them subject to category/attribute distinctness, crop to the
smallest box containing both, and render true/swapped caption templates.
Everything here is deterministic; output order is pinned for merge stability.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

from .errors import DataFormatError

#: Predicates whose subject/object swap yields an equivalent caption; cases
#: built on them would have no wrong answer, so they are dropped.
DEFAULT_SYMMETRIC_RELATIONS = frozenset({"near", "next to"})


class BBox(NamedTuple):
    """Axis-aligned box in pixels, (x, y, w, h) with the origin top-left."""

    x: int
    y: int
    w: int
    h: int

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h


class TaskKind(str, Enum):
    RELATION = "relation"
    ATTRIBUTION = "attribution"
    ORDER = "order"


@dataclass(frozen=True)
class SceneObject:
    object_id: str
    category: str
    bbox: BBox
    attributes: tuple[str, ...] = ()


@dataclass(frozen=True)
class RelationEdge:
    subject_id: str
    object_id: str
    predicate: str


@dataclass
class SceneGraph:
    image_id: str
    width: int
    height: int
    objects: list[SceneObject] = field(default_factory=list)
    relations: list[RelationEdge] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise DataFormatError(f"scene {self.image_id}: non-positive image size")
        ids = [o.object_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise DataFormatError(f"scene {self.image_id}: duplicate object ids")
        known = set(ids)
        for obj in self.objects:
            b = obj.bbox
            if b.w <= 0 or b.h <= 0:
                raise DataFormatError(
                    f"scene {self.image_id}: object {obj.object_id} has empty bbox"
                )
            if b.x < 0 or b.y < 0 or b.x2 > self.width or b.y2 > self.height:
                raise DataFormatError(
                    f"scene {self.image_id}: object {obj.object_id} bbox outside image"
                )
        for edge in self.relations:
            if edge.subject_id == edge.object_id:
                raise DataFormatError(
                    f"scene {self.image_id}: self-relation on {edge.subject_id}"
                )
            for oid in (edge.subject_id, edge.object_id):
                if oid not in known:
                    raise DataFormatError(
                        f"scene {self.image_id}: relation references unknown object {oid}"
                    )

    def object_by_id(self, object_id: str) -> SceneObject:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise KeyError(object_id)


@dataclass(frozen=True)
class AroTestCase:
    image_id: str
    crop: BBox
    true_caption: str
    false_captions: tuple[str, ...]
    task_kind: TaskKind
    group_key: str

    def __post_init__(self) -> None:
        if not self.false_captions:
            raise ValueError("a test case needs at least one false caption")
        if self.true_caption in self.false_captions:
            raise ValueError("true caption duplicated among false captions")


def filter_candidate_objects(scene: SceneGraph) -> list[str]:
    """Ids of objects at least a quarter of the image in both width and height.

    The threshold is inclusive: equality passes. Integer comparison avoids
    float rounding at the boundary.
    """
    return [
        obj.object_id
        for obj in scene.objects
        if 4 * obj.bbox.w >= scene.width and 4 * obj.bbox.h >= scene.height
    ]


def smallest_enclosing_bbox(b1: BBox, b2: BBox) -> BBox:
    x1 = min(b1.x, b2.x)
    y1 = min(b1.y, b2.y)
    x2 = max(b1.x2, b2.x2)
    y2 = max(b1.y2, b2.y2)
    return BBox(x1, y1, x2 - x1, y2 - y1)


def _clamp_to_image(box: BBox, width: int, height: int) -> BBox:
    x1 = max(box.x, 0)
    y1 = max(box.y, 0)
    x2 = min(box.x2, width)
    y2 = min(box.y2, height)
    return BBox(x1, y1, x2 - x1, y2 - y1)


def render_relation_captions(subject: str, predicate: str, obj: str) -> tuple[str, str]:
    """True caption and its subject/object swap; inputs are lowercased."""
    subject, predicate, obj = subject.lower(), predicate.lower(), obj.lower()
    true = f"the {subject} is {predicate} the {obj}"
    false = f"the {obj} is {predicate} the {subject}"
    return true, false


def render_attribution_captions(
    attr1: str, obj1: str, attr2: str, obj2: str
) -> tuple[str, str]:
    """True caption and its attribute swap; rejects identical attrs/objects."""
    attr1, obj1, attr2, obj2 = (s.lower() for s in (attr1, obj1, attr2, obj2))
    if attr1 == attr2:
        raise ValueError("attributes must differ, swap would be the identity")
    if obj1 == obj2:
        raise ValueError("object categories must differ")
    true = f"the {attr1} {obj1} and the {attr2} {obj2}"
    false = f"the {attr2} {obj1} and the {attr1} {obj2}"
    return true, false


def enumerate_relation_cases(
    scene: SceneGraph,
    symmetric_blocklist: Iterable[str] = DEFAULT_SYMMETRIC_RELATIONS,
) -> list[AroTestCase]:
    """One case per relation edge between two large, distinct-category objects."""
    blocked = {p.strip().lower() for p in symmetric_blocklist}
    passing = set(filter_candidate_objects(scene))
    cases: list[AroTestCase] = []
    for edge in scene.relations:
        if edge.subject_id not in passing or edge.object_id not in passing:
            continue
        predicate = edge.predicate.strip().lower()
        if predicate in blocked:
            continue
        subj = scene.object_by_id(edge.subject_id)
        obj = scene.object_by_id(edge.object_id)
        if subj.category.lower() == obj.category.lower():
            continue
        true, false = render_relation_captions(subj.category, predicate, obj.category)
        crop = _clamp_to_image(
            smallest_enclosing_bbox(subj.bbox, obj.bbox), scene.width, scene.height
        )
        cases.append(
            AroTestCase(
                image_id=scene.image_id,
                crop=crop,
                true_caption=true,
                false_captions=(false,),
                task_kind=TaskKind.RELATION,
                group_key=predicate,
            )
        )
    return cases


def enumerate_attribution_cases(scene: SceneGraph) -> list[AroTestCase]:
    """Attribute-swap cases over unordered pairs of large attributed objects.

    Objects need distinct categories and at least one attribute each; one
    case per (attr1, attr2) combination with attr1 != attr2, deduplicated by
    (object pair, sorted attribute pair).
    """
    passing = set(filter_candidate_objects(scene))
    candidates = [
        obj
        for obj in scene.objects
        if obj.object_id in passing and obj.attributes
    ]
    cases: list[AroTestCase] = []
    seen: set[tuple[str, str, tuple[str, str]]] = set()
    for i, first in enumerate(candidates):
        for second in candidates[i + 1 :]:
            if first.category.lower() == second.category.lower():
                continue
            for attr1 in first.attributes:
                for attr2 in second.attributes:
                    a1, a2 = attr1.lower(), attr2.lower()
                    if a1 == a2:
                        continue
                    pair = tuple(sorted((a1, a2)))
                    key = (first.object_id, second.object_id, pair)
                    if key in seen:
                        continue
                    seen.add(key)
                    true, false = render_attribution_captions(
                        a1, first.category, a2, second.category
                    )
                    crop = _clamp_to_image(
                        smallest_enclosing_bbox(first.bbox, second.bbox),
                        scene.width,
                        scene.height,
                    )
                    cases.append(
                        AroTestCase(
                            image_id=scene.image_id,
                            crop=crop,
                            true_caption=true,
                            false_captions=(false,),
                            task_kind=TaskKind.ATTRIBUTION,
                            group_key="|".join(pair),
                        )
                    )
    return cases


def sort_cases(cases: Iterable[AroTestCase]) -> list[AroTestCase]:
    """Pinned merge order so parallel per-scene mining stays deterministic."""
    return sorted(cases, key=lambda c: (c.image_id, c.group_key, tuple(c.crop)))


# --- JSON Lines I/O -----------------------------------------------------


def scene_from_dict(record: dict) -> SceneGraph:
    try:
        objects = [
            SceneObject(
                object_id=str(o["object_id"]),
                category=str(o["category"]),
                bbox=BBox(*(int(v) for v in o["bbox"])),
                attributes=tuple(str(a) for a in o.get("attributes", [])),
            )
            for o in record.get("objects", [])
        ]
        relations = [
            RelationEdge(
                subject_id=str(r["subject_id"]),
                object_id=str(r["object_id"]),
                predicate=str(r["predicate"]),
            )
            for r in record.get("relations", [])
        ]
        return SceneGraph(
            image_id=str(record["image_id"]),
            width=int(record["width"]),
            height=int(record["height"]),
            objects=objects,
            relations=relations,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"bad scene record: {exc}") from exc


def read_scene_graphs(path: str | Path) -> Iterator[SceneGraph]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: invalid JSON") from exc
            if "provenance" in record:
                continue
            yield scene_from_dict(record)


def case_to_dict(case: AroTestCase) -> dict:
    return {
        "image_id": case.image_id,
        "crop": list(case.crop),
        "true_caption": case.true_caption,
        "false_captions": list(case.false_captions),
        "task_kind": case.task_kind.value,
        "group_key": case.group_key,
    }


def case_from_dict(record: dict) -> AroTestCase:
    try:
        return AroTestCase(
            image_id=str(record["image_id"]),
            crop=BBox(*(int(v) for v in record["crop"])),
            true_caption=str(record["true_caption"]),
            false_captions=tuple(str(c) for c in record["false_captions"]),
            task_kind=TaskKind(record["task_kind"]),
            group_key=str(record["group_key"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"bad test-case record: {exc}") from exc


def read_cases(path: str | Path) -> list[AroTestCase]:
    cases = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: invalid JSON") from exc
            if "provenance" in record:
                continue
            cases.append(case_from_dict(record))
    return cases


def write_cases(
    path: str | Path, cases: Sequence[AroTestCase], provenance: dict | None = None
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if provenance is not None:
            fh.write(json.dumps({"provenance": provenance}, sort_keys=True) + "\n")
        for case in cases:
            fh.write(json.dumps(case_to_dict(case), sort_keys=True) + "\n")
