"""Scene graph data model: vocabulary, graphs, boxes, JSON (de)serialization.

A scene graph is a set of objects (category ids) plus directed labeled edges
(subject_index, predicate_id, object_index). Graphs are immutable; the
augmentation step that appends the special image node returns a new graph.

JSON schema (human-authoring surface)::

    {"objects": ["boat", "river"],
     "edges": [["boat", "on", "river"], [0, "on", 1]]}

Edge endpoints may be object names (must be unambiguous) or object-list
indices. Serialization always emits index form. Augmented graphs carry an
extra ``"augmented": true`` key so that round-trips are lossless; plain
graphs may not reference the reserved ``__image__`` / ``__in_image__`` names.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

IMAGE_CATEGORY = "__image__"
IN_IMAGE_PREDICATE = "__in_image__"


class SceneGraphError(Exception):
    """Base class for scene-graph failures."""


class ParseError(SceneGraphError):
    """Malformed JSON or schema mismatch; carries a byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (offset {offset})")
        self.offset = offset


class VocabularyError(SceneGraphError):
    """A category or predicate name is not in the vocabulary."""


class StructureError(SceneGraphError):
    """Edges reference invalid objects, or the object set is degenerate."""


class StateError(SceneGraphError):
    """Operation called on a graph in the wrong augmentation state."""


@dataclass(frozen=True)
class Vocab:
    """Ordered category and predicate names.

    ``__image__`` is always the last object category and ``__in_image__``
    the last predicate; those indices are reserved for graph augmentation.
    """

    object_categories: tuple[str, ...]
    predicate_categories: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "object_categories", tuple(self.object_categories))
        object.__setattr__(self, "predicate_categories", tuple(self.predicate_categories))
        for kind, names in (("object", self.object_categories), ("predicate", self.predicate_categories)):
            if len(set(names)) != len(names):
                raise ValueError(f"duplicate {kind} category names")
        if not self.object_categories or self.object_categories[-1] != IMAGE_CATEGORY:
            raise ValueError(f"{IMAGE_CATEGORY} must be the last object category")
        if not self.predicate_categories or self.predicate_categories[-1] != IN_IMAGE_PREDICATE:
            raise ValueError(f"{IN_IMAGE_PREDICATE} must be the last predicate")
        if IMAGE_CATEGORY in self.object_categories[:-1]:
            raise ValueError(f"{IMAGE_CATEGORY} may only appear last")
        if IN_IMAGE_PREDICATE in self.predicate_categories[:-1]:
            raise ValueError(f"{IN_IMAGE_PREDICATE} may only appear last")

    @classmethod
    def create(cls, object_names, predicate_names) -> "Vocab":
        """Build a vocab from user names, appending the reserved entries."""
        return cls(tuple(object_names) + (IMAGE_CATEGORY,),
                   tuple(predicate_names) + (IN_IMAGE_PREDICATE,))

    @property
    def num_objects(self) -> int:
        return len(self.object_categories)

    @property
    def num_predicates(self) -> int:
        return len(self.predicate_categories)

    @property
    def image_category_id(self) -> int:
        return len(self.object_categories) - 1

    @property
    def in_image_predicate_id(self) -> int:
        return len(self.predicate_categories) - 1

    def object_id(self, name: str) -> int:
        try:
            return self.object_categories.index(name)
        except ValueError:
            raise VocabularyError(f"unknown object category {name!r}") from None

    def predicate_id(self, name: str) -> int:
        try:
            return self.predicate_categories.index(name)
        except ValueError:
            raise VocabularyError(f"unknown predicate {name!r}") from None

    def to_dict(self) -> dict:
        return {"objects": list(self.object_categories),
                "predicates": list(self.predicate_categories)}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(tuple(d["objects"]), tuple(d["predicates"]))


@dataclass(frozen=True)
class SceneGraph:
    """Immutable (objects, edges) tuple; ``augmented`` marks the image node."""

    objects: tuple[int, ...]
    edges: tuple[tuple[int, int, int], ...] = field(default_factory=tuple)
    augmented: bool = False

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(int(o) for o in self.objects))
        object.__setattr__(self, "edges", tuple((int(s), int(p), int(o)) for s, p, o in self.edges))

    @property
    def num_objects(self) -> int:
        return len(self.objects)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def image_index(self) -> int:
        """Position of the image node; only meaningful when augmented."""
        if not self.augmented:
            raise StateError("graph is not augmented; it has no image node")
        return len(self.objects) - 1


@dataclass(frozen=True)
class LayoutBox:
    """Normalized box with (x0, y0) the top-left corner."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (0.0 <= self.x0 < self.x1 <= 1.0 and 0.0 <= self.y0 < self.y1 <= 1.0):
            raise ValueError(f"invalid box ({self.x0}, {self.y0}, {self.x1}, {self.y1})")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)


def parse_scene_graph(json_text: str, vocab: Vocab) -> SceneGraph:
    """Parse the JSON schema into a SceneGraph with resolved ids.

    Raises ParseError (with byte offset) on malformed JSON, VocabularyError
    for unknown names, StructureError for bad indices / ambiguous names /
    empty object lists.
    """
    try:
        data = json.loads(json_text)
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed JSON: {e.msg}", offset=e.pos) from e
    if not isinstance(data, dict) or "objects" not in data or "edges" not in data:
        raise ParseError("expected an object with 'objects' and 'edges' keys")

    names = data["objects"]
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise ParseError("'objects' must be a list of category names")
    if len(names) == 0:
        raise StructureError("empty object set")

    augmented = bool(data.get("augmented", False))
    if not augmented:
        for n in names:
            if n in (IMAGE_CATEGORY, IN_IMAGE_PREDICATE):
                raise VocabularyError(f"reserved name {n!r} not allowed in plain graphs")

    objects = tuple(vocab.object_id(n) for n in names)

    def resolve_endpoint(ep, edge_i: int) -> int:
        if isinstance(ep, bool):
            raise ParseError(f"edge {edge_i}: boolean is not a valid endpoint")
        if isinstance(ep, int):
            if not (0 <= ep < len(names)):
                raise StructureError(f"edge {edge_i}: object index {ep} out of range")
            return ep
        if isinstance(ep, str):
            hits = [i for i, n in enumerate(names) if n == ep]
            if not hits:
                raise StructureError(f"edge {edge_i}: no object named {ep!r}")
            if len(hits) > 1:
                raise StructureError(f"edge {edge_i}: name {ep!r} is ambiguous; use an index")
            return hits[0]
        raise ParseError(f"edge {edge_i}: endpoint must be a name or index")

    edges = []
    raw_edges = data["edges"]
    if not isinstance(raw_edges, list):
        raise ParseError("'edges' must be a list")
    for i, e in enumerate(raw_edges):
        if not (isinstance(e, list) and len(e) == 3):
            raise ParseError(f"edge {i}: expected [subject, predicate, object]")
        s = resolve_endpoint(e[0], i)
        if not isinstance(e[1], str):
            raise ParseError(f"edge {i}: predicate must be a name")
        if not augmented and e[1] == IN_IMAGE_PREDICATE:
            raise VocabularyError(f"reserved predicate {e[1]!r} not allowed in plain graphs")
        p = vocab.predicate_id(e[1])
        o = resolve_endpoint(e[2], i)
        if s == o:
            raise StructureError(f"edge {i}: subject and object are the same node")
        edges.append((s, p, o))

    g = SceneGraph(objects, tuple(edges), augmented=augmented)
    problems = validate(g, vocab)
    if problems:
        raise StructureError("; ".join(problems))
    return g


def serialize_scene_graph(g: SceneGraph, vocab: Vocab) -> str:
    """Emit the JSON schema in index form (lossless for any valid graph)."""
    out = {
        "objects": [vocab.object_categories[c] for c in g.objects],
        "edges": [[s, vocab.predicate_categories[p], o] for s, p, o in g.edges],
    }
    if g.augmented:
        out["augmented"] = True
    return json.dumps(out)


def augment_with_image_node(g: SceneGraph, vocab: Vocab) -> SceneGraph:
    """Append the image node and one in_image edge per original object.

    Original objects and edges are preserved in order; the image node is
    last. Not idempotent: augmenting an augmented graph is a StateError.
    """
    if g.augmented:
        raise StateError("graph is already augmented")
    img = g.num_objects
    objects = g.objects + (vocab.image_category_id,)
    edges = g.edges + tuple((i, vocab.in_image_predicate_id, img) for i in range(g.num_objects))
    return SceneGraph(objects, edges, augmented=True)


def validate(g: SceneGraph, vocab: Vocab) -> list[str]:
    """Return a list of invariant violations (empty means valid)."""
    problems: list[str] = []
    if g.num_objects == 0:
        problems.append("object set is empty")
        return problems
    for i, c in enumerate(g.objects):
        if not (0 <= c < vocab.num_objects):
            problems.append(f"object {i}: category id {c} out of range")
    for i, (s, p, o) in enumerate(g.edges):
        if not (0 <= s < g.num_objects):
            problems.append(f"edge {i}: subject index {s} out of range")
        if not (0 <= o < g.num_objects):
            problems.append(f"edge {i}: object index {o} out of range")
        if s == o:
            problems.append(f"edge {i}: subject equals object")
        if not (0 <= p < vocab.num_predicates):
            problems.append(f"edge {i}: predicate id {p} out of range")

    image_id = vocab.image_category_id
    in_image = vocab.in_image_predicate_id
    if g.augmented:
        image_positions = [i for i, c in enumerate(g.objects) if c == image_id]
        if len(image_positions) != 1:
            problems.append(f"augmented graph must have exactly one image node, found {len(image_positions)}")
            return problems
        if image_positions[0] != g.num_objects - 1:
            problems.append(f"image node at position {image_positions[0]}, must be last")
            return problems
        img = image_positions[0]
        for i in range(g.num_objects - 1):
            links = [e for e in g.edges if e == (i, in_image, img)]
            if len(links) != 1:
                problems.append(f"object {i}: expected exactly one in_image edge, found {len(links)}")
    else:
        for i, c in enumerate(g.objects):
            if c == image_id:
                problems.append(f"object {i}: reserved image category in un-augmented graph")
        for i, (_, p, _) in enumerate(g.edges):
            if p == in_image:
                problems.append(f"edge {i}: reserved in_image predicate in un-augmented graph")
    return problems


def in_image_edge_ids(g: SceneGraph, vocab: Vocab) -> list[int]:
    """For each non-image object i, the edge index of its (i, in_image, img)
    edge. Requires a valid augmented graph."""
    if not g.augmented:
        raise StateError("graph is not augmented")
    img = g.image_index
    in_image = vocab.in_image_predicate_id
    out: list[int] = []
    for i in range(g.num_objects - 1):
        hits = [k for k, e in enumerate(g.edges) if e == (i, in_image, img)]
        if len(hits) != 1:
            raise StructureError(f"object {i} has {len(hits)} in_image edges")
        out.append(hits[0])
    return out
