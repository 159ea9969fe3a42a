"""Training data: a procedural synthetic shapes dataset and a COCO-style
annotation adapter.

Synthetic scenes place 2-4 colored shapes on a soft background so that
every sampled relationship holds geometrically; boxes are exact by
construction. The adapter turns COCO-format instance annotations into the
same TrainingExample record, deriving relationships from box geometry.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw

from .fuser_decoder import extract_crops
from .memory_tank import CropSource
from .scenegraph import SceneGraph, Vocab

logger = logging.getLogger(__name__)

SHAPE_CATEGORIES = ("circle", "square", "triangle", "star", "diamond",
                    "cross", "ring", "pentagon", "stripes", "checker")
PREDICATES = ("left of", "right of", "above", "below", "inside", "surrounding")

# category = shape; color is a per-instance draw from a shared palette, so
# appearance information lives in the crop, not the category id
_INSTANCE_COLORS = (
    (230, 60, 50), (60, 180, 75), (55, 95, 225), (250, 200, 40),
    (225, 60, 210), (60, 210, 220), (245, 135, 35), (145, 70, 210),
    (120, 200, 60), (110, 70, 35),
)
_CANVAS_COLORS = ((235, 235, 235), (250, 240, 220), (215, 235, 250),
                  (225, 245, 225), (245, 225, 235))

CENTER_MARGIN = 0.08    # min center separation for directional predicates
INSIDE_MARGIN = 0.02    # min gap per side for containment predicates


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Knobs for the procedural generator; rendering is deterministic
    given the seed."""

    categories: tuple[str, ...] = SHAPE_CATEGORIES
    predicates: tuple[str, ...] = PREDICATES
    canvas_colors: tuple = _CANVAS_COLORS
    image_size: int = 64
    crop_size: int = 32
    min_objects: int = 2
    max_objects: int = 4
    min_extent: float = 0.2
    max_extent: float = 0.42
    seed: int = 0

    def vocab(self) -> Vocab:
        return Vocab.create(self.categories, self.predicates)


@dataclass
class TrainingExample:
    """One scene: rendered image, graph, exact boxes, ground-truth crops."""

    example_id: str
    image: torch.Tensor            # [3, H, W] in [0, 1]
    graph: SceneGraph              # un-augmented
    boxes: torch.Tensor            # [n, 4] normalized
    crops: torch.Tensor            # [n, 3, crop, crop]

    def __post_init__(self):
        if self.crops.shape[0] != self.graph.num_objects:
            raise ValueError("crop count must equal object count")


def predicate_holds(predicate: str, s, o) -> bool:
    """Whether (subject s, predicate, object o) holds for normalized boxes
    (x0, y0, x1, y1)."""
    scx, scy = (s[0] + s[2]) / 2, (s[1] + s[3]) / 2
    ocx, ocy = (o[0] + o[2]) / 2, (o[1] + o[3]) / 2
    if predicate == "left of":
        return scx <= ocx - CENTER_MARGIN
    if predicate == "right of":
        return scx >= ocx + CENTER_MARGIN
    if predicate == "above":
        return scy <= ocy - CENTER_MARGIN
    if predicate == "below":
        return scy >= ocy + CENTER_MARGIN
    if predicate == "inside":
        return (s[0] >= o[0] + INSIDE_MARGIN and s[1] >= o[1] + INSIDE_MARGIN
                and s[2] <= o[2] - INSIDE_MARGIN and s[3] <= o[3] - INSIDE_MARGIN)
    if predicate == "surrounding":
        return predicate_holds("inside", o, s)
    raise ValueError(f"unknown predicate {predicate!r}")


def _star_points(cx, cy, r_out, r_in, n=5, phase=-math.pi / 2):
    pts = []
    for i in range(2 * n):
        r = r_out if i % 2 == 0 else r_in
        a = phase + i * math.pi / n
        pts.append((cx + r * math.cos(a), cy + r * math.sin(a)))
    return pts


def _draw_shape(draw: ImageDraw.ImageDraw, category: str, box_px, color, bg_color):
    x0, y0, x1, y1 = box_px
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    w, h = x1 - x0, y1 - y0
    if category == "circle":
        draw.ellipse(box_px, fill=color)
    elif category == "square":
        draw.rectangle(box_px, fill=color)
    elif category == "triangle":
        draw.polygon([(cx, y0), (x1, y1), (x0, y1)], fill=color)
    elif category == "star":
        draw.polygon(_star_points(cx, cy, min(w, h) / 2, min(w, h) / 5), fill=color)
    elif category == "diamond":
        draw.polygon([(cx, y0), (x1, cy), (cx, y1), (x0, cy)], fill=color)
    elif category == "cross":
        draw.rectangle((cx - w / 6, y0, cx + w / 6, y1), fill=color)
        draw.rectangle((x0, cy - h / 6, x1, cy + h / 6), fill=color)
    elif category == "ring":
        draw.ellipse(box_px, fill=color)
        inner = (x0 + w * 0.28, y0 + h * 0.28, x1 - w * 0.28, y1 - h * 0.28)
        draw.ellipse(inner, fill=bg_color)
    elif category == "pentagon":
        pts = [(cx + (w / 2) * math.cos(-math.pi / 2 + k * 2 * math.pi / 5),
                cy + (h / 2) * math.sin(-math.pi / 2 + k * 2 * math.pi / 5)) for k in range(5)]
        draw.polygon(pts, fill=color)
    elif category == "stripes":
        n_bands = 5
        for b in range(n_bands):
            bx0 = x0 + w * b / n_bands
            bx1 = x0 + w * (b + 1) / n_bands
            draw.rectangle((bx0, y0, bx1, y1), fill=color if b % 2 == 0 else (255, 255, 255))
    elif category == "checker":
        n_cells = 4
        for r in range(n_cells):
            for c in range(n_cells):
                if (r + c) % 2 == 0:
                    fill = color
                else:
                    fill = (255, 255, 255)
                draw.rectangle((x0 + w * c / n_cells, y0 + h * r / n_cells,
                                x0 + w * (c + 1) / n_cells, y0 + h * (r + 1) / n_cells),
                               fill=fill)
    else:
        raise ValueError(f"unknown shape category {category!r}")


def _instance_color(rng):
    base = _INSTANCE_COLORS[int(rng.integers(len(_INSTANCE_COLORS)))]
    return tuple(int(np.clip(c * rng.uniform(0.9, 1.1), 0, 255)) for c in base)


def _render_scene(spec: SyntheticSceneSpec, categories, boxes, rng) -> torch.Tensor:
    ss = 4  # supersampling factor
    size = spec.image_size * ss
    bg = tuple(spec.canvas_colors[int(rng.integers(len(spec.canvas_colors)))])
    img = Image.new("RGB", (size, size), color=bg)
    draw = ImageDraw.Draw(img)
    order = sorted(range(len(boxes)),
                   key=lambda i: -(boxes[i][2] - boxes[i][0]) * (boxes[i][3] - boxes[i][1]))
    colors = [_instance_color(rng) for _ in categories]
    for i in order:
        x0, y0, x1, y1 = (v * size for v in boxes[i])
        _draw_shape(draw, categories[i], (x0, y0, x1, y1), colors[i], bg)
    img = img.resize((spec.image_size, spec.image_size), Image.LANCZOS)
    arr = np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0
    return torch.from_numpy(arr)


def _sample_box(spec: SyntheticSceneSpec, rng):
    w = rng.uniform(spec.min_extent, spec.max_extent)
    h = rng.uniform(spec.min_extent, spec.max_extent)
    cx = rng.uniform(w / 2 + 0.01, 1 - w / 2 - 0.01)
    cy = rng.uniform(h / 2 + 0.01, 1 - h / 2 - 0.01)
    return (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def generate_synthetic_dataset(spec: SyntheticSceneSpec, n: int) -> list[TrainingExample]:
    """Render n scenes whose graphs hold by construction. A draw whose
    relations cannot be placed within 100 attempts is discarded and
    redrawn."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(spec.seed)
    examples: list[TrainingExample] = []
    while len(examples) < n:
        n_obj = int(rng.integers(spec.min_objects, spec.max_objects + 1))
        cat_ids = [int(rng.integers(len(spec.categories))) for _ in range(n_obj)]
        pairs = [(i, j) for i in range(n_obj) for j in range(n_obj) if i != j]
        n_edges = int(rng.integers(1, n_obj + 1))
        n_edges = min(n_edges, len(pairs))
        pick = rng.choice(len(pairs), size=n_edges, replace=False)
        edges = [(pairs[int(p)][0], int(rng.integers(len(spec.predicates))), pairs[int(p)][1])
                 for p in pick]

        boxes = None
        for _ in range(100):
            attempt = [_sample_box(spec, rng) for _ in range(n_obj)]
            ok = all(predicate_holds(spec.predicates[p], attempt[s], attempt[o])
                     for s, p, o in edges)
            if ok:
                boxes = attempt
                break
        if boxes is None:
            continue  # infeasible relation draw; redraw the scene

        graph = SceneGraph(tuple(cat_ids), tuple(edges), augmented=False)
        image = _render_scene(spec, [spec.categories[c] for c in cat_ids], boxes, rng)
        box_t = torch.tensor(boxes, dtype=torch.float32)
        crops = extract_crops(image, boxes, spec.crop_size)
        examples.append(TrainingExample(f"ex{len(examples):05d}", image, graph, box_t, crops))
    return examples


def tank_sources(dataset: list[TrainingExample]) -> list[CropSource]:
    """Every object crop of the dataset as a tank-builder input."""
    sources = []
    for ex in dataset:
        for j in range(ex.graph.num_objects):
            box = [round(float(v), 4) for v in ex.boxes[j]]
            sources.append(CropSource(
                crop_id=f"{ex.example_id}-obj{j}",
                category_id=ex.graph.objects[j],
                image=ex.crops[j],
                source=f"{ex.example_id} box={box}",
                graph=ex.graph,
                object_index=j,
            ))
    return sources


def own_crop_ids(ex: TrainingExample) -> set[str]:
    return {f"{ex.example_id}-obj{j}" for j in range(ex.graph.num_objects)}


def classify_relation(s, o) -> str:
    """Heuristic predicate for a subject/object box pair: containment wins,
    otherwise the dominant center offset direction."""
    if predicate_holds("inside", s, o):
        return "inside"
    if predicate_holds("surrounding", s, o):
        return "surrounding"
    dx = (o[0] + o[2]) / 2 - (s[0] + s[2]) / 2
    dy = (o[1] + o[3]) / 2 - (s[1] + s[3]) / 2
    if abs(dx) >= abs(dy):
        return "left of" if dx > 0 else "right of"
    return "above" if dy > 0 else "below"


def load_coco_style(annotation_path, image_dir, vocab: Vocab, image_size: int = 64,
                    crop_size: int = 32, min_object_area: float = 0.02,
                    max_objects: int = 6, seed: int = 0):
    """Yield TrainingExamples from COCO-format instance annotations.

    Objects below ``min_object_area`` (fraction of image area) or with
    categories missing from the vocab are dropped; images with no remaining
    objects, or whose file is missing, are skipped with a warning. Each
    object gets one heuristic relationship to a random partner.
    """
    ann = json.loads(Path(annotation_path).read_text())
    cat_names = {c["id"]: c["name"] for c in ann.get("categories", [])}
    by_image: dict = {}
    for a in ann.get("annotations", []):
        by_image.setdefault(a["image_id"], []).append(a)
    rng = np.random.default_rng(seed)
    image_dir = Path(image_dir)

    for info in ann.get("images", []):
        path = image_dir / info["file_name"]
        if not path.exists():
            logger.warning("missing image file %s; skipping", path)
            continue
        iw, ih = info["width"], info["height"]
        objects, boxes = [], []
        for a in by_image.get(info["id"], []):
            name = cat_names.get(a["category_id"])
            if name is None or name not in vocab.object_categories[:-1]:
                continue
            x, y, w, h = a["bbox"]
            if w * h / (iw * ih) < min_object_area:
                continue
            objects.append(vocab.object_id(name))
            boxes.append((x / iw, y / ih, min((x + w) / iw, 1.0), min((y + h) / ih, 1.0)))
        if not objects:
            logger.warning("image %s has no usable objects; skipping", info["file_name"])
            continue
        if len(objects) > max_objects:
            keep = sorted(range(len(objects)),
                          key=lambda i: -(boxes[i][2] - boxes[i][0]) * (boxes[i][3] - boxes[i][1]))
            keep = sorted(keep[:max_objects])
            objects = [objects[i] for i in keep]
            boxes = [boxes[i] for i in keep]

        edges = []
        if len(objects) >= 2:
            for i in range(len(objects)):
                j = int(rng.integers(len(objects) - 1))
                j = j if j < i else j + 1
                pred = classify_relation(boxes[i], boxes[j])
                edges.append((i, vocab.predicate_id(pred), j))

        img = Image.open(path).convert("RGB").resize((image_size, image_size), Image.BILINEAR)
        image = torch.from_numpy(
            np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0)
        graph = SceneGraph(tuple(objects), tuple(edges), augmented=False)
        box_t = torch.tensor(boxes, dtype=torch.float32)
        crops = extract_crops(image, boxes, crop_size)
        yield TrainingExample(f"coco{info['id']}", image, graph, box_t, crops)
