"""External memory tank of object crops and the crop selector.

Each stored crop carries a visual code: the code is the crop's object
vector produced by a frozen vector GCN run over the scene graph the crop
came from, so it encodes scene context, not pixels. Retrieval for a query
object computes its code the same way and takes the k nearest same-category
records under L2 distance, then samples one uniformly.

On-disk layout::

    tank/index.json    records (crop_id, category, source, code offset),
                       plus d_code and crop_size
    tank/codes.f32     row-major little-endian float32 codes
    tank/crops/<crop_id>.png

Crop images are quantized to 8-bit at build time so the in-memory tank and
a reloaded one are identical.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .graph_conv import EmbeddingTable, VectorGCN, run_vector_gcn
from .scenegraph import SceneGraph, StateError, Vocab, augment_with_image_node, validate


class TankError(Exception):
    """Build or retrieval failure in the memory tank."""


@dataclass(frozen=True)
class CropRecord:
    """One stored crop: image in [0,1], context code, and provenance."""

    crop_id: str
    category_id: int
    image: torch.Tensor          # [3, crop_size, crop_size]
    visual_code: np.ndarray      # [d_code] float32
    source: str

    def __post_init__(self):
        if not np.isfinite(self.visual_code).all():
            raise TankError(f"crop {self.crop_id}: non-finite visual code")


@dataclass
class CropSource:
    """Input to the tank builder: a crop plus the graph and object position
    its code is computed from."""

    crop_id: str
    category_id: int
    image: torch.Tensor
    source: str
    graph: SceneGraph
    object_index: int


class SelectorModel:
    """A frozen embedding table + vector GCN used only for code extraction."""

    def __init__(self, table: EmbeddingTable, net: VectorGCN):
        self.table = table
        self.net = net
        for p in self.parameters():
            p.requires_grad_(False)

    def parameters(self):
        yield from self.table.parameters()
        yield from self.net.parameters()

    @property
    def d_code(self) -> int:
        return self.net.dim


def compute_visual_codes(g: SceneGraph, selector: SelectorModel) -> np.ndarray:
    """Codes for every non-image object of an augmented graph, in object
    order; [n-1, d_code] float32. Deterministic given (g, selector)."""
    if not g.augmented:
        raise StateError("visual codes require an augmented graph")
    with torch.no_grad():
        obj_vecs, _ = run_vector_gcn(g, selector.table, selector.net)
    return obj_vecs[:-1].to(torch.float32).cpu().numpy()


class MemoryTank:
    """Category-indexed, immutable-after-build store of crop records."""

    def __init__(self, records: list[CropRecord], d_code: int, crop_size: int):
        self.records = list(records)
        self.d_code = d_code
        self.crop_size = crop_size
        self.by_category: dict[int, list[int]] = {}
        self.by_id: dict[str, int] = {}
        for pos, rec in enumerate(self.records):
            if rec.crop_id in self.by_id:
                raise TankError(f"duplicate crop_id {rec.crop_id!r}")
            if rec.visual_code.shape != (d_code,):
                raise TankError(f"crop {rec.crop_id}: code dim {rec.visual_code.shape} != {d_code}")
            if tuple(rec.image.shape) != (3, crop_size, crop_size):
                raise TankError(f"crop {rec.crop_id}: image shape {tuple(rec.image.shape)}")
            self.by_category.setdefault(rec.category_id, []).append(pos)
            self.by_id[rec.crop_id] = pos

    def __len__(self) -> int:
        return len(self.records)

    def record(self, crop_id: str) -> CropRecord:
        try:
            return self.records[self.by_id[crop_id]]
        except KeyError:
            raise TankError(f"no crop with id {crop_id!r}") from None

    def category_records(self, category_id: int) -> list[CropRecord]:
        return [self.records[i] for i in self.by_category.get(category_id, [])]

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        (out / "crops").mkdir(parents=True, exist_ok=True)
        codes = np.stack([r.visual_code for r in self.records], axis=0).astype("<f4") \
            if self.records else np.zeros((0, self.d_code), dtype="<f4")
        (out / "codes.f32").write_bytes(codes.tobytes())
        index = {
            "d_code": self.d_code,
            "crop_size": self.crop_size,
            "records": [
                {"crop_id": r.crop_id, "category_id": r.category_id,
                 "source": r.source, "code_offset": i * self.d_code * 4}
                for i, r in enumerate(self.records)
            ],
        }
        (out / "index.json").write_text(json.dumps(index, indent=1))
        for r in self.records:
            arr = (r.image.numpy() * 255.0).round().astype(np.uint8).transpose(1, 2, 0)
            Image.fromarray(arr).save(out / "crops" / f"{r.crop_id}.png")

    @classmethod
    def load(cls, tank_dir) -> "MemoryTank":
        tank = Path(tank_dir)
        index = json.loads((tank / "index.json").read_text())
        d_code, crop_size = index["d_code"], index["crop_size"]
        raw = (tank / "codes.f32").read_bytes()
        records = []
        for entry in index["records"]:
            off = entry["code_offset"]
            code = np.frombuffer(raw, dtype="<f4", count=d_code, offset=off).copy()
            img = Image.open(tank / "crops" / f"{entry['crop_id']}.png").convert("RGB")
            image = torch.from_numpy(np.asarray(img).transpose(2, 0, 1).copy()).float() / 255.0
            records.append(CropRecord(entry["crop_id"], entry["category_id"], image,
                                      code, entry["source"]))
        return cls(records, d_code, crop_size)


_SAFE_ID = re.compile(r"^[A-Za-z0-9._-]+$")


def build_tank(crops, selector: SelectorModel, vocab: Vocab, crop_size: int = 32) -> MemoryTank:
    """Build a tank from a stream of CropSource items.

    Codes are computed per owning graph (augmenting it first if needed) and
    taken at each crop's object position; graphs are only encoded once per
    distinct graph object. An empty stream yields an empty tank.
    """
    records: list[CropRecord] = []
    seen: set[str] = set()
    code_cache: dict[int, np.ndarray] = {}
    for item in crops:
        if not _SAFE_ID.match(item.crop_id):
            raise TankError(f"crop_id {item.crop_id!r} is not filesystem-safe")
        if item.crop_id in seen:
            raise TankError(f"duplicate crop_id {item.crop_id!r}")
        seen.add(item.crop_id)
        if tuple(item.image.shape) != (3, crop_size, crop_size):
            raise TankError(f"crop {item.crop_id}: expected [3, {crop_size}, {crop_size}], "
                            f"got {tuple(item.image.shape)}")
        g = item.graph
        if not g.augmented:
            g = augment_with_image_node(g, vocab)
        problems = validate(g, vocab)
        if problems:
            raise TankError(f"crop {item.crop_id}: invalid owning graph: {problems[0]}")
        key = id(item.graph)
        if key not in code_cache:
            code_cache[key] = compute_visual_codes(g, selector)
        codes = code_cache[key]
        if not (0 <= item.object_index < codes.shape[0]):
            raise TankError(f"crop {item.crop_id}: object index {item.object_index} out of range")
        quantized = (item.image * 255.0).round() / 255.0
        records.append(CropRecord(item.crop_id, item.category_id, quantized,
                                  codes[item.object_index].copy(), item.source))
    return MemoryTank(records, selector.d_code, crop_size)


SIMILARITY_METRICS = ("l2", "l1", "cosine")


def _code_distances(codes: np.ndarray, query: np.ndarray, metric: str) -> np.ndarray:
    if metric == "l2":
        return np.linalg.norm(codes - query, axis=1)
    if metric == "l1":
        return np.abs(codes - query).sum(axis=1)
    if metric == "cosine":
        qn = query / max(np.linalg.norm(query), 1e-12)
        cn = codes / np.clip(np.linalg.norm(codes, axis=1, keepdims=True), 1e-12, None)
        return 1.0 - cn @ qn
    raise ValueError(f"unknown similarity metric {metric!r}; choose from {SIMILARITY_METRICS}")


def retrieve_candidates(g: SceneGraph, tank: MemoryTank, selector: SelectorModel,
                        k: int, exclude=(), metric: str = "l2") -> list[list[CropRecord]]:
    """Top-k same-category records per non-image object, nearest first.

    Distance defaults to L2 between visual codes (l1 and cosine are
    available); ties break by crop_id. If the exclusion set would empty a
    bucket it is ignored for that object.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    codes = compute_visual_codes(g, selector)
    exclude = set(exclude)
    out: list[list[CropRecord]] = []
    for obj_pos in range(g.num_objects - 1):
        category = g.objects[obj_pos]
        bucket = tank.category_records(category)
        if not bucket:
            raise TankError(f"no crops stored for category id {category}")
        kept = [r for r in bucket if r.crop_id not in exclude]
        if not kept:
            kept = bucket
        dists = _code_distances(np.stack([r.visual_code for r in kept]),
                                codes[obj_pos], metric)
        order = sorted(range(len(kept)), key=lambda i: (dists[i], kept[i].crop_id))
        out.append([kept[i] for i in order[:k]])
    return out


def select_crops(g: SceneGraph, tank: MemoryTank, selector: SelectorModel,
                 k: int, rng_seed: int, exclude=(), metric: str = "l2") -> list[CropRecord]:
    """One crop per non-image object, sampled uniformly from its top-k
    candidates. Deterministic given all inputs; k=1 ignores the seed."""
    candidates = retrieve_candidates(g, tank, selector, k, exclude=exclude, metric=metric)
    rng = np.random.default_rng(rng_seed)
    return [cands[int(rng.integers(len(cands)))] for cands in candidates]


def random_crops(g: SceneGraph, tank: MemoryTank, rng_seed: int, exclude=()) -> list[CropRecord]:
    """Uniform same-category choice, ignoring visual codes (the retrieval
    ablation)."""
    rng = np.random.default_rng(rng_seed)
    exclude = set(exclude)
    out = []
    for obj_pos in range(g.num_objects - 1):
        bucket = tank.category_records(g.objects[obj_pos])
        if not bucket:
            raise TankError(f"no crops stored for category id {g.objects[obj_pos]}")
        kept = [r for r in bucket if r.crop_id not in exclude] or bucket
        kept = sorted(kept, key=lambda r: r.crop_id)
        out.append(kept[int(rng.integers(len(kept)))])
    return out
