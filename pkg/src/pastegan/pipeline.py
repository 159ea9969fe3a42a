"""End-to-end wiring: model bundle, batched graph tensors, and the
generation path from scene graph + crops to an image.

The bundle owns every trainable component (generator parts, both
discriminators, the frozen proxy and selector nets) so one checkpoint file
restores a complete run. Generation can record a trace of the stages it
executed, which the ablation tests inspect.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .adversarial import ImageDiscriminator, ObjectDiscriminator
from .checkpoint import load_tensors, save_tensors
from .config import TrainingConfig
from .crop_pipeline import CropEncoder, ObjectRefiner, PredicateExpander
from .fuser_decoder import CRNDecoder, ObjectImageFuser, place_in_box, rasterize_box
from .graph_conv import BoxRegressor, EmbeddingTable, VectorGCN
from .memory_tank import (MemoryTank, SelectorModel, TankError, random_crops,
                          retrieve_candidates)
from .metrics import ProxyFeatureNet
from .scenegraph import (LayoutBox, SceneGraph, StructureError, Vocab,
                         augment_with_image_node, in_image_edge_ids, validate)


@dataclass
class GraphBatch:
    """Several augmented graphs packed into flat index tensors.

    Non-image objects are enumerated scene by scene in object order; crops
    and boxes align with that enumeration.
    """

    graphs: list[SceneGraph]
    cats: torch.Tensor            # [N_total] category ids
    preds: torch.Tensor           # [E_total] predicate ids
    edges: torch.Tensor           # [E_total, 2] global (subject, object)
    image_nodes: torch.Tensor     # [B] global index of each scene's image node
    non_image_idx: torch.Tensor   # [N_obj] global node index per non-image object
    scene_of_object: torch.Tensor  # [N_obj]
    in_image_edge: torch.Tensor   # [N_obj] global edge index of the in_image edge
    obj_slices: list[tuple[int, int]]  # per scene range into the non-image enumeration

    @classmethod
    def from_graphs(cls, graphs: list[SceneGraph], vocab: Vocab) -> "GraphBatch":
        cats, preds, edges = [], [], []
        image_nodes, non_image_idx, scene_of_object, in_image_edge = [], [], [], []
        obj_slices = []
        node_off = edge_off = 0
        for s, g in enumerate(graphs):
            if not g.augmented:
                raise StructureError("GraphBatch requires augmented graphs")
            cats.extend(g.objects)
            preds.extend(p for _, p, _ in g.edges)
            edges.extend((node_off + a, node_off + b) for a, _, b in g.edges)
            image_nodes.append(node_off + g.image_index)
            start = len(non_image_idx)
            for j in range(g.num_objects - 1):
                non_image_idx.append(node_off + j)
                scene_of_object.append(s)
            for e in in_image_edge_ids(g, vocab):
                in_image_edge.append(edge_off + e)
            obj_slices.append((start, len(non_image_idx)))
            node_off += g.num_objects
            edge_off += g.num_edges
        long = torch.long
        return cls(
            graphs=list(graphs),
            cats=torch.tensor(cats, dtype=long),
            preds=torch.tensor(preds, dtype=long),
            edges=torch.tensor(edges, dtype=long).reshape(-1, 2),
            image_nodes=torch.tensor(image_nodes, dtype=long),
            non_image_idx=torch.tensor(non_image_idx, dtype=long),
            scene_of_object=torch.tensor(scene_of_object, dtype=long),
            in_image_edge=torch.tensor(in_image_edge, dtype=long),
            obj_slices=obj_slices,
        )

    @property
    def num_scenes(self) -> int:
        return len(self.graphs)

    @property
    def num_objects(self) -> int:
        return int(self.non_image_idx.shape[0])


class ModelBundle(nn.Module):
    """Every network of a run, including frozen helpers, as one module."""

    def __init__(self, config: TrainingConfig, vocab: Vocab):
        super().__init__()
        self.config = config
        self.vocab = vocab
        c = config
        self.embeddings = EmbeddingTable(vocab.num_objects, vocab.num_predicates,
                                         c.d_z, c.embed_max_norm)
        self.vgcn = VectorGCN(c.d_z, c.vgcn_hidden, c.vgcn_layers)
        self.box_reg = BoxRegressor(c.d_z, c.box_hidden)
        self.crop_encoder = CropEncoder(c.crop_size, c.feat_hw, width=c.d_crop,
                                        out_dim=c.d_crop)
        self.pred_expander = PredicateExpander(c.d_z, c.d_crop, c.feat_hw)
        self.refiner = None if c.no_object2_refiner else ObjectRefiner(
            c.d_crop, c.gcn2d_hidden, c.d_z, c.feat_hw, expander=self.pred_expander)
        self.fuser = None if c.no_obj_img_fuser else ObjectImageFuser(
            c.canvas_dim, c.attn_dim, learnable_lambda=not c.freeze_lambda_attn,
            masked_attention=c.masked_attention)
        self.decoder = CRNDecoder(c.canvas_dim, c.image_size, c.crn_initial_res,
                                  c.noise_dim, c.crn_channels)
        self.d_img = ImageDiscriminator(c.d_img_width, image_size=c.image_size)
        self.d_obj = ObjectDiscriminator(vocab.num_objects - 1, c.d_obj_width,
                                         crop_size=c.crop_size)
        self.proxy = ProxyFeatureNet(vocab.num_objects - 1, width=c.proxy_width)
        self.selector_table = EmbeddingTable(vocab.num_objects, vocab.num_predicates,
                                             c.d_z, c.embed_max_norm)
        self.selector_vgcn = VectorGCN(c.d_z, c.vgcn_hidden, c.vgcn_layers)

    def generator_modules(self) -> list[nn.Module]:
        mods = [self.embeddings, self.vgcn, self.box_reg, self.crop_encoder,
                self.pred_expander]
        if self.refiner is not None:
            mods.append(self.refiner)
        if self.fuser is not None:
            mods.append(self.fuser)
        mods.append(self.decoder)
        return mods

    def generator_parameters(self):
        seen = set()
        for mod in self.generator_modules():
            for p in mod.parameters():
                if id(p) not in seen:
                    seen.add(id(p))
                    yield p

    def selector(self) -> SelectorModel:
        return SelectorModel(self.selector_table, self.selector_vgcn)


@dataclass
class GeneratorForward:
    """Everything the losses need from one generator pass."""

    images: torch.Tensor        # [B, 3, H, W] in [0, 1]
    boxes_pred: torch.Tensor    # [N_obj, 4]
    boxes_used: torch.Tensor    # [N_obj, 4]
    canvases: torch.Tensor      # [B, D_c, H, W]
    trace: list[str] = field(default_factory=list)


def scene_codes(bundle: ModelBundle, gb: GraphBatch):
    """Vector-GCN object and predicate vectors for a packed batch."""
    z_obj = bundle.embeddings.object_embeddings(gb.cats)
    z_pred = bundle.embeddings.predicate_embeddings(gb.preds)
    return bundle.vgcn(z_obj, z_pred, gb.edges)


def generate_batch(bundle: ModelBundle, gb: GraphBatch, crops: torch.Tensor,
                   noise: torch.Tensor, gt_boxes: torch.Tensor | None = None,
                   trace: list[str] | None = None) -> GeneratorForward:
    """Run the generator on packed graphs with already-chosen crops.

    crops [N_obj, 3, crop, crop] aligned with the non-image enumeration;
    noise [B, noise_dim]; gt_boxes [N_obj, 4] replaces predicted boxes for
    placement when given (box regression still runs).
    """
    c = bundle.config
    trace = trace if trace is not None else []
    hw = (c.feat_hw, c.feat_hw)

    z_obj, z_pred = scene_codes(bundle, gb)
    trace.append("vector_gcn")
    boxes_pred = bundle.box_reg(z_obj[gb.non_image_idx])
    trace.append("box_regressor")
    boxes_used = boxes_pred if gt_boxes is None else gt_boxes

    v = bundle.crop_encoder(crops)
    trace.append("crop_encoder")

    if bundle.refiner is not None:
        pred_maps = bundle.pred_expander(z_pred)
        node_maps = v.new_zeros(gb.cats.shape[0], *v.shape[1:])
        node_maps[gb.non_image_idx] = v
        node_out, pred_out = bundle.refiner.gcn(node_maps, pred_maps, gb.edges)
        v_ref, vp = node_out[gb.non_image_idx], pred_out
        trace.append("object_refiner")
    else:
        v_ref, vp = v, bundle.pred_expander(z_pred)

    # u_p for each object's in_image edge: [raw z_p broadcast ; predicate map]
    z_p_in = z_pred[gb.in_image_edge]
    vp_in = vp[gb.in_image_edge]
    up = torch.cat([z_p_in[:, :, None, None].expand(-1, -1, *hw), vp_in], dim=1)

    placed = []
    masks = []
    boxes_raster = boxes_used.detach().tolist()
    for j in range(gb.num_objects):
        placed.append(place_in_box(z_obj[gb.non_image_idx[j]], v_ref[j],
                                   boxes_raster[j], hw))
        r0, c0, r1, c1 = rasterize_box(boxes_raster[j], hw)
        m = torch.zeros(hw, dtype=torch.bool)
        m[r0:r1, c0:c1] = True
        masks.append(m)
    u = torch.stack(placed, dim=0)
    support = torch.stack(masks, dim=0)

    # image-node map per scene: z broadcast over the full canvas, zero crop part
    n_scenes = gb.num_scenes
    z_img = z_obj[gb.image_nodes]
    u_img = torch.cat([
        z_img[:, :, None, None].expand(-1, -1, *hw),
        v_ref.new_zeros(n_scenes, v_ref.shape[1], *hw),
    ], dim=1)

    groups = gb.scene_of_object
    if bundle.fuser is not None:
        u_attn = _grouped_attention_fuse(u, up, groups, gb.obj_slices, bundle.fuser, support)
        y = bundle.fuser.lambda_attn * u_attn + u_img
    else:
        y = u_img.index_add(0, groups, u)
    trace.append("fuser.attention" if bundle.fuser is not None else "fuser.sum")
    canvas = F.interpolate(y, size=(c.image_size, c.image_size), mode="nearest")

    images = bundle.decoder(canvas, noise)
    trace.append("decoder")
    return GeneratorForward(images=(images + 1.0) / 2.0, boxes_pred=boxes_pred,
                            boxes_used=boxes_used, canvases=canvas, trace=trace)


def _grouped_attention_fuse(u, up, groups, slices, fuser, support_masks):
    """attention_fuse over several scenes at once: softmax runs within each
    scene's object group (same math as the per-scene call)."""
    num_groups = len(slices)
    logits = (fuser.f_proj(u) * fuser.q_proj(up)).sum(dim=1)  # [N, h, w]
    masked = fuser.masked_attention
    if masked:
        neg = torch.finfo(logits.dtype).min
        logits = torch.where(support_masks, logits, logits.new_full((), neg))
    spatial = logits.shape[1:]
    with torch.no_grad():  # shift only; softmax is invariant to it
        gmax = torch.stack([logits[a:b].amax(dim=0) for a, b in slices])
    ex = torch.exp(logits - gmax[groups])
    if masked:
        ex = ex * support_masks
    denom = ex.new_zeros((num_groups,) + spatial).index_add_(0, groups, ex)
    beta = ex / denom[groups].clamp_min(torch.finfo(ex.dtype).tiny)
    weighted = beta.unsqueeze(1) * fuser.l_proj(u)
    out = weighted.new_zeros((num_groups,) + weighted.shape[1:])
    return out.index_add_(0, groups, weighted)


@dataclass
class GenerationResult:
    image: torch.Tensor                 # [3, H, W] in [0, 1]
    boxes: list[LayoutBox]
    selected_crop_ids: list[str]
    selected_thumbnails: torch.Tensor   # [n, 3, crop, crop]
    candidates: list[list[str]]
    trace: list[str]


@dataclass
class RunArtifacts:
    """A loaded run: models plus the memory tank they were trained with."""

    bundle: ModelBundle
    tank: MemoryTank

    @property
    def config(self) -> TrainingConfig:
        return self.bundle.config

    @property
    def vocab(self) -> Vocab:
        return self.bundle.vocab


def generate_image(art: RunArtifacts, graph: SceneGraph, seed: int, k: int | None = None,
                   crop_overrides: dict[int, str] | None = None,
                   gt_boxes=None, forced_crops: list | None = None) -> GenerationResult:
    """Deterministic single-scene generation.

    ``seed`` drives both the top-k crop draw and the decoder noise.
    ``crop_overrides`` pins object index -> crop_id; ``forced_crops`` (a
    list of CropRecords or None entries) bypasses retrieval entirely for
    the given positions. ``gt_boxes`` replaces predicted placement.
    """
    config, vocab = art.config, art.vocab
    g = graph if graph.augmented else augment_with_image_node(graph, vocab)
    problems = validate(g, vocab)
    if problems:
        raise StructureError("; ".join(problems))
    n_obj = g.num_objects - 1
    trace: list[str] = []

    k = config.k_retrieval if k is None else k
    selector = art.bundle.selector()
    candidates = retrieve_candidates(g, art.tank, selector, k,
                                     metric=config.similarity)
    if config.no_crop_selection:
        selected = random_crops(g, art.tank, seed)
        trace.append("crop_selector.random")
    else:
        # same draw as memory_tank.select_crops over the candidate lists
        rng = np.random.default_rng(seed)
        selected = [cands[int(rng.integers(len(cands)))] for cands in candidates]
        trace.append("crop_selector.topk")
    if forced_crops is not None:
        for i, rec in enumerate(forced_crops):
            if rec is not None:
                selected[i] = rec
        trace.append("crop_selector.forced")
    if crop_overrides:
        for idx, crop_id in crop_overrides.items():
            idx = int(idx)
            if not (0 <= idx < n_obj):
                raise StructureError(f"override object index {idx} out of range")
            rec = art.tank.record(crop_id)
            if rec.category_id != g.objects[idx]:
                raise TankError(
                    f"override crop {crop_id!r} has category {rec.category_id}, "
                    f"object {idx} has {g.objects[idx]}")
            selected[idx] = rec
        trace.append("crop_selector.override")

    crops = torch.stack([r.image for r in selected], dim=0)
    gen = torch.Generator().manual_seed(int(seed))
    noise = torch.randn(1, config.noise_dim, generator=gen)

    boxes_t = None
    if gt_boxes is not None:
        if torch.is_tensor(gt_boxes):
            boxes_t = gt_boxes.to(torch.float32)
        else:
            rows = [b.as_tuple() if hasattr(b, "as_tuple") else tuple(map(float, b))
                    for b in gt_boxes]
            boxes_t = torch.tensor(rows, dtype=torch.float32)
        if boxes_t.shape != (n_obj, 4):
            raise StructureError(f"expected {n_obj} boxes, got {tuple(boxes_t.shape)}")

    gb = GraphBatch.from_graphs([g], vocab)
    art.bundle.eval()
    with torch.no_grad():
        fwd = generate_batch(art.bundle, gb, crops, noise, gt_boxes=boxes_t, trace=trace)

    boxes = [LayoutBox(*[float(x) for x in row]) for row in fwd.boxes_used]
    return GenerationResult(
        image=fwd.images[0],
        boxes=boxes,
        selected_crop_ids=[r.crop_id for r in selected],
        selected_thumbnails=crops,
        candidates=[[r.crop_id for r in cands] for cands in candidates],
        trace=trace,
    )


def image_to_png_bytes(image01: torch.Tensor) -> bytes:
    """Encode a [3, H, W] tensor in [0, 1] as PNG bytes (deterministic)."""
    import io

    from PIL import Image

    arr = (image01.clamp(0, 1).numpy() * 255.0).round().astype("uint8").transpose(1, 2, 0)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


CHECKPOINT_FORMAT = 1


def save_bundle(path, bundle: ModelBundle, step: int) -> Path:
    meta = {
        "format": CHECKPOINT_FORMAT,
        "step": step,
        "config": bundle.config.to_dict(),
        "vocab": bundle.vocab.to_dict(),
        "proxy_hash": bundle.proxy.weight_hash(),
    }
    return save_tensors(path, dict(bundle.state_dict()), meta)


def load_bundle(path) -> tuple[ModelBundle, int]:
    tensors, meta = load_tensors(path)
    config = TrainingConfig.from_dict(meta["config"])
    vocab = Vocab.from_dict(meta["vocab"])
    bundle = ModelBundle(config, vocab)
    bundle.load_state_dict(tensors, strict=True)
    bundle.eval()
    return bundle, int(meta.get("step", -1))
