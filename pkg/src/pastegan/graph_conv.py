"""Graph convolution over scene graphs, in vector and 2-D feature-map form.

Both variants share the same message-passing scheme. For every edge
(s, p, o) the concatenated triple is pushed through a shared trunk and
three heads producing a subject candidate, an updated predicate, and an
object candidate. Each node's new feature is the arithmetic mean of all
candidates it received, i.e. the subject-head outputs of edges it starts
plus the object-head outputs of edges it terminates. Predicates are
updated per edge. ReLU follows the trunk and each head.

The module operates on index tensors so that several graphs can be packed
into one forward pass (see ``GraphBatch`` in pipeline.py).
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .scenegraph import SceneGraph, StateError, Vocab


class EmbeddingTable(nn.Module):
    """Learned object-category and predicate embeddings."""

    def __init__(self, num_objects: int, num_predicates: int, dim: int, max_norm: float = 20.0):
        super().__init__()
        self.object_embeddings = nn.Embedding(num_objects, dim)
        self.predicate_embeddings = nn.Embedding(num_predicates, dim)
        self.dim = dim
        self.max_norm = max_norm

    def clamp_norms(self):
        """Renormalize rows whose L2 norm exceeds the cap. Call after each
        optimizer step."""
        with torch.no_grad():
            for emb in (self.object_embeddings, self.predicate_embeddings):
                norms = emb.weight.norm(dim=1, keepdim=True)
                scale = (self.max_norm / norms).clamp(max=1.0)
                emb.weight.mul_(scale)


class _TripleLinear(nn.Module):
    """One vector graph-conv layer: shared trunk + (g_s, g_p, g_o) heads."""

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.trunk = nn.Linear(3 * dim, hidden)
        self.head_s = nn.Linear(hidden, dim)
        self.head_p = nn.Linear(hidden, dim)
        self.head_o = nn.Linear(hidden, dim)

    def forward(self, z_s, z_p, z_o):
        t = torch.relu(self.trunk(torch.cat([z_s, z_p, z_o], dim=1)))
        return torch.relu(self.head_s(t)), torch.relu(self.head_p(t)), torch.relu(self.head_o(t))


class _TripleConv2d(nn.Module):
    """One 2-D graph-conv layer over feature-map triples."""

    def __init__(self, in_dim: int, out_dim: int, hidden: int, kernel_size: int = 3):
        super().__init__()
        pad = kernel_size // 2
        self.trunk = nn.Conv2d(3 * in_dim, hidden, kernel_size, padding=pad)
        self.head_s = nn.Conv2d(hidden, out_dim, kernel_size, padding=pad)
        self.head_p = nn.Conv2d(hidden, out_dim, kernel_size, padding=pad)
        self.head_o = nn.Conv2d(hidden, out_dim, kernel_size, padding=pad)

    def forward(self, v_s, v_p, v_o):
        t = torch.relu(self.trunk(torch.cat([v_s, v_p, v_o], dim=1)))
        return torch.relu(self.head_s(t)), torch.relu(self.head_p(t)), torch.relu(self.head_o(t))


def _pool_candidates(num_nodes, s_idx, o_idx, cand_s, cand_o):
    """Average the candidate multiset V_i^s ∪ V_i^o for every node i."""
    pooled = cand_s.new_zeros((num_nodes,) + cand_s.shape[1:])
    count = cand_s.new_zeros(num_nodes)
    pooled.index_add_(0, s_idx, cand_s)
    pooled.index_add_(0, o_idx, cand_o)
    ones = cand_s.new_ones(s_idx.shape[0])
    count.index_add_(0, s_idx, ones)
    count.index_add_(0, o_idx, ones)
    # Post-augmentation every node touches at least one edge.
    assert bool((count > 0).all()), "node with empty candidate set"
    shape = (num_nodes,) + (1,) * (cand_s.dim() - 1)
    return pooled / count.view(shape)


class VectorGCN(nn.Module):
    """Stack of vector graph-conv layers over object/predicate vectors."""

    def __init__(self, dim: int, hidden: int, num_layers: int = 5):
        super().__init__()
        self.layers = nn.ModuleList(_TripleLinear(dim, hidden) for _ in range(num_layers))
        self.dim = dim

    def forward(self, obj_vecs, pred_vecs, edges):
        """obj_vecs [N, D], pred_vecs [E, D], edges [E, 2] (subject, object
        node indices). Returns updated (obj_vecs, pred_vecs)."""
        s_idx, o_idx = edges[:, 0], edges[:, 1]
        for layer in self.layers:
            cand_s, new_pred, cand_o = layer(obj_vecs[s_idx], pred_vecs, obj_vecs[o_idx])
            obj_vecs = _pool_candidates(obj_vecs.shape[0], s_idx, o_idx, cand_s, cand_o)
            pred_vecs = new_pred
        return obj_vecs, pred_vecs


class FeatureGCN2D(nn.Module):
    """Graph convolution over [D, h, w] feature maps; spatial dims preserved."""

    def __init__(self, in_dim: int, out_dim: int, hidden: int, num_layers: int = 2,
                 kernel_size: int = 3):
        super().__init__()
        dims = [in_dim] + [out_dim] * num_layers
        self.layers = nn.ModuleList(
            _TripleConv2d(dims[i], dims[i + 1], hidden, kernel_size) for i in range(num_layers)
        )
        self.in_dim = in_dim
        self.out_dim = out_dim

    def forward(self, node_maps, pred_maps, edges):
        """node_maps [N, D, h, w], pred_maps [E, D, h, w], edges [E, 2].
        Returns updated (node_maps, pred_maps)."""
        if node_maps.shape[2:] != pred_maps.shape[2:]:
            raise ValueError(
                f"spatial dims differ: nodes {tuple(node_maps.shape[2:])} vs "
                f"predicates {tuple(pred_maps.shape[2:])}")
        s_idx, o_idx = edges[:, 0], edges[:, 1]
        for layer in self.layers:
            cand_s, new_pred, cand_o = layer(node_maps[s_idx], pred_maps, node_maps[o_idx])
            node_maps = _pool_candidates(node_maps.shape[0], s_idx, o_idx, cand_s, cand_o)
            pred_maps = new_pred
        return node_maps, pred_maps


class BoxRegressor(nn.Module):
    """Object vector -> normalized layout box.

    The net emits (cx, cy, w, h) logits; centers and extents pass through a
    sigmoid, corners are clamped to [0, 1] and pushed apart to a minimum
    extent so the LayoutBox invariants hold for any input.
    """

    def __init__(self, dim: int, hidden: int = 128, min_extent: float = 1.0 / 64.0):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, hidden), nn.ReLU(), nn.Linear(hidden, 4))
        self.min_extent = min_extent

    def forward(self, obj_vecs):
        raw = self.net(obj_vecs)
        cx, cy = torch.sigmoid(raw[:, 0]), torch.sigmoid(raw[:, 1])
        half_w, half_h = torch.sigmoid(raw[:, 2]) / 2, torch.sigmoid(raw[:, 3]) / 2

        def corners(c, half):
            lo = (c - half).clamp(0.0, 1.0)
            hi = (c + half).clamp(0.0, 1.0)
            deficit = torch.relu(self.min_extent - (hi - lo))
            lo, hi = lo - deficit / 2, hi + deficit / 2
            shift = torch.relu(-lo) - torch.relu(hi - 1.0)
            return lo + shift, hi + shift

        x0, x1 = corners(cx, half_w)
        y0, y1 = corners(cy, half_h)
        return torch.stack([x0, y0, x1, y1], dim=1)


def graph_tensors(g: SceneGraph, device=None):
    """Index tensors for a single graph: (category ids [n], predicate ids
    [|E|], edges [|E|, 2])."""
    cats = torch.tensor(g.objects, dtype=torch.long, device=device)
    preds = torch.tensor([p for _, p, _ in g.edges], dtype=torch.long, device=device)
    edges = torch.tensor([(s, o) for s, _, o in g.edges], dtype=torch.long, device=device)
    if edges.numel() == 0:
        edges = edges.reshape(0, 2)
    return cats, preds, edges


def run_vector_gcn(g: SceneGraph, table: EmbeddingTable, net: VectorGCN):
    """Run the vector GCN on one augmented graph.

    Returns (object_vectors [n, D], predicate_vectors [|E|, D]) in graph
    order. The image node participates as a regular node.
    """
    if not g.augmented:
        raise StateError("vector GCN expects an augmented graph")
    cats, preds, edges = graph_tensors(g, device=table.object_embeddings.weight.device)
    obj_vecs = table.object_embeddings(cats)
    pred_vecs = table.predicate_embeddings(preds)
    return net(obj_vecs, pred_vecs, edges)


def run_feature_gcn_2d(g: SceneGraph, crop_features, predicate_maps, net: FeatureGCN2D,
                       image_node_map=None):
    """Run the 2-D GCN on one augmented graph.

    ``crop_features`` holds one [D, h, w] map per non-image object;
    ``predicate_maps`` one per edge. The image node gets ``image_node_map``
    (zeros by default). Returns (object maps [n-1, D', h, w] excluding the
    image node, predicate maps [|E|, D', h, w]).
    """
    if not g.augmented:
        raise StateError("feature GCN expects an augmented graph")
    if len(crop_features) != g.num_objects - 1:
        raise ValueError(f"expected {g.num_objects - 1} crop maps, got {len(crop_features)}")
    node_maps = torch.stack(list(crop_features), dim=0) if not torch.is_tensor(crop_features) \
        else crop_features
    pred_maps = torch.stack(list(predicate_maps), dim=0) if not torch.is_tensor(predicate_maps) \
        else predicate_maps
    if image_node_map is None:
        image_node_map = node_maps.new_zeros(node_maps.shape[1:])
    node_maps = torch.cat([node_maps, image_node_map.unsqueeze(0)], dim=0)
    _, _, edges = graph_tensors(g, device=node_maps.device)
    out_nodes, out_preds = net(node_maps, pred_maps, edges)
    return out_nodes[:-1], out_preds


def predict_boxes(object_vectors, reg: BoxRegressor):
    """Regress layout boxes for every non-image object (the image node is
    the last row of ``object_vectors`` and is excluded)."""
    from .scenegraph import LayoutBox

    boxes = reg(object_vectors[:-1]).detach()
    return [LayoutBox(*[float(v) for v in row]) for row in boxes]
