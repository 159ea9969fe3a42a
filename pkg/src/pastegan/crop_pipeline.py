"""Crop encoding and relationship-aware refinement of crop feature maps.

The encoder turns [3, crop, crop] images in [0, 1] into [D, h, w] feature
maps via strided 3x3 conv blocks (conv + batch-norm + ReLU), with a plain
convolution as the last layer. The refiner is a two-layer 2-D graph
convolution that propagates appearance between crops connected by an edge;
predicate vectors enter as spatially-broadcast maps.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .graph_conv import FeatureGCN2D, run_feature_gcn_2d
from .scenegraph import SceneGraph


class CropEncoder(nn.Module):
    """[3, crop_size, crop_size] in [0,1] -> [out_dim, feat_hw, feat_hw]."""

    def __init__(self, crop_size: int = 32, feat_hw: int = 8, width: int = 32,
                 out_dim: int = 32):
        super().__init__()
        if crop_size % feat_hw != 0 or (crop_size // feat_hw) & (crop_size // feat_hw - 1):
            raise ValueError(f"crop_size {crop_size} must be feat_hw {feat_hw} * power of 2")
        n_down = int(math.log2(crop_size // feat_hw))
        layers: list[nn.Module] = [
            nn.Conv2d(3, width, 3, padding=1), nn.BatchNorm2d(width), nn.ReLU(),
        ]
        ch = width
        for _ in range(n_down):
            layers += [nn.Conv2d(ch, width, 3, stride=2, padding=1),
                       nn.BatchNorm2d(width), nn.ReLU()]
            ch = width
        layers.append(nn.Conv2d(ch, out_dim, 3, padding=1))  # final layer: no BN/ReLU
        self.net = nn.Sequential(*layers)
        self.crop_size = crop_size
        self.feat_hw = feat_hw
        self.out_dim = out_dim

    def forward(self, crops):
        """crops [B, 3, crop, crop] or a single [3, crop, crop]."""
        single = crops.dim() == 3
        if single:
            crops = crops.unsqueeze(0)
        if crops.shape[-2:] != (self.crop_size, self.crop_size):
            raise ValueError(f"expected {self.crop_size}x{self.crop_size} crops, "
                             f"got {tuple(crops.shape[-2:])}")
        out = self.net(crops)
        return out.squeeze(0) if single else out


def encode_crop(m, encoder: CropEncoder):
    """Encode one crop; deterministic when the encoder is in eval mode."""
    return encoder(m)


class PredicateExpander(nn.Module):
    """Project a predicate vector [D_z] to [D] and broadcast to [D, h, w]."""

    def __init__(self, in_dim: int, out_dim: int, feat_hw: int):
        super().__init__()
        self.proj = nn.Linear(in_dim, out_dim)
        self.feat_hw = feat_hw

    def forward(self, z_p):
        """z_p [E, D_z] or [D_z] -> [E, D, h, w] or [D, h, w]."""
        single = z_p.dim() == 1
        if single:
            z_p = z_p.unsqueeze(0)
        out = self.proj(z_p)[:, :, None, None].expand(-1, -1, self.feat_hw, self.feat_hw)
        out = out.contiguous()
        return out.squeeze(0) if single else out


def expand_predicate(z_p, expander: PredicateExpander):
    """All spatial positions of the result carry the same projected vector."""
    return expander(z_p)


class ObjectRefiner(nn.Module):
    """Two 2-D graph-conv layers fusing crop appearance along scene edges."""

    NUM_LAYERS = 2

    def __init__(self, dim: int, hidden: int, d_z: int, feat_hw: int, kernel_size: int = 3,
                 expander: PredicateExpander | None = None):
        super().__init__()
        self.gcn = FeatureGCN2D(dim, dim, hidden, num_layers=self.NUM_LAYERS,
                                kernel_size=kernel_size)
        self.expander = expander if expander is not None else \
            PredicateExpander(d_z, dim, feat_hw)


def refine(g: SceneGraph, crop_features, predicate_vectors, refiner: ObjectRefiner):
    """Run the refiner on one augmented graph.

    ``crop_features``: [n-1, D, h, w] (or list), from the crop encoder.
    ``predicate_vectors``: [|E|, D_z], from the vector GCN.
    Returns (refined object maps [n-1, D, h, w], refined predicate maps
    [|E|, D, h, w]). The image node enters the graph conv as a zero map.
    """
    pred_maps = refiner.expander(predicate_vectors)
    return run_feature_gcn_2d(g, crop_features, pred_maps, refiner.gcn)
