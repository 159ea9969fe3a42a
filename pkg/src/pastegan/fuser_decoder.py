"""Object-image fusion into a latent canvas, and the cascaded-refinement
image decoder.

Placement rasterizes a normalized box onto the working canvas, broadcasts
the object's latent vector over the region and bilinearly resizes its crop
feature map into it; everything outside the box is zero. The fuser scores
each placed object against its in_image predicate map with a channel dot
product per pixel, softmax-normalizes across objects, and sums the
projected object maps. The canvas is a weighted sum of the attention
output and the image-node map, upsampled to the output resolution.
"""

from __future__ import annotations

import logging
import math

import torch
import torch.nn as nn
import torch.nn.functional as F

logger = logging.getLogger(__name__)


def rasterize_box(box, hw: tuple[int, int]) -> tuple[int, int, int, int]:
    """Normalized (x0, y0, x1, y1) -> integer (r0, c0, r1, c1) pixel bounds
    on an (h, w) grid. Degenerate boxes are expanded to at least 1x1 with a
    warning rather than failing."""
    if hasattr(box, "as_tuple"):
        box = box.as_tuple()
    if torch.is_tensor(box):
        box = box.detach()
    x0, y0, x1, y1 = (float(v) for v in box)
    h, w = hw
    c0 = min(max(int(math.floor(x0 * w)), 0), w)
    c1 = min(max(int(math.ceil(x1 * w)), 0), w)
    r0 = min(max(int(math.floor(y0 * h)), 0), h)
    r1 = min(max(int(math.ceil(y1 * h)), 0), h)
    if r1 <= r0 or c1 <= c0:
        logger.warning("box %s rasterizes to zero pixels on %s; expanding to 1x1", box, hw)
        if c1 <= c0:
            c0 = min(c0, w - 1)
            c1 = c0 + 1
        if r1 <= r0:
            r0 = min(r0, h - 1)
            r1 = r0 + 1
    return r0, c0, r1, c1


def place_in_box(z_i, v_i, box, canvas_hw: tuple[int, int]):
    """Fill the box region with [z_i broadcast ; v_i resized]; zeros outside.

    z_i [D_z], v_i [D, h, w] -> u_i [D_z + D, h_c, w_c].
    """
    h_c, w_c = canvas_hw
    r0, c0, r1, c1 = rasterize_box(box, canvas_hw)
    bh, bw = r1 - r0, c1 - c0
    u = z_i.new_zeros(z_i.shape[0] + v_i.shape[0], h_c, w_c)
    region_z = z_i[:, None, None].expand(-1, bh, bw)
    region_v = F.interpolate(v_i.unsqueeze(0), size=(bh, bw), mode="bilinear",
                             align_corners=False).squeeze(0)
    u[:, r0:r1, c0:c1] = torch.cat([region_z, region_v], dim=0)
    return u


def extract_crops(image, boxes, out_size: int):
    """Re-extract object crops from an image at the given boxes.

    image [3, H, W]; boxes: iterable of normalized boxes. Returns
    [n, 3, out_size, out_size]; differentiable w.r.t. the image. Uses the
    same rasterization as placement.
    """
    h, w = image.shape[-2:]
    crops = []
    for box in boxes:
        r0, c0, r1, c1 = rasterize_box(box, (h, w))
        region = image[:, r0:r1, c0:c1]
        crops.append(F.interpolate(region.unsqueeze(0), size=(out_size, out_size),
                                   mode="bilinear", align_corners=False).squeeze(0))
    return torch.stack(crops, dim=0) if crops else image.new_zeros(0, 3, out_size, out_size)


class ObjectImageFuser(nn.Module):
    """Attention weights (W_f, W_q, W_l) and the canvas balance scalar."""

    def __init__(self, in_channels: int, attn_dim: int, lambda_attn: float = 1.0,
                 learnable_lambda: bool = True, masked_attention: bool = False):
        super().__init__()
        self.f_proj = nn.Conv2d(in_channels, attn_dim, 1, bias=False)
        self.q_proj = nn.Conv2d(in_channels, attn_dim, 1, bias=False)
        self.l_proj = nn.Conv2d(in_channels, in_channels, 1, bias=False)
        lam = torch.tensor(float(lambda_attn))
        if learnable_lambda:
            self.lambda_attn = nn.Parameter(lam)
        else:
            self.register_buffer("lambda_attn", lam)
        self.masked_attention = masked_attention
        self.in_channels = in_channels


def attention_fuse(u, u_p_in_image, weights: ObjectImageFuser, support_masks=None):
    """Attend over placed objects at every pixel and sum their projections.

    u, u_p_in_image: [n, C, h, w] tensors (or lists of [C, h, w]) aligned by
    object. Returns u_attn [C, h, w]. With ``masked_attention`` enabled, the
    softmax support at a pixel is limited to objects whose mask covers it
    (pixels covered by no object come out zero).
    """
    if not torch.is_tensor(u):
        u = torch.stack(list(u), dim=0)
    if not torch.is_tensor(u_p_in_image):
        u_p_in_image = torch.stack(list(u_p_in_image), dim=0)
    if u.shape != u_p_in_image.shape:
        raise ValueError(f"shape mismatch: {tuple(u.shape)} vs {tuple(u_p_in_image.shape)}")
    logits = (weights.f_proj(u) * weights.q_proj(u_p_in_image)).sum(dim=1)  # [n, h, w]
    if weights.masked_attention and support_masks is not None:
        neg = torch.finfo(logits.dtype).min
        logits = torch.where(support_masks, logits, logits.new_full((), neg))
        beta = torch.softmax(logits, dim=0)
        covered = support_masks.any(dim=0, keepdim=True)
        beta = torch.where(covered, beta, beta.new_zeros(()))
    else:
        beta = torch.softmax(logits, dim=0)
    return (beta.unsqueeze(1) * weights.l_proj(u)).sum(dim=0)


def attention_weights(u, u_p_in_image, weights: ObjectImageFuser):
    """The per-pixel object attention map beta [n, h, w] (diagnostic)."""
    if not torch.is_tensor(u):
        u = torch.stack(list(u), dim=0)
    if not torch.is_tensor(u_p_in_image):
        u_p_in_image = torch.stack(list(u_p_in_image), dim=0)
    logits = (weights.f_proj(u) * weights.q_proj(u_p_in_image)).sum(dim=1)
    return torch.softmax(logits, dim=0)


def compose_canvas(u_attn, u_img, weights: ObjectImageFuser, target_hw: tuple[int, int]):
    """y = lambda_attn * u_attn + u_img, nearest-upsampled to target_hw."""
    if u_attn.shape != u_img.shape:
        raise ValueError(f"shape mismatch: {tuple(u_attn.shape)} vs {tuple(u_img.shape)}")
    y = weights.lambda_attn * u_attn + u_img
    return F.interpolate(y.unsqueeze(0), size=target_hw, mode="nearest").squeeze(0)


class CRNDecoder(nn.Module):
    """Cascaded refinement modules from noise + canvas to an RGB image.

    Module i runs at resolution initial_res * 2**i; each one consumes the
    canvas downsampled to its resolution concatenated with the previous
    feature map, applies two 3x3 conv + BN + ReLU blocks, and upsamples by
    2. Two final convolutions and a tanh produce the [-1, 1] image.
    """

    def __init__(self, canvas_dim: int, image_size: int = 64, initial_res: int = 4,
                 noise_dim: int = 32, channels=(128, 64, 32, 16)):
        super().__init__()
        n_modules = int(math.log2(image_size // initial_res))
        if initial_res * 2 ** n_modules != image_size:
            raise ValueError("image_size must be initial_res * power of 2")
        if len(channels) != n_modules:
            raise ValueError(f"need {n_modules} channel widths, got {len(channels)}")
        self.modules_list = nn.ModuleList()
        prev = noise_dim
        for ch in channels:
            block = nn.Sequential(
                nn.Conv2d(canvas_dim + prev, ch, 3, padding=1),
                nn.BatchNorm2d(ch), nn.ReLU(),
                nn.Conv2d(ch, ch, 3, padding=1),
                nn.BatchNorm2d(ch), nn.ReLU(),
            )
            self.modules_list.append(block)
            prev = ch
        self.final = nn.Sequential(
            nn.Conv2d(prev, prev, 3, padding=1), nn.ReLU(),
            nn.Conv2d(prev, 3, 1),
        )
        self.image_size = image_size
        self.initial_res = initial_res
        self.noise_dim = noise_dim
        self.canvas_dim = canvas_dim

    def forward(self, canvas, noise):
        """canvas [B, D_c, H, W], noise [B, D_n] -> images [B, 3, H, W] in
        [-1, 1]."""
        res = self.initial_res
        feats = noise[:, :, None, None].expand(-1, -1, res, res)
        for block in self.modules_list:
            canvas_ds = F.interpolate(canvas, size=(res, res), mode="area") \
                if res != canvas.shape[-1] else canvas
            feats = block(torch.cat([canvas_ds, feats], dim=1))
            res *= 2
            feats = F.interpolate(feats, size=(res, res), mode="nearest")
        return torch.tanh(self.final(feats))


def decode(latent_canvas, noise, decoder: CRNDecoder):
    """Decode one canvas [D_c, H, W] with one noise vector [D_n]."""
    return decoder(latent_canvas.unsqueeze(0), noise.unsqueeze(0)).squeeze(0)
