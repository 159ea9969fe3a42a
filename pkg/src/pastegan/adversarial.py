"""Discriminators and the eight-term generator objective.

The image discriminator is a patch classifier (70x70 receptive field); the
object discriminator scores 32x32 crops and carries an auxiliary category
head that excludes the reserved image class. Adversarial losses use the
clamped non-saturating form: the discriminator minimizes
-[E log D(real) + E log(1 - D(fake))] and the generator -E log D(fake).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import torch
import torch.nn as nn
import torch.nn.functional as F

from .fuser_decoder import extract_crops

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Balancing weights for the generator objective, in its fixed order."""

    lambda1: float = 1.0    # image reconstruction L1
    lambda2: float = 10.0   # crop matching
    lambda3: float = 1.0    # image adversarial
    lambda4: float = 1.0    # object adversarial
    lambda5: float = 1.0    # auxiliary classifier
    lambda6: float = 1.0    # image perceptual
    lambda7: float = 0.5    # object perceptual
    lambda8: float = 10.0   # box regression

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be nonnegative")

    def as_tuple(self):
        return tuple(getattr(self, f.name) for f in fields(self))


class ImageDiscriminator(nn.Module):
    """Patch-based real/fake classifier over full images.

    Depth scales down with image size so the tiny test geometries still
    leave a patch grid; at 64x64 the receptive field is the usual ~70px.
    """

    def __init__(self, width: int = 64, image_size: int = 64):
        super().__init__()
        w = width
        n_down = max(1, int(math.log2(image_size)) - 3)
        layers = [nn.Conv2d(3, w, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
        ch = w
        for _ in range(n_down - 1):
            nxt = min(2 * ch, 4 * w)
            layers += [nn.Conv2d(ch, nxt, 4, stride=2, padding=1),
                       nn.BatchNorm2d(nxt), nn.LeakyReLU(0.2)]
            ch = nxt
        layers += [nn.Conv2d(ch, ch, 4, stride=1, padding=1),
                   nn.BatchNorm2d(ch), nn.LeakyReLU(0.2),
                   nn.Conv2d(ch, 1, 4, stride=1, padding=1)]
        self.net = nn.Sequential(*layers)

    def forward(self, images):
        return self.net(images)

    def real_fake_logits(self, images):
        """Per-patch logits [B, 1, h', w']."""
        return self.forward(images)


class ObjectDiscriminator(nn.Module):
    """Crop real/fake classifier with an auxiliary category head."""

    def __init__(self, num_real_categories: int, width: int = 64, crop_size: int = 32):
        super().__init__()
        w = width
        n_down = max(1, int(math.log2(crop_size)) - 2)
        layers = [nn.Conv2d(3, w, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
        ch = w
        for _ in range(n_down - 1):
            layers += [nn.Conv2d(ch, 2 * ch, 4, stride=2, padding=1),
                       nn.BatchNorm2d(2 * ch), nn.LeakyReLU(0.2)]
            ch *= 2
        self.features = nn.Sequential(*layers)
        self.head_rf = nn.Linear(ch, 1)
        self.head_ac = nn.Linear(ch, num_real_categories)
        self.num_real_categories = num_real_categories

    def forward(self, crops):
        feats = self.features(crops).mean(dim=(2, 3))
        return self.head_rf(feats).squeeze(1), self.head_ac(feats)

    def real_fake_logits(self, crops):
        return self.forward(crops)[0]

    def category_logits(self, crops):
        return self.forward(crops)[1]


def _clamped_probs(discriminator, batch):
    return torch.sigmoid(discriminator.real_fake_logits(batch)).clamp(PROB_EPS, 1.0 - PROB_EPS)


def gan_loss_discriminator(discriminator, real_batch, fake_batch):
    """-[E log D(real) + E log(1 - D(fake))], patch logits averaged. The
    caller detaches fake_batch."""
    p_real = _clamped_probs(discriminator, real_batch)
    p_fake = _clamped_probs(discriminator, fake_batch)
    return -(torch.log(p_real).mean() + torch.log(1.0 - p_fake).mean())


def gan_loss_generator(discriminator, fake_batch):
    """Non-saturating generator loss -E log D(fake)."""
    return -torch.log(_clamped_probs(discriminator, fake_batch)).mean()


def image_reconstruction_loss(image, reconstruction):
    """Mean absolute difference between ground truth and reconstruction."""
    if image.shape != reconstruction.shape:
        raise ValueError(f"shape mismatch: {tuple(image.shape)} vs {tuple(reconstruction.shape)}")
    return (image - reconstruction).abs().mean()


def crop_matching_loss(crops_original, generated_image, boxes, encoder,
                       stop_encoder_gradient: bool = False):
    """Sum over objects of the mean-L1 gap between the input crop's feature
    map and the feature map of the object re-extracted from the generated
    image at its box.

    With ``stop_encoder_gradient`` the encoder's own parameters receive no
    gradient from this loss (the generated image still does).
    """
    if len(crops_original) == 0:
        return generated_image.sum() * 0.0
    crops_in = torch.stack(list(crops_original), dim=0)
    size = crops_in.shape[-1]
    reextracted = extract_crops(generated_image, boxes, size)
    if stop_encoder_gradient:
        feats_in = encoder(crops_in).detach()
        frozen = [p.requires_grad for p in encoder.parameters()]
        for p in encoder.parameters():
            p.requires_grad_(False)
        try:
            feats_out = encoder(reextracted)
        finally:
            for p, flag in zip(encoder.parameters(), frozen):
                p.requires_grad_(flag)
    else:
        feats_in = encoder(crops_in)
        feats_out = encoder(reextracted)
    per_object = (feats_in - feats_out).abs().mean(dim=(1, 2, 3))
    return per_object.sum()


def perceptual_loss(a_image, b_image, feature_net):
    """Mean-L1 distance in the feature net's penultimate feature space."""
    fa = feature_net.features(a_image if a_image.dim() == 4 else a_image.unsqueeze(0))
    fb = feature_net.features(b_image if b_image.dim() == 4 else b_image.unsqueeze(0))
    return (fa - fb).abs().mean()


def auxiliary_classifier_loss(d_obj: ObjectDiscriminator, crops, labels):
    """Cross-entropy of the category head; labels exclude the image class."""
    labels = torch.as_tensor(labels, dtype=torch.long, device=crops.device)
    if labels.numel() and (labels.min() < 0 or labels.max() >= d_obj.num_real_categories):
        raise ValueError(f"label out of range [0, {d_obj.num_real_categories})")
    return F.cross_entropy(d_obj.category_logits(crops), labels)


def box_regression_loss(boxes_gt, boxes_pred):
    """Mean-L1 over the four coordinates and all objects."""
    if boxes_gt.shape != boxes_pred.shape:
        raise ValueError(f"box count mismatch: {tuple(boxes_gt.shape)} vs {tuple(boxes_pred.shape)}")
    return (boxes_gt - boxes_pred).abs().mean()


@dataclass
class GeneratorLossParts:
    """The eight scalar loss terms, in the objective's fixed order."""

    l1_img: torch.Tensor
    l1_latent: torch.Tensor
    gan_img: torch.Tensor
    gan_obj: torch.Tensor
    ac_obj: torch.Tensor
    p_img: torch.Tensor
    p_obj: torch.Tensor
    box: torch.Tensor

    def as_tuple(self):
        return (self.l1_img, self.l1_latent, self.gan_img, self.gan_obj,
                self.ac_obj, self.p_img, self.p_obj, self.box)


def total_generator_loss(parts: GeneratorLossParts, weights: LossWeights):
    """Weighted sum of the eight parts; nonzero weights only, so an
    all-zero weighting contributes no gradient at all."""
    total = None
    for lam, term in zip(weights.as_tuple(), parts.as_tuple()):
        if lam == 0.0:
            continue
        piece = lam * term
        total = piece if total is None else total + piece
    if total is None:
        total = torch.zeros(())
    return total
