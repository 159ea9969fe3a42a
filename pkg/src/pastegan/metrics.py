"""Generative-image metrics computed with a small proxy feature network.

The proxy is a 4-block convolutional classifier trained on the synthetic
dataset's category task; its penultimate activations stand in for the
Inception/AlexNet features used at paper scale. Every report carries a
hash of the proxy weights so numbers are only compared like-for-like.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


class ProxyFeatureNet(nn.Module):
    """Conv classifier exposing (class probabilities, penultimate features)."""

    def __init__(self, num_classes: int, width: int = 32, feature_dim: int = 64):
        super().__init__()
        w = width
        self.blocks = nn.Sequential(
            nn.Conv2d(3, w, 3, stride=2, padding=1), nn.BatchNorm2d(w), nn.ReLU(),
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1), nn.BatchNorm2d(2 * w), nn.ReLU(),
            nn.Conv2d(2 * w, 2 * w, 3, stride=1, padding=1), nn.BatchNorm2d(2 * w), nn.ReLU(),
            nn.Conv2d(2 * w, feature_dim, 3, stride=1, padding=1), nn.BatchNorm2d(feature_dim),
            nn.ReLU(),
        )
        self.classifier = nn.Linear(feature_dim, num_classes)
        self.feature_dim = feature_dim
        self.num_classes = num_classes

    def features(self, images):
        """Penultimate features [B, feature_dim]; input any spatial size."""
        return self.blocks(images).mean(dim=(2, 3))

    def forward(self, images):
        return self.classifier(self.features(images))

    def probabilities(self, images):
        return torch.softmax(self.forward(images), dim=1)

    def weight_hash(self) -> str:
        h = hashlib.sha256()
        for name, t in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(t.detach().cpu().numpy().astype("<f8").tobytes())
        return h.hexdigest()[:16]


def train_proxy(crops, labels, num_classes: int, epochs: int = 20, batch_size: int = 64,
                lr: float = 1e-3, seed: int = 0, target_accuracy: float = 0.95,
                width: int = 32) -> tuple[ProxyFeatureNet, float]:
    """Fit the proxy on (crops [N,3,h,w], labels [N]); returns (net, train
    accuracy). Stops early once the target accuracy is reached."""
    torch.manual_seed(seed)
    net = ProxyFeatureNet(num_classes, width=width)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    labels = torch.as_tensor(labels, dtype=torch.long)
    n = crops.shape[0]
    rng = np.random.default_rng(seed)
    accuracy = 0.0
    for _ in range(epochs):
        order = rng.permutation(n)
        net.train()
        for start in range(0, n, batch_size):
            idx = torch.from_numpy(order[start:start + batch_size].copy())
            opt.zero_grad()
            loss = F.cross_entropy(net(crops[idx]), labels[idx])
            loss.backward()
            opt.step()
        net.eval()
        with torch.no_grad():
            preds = torch.cat([net(crops[i:i + 256]).argmax(dim=1) for i in range(0, n, 256)])
        accuracy = float((preds == labels).float().mean())
        if accuracy >= target_accuracy:
            break
    if accuracy < target_accuracy:
        warnings.warn(f"proxy accuracy {accuracy:.3f} below target {target_accuracy}")
    net.eval()
    for p in net.parameters():
        p.requires_grad_(False)
    return net, accuracy


@dataclass(frozen=True)
class MetricReport:
    inception_score: float
    inception_score_std: float
    fid: float
    diversity: float
    diversity_std: float
    n_images: int
    feature_net_hash: str

    def __post_init__(self):
        if self.fid < 0:
            raise ValueError(f"fid must be >= 0, got {self.fid}")
        if self.inception_score < 1.0 - 1e-9:
            raise ValueError(f"inception score must be >= 1, got {self.inception_score}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(**d)


def inception_score_from_probs(probs: np.ndarray, splits: int = 10) -> tuple[float, float]:
    """IS from a class-probability table [n, K]: per split,
    exp(E_x KL(p(y|x) || p(y)))."""
    if splits < 1:
        raise ValueError(f"splits must be >= 1, got {splits}")
    probs = np.asarray(probs, dtype=np.float64)
    n = probs.shape[0]
    if n < splits:
        raise ValueError(f"need at least {splits} samples, got {n}")
    scores = []
    for part in np.array_split(probs, splits, axis=0):
        marginal = part.mean(axis=0, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            logratio = np.where(part > 0, np.log(part) - np.log(marginal), 0.0)
        kl = (part * logratio).sum(axis=1)
        scores.append(np.exp(kl.mean()))
    return float(np.mean(scores)), float(np.std(scores))


def inception_score(images, net: ProxyFeatureNet, splits: int = 10,
                    batch_size: int = 64) -> tuple[float, float]:
    """Standard IS over images using the proxy's class probabilities."""
    net.eval()
    with torch.no_grad():
        probs = torch.cat([net.probabilities(images[i:i + batch_size])
                           for i in range(0, images.shape[0], batch_size)])
    return inception_score_from_probs(probs.cpu().numpy(), splits=splits)


def _sym_sqrtm(m: np.ndarray, neg_tol: float = -1e-6) -> np.ndarray:
    """Square root of a symmetric PSD matrix via eigen-decomposition.
    Eigenvalues within neg_tol of zero are clipped; worse is an error."""
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    if vals.min() < neg_tol:
        raise ValueError(f"matrix has eigenvalue {vals.min():.3e} below tolerance {neg_tol}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(real_features: np.ndarray, fake_features: np.ndarray) -> float:
    """Frechet distance between Gaussians fit to the two feature sets."""
    real = np.asarray(real_features, dtype=np.float64)
    fake = np.asarray(fake_features, dtype=np.float64)
    if not (np.isfinite(real).all() and np.isfinite(fake).all()):
        raise ValueError("features must be finite")
    d = real.shape[1]
    if real.shape[0] <= d or fake.shape[0] <= d:
        warnings.warn(f"fewer samples than feature dim {d}; covariance is rank-deficient")
    mu_r, mu_f = real.mean(axis=0), fake.mean(axis=0)
    sigma_r = np.cov(real, rowvar=False)
    sigma_f = np.cov(fake, rowvar=False)
    sigma_r = np.atleast_2d(sigma_r)
    sigma_f = np.atleast_2d(sigma_f)
    sqrt_r = _sym_sqrtm(sigma_r)
    inner = _sym_sqrtm(sqrt_r @ sigma_f @ sqrt_r)
    diff = mu_r - mu_f
    value = float(diff @ diff + np.trace(sigma_r) + np.trace(sigma_f) - 2.0 * np.trace(inner))
    if value < -1e-6:
        raise ValueError(f"fid computed as {value}, below numerical tolerance")
    return max(value, 0.0)


def diversity_score(image_pairs, net: ProxyFeatureNet) -> tuple[float, float]:
    """Mean/std over pairs of the L2 distance between unit-normalized
    penultimate activations."""
    pairs = list(image_pairs)
    if not pairs:
        raise ValueError("empty pair list")
    net.eval()
    dists = []
    with torch.no_grad():
        for a, b in pairs:
            fa = net.features(a.unsqueeze(0) if a.dim() == 3 else a)
            fb = net.features(b.unsqueeze(0) if b.dim() == 3 else b)
            fa = F.normalize(fa, dim=1)
            fb = F.normalize(fb, dim=1)
            dists.append(float((fa - fb).norm(dim=1).mean()))
    arr = np.asarray(dists, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


REPORT_SCHEMA_VERSION = 1


def emit_report(report: MetricReport, out_dir, history=None) -> tuple[Path, Path]:
    """Write report.json and metrics.png under out_dir; returns both paths.

    ``history`` is an optional list of (step, MetricReport) for trend plots;
    without it the plot shows the single report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    payload = {"schema_version": REPORT_SCHEMA_VERSION, "report": report.to_dict()}
    if history:
        payload["history"] = [{"step": s, "report": r.to_dict()} for s, r in history]
    json_path.write_text(json.dumps(payload, indent=1))

    png_path = out / "metrics.png"
    fig = metrics_figure(history if history else [(0, report)])
    fig.savefig(png_path, dpi=100)
    plt.close(fig)
    return json_path, png_path


def metrics_figure(series):
    """Three-panel metric trend figure; axes carry the metric names."""
    steps = [s for s, _ in series]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    for ax, name, values, err in (
        (axes[0], "inception_score", [r.inception_score for _, r in series],
         [r.inception_score_std for _, r in series]),
        (axes[1], "fid", [r.fid for _, r in series], None),
        (axes[2], "diversity", [r.diversity for _, r in series],
         [r.diversity_std for _, r in series]),
    ):
        if err is not None:
            ax.errorbar(steps, values, yerr=err, marker="o")
        else:
            ax.plot(steps, values, marker="o")
        ax.set_xlabel("step")
        ax.set_ylabel(name)
        ax.set_title(name)
    fig.tight_layout()
    return fig
