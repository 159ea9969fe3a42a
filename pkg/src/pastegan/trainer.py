"""Dual-branch adversarial training and run bookkeeping.

One training step runs the generator twice with the same scene graphs: a
reconstruction pass using each scene's ground-truth crops and a generation
pass using crops retrieved from the memory tank. Reconstruction-only terms
(pixel L1, image perceptual, object perceptual) are computed on the
reconstruction; adversarial, auxiliary-classifier and crop-matching terms
average over both passes. The discriminators then take one step each with
both outputs as fakes.

Run directory layout::

    runs/<name>/
      manifest.json      config + checkpoint hashes + proxy hash
      ckpt_<step>.bin    periodic checkpoints, ckpt_final.bin at the end
      losses.csv         fixed column set, one row per step
      losses.png         loss curves
      tank/              the memory tank the run trained against
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass
from itertools import chain
from pathlib import Path

import numpy as np
import torch

from .adversarial import (GeneratorLossParts, auxiliary_classifier_loss,
                          box_regression_loss, gan_loss_discriminator,
                          gan_loss_generator, image_reconstruction_loss,
                          perceptual_loss, total_generator_loss)
from .checkpoint import CheckpointError, sha256_file, verify_checkpoint
from .config import TrainingConfig
from .data import (PREDICATES, SyntheticSceneSpec, TrainingExample,
                   generate_synthetic_dataset, load_coco_style, own_crop_ids,
                   tank_sources)
from .fuser_decoder import extract_crops
from .graph_conv import BoxRegressor
from .memory_tank import MemoryTank, build_tank, random_crops, select_crops
from .metrics import (MetricReport, diversity_score, emit_report, fid,
                      inception_score, train_proxy)
from .pipeline import (GraphBatch, ModelBundle, RunArtifacts, generate_batch,
                       generate_image, load_bundle, save_bundle)
from .scenegraph import Vocab, augment_with_image_node

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("step", "l1_img", "l1_latent", "gan_img_g", "gan_obj_g",
               "ac_obj", "p_img", "p_obj", "box", "d_img", "d_obj")


class TrainingDivergedError(RuntimeError):
    """A loss term went non-finite; carries the per-term dump."""

    def __init__(self, terms: dict):
        super().__init__(f"non-finite loss: {terms}")
        self.terms = terms


@dataclass
class LossReport:
    step: int
    l1_img: float
    l1_latent: float
    gan_img_g: float
    gan_obj_g: float
    ac_obj: float
    p_img: float
    p_obj: float
    box: float
    d_img: float
    d_obj: float

    def row(self):
        return [getattr(self, c) for c in CSV_COLUMNS]


@dataclass
class TrainModels:
    """Everything a train step mutates or reads: nets, tank, RNG state."""

    bundle: ModelBundle
    tank: MemoryTank
    noise_rng: torch.Generator
    step_count: int = 0


@dataclass
class Optimizers:
    generator: torch.optim.Optimizer
    d_img: torch.optim.Optimizer
    d_obj: torch.optim.Optimizer


def build_optimizers(bundle: ModelBundle, config: TrainingConfig) -> Optimizers:
    betas = (config.beta1, config.beta2)
    d_lr = config.learning_rate * config.d_lr_scale
    return Optimizers(
        generator=torch.optim.Adam(list(bundle.generator_parameters()),
                                   lr=config.learning_rate, betas=betas),
        d_img=torch.optim.Adam(bundle.d_img.parameters(), lr=d_lr, betas=betas),
        d_obj=torch.optim.Adam(bundle.d_obj.parameters(), lr=d_lr, betas=betas),
    )


@dataclass
class BatchData:
    """A collated batch: packed graphs plus aligned image/box/crop tensors."""

    examples: list[TrainingExample]
    gb: GraphBatch
    images: torch.Tensor       # [B, 3, H, W]
    gt_boxes: torch.Tensor     # [N_obj, 4]
    crops_ori: torch.Tensor    # [N_obj, 3, crop, crop]
    labels: torch.Tensor       # [N_obj] category ids
    exclude: list[set[str]]


def collate_batch(examples: list[TrainingExample], vocab: Vocab) -> BatchData:
    graphs = [augment_with_image_node(ex.graph, vocab) for ex in examples]
    gb = GraphBatch.from_graphs(graphs, vocab)
    return BatchData(
        examples=list(examples),
        gb=gb,
        images=torch.stack([ex.image for ex in examples]),
        gt_boxes=torch.cat([ex.boxes for ex in examples], dim=0),
        crops_ori=torch.cat([ex.crops for ex in examples], dim=0),
        labels=torch.tensor([c for ex in examples for c in ex.graph.objects],
                            dtype=torch.long),
        exclude=[own_crop_ids(ex) for ex in examples],
    )


def _select_branch_crops(batch: BatchData, models: TrainModels, config: TrainingConfig,
                         base_seed: int) -> torch.Tensor:
    selector = models.bundle.selector()
    crops = []
    for s, g in enumerate(batch.gb.graphs):
        seed = (base_seed * 8191 + s) & (2**63 - 1)
        if config.no_crop_selection:
            recs = random_crops(g, models.tank, seed, exclude=batch.exclude[s])
        else:
            recs = select_crops(g, models.tank, selector, config.k_retrieval, seed,
                                exclude=batch.exclude[s], metric=config.similarity)
        crops.extend(r.image for r in recs)
    return torch.stack(crops, dim=0)


def _crop_matching_batched(crops_in, images, boxes, slices, encoder, stop_grad):
    """Per-scene summed mean-L1 feature gaps; returns ([n_scenes] tensor,
    re-extracted crops)."""
    size = crops_in.shape[-1]
    reextracted = torch.cat(
        [extract_crops(images[s], boxes[a:b], size) for s, (a, b) in enumerate(slices)], dim=0)
    if stop_grad:
        feats_in = encoder(crops_in).detach()
        flags = [p.requires_grad for p in encoder.parameters()]
        for p in encoder.parameters():
            p.requires_grad_(False)
        try:
            feats_out = encoder(reextracted)
        finally:
            for p, f in zip(encoder.parameters(), flags):
                p.requires_grad_(f)
    else:
        feats_in = encoder(crops_in)
        feats_out = encoder(reextracted)
    per_object = (feats_in - feats_out).abs().mean(dim=(1, 2, 3))
    per_scene = [per_object[a:b].sum() for a, b in slices]
    return torch.stack(per_scene), reextracted


def generator_objective(bundle: ModelBundle, batch: BatchData, m_sel: torch.Tensor,
                        noise: torch.Tensor, config: TrainingConfig):
    """All eight generator loss terms from one joint dual-branch pass.

    Scenes are duplicated: rows [:B] reconstruct from original crops, rows
    [B:] generate from the retrieved ones. noise is [2B, noise_dim].
    Placement is teacher-forced to ground-truth boxes (a scene graph does
    not determine exact geometry, so reconstructing the ground-truth image
    at predicted boxes is ill-posed); the box head still trains via its
    regression term and drives placement at inference time.
    Returns (parts, fwd, re_all) where re_all are the re-extracted object
    crops of both branches.
    """
    b = batch.gb.num_scenes
    n_obj = batch.gb.num_objects
    gb2 = GraphBatch.from_graphs(batch.gb.graphs + batch.gb.graphs, bundle.vocab)
    crops2 = torch.cat([batch.crops_ori, m_sel], dim=0)
    gt_boxes2 = torch.cat([batch.gt_boxes, batch.gt_boxes])
    labels2 = torch.cat([batch.labels, batch.labels])

    fwd = generate_batch(bundle, gb2, crops2, noise, gt_boxes=gt_boxes2)
    recon = fwd.images[:b]

    cm_scene, re_all = _crop_matching_batched(crops2, fwd.images, fwd.boxes_used,
                                              gb2.obj_slices, bundle.crop_encoder,
                                              config.stop_encoder_gradient)
    re_rec = re_all[:n_obj]

    parts = GeneratorLossParts(
        l1_img=image_reconstruction_loss(batch.images, recon),
        l1_latent=cm_scene.mean(),
        gan_img=gan_loss_generator(bundle.d_img, fwd.images),
        gan_obj=gan_loss_generator(bundle.d_obj, re_all),
        ac_obj=auxiliary_classifier_loss(bundle.d_obj, re_all, labels2),
        p_img=perceptual_loss(batch.images, recon, bundle.proxy),
        p_obj=perceptual_loss(batch.crops_ori, re_rec, bundle.proxy),
        box=box_regression_loss(batch.gt_boxes, fwd.boxes_pred[:n_obj]),
    )
    return parts, fwd, re_all


def train_step(batch: BatchData, models: TrainModels, optimizers: Optimizers,
               config: TrainingConfig) -> LossReport:
    """One alternating generator/discriminator update on one batch."""
    bundle = models.bundle
    bundle.train()
    weights = config.loss_weights()

    base_seed = int(torch.randint(2**31 - 1, (1,), generator=models.noise_rng))
    m_sel = _select_branch_crops(batch, models, config, base_seed)
    noise = torch.randn(2 * batch.gb.num_scenes, config.noise_dim,
                        generator=models.noise_rng)

    # ---- generator update (discriminator weights read-only here)
    optimizers.generator.zero_grad(set_to_none=True)
    parts, fwd, re_all = generator_objective(bundle, batch, m_sel, noise, config)
    term_values = {name: float(t.detach()) for name, t in zip(
        ("l1_img", "l1_latent", "gan_img", "gan_obj", "ac_obj", "p_img", "p_obj", "box"),
        parts.as_tuple())}
    if not all(math.isfinite(v) for v in term_values.values()):
        raise TrainingDivergedError(term_values)

    total = total_generator_loss(parts, weights)
    if total.requires_grad:
        total.backward()
        optimizers.generator.step()
        bundle.embeddings.clamp_norms()

    # ---- discriminator updates (generator outputs detached)
    optimizers.d_img.zero_grad(set_to_none=True)
    d_img_loss = gan_loss_discriminator(bundle.d_img, batch.images, fwd.images.detach())
    d_img_loss.backward()
    optimizers.d_img.step()

    optimizers.d_obj.zero_grad(set_to_none=True)
    d_obj_loss = gan_loss_discriminator(bundle.d_obj, batch.crops_ori, re_all.detach()) \
        + auxiliary_classifier_loss(bundle.d_obj, batch.crops_ori, batch.labels)
    d_obj_loss.backward()
    optimizers.d_obj.step()

    d_img_val, d_obj_val = float(d_img_loss.detach()), float(d_obj_loss.detach())
    if not (math.isfinite(d_img_val) and math.isfinite(d_obj_val)):
        raise TrainingDivergedError({"d_img": d_img_val, "d_obj": d_obj_val})

    models.step_count += 1
    return LossReport(
        step=models.step_count,
        l1_img=term_values["l1_img"],
        l1_latent=term_values["l1_latent"],
        gan_img_g=term_values["gan_img"],
        gan_obj_g=term_values["gan_obj"],
        ac_obj=term_values["ac_obj"],
        p_img=term_values["p_img"],
        p_obj=term_values["p_obj"],
        box=term_values["box"],
        d_img=d_img_val,
        d_obj=d_obj_val,
    )


def pretrain_selector(bundle: ModelBundle, dataset: list[TrainingExample],
                      vocab: Vocab, config: TrainingConfig) -> None:
    """Train the selector GCN on the layout-prediction task, then freeze it."""
    table, net = bundle.selector_table, bundle.selector_vgcn
    box_head = BoxRegressor(config.d_z, config.box_hidden)
    opt = torch.optim.Adam(chain(table.parameters(), net.parameters(),
                                 box_head.parameters()), lr=config.selector_lr)
    rng = np.random.default_rng(config.seed + 17)
    graphs = [augment_with_image_node(ex.graph, vocab) for ex in dataset]
    for _ in range(config.selector_steps):
        idx = rng.choice(len(dataset), size=min(config.batch_size, len(dataset)),
                         replace=False)
        gb = GraphBatch.from_graphs([graphs[i] for i in idx], vocab)
        z_obj = table.object_embeddings(gb.cats)
        z_pred = table.predicate_embeddings(gb.preds)
        z_obj, _ = net(z_obj, z_pred, gb.edges)
        pred = box_head(z_obj[gb.non_image_idx])
        gt = torch.cat([dataset[i].boxes for i in idx], dim=0)
        loss = (gt - pred).abs().mean()
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        table.clamp_norms()
    for p in chain(table.parameters(), net.parameters()):
        p.requires_grad_(False)
    logger.info("selector pretraining done, final box L1 %.4f", float(loss.detach()))


def load_dataset(config: TrainingConfig) -> tuple[Vocab, list[TrainingExample]]:
    if config.dataset == "synthetic":
        spec = SyntheticSceneSpec(image_size=config.image_size, crop_size=config.crop_size,
                                  seed=config.seed)
        return spec.vocab(), generate_synthetic_dataset(spec, config.synthetic_n)
    if config.dataset == "coco":
        ann = json.loads(Path(config.coco_annotations).read_text())
        names = sorted({c["name"] for c in ann.get("categories", [])})
        vocab = Vocab.create(names, PREDICATES)
        examples = list(load_coco_style(config.coco_annotations, config.coco_image_dir,
                                        vocab, image_size=config.image_size,
                                        crop_size=config.crop_size, seed=config.seed))
        return vocab, examples
    raise ValueError(f"unknown dataset {config.dataset!r}")


def _write_manifest(run_dir: Path, config: TrainingConfig, checkpoints: list[dict],
                    proxy_hash: str) -> None:
    (run_dir / "manifest.json").write_text(json.dumps({
        "name": config.name,
        "config": config.to_dict(),
        "proxy_hash": proxy_hash,
        "checkpoints": checkpoints,
    }, indent=1))


def _plot_losses(run_dir: Path) -> None:
    import matplotlib.pyplot as plt
    rows = list(csv.DictReader(open(run_dir / "losses.csv")))
    if not rows:
        return
    steps = [int(r["step"]) for r in rows]
    fig, axes = plt.subplots(2, 5, figsize=(18, 6))
    for ax, col in zip(axes.flat, CSV_COLUMNS[1:]):
        ax.plot(steps, [float(r[col]) for r in rows])
        ax.set_title(col)
        ax.set_xlabel("step")
    fig.tight_layout()
    fig.savefig(run_dir / "losses.png", dpi=90)
    plt.close(fig)


def fit(config: TrainingConfig, out_root=None, resume=None) -> Path:
    """Full training pipeline; returns the final checkpoint path.

    Stages: dataset -> selector pretraining -> tank build -> proxy
    training -> adversarial loop with periodic checkpoints.
    """
    root = Path(out_root) if out_root is not None else \
        Path(os.environ.get("PASTEGAN_HOME", "."))
    run_dir = root / "runs" / config.name
    run_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(config.seed)

    vocab, dataset = load_dataset(config)
    logger.info("dataset ready: %d examples", len(dataset))
    bundle = ModelBundle(config, vocab)

    start_step = 0
    if resume is not None:
        # the frozen selector and proxy live in the checkpoint and the tank
        # on disk; rebuilding them here would silently change retrieval
        resume = Path(resume)
        manifest = json.loads((run_dir / "manifest.json").read_text())
        entry = next((c for c in manifest["checkpoints"] if c["file"] == resume.name), None)
        if entry is None:
            raise CheckpointError(f"{resume.name} not listed in the run manifest")
        verify_checkpoint(resume, entry["sha256"])
        bundle, start_step = load_bundle(resume)
        bundle.train()
        for p in bundle.proxy.parameters():
            p.requires_grad_(False)
        for p in chain(bundle.selector_table.parameters(), bundle.selector_vgcn.parameters()):
            p.requires_grad_(False)
        tank = MemoryTank.load(run_dir / "tank")
    else:
        pretrain_selector(bundle, dataset, vocab, config)
        tank = build_tank(tank_sources(dataset), bundle.selector(), vocab, config.crop_size)
        logger.info("tank built: %d crops in %d categories", len(tank), len(tank.by_category))
        tank.save(run_dir / "tank")

        all_crops = torch.cat([ex.crops for ex in dataset], dim=0)
        all_labels = [c for ex in dataset for c in ex.graph.objects]
        proxy, acc = train_proxy(all_crops, all_labels, vocab.num_objects - 1,
                                 epochs=config.proxy_epochs, seed=config.seed,
                                 width=config.proxy_width)
        bundle.proxy.load_state_dict(proxy.state_dict())
        bundle.proxy.eval()
        for p in bundle.proxy.parameters():
            p.requires_grad_(False)
        logger.info("proxy classifier accuracy %.3f (hash %s)",
                    acc, bundle.proxy.weight_hash())

    models = TrainModels(bundle=bundle, tank=tank,
                         noise_rng=torch.Generator().manual_seed(config.seed + 29),
                         step_count=start_step)
    opts = build_optimizers(bundle, config)
    sample_rng = np.random.default_rng(config.seed + 1)

    csv_path = run_dir / "losses.csv"
    new_csv = not (resume and csv_path.exists())
    csv_file = open(csv_path, "w" if new_csv else "a", newline="")
    writer = csv.writer(csv_file)
    if new_csv:
        writer.writerow(CSV_COLUMNS)

    checkpoints: list[dict] = []
    if resume is not None:
        checkpoints = json.loads((run_dir / "manifest.json").read_text())["checkpoints"]

    def save_ckpt(tag: str, step: int):
        path = run_dir / f"ckpt_{tag}.bin"
        save_bundle(path, bundle, step)
        checkpoints[:] = [c for c in checkpoints if c["file"] != path.name]
        checkpoints.append({"file": path.name, "step": step, "sha256": sha256_file(path)})
        _write_manifest(run_dir, config, checkpoints, bundle.proxy.weight_hash())
        return path

    final_path = None
    for step in range(start_step + 1, config.iterations + 1):
        idx = sample_rng.choice(len(dataset), size=min(config.batch_size, len(dataset)),
                                replace=False)
        batch = collate_batch([dataset[i] for i in idx], vocab)
        report = train_step(batch, models, opts, config)
        writer.writerow(report.row())
        if step % config.log_every == 0:
            csv_file.flush()
            logger.info("step %d: l1_img %.4f box %.4f d_img %.3f d_obj %.3f",
                        step, report.l1_img, report.box, report.d_img, report.d_obj)
        if step % config.checkpoint_every == 0 and step < config.iterations:
            save_ckpt(f"{step:06d}", step)
    csv_file.close()
    final_path = save_ckpt("final", config.iterations)
    _plot_losses(run_dir)
    logger.info("run complete: %s", final_path)
    return final_path


def load_run_artifacts(run_dir, step: int | None = None) -> RunArtifacts:
    """Load a run's bundle (hash-verified) and its tank."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    entries = manifest["checkpoints"]
    if not entries:
        raise CheckpointError(f"{run_dir}: no checkpoints recorded")
    if step is None:
        entry = entries[-1]
    else:
        entry = next((e for e in entries if e["step"] == step), None)
        if entry is None:
            raise CheckpointError(f"{run_dir}: no checkpoint at step {step}")
    path = run_dir / entry["file"]
    verify_checkpoint(path, entry["sha256"])
    bundle, _ = load_bundle(path)
    tank = MemoryTank.load(run_dir / "tank")
    return RunArtifacts(bundle=bundle, tank=tank)


def evaluate_run(run_dir, n_images: int = 128, seed: int = 1234,
                 splits: int = 8) -> MetricReport:
    """Desk-scale evaluation: IS / FID / diversity on held-out synthetic
    scenes, written to <run>/eval/."""
    art = load_run_artifacts(run_dir)
    config = art.config
    spec = SyntheticSceneSpec(image_size=config.image_size, crop_size=config.crop_size,
                              seed=seed)
    # retrieval needs every queried category in the tank; drop scenes whose
    # categories the (possibly small) training tank never saw
    covered = set(art.tank.by_category)
    scenes = [ex for ex in generate_synthetic_dataset(spec, 3 * n_images)
              if set(ex.graph.objects) <= covered][:n_images]
    if len(scenes) < n_images:
        logger.warning("only %d/%d eval scenes are coverable by the tank",
                       len(scenes), n_images)
        n_images = len(scenes)
    real = torch.stack([ex.image for ex in scenes])
    fakes, pairs = [], []
    for i, ex in enumerate(scenes):
        gt = ex.boxes if config.use_gt_boxes else None
        out_a = generate_image(art, ex.graph, seed=seed + i, gt_boxes=gt)
        fakes.append(out_a.image)
        if i < max(8, n_images // 4):
            out_b = generate_image(art, ex.graph, seed=seed + i + 500_000, gt_boxes=gt)
            pairs.append((out_a.image, out_b.image))
    fake = torch.stack(fakes)
    proxy = art.bundle.proxy
    with torch.no_grad():
        feats_real = proxy.features(real).numpy()
        feats_fake = proxy.features(fake).numpy()
    is_mean, is_std = inception_score(fake, proxy, splits=min(splits, n_images))
    div_mean, div_std = diversity_score(pairs, proxy)
    report = MetricReport(
        inception_score=is_mean, inception_score_std=is_std,
        fid=fid(feats_real, feats_fake),
        diversity=div_mean, diversity_std=div_std,
        n_images=n_images, feature_net_hash=proxy.weight_hash(),
    )
    emit_report(report, Path(run_dir) / "eval")
    return report
