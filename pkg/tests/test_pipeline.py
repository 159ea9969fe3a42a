import numpy as np
import pytest
import torch
import torch.nn.functional as F

from pastegan.config import tiny_config
from pastegan.fuser_decoder import attention_fuse, compose_canvas, place_in_box
from pastegan.memory_tank import TankError
from pastegan.pipeline import (GraphBatch, ModelBundle, generate_batch, generate_image,
                               image_to_png_bytes)
from pastegan.scenegraph import (SceneGraph, StructureError, augment_with_image_node,
                                 in_image_edge_ids)


class TestGraphBatch:
    def test_packing_offsets(self, toy_vocab):
        g1 = augment_with_image_node(SceneGraph((0, 1), ((0, 0, 1),)), toy_vocab)
        g2 = augment_with_image_node(SceneGraph((2,)), toy_vocab)
        gb = GraphBatch.from_graphs([g1, g2], toy_vocab)
        assert gb.cats.tolist() == list(g1.objects) + list(g2.objects)
        assert gb.image_nodes.tolist() == [2, 4]
        assert gb.non_image_idx.tolist() == [0, 1, 3]
        assert gb.scene_of_object.tolist() == [0, 0, 1]
        assert gb.obj_slices == [(0, 2), (2, 3)]
        # edges of scene 2 are offset by scene 1's node count
        assert gb.edges[-1].tolist() == [3, 4]
        local = in_image_edge_ids(g1, toy_vocab)
        assert gb.in_image_edge.tolist()[:2] == local

    def test_requires_augmented(self, toy_vocab):
        with pytest.raises(StructureError):
            GraphBatch.from_graphs([SceneGraph((0,))], toy_vocab)


class TestGenerateBatch:
    def _bundle_and_batch(self, **flags):
        cfg = tiny_config()
        for k, v in flags.items():
            setattr(cfg, k, v)
        from pastegan.data import SyntheticSceneSpec, generate_synthetic_dataset
        from pastegan.trainer import collate_batch
        spec = SyntheticSceneSpec(image_size=cfg.image_size, crop_size=cfg.crop_size, seed=4)
        ds = generate_synthetic_dataset(spec, 3)
        vocab = spec.vocab()
        torch.manual_seed(1)
        bundle = ModelBundle(cfg, vocab)
        batch = collate_batch(ds, vocab)
        return cfg, bundle, batch

    def test_shapes_and_range(self):
        cfg, bundle, batch = self._bundle_and_batch()
        bundle.eval()
        with torch.no_grad():
            fwd = generate_batch(bundle, batch.gb, batch.crops_ori,
                                 torch.randn(3, cfg.noise_dim))
        assert fwd.images.shape == (3, 3, cfg.image_size, cfg.image_size)
        assert fwd.images.min() >= 0 and fwd.images.max() <= 1
        assert fwd.boxes_pred.shape == (batch.gb.num_objects, 4)
        assert fwd.canvases.shape[1] == cfg.canvas_dim

    def test_gt_boxes_override_placement_not_regression(self):
        cfg, bundle, batch = self._bundle_and_batch()
        bundle.eval()
        with torch.no_grad():
            fwd = generate_batch(bundle, batch.gb, batch.crops_ori,
                                 torch.randn(3, cfg.noise_dim), gt_boxes=batch.gt_boxes)
        assert torch.equal(fwd.boxes_used, batch.gt_boxes)
        assert not torch.allclose(fwd.boxes_pred, batch.gt_boxes)

    def test_grouped_fuse_matches_per_scene_reference(self):
        """The batched fusion path must agree with composing the public
        single-scene ops (placement -> attention_fuse -> compose_canvas)."""
        cfg, bundle, batch = self._bundle_and_batch()
        bundle.eval()
        gb = batch.gb
        with torch.no_grad():
            fwd = generate_batch(bundle, gb, batch.crops_ori,
                                 torch.zeros(3, cfg.noise_dim))

            # reference: recompute canvases scene by scene
            from pastegan.pipeline import scene_codes
            z_obj, z_pred = scene_codes(bundle, gb)
            boxes = bundle.box_reg(z_obj[gb.non_image_idx])
            v = bundle.crop_encoder(batch.crops_ori)
            pred_maps = bundle.pred_expander(z_pred)
            node_maps = v.new_zeros(gb.cats.shape[0], *v.shape[1:])
            node_maps[gb.non_image_idx] = v
            node_out, pred_out = bundle.refiner.gcn(node_maps, pred_maps, gb.edges)
            v_ref = node_out[gb.non_image_idx]
            hw = (cfg.feat_hw, cfg.feat_hw)
            z_in = z_pred[gb.in_image_edge]
            vp_in = pred_out[gb.in_image_edge]
            up = torch.cat([z_in[:, :, None, None].expand(-1, -1, *hw), vp_in], dim=1)
            for s, (a, b) in enumerate(gb.obj_slices):
                u = torch.stack([
                    place_in_box(z_obj[gb.non_image_idx[j]], v_ref[j],
                                 boxes[j].tolist(), hw) for j in range(a, b)])
                u_img = place_in_box(z_obj[gb.image_nodes[s]],
                                     v_ref.new_zeros(v_ref.shape[1:]), (0, 0, 1, 1), hw)
                u_attn = attention_fuse(u, up[a:b], bundle.fuser)
                ref = compose_canvas(u_attn, u_img, bundle.fuser,
                                     (cfg.image_size, cfg.image_size))
                assert torch.allclose(fwd.canvases[s], ref, atol=1e-5)

    def test_single_object_scene_works(self, toy_vocab):
        cfg = tiny_config()
        torch.manual_seed(0)
        bundle = ModelBundle(cfg, toy_vocab).eval()
        g = augment_with_image_node(SceneGraph((1,)), toy_vocab)
        gb = GraphBatch.from_graphs([g], toy_vocab)
        crops = torch.rand(1, 3, cfg.crop_size, cfg.crop_size)
        with torch.no_grad():
            fwd = generate_batch(bundle, gb, crops, torch.randn(1, cfg.noise_dim))
        assert fwd.images.shape == (1, 3, cfg.image_size, cfg.image_size)


class TestGenerateImage:
    def test_determinism_and_candidates(self, tiny_trained_setup):
        art = tiny_trained_setup["artifacts"]
        g = tiny_trained_setup["dataset"][0].graph
        a = generate_image(art, g, seed=9)
        b = generate_image(art, g, seed=9)
        assert torch.equal(a.image, b.image)
        assert a.selected_crop_ids == b.selected_crop_ids
        assert len(a.candidates) == g.num_objects
        assert all(1 <= len(c) <= art.config.k_retrieval for c in a.candidates)

    def test_seed_changes_output(self, tiny_trained_setup):
        art = tiny_trained_setup["artifacts"]
        g = tiny_trained_setup["dataset"][0].graph
        a = generate_image(art, g, seed=1)
        b = generate_image(art, g, seed=2)
        assert not torch.equal(a.image, b.image)

    def test_override_validation(self, tiny_trained_setup):
        art = tiny_trained_setup["artifacts"]
        g = tiny_trained_setup["dataset"][0].graph
        with pytest.raises(TankError):
            generate_image(art, g, seed=0, crop_overrides={0: "no-such-crop"})
        other_cat = next(r for r in art.tank.records
                         if r.category_id != g.objects[0])
        with pytest.raises(TankError, match="category"):
            generate_image(art, g, seed=0, crop_overrides={0: other_cat.crop_id})
        with pytest.raises(StructureError):
            generate_image(art, g, seed=0, crop_overrides={99: other_cat.crop_id})

    def test_forced_crops(self, tiny_trained_setup):
        art = tiny_trained_setup["artifacts"]
        g = tiny_trained_setup["dataset"][0].graph
        bucket = art.tank.category_records(g.objects[0])
        rec = bucket[-1]
        out = generate_image(art, g, seed=0, forced_crops=[rec] + [None] * (g.num_objects - 1))
        assert out.selected_crop_ids[0] == rec.crop_id

    def test_gt_boxes_count_checked(self, tiny_trained_setup):
        art = tiny_trained_setup["artifacts"]
        g = tiny_trained_setup["dataset"][0].graph
        with pytest.raises(StructureError):
            generate_image(art, g, seed=0, gt_boxes=[(0, 0, 1, 1)] * (g.num_objects + 3))


class TestPngBytes:
    def test_deterministic_and_decodable(self):
        img = torch.rand(3, 16, 16)
        a = image_to_png_bytes(img)
        b = image_to_png_bytes(img)
        assert a == b and a[:8] == b"\x89PNG\r\n\x1a\n"
        import io
        from PIL import Image
        arr = np.asarray(Image.open(io.BytesIO(a)))
        assert arr.shape == (16, 16, 3)
