import pytest
import torch

from pastegan.checkpoint import (CheckpointError, load_tensors, save_tensors, sha256_file,
                                 verify_checkpoint)


class TestArchive:
    def test_round_trip_exact(self, tmp_path):
        tensors = {
            "a.weight": torch.randn(3, 4),
            "a.bias": torch.randn(4, dtype=torch.float64),
            "steps": torch.tensor(7, dtype=torch.int64),
            "flag": torch.tensor([True, False]),
        }
        path = save_tensors(tmp_path / "ck.bin", tensors, {"note": "x"})
        loaded, meta = load_tensors(path)
        assert meta == {"note": "x"}
        assert set(loaded) == set(tensors)
        for name in tensors:
            assert loaded[name].dtype == tensors[name].dtype
            assert torch.equal(loaded[name], tensors[name])

    def test_deterministic_bytes(self, tmp_path):
        tensors = {"w": torch.randn(5, 5), "b": torch.randn(5)}
        p1 = save_tensors(tmp_path / "a.bin", tensors)
        p2 = save_tensors(tmp_path / "b.bin", dict(reversed(list(tensors.items()))))
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
        with pytest.raises(CheckpointError, match="magic"):
            load_tensors(p)

    def test_verify_catches_corruption(self, tmp_path):
        p = save_tensors(tmp_path / "ck.bin", {"w": torch.randn(4)})
        digest = sha256_file(p)
        verify_checkpoint(p, digest)
        raw = bytearray(p.read_bytes())
        raw[-1] ^= 0xFF
        p.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="integrity"):
            verify_checkpoint(p, digest)


class TestBundleCheckpoint:
    def test_save_load_bit_identical_forward(self, tiny_trained_setup, tmp_path):
        from pastegan.pipeline import generate_image, load_bundle, save_bundle, RunArtifacts

        setup = tiny_trained_setup
        path = tmp_path / "bundle.bin"
        save_bundle(path, setup["bundle"], step=2)
        bundle2, step = load_bundle(path)
        assert step == 2
        sd1, sd2 = setup["bundle"].state_dict(), bundle2.state_dict()
        assert set(sd1) == set(sd2)
        for k in sd1:
            assert torch.equal(sd1[k], sd2[k]), k

        art1 = setup["artifacts"]
        art2 = RunArtifacts(bundle=bundle2, tank=setup["tank"])
        g = setup["dataset"][0].graph
        out1 = generate_image(art1, g, seed=5)
        out2 = generate_image(art2, g, seed=5)
        assert torch.equal(out1.image, out2.image)
        assert out1.selected_crop_ids == out2.selected_crop_ids
