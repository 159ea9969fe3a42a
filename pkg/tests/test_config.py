import pytest

from pastegan.config import TrainingConfig, overfit_config, tiny_config


class TestConfig:
    def test_defaults_match_stated_weights(self):
        cfg = TrainingConfig()
        assert cfg.loss_weights().as_tuple() == (1.0, 10.0, 1.0, 1.0, 1.0, 1.0, 0.5, 10.0)
        assert cfg.learning_rate == 5e-4
        assert cfg.batch_size == 32
        assert cfg.image_size == 64 and cfg.crop_size == 32

    def test_canvas_dim(self):
        cfg = TrainingConfig(d_z=100, d_crop=20)
        assert cfg.canvas_dim == 120

    def test_json_round_trip(self, tmp_path):
        cfg = overfit_config()
        path = tmp_path / "cfg.json"
        cfg.save(path)
        loaded = TrainingConfig.from_file(path)
        assert loaded == cfg

    def test_toml_load(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text('name = "t"\niterations = 12\nlambda2 = 5.0\n')
        cfg = TrainingConfig.from_file(path)
        assert cfg.name == "t" and cfg.iterations == 12 and cfg.lambda2 == 5.0

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text('{"iterationz": 5}')
        with pytest.raises(ValueError, match="iterationz"):
            TrainingConfig.from_file(path)

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            TrainingConfig(batch_size=0)

    def test_presets_are_valid(self):
        assert tiny_config().image_size == 8
        assert overfit_config().synthetic_n == 50
