import pytest
import yaml

from hsi_demosaic.config import (
    DATA_ROOT_ENV,
    PatternConfig,
    RunConfig,
    apply_overrides,
    config_hash,
    load_config,
    parse_override,
)
from hsi_demosaic.errors import ConfigurationError

pytestmark = pytest.mark.unit


@pytest.fixture()
def desk_yaml(data_dir):
    return data_dir / "config" / "desk.yaml"


class TestLoadConfig:
    def test_desk_file(self, desk_yaml):
        config = load_config(desk_yaml)
        assert config.seed == 7
        assert config.output_dir == "runs/desk"
        assert config.pattern.white_level == 4095
        assert config.train.lr.generator == 2e-5
        assert config.train.lr.discriminator == 2e-4
        assert config.train.betas == (0.5, 0.999)
        assert config.generator.base_channels == 8
        assert config.synthetic.scene.height == 80

    def test_defaults_without_file(self):
        config = load_config()
        assert config == RunConfig(data=config.data)
        assert config.pattern.build().band_count == 16

    def test_flags_override_file(self, desk_yaml, tmp_path):
        config = load_config(desk_yaml, seed=11, output_dir=tmp_path)
        assert config.seed == 11
        assert config.output_dir == str(tmp_path)

    def test_set_overrides(self, desk_yaml):
        config = load_config(
            desk_yaml,
            ["train.lr.generator=1e-4", "train.weights.lambda_tv=0", "device=cpu"],
        )
        assert config.train.lr.generator == pytest.approx(1e-4)
        assert config.train.weights.lambda_tv == 0
        assert config.device == "cpu"

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("train:\n  finetune_stepz: 3\n")
        with pytest.raises(ConfigurationError, match="finetune_stepz"):
            load_config(path)

    def test_invalid_value(self):
        with pytest.raises(ConfigurationError):
            load_config(overrides=["train.lr.generator=-1"])
        with pytest.raises(ConfigurationError, match="must be a number"):
            load_config(overrides=["train.weights.lambda_tv=small"])

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("seed: [1,\n")
        with pytest.raises(ConfigurationError, match="Invalid YAML"):
            load_config(path)

    def test_section_must_be_mapping(self):
        with pytest.raises(ConfigurationError, match="mapping"):
            load_config(overrides=["train=3"])

    def test_data_root_from_environment(self, monkeypatch, tmp_path):
        monkeypatch.setenv(DATA_ROOT_ENV, str(tmp_path))
        assert load_config().data.root == str(tmp_path)


class TestOverrides:
    def test_parse_override(self):
        assert parse_override("a.b=0.5") == (["a", "b"], 0.5)
        assert parse_override("flag=true") == (["flag"], True)

    @pytest.mark.parametrize("text", ["novalue", "=3"])
    def test_malformed(self, text):
        with pytest.raises(ConfigurationError):
            parse_override(text)

    def test_creates_sections(self):
        assert apply_overrides({}, ["x.y.z=1"]) == {"x": {"y": {"z": 1}}}

    def test_cannot_descend_into_scalar(self):
        with pytest.raises(ConfigurationError, match="scalar"):
            apply_overrides({"x": 1}, ["x.y=2"])


class TestRunConfig:
    def test_train_config_merges_sections(self, desk_yaml):
        train = load_config(desk_yaml).train_config()
        assert train.seed == 7
        assert train.crop_size == 72
        assert train.batch_size == 2
        assert train.finetune_steps == 20

    def test_model_config_band_mismatch(self):
        config = load_config(overrides=["spectral_recovery.bands=8"])
        with pytest.raises(ConfigurationError, match="spectral_recovery"):
            config.model_config()

    def test_yaml_roundtrip(self, desk_yaml, tmp_path):
        config = load_config(desk_yaml)
        path = tmp_path / "resolved.yaml"
        path.write_text(config.to_yaml())
        assert load_config(path) == config
        assert yaml.safe_load(config.to_yaml())["train"]["betas"] == [0.5, 0.999]

    def test_hash_tracks_content(self, desk_yaml):
        a = load_config(desk_yaml)
        b = load_config(desk_yaml, ["seed=8"])
        assert config_hash(a) == config_hash(load_config(desk_yaml))
        assert config_hash(a) != config_hash(b)


class TestPatternConfig:
    def test_custom_map(self):
        pattern = PatternConfig(period=2, band_map=[[0, 1], [1, 2]]).build()
        assert pattern.band_count == 3

    def test_center_count(self):
        with pytest.raises(ConfigurationError, match="centres"):
            PatternConfig(period=2, band_centers=[500.0]).centers()

    def test_default_centers(self):
        centers = PatternConfig().centers()
        assert (centers[0], centers[-1]) == (460.0, 630.0)
