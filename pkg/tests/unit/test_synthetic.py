import numpy as np
import pytest

from hsi_demosaic.color import fixed_hsi_to_rgb
from hsi_demosaic.errors import ConfigurationError
from hsi_demosaic.hypercube import RgbImage
from hsi_demosaic.synthetic import (
    SCENE_FAMILIES,
    SyntheticSceneConfig,
    generate_rgb_corpus,
    generate_scenes,
    generate_synthetic_scene,
    region_map,
)

pytestmark = pytest.mark.unit


@pytest.mark.parametrize("family", SCENE_FAMILIES)
def test_scene_shape_and_range(family):
    config = SyntheticSceneConfig(seed=2, height=24, width=32, family=family)
    cube = generate_synthetic_scene(config)
    assert cube.values.shape == (16, 24, 32)
    assert cube.values.min() >= 0.0
    assert cube.values.max() <= 1.0
    assert cube.band_centers[0] == 460.0


@pytest.mark.parametrize("family", SCENE_FAMILIES)
def test_scene_is_deterministic(family):
    config = SyntheticSceneConfig(seed=9, height=16, width=16, family=family, noise=0.01)
    a = generate_synthetic_scene(config)
    b = generate_synthetic_scene(config)
    np.testing.assert_array_equal(a.values, b.values)


def test_seeds_give_different_scenes():
    a = generate_synthetic_scene(SyntheticSceneConfig(seed=0, height=16, width=16))
    b = generate_synthetic_scene(SyntheticSceneConfig(seed=1, height=16, width=16))
    assert not np.array_equal(a.values, b.values)


def test_piecewise_regions_are_constant():
    config = SyntheticSceneConfig(seed=4, height=32, width=32, regions=5)
    cube = generate_synthetic_scene(config)
    labels = region_map(config)
    assert labels.shape == (32, 32)
    for label in np.unique(labels):
        spectra = cube.values[:, labels == label]
        expected = np.broadcast_to(spectra[:, :1], spectra.shape)
        np.testing.assert_array_equal(spectra, expected)


def test_region_map_only_for_piecewise():
    with pytest.raises(ConfigurationError, match="piecewise"):
        region_map(SyntheticSceneConfig(family="smooth"))


def test_generate_scenes_cycles_families():
    scenes = generate_scenes(SyntheticSceneConfig(seed=3, height=16, width=16), 4)
    assert len(scenes) == 4
    first = generate_synthetic_scene(
        SyntheticSceneConfig(seed=3, height=16, width=16, family="piecewise")
    )
    second = generate_synthetic_scene(
        SyntheticSceneConfig(seed=4, height=16, width=16, family="edges")
    )
    np.testing.assert_array_equal(scenes[0].values, first.values)
    np.testing.assert_array_equal(scenes[1].values, second.values)


def test_rgb_corpus():
    config = SyntheticSceneConfig(seed=0, height=16, width=16)
    corpus = generate_rgb_corpus(config, 2)
    assert len(corpus) == 2
    assert all(isinstance(image, RgbImage) for image in corpus)
    assert all(image.values.max() <= 1.0 for image in corpus)


def test_rgb_corpus_is_unpaired():
    config = SyntheticSceneConfig(seed=0, height=16, width=16)
    neutral = generate_rgb_corpus(config, 1, cast=(1.0, 1.0, 1.0))[0]
    paired = fixed_hsi_to_rgb(generate_scenes(config, 1)[0])
    assert not np.array_equal(neutral.values, paired.values)


@pytest.mark.parametrize(
    "kwargs",
    [{"height": 0}, {"family": "fractal"}, {"noise": -0.1}, {"regions": 0}],
)
def test_invalid_config(kwargs):
    with pytest.raises(ConfigurationError):
        SyntheticSceneConfig(**kwargs)
