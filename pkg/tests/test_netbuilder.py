import numpy as np
import pytest

from tobias.errors import ConfigError, DimensionError
from tobias.net.builder import build_network, extract_features, forward_logits
from tobias.net.spec import ArchSpec, StageSpec, StemSpec, dumps, loads, preset, preset_names, with_blocks


def test_presets_load_and_channels_are_non_decreasing():
    names = preset_names()
    for required in ("resnet50", "resnet50-shallow", "resnet50-deep", "vgg16", "alexnet",
                     "tinynet", "tinynet-deep", "tinynet-shallow", "tinynet8"):
        assert required in names
    for name in names:
        spec = preset(name)
        chans = [s.out_channels for s in spec.stages]
        assert all(c > 0 for c in chans)
        assert chans == sorted(chans)


def test_resnet50_layout():
    net = build_network(preset("resnet50"), 0)
    assert net.conv_count() == 53
    assert preset("resnet50").feature_channels == 2048
    assert net.feature_shape((1, 3, 224, 224)) == (1, 2048, 7, 7)


@pytest.mark.slow
def test_resnet50_features_7x7x2048():
    net = build_network(preset("resnet50"), 0)
    q = extract_features(net, np.random.default_rng(0).standard_normal((1, 3, 224, 224)).astype(np.float32))
    assert q.shape == (1, 7, 7, 2048)
    assert q.min() >= 0  # ReLU output


@pytest.mark.parametrize("name,truncate,shape", [
    ("resnet50", 3, (1, 1024, 14, 14)), ("vgg16", None, (1, 512, 7, 7)),
    ("alexnet", None, (1, 256, 6, 6)), ("tinynet-deep", None, (1, 256, 8, 8)),
    ("tinynet", None, (1, 256, 4, 4)),
])
def test_feature_shapes(name, truncate, shape):
    spec = preset(name, truncate_after_stage=truncate)
    size = spec.input_size
    assert build_network(spec, 0).feature_shape((1, 3, size, size)) == shape


def test_truncated_network_shares_prefix_weights():
    full = dict(build_network(preset("tinynet-deep"), 4).named_parameters())
    cut = dict(build_network(preset("tinynet-deep", truncate_after_stage=1), 4).named_parameters())
    assert set(cut) < set(full)
    for name, p in cut.items():
        np.testing.assert_array_equal(p, full[name])


def test_truncate_after_first_stage():
    net = build_network(preset("tinynet-shallow", truncate_after_stage=1), 0)
    assert net.body.names == ["stem", "stage1"]


def test_same_seed_same_checksum():
    spec = preset("tinynet-shallow")
    assert build_network(spec, 3).checksum() == build_network(spec, 3).checksum()
    assert build_network(spec, 3).checksum() != build_network(spec, 4).checksum()


def test_small_input_is_rejected():
    net = build_network(preset("tinynet-shallow"), 0)
    with pytest.raises(DimensionError):
        net.features(np.zeros((1, 3, 32, 32), np.float32))


def test_invalid_specs():
    with pytest.raises(ConfigError):
        preset("tinynet-deep", truncate_after_stage=9)
    with pytest.raises(ConfigError):
        ArchSpec("bad", None, (StageSpec("bottleneck", 1, 30),))
    with pytest.raises(ConfigError):
        preset("no-such-net")


def test_toml_round_trip():
    for name in ("resnet50", "vgg16", "tinynet-deep"):
        spec = preset(name)
        assert loads(dumps(spec)) == spec


def test_with_blocks():
    spec = with_blocks(preset("tinynet-deep"), [1, 1, 1], "x")
    assert [s.block_count for s in spec.stages] == [1, 1, 1]


def test_logits_head():
    spec = ArchSpec("h", StemSpec(4), (StageSpec("plain", 1, 8, True),), input_size=8, num_classes=5)
    x = np.random.default_rng(1).standard_normal((3, 3, 8, 8)).astype(np.float32)
    zero = build_network(spec, 0, zero_head=True)
    np.testing.assert_array_equal(forward_logits(zero, np.zeros_like(x)), np.zeros((3, 5)))
    net = build_network(spec, 0)
    logits = forward_logits(net, x)
    assert logits.shape == (3, 5)
    feats = net.features(x).astype(np.float64).mean(axis=(2, 3))
    fc = net.head.layers[1].params
    np.testing.assert_allclose(logits, feats @ fc["weight"].T + fc["bias"], atol=1e-5)
    with pytest.raises(ConfigError):
        forward_logits(build_network(spec.replace(num_classes=None), 0), x)


def test_noskip_keeps_projection_weights():
    a = dict(build_network(preset("resnet50"), 0).named_parameters())
    b = dict(build_network(preset("resnet50-noskip"), 0).named_parameters())
    assert a.keys() == b.keys()
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])
