import numpy as np
import pytest

from oracles import contrastive_loss_direct
from tobias.augment.masks import MaskCache
from tobias.augment.patches import top_half_mask
from tobias.errors import ConfigError, ParseError
from tobias.images.synthetic import SyntheticSpec, generate_synthetic
from tobias.net.builder import build_network
from tobias.net.spec import preset
from tobias.ssl import (FinetuneConfig, LinearEvalConfig, SslConfig, TrainState, contrastive_loss,
                        finetune, linear_eval, new_state, positive_share, pretrain)
from tobias.ssl.evaluate import Classifier, finetune_step, softmax_xent
from tobias.ssl.model import SGD, cosine_lr


def unit(rng, n, d):
    z = rng.standard_normal((n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


# ---------------------------------------------------------------- loss

def test_single_pair_loss_is_zero(rng):
    z = unit(rng, 1, 4)
    assert contrastive_loss(z, z, 0.2) == 0.0


def test_hand_case():
    e = np.eye(2)
    expected = 2 * -np.log(np.e / (np.e + 2))
    np.testing.assert_allclose(contrastive_loss(e, e, 1.0), expected, rtol=1e-12)
    np.testing.assert_allclose(contrastive_loss(e, e, 1.0), contrastive_loss_direct(e, e, 1.0), rtol=1e-12)


@pytest.mark.parametrize("tau", [0.1, 0.2, 1.0])
def test_matches_direct_evaluation(rng, tau):
    z1, z2 = unit(rng, 6, 5), unit(rng, 6, 5)
    np.testing.assert_allclose(contrastive_loss(z1, z2, tau), contrastive_loss_direct(z1, z2, tau), rtol=1e-10)
    np.testing.assert_allclose(contrastive_loss(z1, z2, tau, "mean"), contrastive_loss_direct(z1, z2, tau) / 6,
                               rtol=1e-10)


def test_permutation_invariance(rng):
    z1, z2 = unit(rng, 7, 3), unit(rng, 7, 3)
    perm = rng.permutation(7)
    np.testing.assert_allclose(contrastive_loss(z1[perm], z2[perm]), contrastive_loss(z1, z2), rtol=1e-12)


def test_loss_is_positive_and_stable(rng):
    z1, z2 = unit(rng, 8, 4), unit(rng, 8, 4)
    assert contrastive_loss(z1, z2) > 0
    assert np.isfinite(contrastive_loss(z1, z2, tau=1e-3))


def test_positive_share_grows_as_tau_shrinks(rng):
    z1 = unit(rng, 8, 6)
    z2 = unit(rng, 8, 6) * 0.3 + z1
    z2 /= np.linalg.norm(z2, axis=1, keepdims=True)
    shares = [positive_share(z1, z2, t).mean() for t in (1.0, 0.5, 0.2, 0.1)]
    assert all(a < b for a, b in zip(shares, shares[1:]))


def test_loss_rejects_bad_inputs(rng):
    z = unit(rng, 3, 2)
    with pytest.raises(ValueError):
        contrastive_loss(z, z[:2])
    with pytest.raises(ConfigError):
        contrastive_loss(z, z, tau=0.0)


# ---------------------------------------------------------------- training

@pytest.fixture(scope="module")
def data():
    recs, imgs = generate_synthetic(SyntheticSpec(seed=3), 16)
    labels = np.array([r.label for r in recs])
    net = build_network(preset("tinynet-deep"), 0)
    from tobias.augment.masks import precompute_masks
    return imgs, labels, precompute_masks(imgs, net)


SMALL = SslConfig(batch_size=4, steps=6, proj_dim=8)


def test_embeddings_are_unit_norm(data):
    imgs, _, _ = data
    state = new_state(SMALL)
    from tobias.images.transforms import to_batch
    z = state.model.forward(to_batch(imgs[:4]), record=False)
    np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1.0, rtol=1e-5)


def test_missing_masks_names_precompute_command(data):
    imgs, _, _ = data
    with pytest.raises(ConfigError, match="tobias masks"):
        pretrain(SMALL, imgs)
    pretrain(SMALL.replace(mode="self", steps=1), imgs)  # no masks needed
    with pytest.raises(ConfigError):
        pretrain(SMALL, imgs, MaskCache([top_half_mask(np.zeros((4, 4)))], 0))


def test_zero_learning_rate_keeps_parameters(data):
    imgs, _, masks = data
    cfg = SMALL.replace(lr=0.0, steps=3)
    state = new_state(cfg)
    before = {k: v.copy() for k, v in state.model.named_parameters()}
    pretrain(cfg, imgs, masks, state=state)
    for k, v in state.model.named_parameters():
        np.testing.assert_array_equal(v, before[k])


def test_identical_seeds_identical_curves(data):
    imgs, _, masks = data
    a = pretrain(SMALL, imgs, masks).history
    b = pretrain(SMALL, imgs, masks).history
    assert a == b
    c = pretrain(SMALL.replace(seed=1), imgs, masks).history
    assert a != c


def test_resume_from_checkpoint_is_bit_exact(data, tmp_path):
    imgs, _, masks = data
    full = pretrain(SMALL, imgs, masks)
    half = pretrain(SMALL, imgs, masks, steps=3)
    half.save(tmp_path / "ck.npz")
    resumed = pretrain(SMALL, imgs, masks, state=TrainState.load(tmp_path / "ck.npz"))
    assert resumed.history == full.history
    for (k, v), (_, w) in zip(full.model.named_parameters(), resumed.model.named_parameters()):
        np.testing.assert_array_equal(v, w, err_msg=k)


def test_checkpoint_rejects_other_files(tmp_path):
    np.savez(tmp_path / "x.npz", a=np.zeros(3))
    with pytest.raises(ParseError):
        TrainState.load(tmp_path / "x.npz")


def test_p_zero_matches_plain_augmentation(data):
    imgs, _, masks = data
    cfg = SMALL.replace(p=0.0, dtype="float64", steps=4)
    a = pretrain(cfg, imgs, masks).history
    b = pretrain(cfg.replace(mode="self"), imgs, masks).history
    assert a == b


def test_config_round_trip(tmp_path):
    cfg = SMALL.replace(tau=0.1, transforms=("crop",))
    assert SslConfig.from_dict(cfg.to_dict()) == cfg
    (tmp_path / "c.toml").write_text('[pretrain]\ntau = 0.5\nsteps = 3\n')
    assert SslConfig.load(tmp_path / "c.toml") == SslConfig(tau=0.5, steps=3)
    with pytest.raises(ConfigError):
        SslConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        SslConfig(p=1.5)


def test_cosine_schedule():
    assert cosine_lr(0.1, 0, 10) == 0.1
    np.testing.assert_allclose(cosine_lr(0.1, 5, 10), 0.05)
    assert cosine_lr(0.1, 10, 10) == 0.0


# ---------------------------------------------------------------- evaluation

def test_random_encoder_is_near_chance():
    recs, imgs = generate_synthetic(SyntheticSpec(seed=4), 120)
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 4, len(imgs))  # labels unrelated to content
    enc = build_network(preset("tinynet"), 0)
    res = linear_eval(enc, (imgs[:60], labels[:60]), (imgs[60:], labels[60:]),
                      LinearEvalConfig(epochs=20), 4)
    sigma = np.sqrt(0.25 * 0.75 / 60)
    assert abs(res.accuracy - 0.25) <= 3 * sigma + 1e-12


def test_constant_encoder_gives_majority(data):
    imgs, _, _ = data
    labels = np.array([0] * 10 + [1] * 6)
    blank = [np.zeros_like(i) for i in imgs]
    enc = build_network(preset("tinynet"), 0)
    res = linear_eval(enc, (blank, labels), (blank, labels), LinearEvalConfig(epochs=10), 2)
    assert res.accuracy == res.majority == 10 / 16


def test_label_errors(data):
    imgs, labels, _ = data
    enc = build_network(preset("tinynet"), 0)
    with pytest.raises(ConfigError):
        linear_eval(enc, (imgs, labels[:3]), (imgs, labels))
    with pytest.raises(ConfigError):
        linear_eval(enc, (imgs, labels), (imgs, labels + 5), num_classes=2)


def test_softmax_xent_gradient(rng):
    from oracles import numeric_grad
    logits = rng.standard_normal((3, 4))
    t = np.eye(4)[[0, 2, 3]]
    _, g = softmax_xent(logits, t)
    np.testing.assert_allclose(g, numeric_grad(lambda: softmax_xent(logits, t)[0], logits), atol=1e-8)


def test_mixup_with_unit_lambda_is_plain_step(data):
    imgs, labels, _ = data
    from tobias.images.transforms import to_batch
    x = to_batch(imgs[:4]).astype(np.float32)
    y = labels[:4]
    out = []
    for lam in (None, 1.0):
        model = Classifier(build_network(preset("tinynet"), 0), 2, 0)
        opt = SGD(model, 0.9, 5e-4)
        loss = finetune_step(model, opt, x, y, 2, 0.1, lam, None if lam is None else np.array([3, 2, 1, 0]))
        out.append((loss, [p.copy() for _, p in model.named_parameters()]))
    assert out[0][0] == out[1][0]
    for a, b in zip(out[0][1], out[1][1]):
        np.testing.assert_array_equal(a, b)


def test_finetune_overfits_ten_images(data):
    imgs, labels, _ = data
    cfg = FinetuneConfig(epochs=60, batch_size=10, lr=0.05, weight_decay=0.0)
    res = finetune(build_network(preset("tinynet"), 0), (imgs[:10], labels[:10]), (imgs[:10], labels[:10]), cfg, 2)
    assert np.mean(res.history[-5:]) < 0.05
    again = finetune(build_network(preset("tinynet"), 0), (imgs[:10], labels[:10]), (imgs[:10], labels[:10]), cfg, 2)
    assert again.history == res.history


def test_finetune_with_mixup_runs(data):
    imgs, labels, _ = data
    res = finetune(build_network(preset("tinynet"), 0), (imgs, labels), (imgs, labels),
                   FinetuneConfig(epochs=2, batch_size=8, mixup=True), 2)
    assert np.all(np.isfinite(res.history)) and 0 <= res.accuracy <= 1
