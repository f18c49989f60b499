"""Linear evaluation and supervised fine-tuning of a pretrained encoder."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from tobias.augment.patches import mixup, sample_mixup_lambda
from tobias.errors import ConfigError
from tobias.images.transforms import to_batch
from tobias.net.builder import Network
from tobias.ssl.model import SGD, Classifier, cosine_lr, restore_bn_modes, set_bn_mode
from tobias.ssl.train import prepare_images
from tobias.tensor.layers import Linear
from tobias.tensor.rng import RngState


def check_labels(labels, n_images: int, num_classes: int | None = None) -> tuple[np.ndarray, int]:
    if labels is None or any(l is None for l in labels):
        raise ConfigError("every evaluation image needs a class label")
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != n_images:
        raise ConfigError(f"{len(labels)} labels for {n_images} images")
    if labels.size and labels.min() < 0:
        raise ConfigError("class labels must be non-negative")
    c = num_classes if num_classes is not None else int(labels.max()) + 1
    if labels.size and labels.max() >= c:
        raise ConfigError(f"label {int(labels.max())} out of range for {c} classes")
    return labels, c


def softmax_xent(logits: np.ndarray, targets: np.ndarray):
    """Mean soft-target cross entropy and its gradient w.r.t. the logits."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(z)
    loss = float(-(targets * logp).sum() / n)
    grad = (np.exp(logp) - targets) / n
    return loss, grad.astype(logits.dtype)


def one_hot(labels, c, dtype=np.float64):
    out = np.zeros((len(labels), c), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def encode(encoder: Network, images, size: int | None = None, batch: int = 64) -> np.ndarray:
    """GAP features of a frozen encoder, with batch norm on its running statistics."""
    size = size or encoder.spec.input_size
    images = prepare_images(images, size)
    modes = set_bn_mode(encoder, "running")
    try:
        feats = [encoder.features(to_batch(images[i:i + batch]).astype(encoder.dtype, copy=False))
                 .mean(axis=(2, 3)) for i in range(0, len(images), batch)]
    finally:
        restore_bn_modes(encoder, modes)
    return np.concatenate(feats).astype(np.float64) if feats else np.zeros((0, encoder.spec.feature_channels))


@dataclass(frozen=True)
class LinearEvalConfig:
    epochs: int = 100
    lr: float = 0.1
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0


@dataclass
class EvalResult:
    accuracy: float
    num_classes: int
    majority: float
    history: list = field(default_factory=list)

    @property
    def chance(self) -> float:
        return 1.0 / self.num_classes

    def summary(self) -> dict:
        return {"accuracy": round(self.accuracy, 6), "classes": self.num_classes,
                "chance": round(self.chance, 6), "majority": round(self.majority, 6)}


def _minibatches(n, batch, rng: RngState):
    order = rng.permutation(n)
    return [order[i:i + batch] for i in range(0, n, batch)]


def fit_linear(train_x, train_y, num_classes, config: LinearEvalConfig) -> tuple[Linear, list]:
    """Softmax regression on fixed features by momentum SGD with cosine decay."""
    rng = RngState(config.seed).stream("linear")
    head = Linear(np.zeros((num_classes, train_x.shape[1])), np.zeros(num_classes))
    opt = SGD(head, config.momentum, config.weight_decay)
    steps_per_epoch = -(-len(train_x) // config.batch_size)
    total = config.epochs * steps_per_epoch
    history, step = [], 0
    targets = one_hot(train_y, num_classes)
    for _ in range(config.epochs):
        for idx in _minibatches(len(train_x), config.batch_size, rng):
            head.zero_grad()
            loss, g = softmax_xent(head.forward(train_x[idx]), targets[idx])
            head.backward(g)
            opt.step(cosine_lr(config.lr, step, total))
            history.append(loss)
            step += 1
    return head, history


def linear_eval(encoder, train, test, config: LinearEvalConfig = LinearEvalConfig(),
                num_classes: int | None = None) -> EvalResult:
    """Top-1 accuracy of a linear head on frozen, standardized GAP features.

    ``train`` and ``test`` are ``(images, labels)`` pairs; ``encoder`` is a
    Network or anything with an ``encoder`` attribute (such as a TrainState).
    """
    encoder = getattr(encoder, "encoder", encoder)
    (tr_img, tr_lab), (te_img, te_lab) = train, test
    tr_y, c = check_labels(tr_lab, len(tr_img), num_classes)
    te_y, _ = check_labels(te_lab, len(te_img), c)
    tr_x, te_x = encode(encoder, tr_img), encode(encoder, te_img)
    mu = tr_x.mean(axis=0)
    sd = tr_x.std(axis=0)
    sd = np.where(sd > 1e-8 * (np.abs(mu) + 1), sd, 1.0)
    tr_x, te_x = (tr_x - mu) / sd, (te_x - mu) / sd
    head, history = fit_linear(tr_x, tr_y, c, config)
    pred = head.forward(te_x, record=False).argmax(axis=1)
    majority = np.bincount(te_y, minlength=c).max() / max(len(te_y), 1)
    return EvalResult(float((pred == te_y).mean()), c, float(majority), history)


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 30
    lr: float = 0.1
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 5e-4
    mixup: bool = False
    alpha: float = 1.0
    seed: int = 0


def finetune_step(model: Classifier, opt: SGD, x, y, num_classes, lr, lam=None, perm=None) -> float:
    """One supervised step; with ``lam`` the batch is mixed with ``x[perm]``."""
    targets = one_hot(y, num_classes)
    if lam is not None:
        x = mixup(x, x[perm], lam)
        targets = lam * targets + (1.0 - lam) * targets[perm]
    model.zero_grad()
    loss, g = softmax_xent(model.forward(x, record=True), targets)
    model.backward(g)
    opt.step(lr)
    return loss


def finetune(encoder, train, test, config: FinetuneConfig = FinetuneConfig(),
             num_classes: int | None = None) -> EvalResult:
    """Train a copy of the encoder plus a new linear head on labelled images."""
    encoder = copy.deepcopy(getattr(encoder, "encoder", encoder))
    (tr_img, tr_lab), (te_img, te_lab) = train, test
    tr_y, c = check_labels(tr_lab, len(tr_img), num_classes)
    te_y, _ = check_labels(te_lab, len(te_img), c)
    root = RngState(config.seed)
    model = Classifier(encoder, c, root.stream("head"))
    opt = SGD(model, config.momentum, config.weight_decay)
    size = encoder.spec.input_size
    tr_x = to_batch(prepare_images(tr_img, size)).astype(encoder.dtype)
    te_x = to_batch(prepare_images(te_img, size)).astype(encoder.dtype)
    shuffle, mix = root.stream("shuffle"), root.stream("mixup")
    set_bn_mode(model, "batch")
    steps_per_epoch = -(-len(tr_x) // config.batch_size)
    total = config.epochs * steps_per_epoch
    history, step = [], 0
    for _ in range(config.epochs):
        for idx in _minibatches(len(tr_x), config.batch_size, shuffle):
            lam = perm = None
            if config.mixup:
                lam = sample_mixup_lambda(mix, config.alpha)
                perm = mix.permutation(len(idx))
            lr = cosine_lr(config.lr, step, total)
            history.append(finetune_step(model, opt, tr_x[idx], tr_y[idx], c, lr, lam, perm))
            step += 1
    set_bn_mode(model, "running")
    pred = np.concatenate([model.forward(te_x[i:i + 64], record=False).argmax(axis=1)
                           for i in range(0, len(te_x), 64)]) if len(te_x) else np.zeros(0, int)
    majority = np.bincount(te_y, minlength=c).max() / max(len(te_y), 1)
    return EvalResult(float((pred == te_y).mean()) if len(te_y) else 0.0, c, float(majority), history)
