"""Training loop, evaluation runner, and ablation drivers."""

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import datapipe
from .checkpoint import save_checkpoint
from .metrics import (ClassWeights, MetricsReport, aggregate_report,
                      compute_class_weights, confusion_counts,
                      segmentation_metrics, weighted_bce)
from .model import Model, ModelConfig, build_model
from .rng import Rng
from .tensor import Tensor

OPTIMIZERS = ("adam", "sgd_momentum")
WEIGHT_MODES = ("as_written", "inverse_frequency", "unweighted")


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 60
    lr0: float = 5e-4
    decay_factor: float = 0.1
    decay_every: int = 20
    optimizer: str = "adam"
    seed: int = 0
    weight_mode: str = "as_written"
    checkpoint_every: int = 0   # 0 = final checkpoint only

    def validate(self):
        if min(self.batch_size, self.epochs, self.decay_every) <= 0:
            raise ValueError("batch_size, epochs and decay_every must be positive")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValueError("decay_factor must be in (0, 1]")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)  # {"epoch","loss","lr","secs"}
    checkpoint_path: str | None = None

    def to_json(self) -> str:
        return json.dumps({"epochs": self.epochs,
                           "checkpoint": self.checkpoint_path}, indent=2) + "\n"


def lr_schedule(config: TrainConfig, epoch: int) -> float:
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} out of range [0, {config.epochs})")
    return config.lr0 * config.decay_factor ** (epoch // config.decay_every)


class SGDMomentum:
    def __init__(self, params, lr, momentum=0.9):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            v += p.grad
            p.data -= np.float32(self.lr) * v

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


class Adam:
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= (self.lr * (m / bias1)
                       / (np.sqrt(v / bias2) + self.eps)).astype(np.float32)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def make_optimizer(config: TrainConfig, params):
    if config.optimizer == "adam":
        return Adam(params, config.lr0)
    return SGDMomentum(params, config.lr0)


def resolve_weights(samples, config: TrainConfig) -> ClassWeights:
    if config.weight_mode == "unweighted":
        return ClassWeights(w0=1.0, w1=1.0, mode="unweighted")
    return compute_class_weights((s.mask for s in samples), config.weight_mode)


def train(model: Model, samples, config: TrainConfig, out_dir=None,
          log_stream=None):
    config.validate()
    samples = list(samples)
    if not samples:
        raise ValueError("no training samples")
    weights = resolve_weights(samples, config)

    opt = make_optimizer(config, model.parameters())
    shuffle_rng = Rng(config.seed)
    log = TrainLog()
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    images = np.stack([s.image for s in samples])
    masks = np.stack([s.mask for s in samples])

    for epoch in range(config.epochs):
        t0 = time.monotonic()
        lr = lr_schedule(config, epoch)
        opt.lr = lr
        order = shuffle_rng.permutation(len(samples))
        losses = []
        for start in range(0, len(samples), config.batch_size):
            idx = order[start:start + config.batch_size]
            x = Tensor(images[idx])
            t = masks[idx]
            pred = model.forward(x, training=True)
            loss = weighted_bce(pred, t, weights)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        secs = time.monotonic() - t0
        mean_loss = float(np.mean(losses))
        log.epochs.append({"epoch": epoch, "loss": mean_loss, "lr": lr,
                           "secs": secs})
        if log_stream is not None:
            print(f"epoch={epoch} loss={mean_loss:.6f} lr={lr:.6g} secs={secs:.2f}",
                  file=log_stream, flush=True)
        if (out_dir and config.checkpoint_every
                and (epoch + 1) % config.checkpoint_every == 0):
            save_checkpoint(model, os.path.join(out_dir, f"checkpoint_ep{epoch + 1:04d}.bin"))

    if out_dir:
        final = os.path.join(out_dir, "checkpoint.bin")
        save_checkpoint(model, final)
        log.checkpoint_path = final
    return model, log


def predict_image(model: Model, image: np.ndarray, plan: datapipe.TilePlan,
                  batch_size: int = 16) -> np.ndarray:
    """Tile, run the model in eval mode, stitch back to a probability map."""
    h, w = image.shape[:2]
    tiles = datapipe.extract_tiles(image, None, plan)
    probs = []
    for start in range(0, len(tiles), batch_size):
        batch = np.stack([s.image for s in tiles[start:start + batch_size]])
        out = model.forward(Tensor(batch), training=False)
        probs.extend(out.data[:, 0])
    return datapipe.stitch(probs, plan, h, w)


def evaluate_model(model: Model, pairs, scheme: str, tile: int = 256,
                   batch_size: int = 16) -> MetricsReport:
    if scheme not in ("test1", "test2"):
        raise ValueError(f"evaluation scheme must be test1 or test2, got {scheme!r}")
    rows = []
    for pair in pairs:
        if pair.mask is None:
            raise ValueError(f"pair {pair.id} has no ground-truth mask")
        gt = datapipe.binarize_mask(pair.mask)
        for img_id, image in datapipe.scheme_images(pair, scheme):
            plan = datapipe.scheme_plan(scheme, image.shape[0], image.shape[1], tile)
            prob = predict_image(model, image, plan, batch_size)
            pred = (prob >= 0.5).astype(np.uint8)
            rows.append((img_id, segmentation_metrics(confusion_counts(pred, gt))))
    return aggregate_report(rows)


def run_ablation(kind: str, base_config: TrainConfig,
                 model_config: ModelConfig, data_root, tile: int = 256,
                 schemes=None, log_stream=None) -> dict:
    """Trains one arm per variant under identical seeds and reports metrics.

    kind "training_sets": one arm per crop scheme (default set1..set6),
    evaluated with the matching test scheme. kind "loss_mode": unweighted
    vs inverse-frequency weighted loss, trained on set4 tiles and
    evaluated on test2.
    """
    train_dir = os.path.join(data_root, "train")
    test_dir = os.path.join(data_root, "test")
    for d in (train_dir, test_dir):
        if not os.path.isdir(d):
            raise FileNotFoundError(f"missing dataset directory {d}")
    train_pairs = datapipe.load_pairs(train_dir)
    test_pairs = datapipe.load_pairs(test_dir)

    if kind == "training_sets":
        arms = [(s, s, None) for s in (schemes or
                                       ("set1", "set2", "set3", "set4", "set5", "set6"))]
    elif kind == "loss_mode":
        arms = [("unweighted", "set4", "unweighted"),
                ("weighted", "set4", "inverse_frequency")]
    else:
        raise ValueError(f"unknown ablation kind {kind!r}")

    rows = []
    for arm_name, scheme, weight_mode in arms:
        cfg = TrainConfig(**base_config.to_dict())
        if weight_mode is not None:
            cfg.weight_mode = weight_mode
        samples = datapipe.build_dataset(train_pairs, scheme, tile)
        model = build_model(model_config, Rng(cfg.seed))
        if log_stream is not None:
            print(f"ablation arm={arm_name} samples={len(samples)}",
                  file=log_stream, flush=True)
        train(model, samples, cfg, log_stream=log_stream)
        test_scheme = "test2" if scheme in ("set4", "set5", "set6") else "test1"
        report = evaluate_model(model, test_pairs, test_scheme, tile)
        rows.append({"arm": arm_name, "scheme": scheme,
                     "weight_mode": cfg.weight_mode,
                     "aggregate": report.aggregate})
    return {"kind": kind, "rows": rows}
