"""Residual-network binary classifier and its two-stage fine-tuning schedule."""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
import torchvision
from torch import nn

from .ingest import AugmentBounds, LabeledExample, apply_augment, preprocess, sample_augment
from .synth import load_png16

log = logging.getLogger(__name__)

RESNET18_STAGES = ((64, 2), (128, 2), (256, 2), (512, 2))
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class EmptyDataset(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class UnavailablePretrainedWeights(RuntimeWarning):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 256
    depth_spec: tuple[tuple[int, int], ...] = RESNET18_STAGES
    head_width: int = 512
    dropout_p: float = 0.35
    num_classes: int = 2
    pretrained: bool = False

    def __post_init__(self):
        object.__setattr__(self, "depth_spec", tuple(tuple(s) for s in self.depth_spec))
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        if self.head_width < 1:
            raise ValueError("head_width must be positive")
        if self.depth_spec != RESNET18_STAGES:
            raise ValueError(f"depth_spec must be the 18-layer pattern {RESNET18_STAGES}")
        if self.num_classes != 2:
            raise ValueError("only binary classification is supported")


@dataclass(frozen=True)
class TrainConfig:
    epochs_stage1: int = 10
    lr_stage1: float = 1e-3
    epochs_stage2: int = 10
    lr_stage2: float = 1e-4
    momentum: float = 0.9
    batch_size: int = 4
    weight_decay: float = 0.0
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if self.lr_stage1 < 0 or self.lr_stage2 < 0:
            raise ValueError("learning rates must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


class ScreenNet(nn.Module):
    """ResNet-18 trunk with a single hidden fully connected layer as head.

    ``forward`` returns the two pre-softmax class scores; class 1 is Aβ.
    """

    def __init__(self, config: ModelConfig, in_channels: int = 1, trunk_state: dict | None = None):
        super().__init__()
        self.config = config
        self.in_channels = in_channels
        trunk = torchvision.models.resnet18(weights=None)
        if trunk_state is not None:
            trunk.load_state_dict(trunk_state)
        if in_channels == 1:
            trunk.conv1 = nn.Conv2d(1, 64, kernel_size=7, stride=2, padding=3, bias=False)
        self.stem = nn.Sequential(trunk.conv1, trunk.bn1, trunk.relu, trunk.maxpool)
        self.layer1, self.layer2, self.layer3, self.layer4 = (
            trunk.layer1, trunk.layer2, trunk.layer3, trunk.layer4)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Sequential(
            nn.Linear(512, config.head_width),
            nn.ReLU(inplace=True),
            nn.Dropout(config.dropout_p),
            nn.Linear(config.head_width, config.num_classes),
        )
        if self.in_channels == 3:
            self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
            self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))

    @property
    def cam_layer(self) -> nn.Module:
        return self.layer4

    def last_stage_parameters(self):
        yield from self.layer4.parameters()
        yield from self.head.parameters()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim == 3:
            x = x[:, None]
        if self.in_channels == 3:
            x = (x.expand(-1, 3, -1, -1) - self.mean) / self.std
        x = self.stem(x)
        x = self.layer4(self.layer3(self.layer2(self.layer1(x))))
        return self.head(torch.flatten(self.pool(x), 1))

    def probabilities(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.forward(x), dim=1)


def build_model(config: ModelConfig = ModelConfig(), seed: int = 0) -> ScreenNet:
    """Construct the classifier with seeded initialization.

    With ``pretrained=True`` the ImageNet weights are requested from
    torchvision; if they cannot be obtained a warning is issued and the
    network starts from random weights.
    """
    state = None
    if config.pretrained:
        try:
            state = torchvision.models.ResNet18_Weights.IMAGENET1K_V1.get_state_dict(progress=False)
        except Exception as exc:  # offline, missing cache, ...
            warnings.warn(f"pretrained weights unavailable ({exc}); using random init",
                          UnavailablePretrainedWeights)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        # grayscale is replicated to three planes only when ImageNet weights are in use
        model = ScreenNet(config, in_channels=3 if state is not None else 1, trunk_state=state)
    return model


class ImageSet:
    """Labelled single-channel images held in memory."""

    def __init__(self, images: np.ndarray, labels: Sequence[int], meta: Sequence | None = None):
        self.images = np.asarray(images, dtype=np.float32)
        self.labels = np.asarray(labels, dtype=np.int64)
        if self.images.ndim != 3 or len(self.images) != len(self.labels):
            raise ValueError("images must be (N, H, W) with one label each")
        self.meta = list(meta) if meta is not None else [None] * len(self.labels)
        self._eval_cache: dict[int, torch.Tensor] = {}

    @classmethod
    def from_examples(cls, examples: Sequence[LabeledExample]) -> "ImageSet":
        if not examples:
            return cls(np.zeros((0, 1, 1)), [], [])
        images = np.stack([load_png16(e.path).astype(np.float32) for e in examples])
        return cls(images, [e.label for e in examples], examples)

    def __len__(self) -> int:
        return len(self.labels)

    def eval_tensor(self, input_size: int) -> torch.Tensor:
        if input_size not in self._eval_cache:
            self._eval_cache[input_size] = torch.from_numpy(
                np.stack([preprocess(im, input_size) for im in self.images]))
        return self._eval_cache[input_size]


@dataclass
class EpochMetrics:
    stage: int
    epoch: int
    train_loss: float
    train_acc: float
    valid_loss: float | None
    valid_acc: float | None
    lr: float


@dataclass
class TrainReport:
    epochs: list[EpochMetrics] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def final(self) -> EpochMetrics | None:
        return self.epochs[-1] if self.epochs else None

    def extend(self, other: "TrainReport") -> "TrainReport":
        self.epochs.extend(other.epochs)
        self.config.update(other.config)
        return self

    def to_dict(self) -> dict:
        return {"epochs": [asdict(e) for e in self.epochs],
                "final": asdict(self.final) if self.final else None,
                "config": self.config}

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    def append_csv(self, path) -> None:
        path = Path(path)
        new = not path.exists()
        with open(path, "a", newline="") as fh:
            w = csv.writer(fh)
            if new:
                w.writerow(["stage", "epoch", "train_loss", "train_acc", "valid_loss", "valid_acc", "lr"])
            for e in self.epochs:
                w.writerow([e.stage, e.epoch, e.train_loss, e.train_acc, e.valid_loss, e.valid_acc, e.lr])


# A schedule maps (step, total_steps) to a multiplier on the stage learning rate.
LRSchedule = Callable[[int, int], float]


def constant_schedule(step: int, total_steps: int) -> float:
    return 1.0


def set_stage(model: ScreenNet, stage: int) -> None:
    """Stage 1: only the last residual stage and head train; stage 2: everything."""
    for p in model.parameters():
        p.requires_grad_(stage == 2)
    if stage == 1:
        for p in model.last_stage_parameters():
            p.requires_grad_(True)


def _item_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _train_batches(data: ImageSet, input_size: int, cfg: TrainConfig, stage: int, epoch: int):
    rng = np.random.default_rng(_item_seed(cfg.seed, stage, epoch))
    order = rng.permutation(len(data))
    crop = AugmentBounds().crop_frac
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        batch = []
        for i in idx:
            if cfg.augment:
                params = sample_augment(np.random.default_rng(_item_seed(cfg.seed, stage, epoch, int(i))))
                batch.append(apply_augment(data.images[i], params, input_size))
            else:
                batch.append(preprocess(data.images[i], input_size, crop))
        yield torch.from_numpy(np.stack(batch)), torch.from_numpy(data.labels[idx])


def train_stage(model: ScreenNet, train_data: ImageSet, valid_data: ImageSet | None,
                cfg: TrainConfig, stage: int, schedule: LRSchedule = constant_schedule) -> TrainReport:
    if len(train_data) == 0:
        raise EmptyDataset("no training examples")
    epochs = cfg.epochs_stage1 if stage == 1 else cfg.epochs_stage2
    base_lr = cfg.lr_stage1 if stage == 1 else cfg.lr_stage2
    input_size = model.config.input_size
    set_stage(model, stage)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.SGD(params, lr=base_lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    steps_per_epoch = math.ceil(len(train_data) / cfg.batch_size)
    total = epochs * steps_per_epoch
    report = TrainReport(config={"train": asdict(cfg), "model": asdict(model.config)})
    torch.manual_seed(_item_seed(cfg.seed, stage) % (2 ** 31))

    step = 0
    for epoch in range(epochs):
        if base_lr == 0:
            # nothing can change; skip the pass so batch-norm statistics stay put
            train_loss, train_acc = evaluate(model, train_data)
        else:
            model.train()
            loss_sum, correct, seen = 0.0, 0, 0
            for x, y in _train_batches(train_data, input_size, cfg, stage, epoch):
                for g in opt.param_groups:
                    g["lr"] = base_lr * schedule(step, total)
                logits = model(x)
                loss = F.cross_entropy(logits, y)
                opt.zero_grad()
                loss.backward()
                opt.step()
                step += 1
                loss_sum += loss.item() * len(y)
                correct += int((logits[:, 1] > logits[:, 0]).eq(y.bool()).sum())
                seen += len(y)
            train_loss, train_acc = loss_sum / seen, correct / seen
        v_loss = v_acc = None
        if valid_data is not None and len(valid_data):
            v_loss, v_acc = evaluate(model, valid_data)
        report.epochs.append(EpochMetrics(stage, epoch, train_loss, train_acc, v_loss, v_acc, base_lr))
        log.info("stage %d epoch %d: train %.4f/%.4f valid %s/%s", stage, epoch,
                 train_loss, train_acc, v_loss, v_acc)
    model.eval()
    return report


def train_stage1(model, train_data, valid_data, cfg: TrainConfig, schedule: LRSchedule = constant_schedule):
    return train_stage(model, train_data, valid_data, cfg, 1, schedule)


def train_stage2(model, train_data, valid_data, cfg: TrainConfig, schedule: LRSchedule = constant_schedule):
    return train_stage(model, train_data, valid_data, cfg, 2, schedule)


def fit(model, train_data, valid_data, cfg: TrainConfig) -> TrainReport:
    report = train_stage1(model, train_data, valid_data, cfg)
    return report.extend(train_stage2(model, train_data, valid_data, cfg))


@torch.no_grad()
def logits_of(model: nn.Module, x: torch.Tensor, batch_size: int = 32) -> torch.Tensor:
    model.eval()
    return torch.cat([model(x[i:i + batch_size]) for i in range(0, len(x), batch_size)])


def metrics_from_probs(probs, labels) -> tuple[float, float]:
    """Cross-entropy and accuracy; a 0.5/0.5 tie counts as class 0."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise EmptyDataset("no examples to evaluate")
    p_true = probs[np.arange(len(labels)), labels]
    loss = float(-np.mean(np.log(np.clip(p_true, 1e-300, None))))
    pred = (probs[:, 1] > probs[:, 0]).astype(int)
    return loss, float(np.mean(pred == labels))


def evaluate(model: ScreenNet, data: ImageSet) -> tuple[float, float]:
    if len(data) == 0:
        raise EmptyDataset("no examples to evaluate")
    logits = logits_of(model, data.eval_tensor(model.config.input_size))
    labels = torch.from_numpy(data.labels)
    loss = F.cross_entropy(logits, labels).item()
    acc = (logits[:, 1] > logits[:, 0]).eq(labels.bool()).float().mean().item()
    return loss, acc


def _check_shape(model: ScreenNet, arr: np.ndarray) -> None:
    n = model.config.input_size
    if arr.shape[-2:] != (n, n):
        raise ShapeMismatch(f"expected {n}x{n} input, got {arr.shape[-2:]}; run preprocess() first")


def predict_batch(model: ScreenNet, images: np.ndarray) -> np.ndarray:
    """Aβ-class probability for each preprocessed image."""
    images = np.asarray(images, dtype=np.float32)
    _check_shape(model, images)
    probs = torch.softmax(logits_of(model, torch.from_numpy(images)), dim=1)
    return probs[:, 1].numpy().astype(np.float64)


def predict(model: ScreenNet, image: np.ndarray) -> float:
    return float(predict_batch(model, np.asarray(image)[None])[0])


def save_checkpoint(path, model: ScreenNet, train_config: TrainConfig | None = None,
                    split_digest: str | None = None, extra: dict | None = None) -> None:
    torch.save({
        "state_dict": model.state_dict(),
        "model_config": asdict(model.config),
        "in_channels": model.in_channels,
        "train_config": asdict(train_config) if train_config else None,
        "split_hash": split_digest,
        "extra": extra or {},
    }, path)


def load_checkpoint(path) -> tuple[ScreenNet, dict]:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    model = ScreenNet(ModelConfig(**ckpt["model_config"]), in_channels=ckpt["in_channels"])
    model.load_state_dict(ckpt["state_dict"])
    model.eval()
    return model, ckpt


def score_records(model: ScreenNet, records, batch_size: int = 32):
    """Aβ scores for manifest records, as ``ImageScore`` objects."""
    from .screening import ImageScore

    records = list(records)
    out = []
    n = model.config.input_size
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        batch = np.stack([preprocess(load_png16(r.path).astype(np.float32), n) for r in chunk])
        for rec, s in zip(chunk, predict_batch(model, batch)):
            out.append(ImageScore(rec.plate_id, rec.well, rec.field, float(np.clip(s, 0.0, 1.0))))
    return out
