"""Seeded Adam training, prediction and checkpoints."""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from ..errors import DivergedLoss, EmptyInput, ShapeMismatch
from ..volio import read_container, write_container
from .loss import loss_bce_dice
from .unet import UNet3D, UNetConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 40
    batch_size: int = 1
    seed: int = 0
    bce_weight: float = 1.0
    dice_weight: float = 1.0
    max_steps: int | None = None
    select_best: bool = True   # keep the weights with the lowest validation loss

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class TrainResult:
    step_loss: list = field(default_factory=list)
    epoch_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int | None = None


def _stack(items, idx):
    x = torch.from_numpy(np.stack([items[i][0] for i in idx]).astype(np.float32))
    y = torch.from_numpy(np.stack([items[i][1] for i in idx]).astype(np.float32))
    return x, y


def evaluate_loss(model, dataset, cfg=None):
    cfg = cfg or TrainConfig()
    model.eval()
    total = 0.0
    with torch.no_grad():
        for i in range(len(dataset)):
            x, y = _stack(dataset, [i])
            total += float(loss_bce_dice(model(x), y, cfg.bce_weight, cfg.dice_weight))
    return total / max(len(dataset), 1)


def train(model, dataset, cfg=None, val_dataset=None):
    """Train ``model`` in place on ``dataset`` (a sequence of ``(x, y)`` arrays).

    ``x`` is ``(C, D, H, W)`` and ``y`` the two-channel binary target. Runs
    single-threaded; with a fixed seed the loss history is bit-reproducible.
    """
    cfg = cfg or TrainConfig()
    dataset = list(dataset)
    if not dataset:
        raise EmptyInput("training dataset is empty")
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        return _train(model, dataset, cfg, val_dataset)
    finally:
        torch.set_num_threads(threads)


def _train(model, dataset, cfg, val_dataset):
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
                           eps=cfg.adam_eps)
    result = TrainResult()
    best = (float("inf"), None)
    step = 0
    for epoch in range(cfg.epochs):
        model.train()
        order = torch.randperm(len(dataset), generator=gen).tolist()
        losses = []
        for b in range(0, len(order), cfg.batch_size):
            x, y = _stack(dataset, order[b:b + cfg.batch_size])
            opt.zero_grad(set_to_none=True)
            loss = loss_bce_dice(model(x), y, cfg.bce_weight, cfg.dice_weight)
            value = loss.detach().item()
            if not np.isfinite(value):
                raise DivergedLoss(f"non-finite loss {value} at epoch {epoch}, step {step}")
            loss.backward()
            opt.step()
            losses.append(value)
            result.step_loss.append(value)
            step += 1
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
        result.epoch_loss.append(float(np.mean(losses)))
        if val_dataset:
            vl = evaluate_loss(model, val_dataset, cfg)
            result.val_loss.append(vl)
            if cfg.select_best and vl < best[0]:
                best = (vl, copy.deepcopy(model.state_dict()))
                result.best_epoch = epoch
        log.debug("epoch %d loss %.4f", epoch, result.epoch_loss[-1])
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
    if best[1] is not None:
        model.load_state_dict(best[1])
    return result


def predict(model, x):
    """Per-channel sigmoid probabilities for ``x`` of shape (C, D, H, W) or (B, C, D, H, W)."""
    arr = np.asarray(x, dtype=np.float32)
    single = arr.ndim == 4
    if single:
        arr = arr[None]
    if arr.ndim != 5:
        raise ShapeMismatch(f"predict expects 4-D or 5-D input, got {arr.shape}")
    model.eval()
    with torch.no_grad():
        probs = torch.sigmoid(model(torch.from_numpy(arr))).numpy()
    return probs[0] if single else probs


def save_checkpoint(model, path, extra=None):
    """Native container: JSON layer manifest + concatenated float32 blobs."""
    layers, blobs, offset = [], [], 0
    for name, t in model.state_dict().items():
        a = t.detach().cpu().numpy().astype("<f4").ravel()
        layers.append({"name": name, "shape": list(t.shape), "offset": offset,
                       "count": int(a.size), "dtype": str(t.dtype).replace("torch.", "")})
        blobs.append(a.tobytes())
        offset += a.size
    header = {"kind": "checkpoint", "dtype": "f4", "config": model.cfg.to_dict(),
              "layers": layers, "extra": extra or {}}
    write_container(path, header, b"".join(blobs))


def load_checkpoint(path):
    header, payload = read_container(path)
    cfg = UNetConfig(**header["config"])
    model = UNet3D(cfg)
    flat = np.frombuffer(payload, dtype="<f4")
    state = {}
    for layer in header["layers"]:
        a = flat[layer["offset"]:layer["offset"] + layer["count"]].reshape(layer["shape"])
        state[layer["name"]] = torch.from_numpy(a.copy()).to(getattr(torch, layer["dtype"]))
    model.load_state_dict(state)
    model.eval()
    return model, header.get("extra", {})


def config_to_dict(cfg):
    return asdict(cfg)
