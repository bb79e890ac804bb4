"""Generic training loop: Adam + plateau decay + early stopping.

Models plug in through a small protocol:

  parameters()    -> dict[name, ndarray]   live parameter references
  gradients()     -> dict[name, ndarray]   gradients matching parameters()
  zero_grads()
  train_step(batch) -> float               forward + backward on one batch
  val_loss(data)  -> float
  state_dict()    -> list[(name, ndarray)] deep copies
  load_state_dict(state)

``train_data`` and ``val_data`` are whatever the model's train_step/val_loss
expect elementwise; the loop only shuffles indices and slices batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyDatasetError, TrainingDivergedError


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 200
    plateau_patience: int = 10
    lr_decay: float = 0.2
    early_stop_patience: int = 15


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    learning_rate: float


@dataclass
class TrainResult:
    state: list
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf


def _take(data, indices):
    if isinstance(data, np.ndarray):
        return data[indices]
    return [data[i] for i in indices]


def train_loop(model, train_data, val_data, config: TrainConfig, seed: int) -> TrainResult:
    """Train until the epoch cap or 15 stagnant validation epochs.

    Learning rate decays by 0.2 after 10 epochs without validation
    improvement. The returned state (also restored into the model) is the
    one with the lowest validation loss. Fully deterministic given seed.
    """
    n = len(train_data)
    if n == 0 or len(val_data) == 0:
        raise EmptyDatasetError("train and validation sets must be non-empty")
    rng = np.random.default_rng(seed)
    from .optim import Adam

    opt = Adam(model.parameters(), learning_rate=config.learning_rate)
    result = TrainResult(state=model.state_dict())
    stale = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        count = 0
        for start in range(0, n, config.batch_size):
            batch = _take(train_data, order[start:start + config.batch_size])
            model.zero_grads()
            loss = model.train_step(batch)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"training loss became non-finite at epoch {epoch}",
                    history=result.history, last_state=result.state)
            opt.step(model.gradients())
            total += loss * len(batch)
            count += len(batch)
        val = float(model.val_loss(val_data))
        if not math.isfinite(val):
            raise TrainingDivergedError(
                f"validation loss became non-finite at epoch {epoch}",
                history=result.history, last_state=result.state)
        result.history.append(EpochRecord(epoch, total / count, val, opt.learning_rate))
        if val < result.best_val_loss:
            result.best_val_loss = val
            result.best_epoch = epoch
            result.state = model.state_dict()
            stale = 0
        else:
            stale += 1
            if stale == config.plateau_patience:
                opt.learning_rate *= config.lr_decay
            if stale >= config.early_stop_patience:
                break
    model.load_state_dict(result.state)
    return result
