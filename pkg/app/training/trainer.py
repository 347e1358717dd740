"""Mini-batch SGD training loop with deep supervision and OHEM."""

import logging
import math
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, TextIO, Tuple, Union

import numpy as np
from pydantic import BaseModel

from ..core.config import settings
from ..core.errors import ArtifactIOError, DataError, NumericError
from ..data.augment import AugmentParams, augment
from ..data.dataset import CrackDataset
from ..model.checkpoint import save_checkpoint
from ..model.network import HrSegNet
from ..nn.optim import sgd_momentum_step
from .config import TrainConfig
from .losses import head_loss, total_loss
from .schedule import poly_lr

logger = logging.getLogger(__name__)

Batch = Tuple[np.ndarray, np.ndarray]


class LossRecord(BaseModel):
    iteration: int
    lr: float
    total_loss: float
    primary_loss: float
    aux_losses: List[float]


def csv_header(num_aux: int) -> str:
    aux = [f"aux{i}" for i in range(1, max(2, num_aux) + 1)]
    return ",".join(["iter", "lr", "total_loss", "primary_loss"] + aux)


def csv_row(record: LossRecord, num_aux: int) -> str:
    aux = [repr(v) for v in record.aux_losses]
    aux += [""] * (max(2, num_aux) - len(aux))
    return ",".join(
        [
            str(record.iteration),
            repr(record.lr),
            repr(record.total_loss),
            repr(record.primary_loss),
        ]
        + aux
    )


class ProgressSink(Protocol):
    def on_iteration(self, record: LossRecord) -> None: ...

    def on_checkpoint(self, path: Path, iteration: int) -> None: ...

    def close(self) -> None: ...


class LoggingSink:
    """Logs every ``interval``-th iteration and every checkpoint."""

    def __init__(self, interval: int = 10):
        self.interval = interval

    def on_iteration(self, record: LossRecord) -> None:
        if record.iteration % self.interval == 0:
            aux = " ".join(f"{v:.4f}" for v in record.aux_losses)
            logger.info(
                "iter %d lr %.6f loss %.4f primary %.4f aux [%s]",
                record.iteration, record.lr, record.total_loss, record.primary_loss, aux,
            )

    def on_checkpoint(self, path: Path, iteration: int) -> None:
        logger.info("iteration %d checkpointed to %s", iteration, path)

    def close(self) -> None:
        pass


class CsvLossSink:
    """Appends ``iter,lr,total_loss,primary_loss,aux1,aux2`` rows to a file."""

    def __init__(self, path: Union[str, Path], num_aux: int, append: bool = False):
        self.path = Path(path)
        self.num_aux = num_aux
        fresh = not (append and self.path.exists())
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh: Optional[TextIO] = open(self.path, "w" if fresh else "a", encoding="utf-8")
        except OSError as exc:
            raise ArtifactIOError(f"cannot open loss log {self.path}: {exc}") from exc
        if fresh:
            self._fh.write(csv_header(num_aux) + "\n")

    def on_iteration(self, record: LossRecord) -> None:
        if self._fh is not None:
            self._fh.write(csv_row(record, self.num_aux) + "\n")
            self._fh.flush()

    def on_checkpoint(self, path: Path, iteration: int) -> None:
        pass

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class CompositeSink:
    def __init__(self, sinks: Sequence[ProgressSink]):
        self.sinks = list(sinks)

    def on_iteration(self, record: LossRecord) -> None:
        for sink in self.sinks:
            sink.on_iteration(record)

    def on_checkpoint(self, path: Path, iteration: int) -> None:
        for sink in self.sinks:
            sink.on_checkpoint(path, iteration)

    def close(self) -> None:
        for sink in self.sinks:
            sink.close()


@dataclass
class TrainResult:
    model: HrSegNet
    history: List[LossRecord]
    iteration: int
    velocities: Dict[str, np.ndarray]
    last_checkpoint: Optional[Path] = None
    checkpoints: List[Path] = field(default_factory=list)


class Trainer:
    """Owns the model, its momentum buffers and the batch pipeline for one run."""

    def __init__(
        self,
        model: HrSegNet,
        dataset: CrackDataset,
        cfg: TrainConfig,
        augment_params: AugmentParams,
        sink: Optional[ProgressSink] = None,
        out_dir: Optional[Union[str, Path]] = None,
        start_iteration: int = 0,
        velocities: Optional[Dict[str, np.ndarray]] = None,
    ):
        if len(dataset) < cfg.batch_size:
            raise DataError(
                f"dataset has {len(dataset)} samples, fewer than batch_size {cfg.batch_size}"
            )
        if not 0 <= start_iteration <= cfg.max_iters:
            raise DataError(f"start iteration {start_iteration} outside [0, {cfg.max_iters}]")
        self.model = model
        self.dataset = dataset
        self.cfg = cfg
        self.augment_params = augment_params
        self.sink = sink or LoggingSink(cfg.log_interval)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.iteration = start_iteration
        self.params = model.parameters()
        self.decay = set(model.decay_names)
        self.velocities = {name: np.zeros_like(p) for name, p in self.params.items()}
        for name, value in (velocities or {}).items():
            if name in self.velocities and self.velocities[name].shape == value.shape:
                self.velocities[name][...] = value
        self.batches_per_epoch = len(dataset) // cfg.batch_size

    def prepare_batch(self, iteration: int) -> Batch:
        """Augmented (images, masks) for ``iteration``; a pure function of the run seed."""
        epoch, position = divmod(iteration, self.batches_per_epoch)
        order = self.dataset.epoch_order(self.cfg.seed, epoch)
        start = position * self.cfg.batch_size
        images, masks = [], []
        for slot, index in enumerate(order[start:start + self.cfg.batch_size]):
            rng = np.random.default_rng([self.cfg.seed, iteration, slot])
            sample = augment(self.dataset[int(index)], self.augment_params, rng)
            images.append(sample.image)
            masks.append(sample.mask)
        return np.concatenate(images).astype(self.model.dtype), np.concatenate(masks)

    def step(self, iteration: int, batch: Batch) -> LossRecord:
        images, masks = batch
        cfg = self.cfg
        out = self.model.forward(images, "train")
        primary = head_loss(out.primary, masks, cfg.ohem)
        aux = [head_loss(logits, masks, cfg.ohem) for logits in out.aux]
        total = total_loss(primary.loss, [a.loss for a in aux], cfg.alpha)
        if not math.isfinite(total):
            self.model.clear_cache()
            raise NumericError(f"non-finite loss {total} at iteration {iteration}")

        grads = self.model.backward(primary.grad, [cfg.alpha * a.grad for a in aux])
        lr = poly_lr(iteration, cfg)
        for name, param in self.params.items():
            decay = cfg.weight_decay if name in self.decay else 0.0
            sgd_momentum_step(param, grads[name], self.velocities[name], lr, cfg.momentum, decay)
        return LossRecord(
            iteration=iteration,
            lr=lr,
            total_loss=total,
            primary_loss=primary.loss,
            aux_losses=[a.loss for a in aux],
        )

    def _checkpoint(self, name: str, result: TrainResult) -> None:
        if self.out_dir is None:
            return
        path = save_checkpoint(
            self.model, self.out_dir / name, iteration=self.iteration, velocities=self.velocities
        )
        result.checkpoints.append(path)
        result.last_checkpoint = path
        self.sink.on_checkpoint(path, self.iteration)

    def run(self) -> TrainResult:
        cfg = self.cfg
        result = TrainResult(
            model=self.model, history=[], iteration=self.iteration, velocities=self.velocities
        )
        workers = 0 if settings.deterministic else settings.data_workers
        pool = ThreadPoolExecutor(max_workers=workers) if workers else None
        logger.info(
            "training from iteration %d to %d (batch %d, %d batches per epoch, %s)",
            self.iteration, cfg.max_iters, cfg.batch_size, self.batches_per_epoch,
            f"{workers} data workers" if pool else "single-threaded data",
        )
        try:
            pending: Optional[Future] = None
            if pool is not None and self.iteration < cfg.max_iters:
                pending = pool.submit(self.prepare_batch, self.iteration)
            while self.iteration < cfg.max_iters:
                it = self.iteration
                if pool is not None and pending is not None:
                    batch = pending.result()
                    pending = None
                    if it + 1 < cfg.max_iters:
                        pending = pool.submit(self.prepare_batch, it + 1)
                else:
                    batch = self.prepare_batch(it)
                record = self.step(it, batch)
                result.history.append(record)
                self.sink.on_iteration(record)
                self.iteration = it + 1
                result.iteration = self.iteration
                if cfg.checkpoint_interval and self.iteration % cfg.checkpoint_interval == 0:
                    self._checkpoint(f"checkpoint_{self.iteration:06d}.hrsg", result)
            self._checkpoint("checkpoint_final.hrsg", result)
        finally:
            if pool is not None:
                pool.shutdown(wait=True, cancel_futures=True)
            self.sink.close()
        return result


def train_loop(
    model: HrSegNet,
    dataset: CrackDataset,
    cfg: TrainConfig,
    sink: Optional[ProgressSink] = None,
    augment_params: Optional[AugmentParams] = None,
    out_dir: Optional[Union[str, Path]] = None,
    start_iteration: int = 0,
    velocities: Optional[Dict[str, np.ndarray]] = None,
) -> TrainResult:
    """Train ``model`` on ``dataset`` from ``start_iteration`` up to ``cfg.max_iters``."""
    if augment_params is None:
        augment_params = AugmentParams.identity(dataset[0].size)
    try:
        trainer = Trainer(
            model, dataset, cfg, augment_params, sink=sink, out_dir=out_dir,
            start_iteration=start_iteration, velocities=velocities,
        )
    except Exception:
        # run() owns the sink only once the trainer exists
        if sink is not None:
            sink.close()
        raise
    return trainer.run()
