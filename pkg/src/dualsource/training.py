"""Training loop shared by the dual-source model and the LSTM baseline."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .batching import dynamic_batches

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    warmup: int = 0
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    max_tokens: int = 4096
    max_steps: int = 2000
    validation_interval: int = 100
    patience: int = 10
    keep_checkpoints: int = 4
    seed: int = 0
    target_loss: float | None = None
    log_every: int = 10

    def to_dict(self) -> dict:
        return asdict(self)


TRAIN_PRESETS = {
    # inverse-sqrt warmup for the Transformer, constant rate for the LSTM
    ("dual", "desk"): TrainConfig(lr=2e-3, warmup=100, max_tokens=2048, max_steps=2000, validation_interval=50, patience=10),
    ("dual", "paper"): TrainConfig(lr=3e-4, warmup=4000, max_tokens=16384, max_steps=10**9, validation_interval=10_000, patience=10),
    ("basic", "desk"): TrainConfig(lr=3e-3, warmup=0, max_tokens=2048, max_steps=4000, validation_interval=100, patience=10),
    ("basic", "paper"): TrainConfig(lr=1e-3, warmup=0, max_tokens=16384, max_steps=10**9, validation_interval=10_000, patience=10),
}


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Snapshot:
    step: int
    valid_loss: float
    state: dict[str, np.ndarray]
    path: Path | None = None


@dataclass
class TrainResult:
    steps: int
    best: Snapshot | None
    final: Snapshot | None
    snapshots: list[Snapshot]
    losses: list[float]
    validations: list[tuple[int, float]]
    stop_reason: str
    nan_steps: int = 0
    extra: dict = field(default_factory=dict)


class Trainer:
    """Token-budget batches, Adam, periodic validation with patience.

    ``model`` needs ``parameters()``, ``loss(batch, rng)``, ``state()`` and
    ``load_state()``; ``collate`` turns a list of examples into its batch.
    """

    def __init__(
        self,
        model,
        train_examples: Sequence,
        valid_examples: Sequence,
        collate: Callable,
        cfg: TrainConfig,
        outdir=None,
        meta: dict | None = None,
        use_dropout: bool = True,
    ):
        if not train_examples:
            raise ValueError("no training examples")
        self.model = model
        self.cfg = cfg
        self.collate = collate
        self.train_examples = list(train_examples)
        self.valid_batches = [collate(b) for b in dynamic_batches(list(valid_examples), cfg.max_tokens)]
        self.opt = T.Adam(model.parameters(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, warmup=cfg.warmup)
        self.rng = np.random.default_rng(cfg.seed) if use_dropout else None
        self.outdir = Path(outdir) if outdir is not None else None
        self.meta = meta or {}
        self.nan_steps = 0
        self.step = 0
        self._log = None

    def train_step(self, batch) -> float:
        """One teacher-forced update; a non-finite loss skips the update and halves the lr."""
        with T.Tape() as tape:
            loss = self.model.loss(batch, rng=self.rng)
        value = float(loss.data)
        if not math.isfinite(value):
            self.nan_steps += 1
            self.opt.lr *= 0.5
            logger.warning("non-finite loss at step %d; skipped, lr halved to %g", self.step, self.opt.lr)
            return value
        tape.backward(loss)
        self.opt.step()
        self.step += 1
        return value

    def validate(self) -> float:
        total = 0.0
        tokens = 0
        for batch in self.valid_batches:
            n = int(batch.target_mask.sum())
            total += float(self.model.loss(batch, rng=None, label_smoothing=0.0).data) * n
            tokens += n
        return total / max(tokens, 1)

    def _epochs(self):
        epoch = 0
        while True:
            for group in dynamic_batches(self.train_examples, self.cfg.max_tokens, seed=self.cfg.seed + epoch):
                yield self.collate(group)
            epoch += 1

    def _snapshot(self, valid_loss: float, tag: str | None = None) -> Snapshot:
        state = {k: v.copy() for k, v in self.model.state().items()}
        snap = Snapshot(self.step, valid_loss, state)
        if self.outdir is not None:
            snap.path = self.outdir / (tag or f"ckpt-step{self.step:07d}.bin")
            T.save_checkpoint(snap.path, list(self.model.parameters()), self.step,
                              dict(self.meta, valid_loss=valid_loss))
        return snap

    def _write_log(self, record: dict) -> None:
        if self._log is not None:
            self._log.write(json.dumps(record, sort_keys=True) + "\n")

    def fit(self, on_validation: Callable[[int, float], bool] | None = None) -> TrainResult:
        """Train until patience runs out, ``max_steps`` or ``target_loss``.

        ``on_validation(step, valid_loss)`` may return True to stop early.
        """
        cfg = self.cfg
        if self.outdir is not None:
            self.outdir.mkdir(parents=True, exist_ok=True)
            self._log = open(self.outdir / "train_log.jsonl", "w", encoding="utf-8")
        losses: list[float] = []
        validations: list[tuple[int, float]] = []
        kept: list[Snapshot] = []
        best: Snapshot | None = None
        bad = 0
        initial: float | None = None
        blowups = 0
        reason = "max_steps"
        t0 = time.perf_counter()
        tokens = 0
        try:
            batches = self._epochs()
            while self.step < cfg.max_steps:
                batch = next(batches)
                lr = self.opt.current_lr()
                loss = self.train_step(batch)
                losses.append(loss)
                if not math.isfinite(loss):
                    if self.nan_steps >= 10:
                        raise TrainingDiverged(f"{self.nan_steps} non-finite losses; giving up")
                    continue
                tokens += int(batch.target_mask.sum())
                if self.step % cfg.log_every == 0 and math.isfinite(loss):
                    dt = time.perf_counter() - t0
                    self._write_log({"step": self.step, "loss": loss, "lr": lr,
                                     "tokens_per_s": tokens / dt if dt > 0 else 0.0})
                if self.step == 0 or self.step % cfg.validation_interval:
                    continue
                vl = self.validate()
                validations.append((self.step, vl))
                self._write_log({"step": self.step, "valid_loss": vl})
                if initial is None:
                    initial = vl
                blowups = blowups + 1 if vl > 2 * initial else 0
                if blowups >= 3:
                    raise TrainingDiverged(
                        f"validation loss {vl:.4g} above twice the initial {initial:.4g} for 3 validations"
                    )
                if len(kept) < cfg.keep_checkpoints or vl < kept[-1].valid_loss:
                    kept.append(self._snapshot(vl))
                    kept.sort(key=lambda s: (s.valid_loss, -s.step))
                    for old in kept[cfg.keep_checkpoints:]:
                        if old.path is not None and old.path.exists():
                            old.path.unlink()
                    kept = kept[: cfg.keep_checkpoints]
                if best is None or vl < best.valid_loss:
                    bad = 0
                    best = kept[0]
                else:
                    bad += 1
                    if bad >= cfg.patience:
                        reason = "patience"
                        break
                if cfg.target_loss is not None and vl <= cfg.target_loss:
                    reason = "target_loss"
                    break
                if on_validation is not None and on_validation(self.step, vl):
                    reason = "callback"
                    break
            final_vl = self.validate() if self.valid_batches else float("nan")
            final = self._snapshot(final_vl, "final.bin")
            if best is None or (final_vl < best.valid_loss and final.step != best.step):
                best = final
                kept = sorted(kept + [final], key=lambda s: (s.valid_loss, -s.step))[: cfg.keep_checkpoints]
            if self.outdir is not None and best.path is not None:
                (self.outdir / "best.bin").write_bytes(best.path.read_bytes())
        finally:
            if self._log is not None:
                self._log.close()
                self._log = None
        return TrainResult(self.step, best, final, kept, losses, validations, reason, self.nan_steps)
