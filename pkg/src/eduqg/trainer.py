"""The two training stages: continued pre-training on corrupted abstracts and
supervised fine-tuning on QG pairs.

Batch order, span corruption, and dropout are all pure functions of the
training seed, so a (spec, seed) pair reruns to bit-identical parameters and
an interrupted run can resume from the optimizer state carried inside the
checkpoint.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

import torch
import yaml

from .datasets import DatasetSplit, Document
from .model import Checkpoint, StageRecord, compute_batch_loss, pad_batch
from .textproc import (
    DEFAULT_MAX_INPUT_LEN,
    DEFAULT_MAX_TARGET_LEN,
    DEFAULT_QG_PREFIX,
    TokenSequence,
    corrupt_spans,
    make_qg_pair,
)

logger = logging.getLogger(__name__)


class Stage(str, Enum):
    PRETRAIN = "pretrain"
    FINETUNE = "finetune"


@dataclass
class TrainSpec:
    stage: Stage
    dataset_id: str
    batch_size: int = 8
    steps: int | None = None
    epochs: int | None = None
    learning_rate: float = 1e-4
    schedule: str = "constant"        # "constant" | "inverse_sqrt"
    warmup_steps: int = 100
    seed: int = 0
    log_every: int = 10
    eval_every: int | None = None
    grad_clip: float | None = 1.0
    resume: bool = False
    # data shaping
    corruption_rate: float = 0.15
    mean_span_len: float = 3.0
    qg_prefix: str = DEFAULT_QG_PREFIX
    max_input_len: int = DEFAULT_MAX_INPUT_LEN
    max_target_len: int = DEFAULT_MAX_TARGET_LEN

    def __post_init__(self):
        self.stage = Stage(self.stage)
        if (self.steps is None) == (self.epochs is None):
            raise ValueError("exactly one of steps/epochs must be set")
        budget = self.steps if self.steps is not None else self.epochs
        if budget < 0:
            raise ValueError("training budget must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.schedule not in ("constant", "inverse_sqrt"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainSpec":
        payload = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        return cls(**payload)

    def to_file(self, path: str | Path) -> None:
        payload = {k: (v.value if isinstance(v, Enum) else v) for k, v in vars(self).items()}
        Path(path).write_text(yaml.safe_dump(payload, sort_keys=True), encoding="utf-8")


@dataclass
class TrainRecord:
    step: int
    loss: float
    learning_rate: float
    wall_time: float


@dataclass
class TrainLog:
    records: list[TrainRecord] = field(default_factory=list)

    def append(self, record: TrainRecord) -> None:
        if self.records and record.step <= self.records[-1].step:
            raise ValueError("log steps must be strictly increasing")
        self.records.append(record)

    def write_csv(self, path: str | Path) -> None:
        lines = ["step,loss,lr,wall_time"]
        lines += [f"{r.step},{r.loss!r},{r.learning_rate!r},{r.wall_time!r}" for r in self.records]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read_csv(cls, path: str | Path) -> "TrainLog":
        log = cls()
        lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
        for line in lines[1:]:
            step, loss_val, lr, wall = line.split(",")
            log.append(TrainRecord(int(step), float(loss_val), float(lr), float(wall)))
        return log


def _stable_int(*parts) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).hexdigest()
    return int(digest[:12], 16)


def _epoch_permutation(seed: int, epoch: int, n: int) -> list[int]:
    order = list(range(n))
    random.Random(f"shuffle:{seed}:{epoch}").shuffle(order)
    return order


def learning_rate_at(spec: TrainSpec, step: int) -> float:
    """LR for the (0-based) upcoming step under the spec's schedule."""
    if spec.schedule == "constant":
        return spec.learning_rate
    w = max(1, spec.warmup_steps)
    s = step + 1
    return spec.learning_rate * min(s / w, math.sqrt(w / s))


def pretrain(ckpt: Checkpoint, docs: Iterable[Document], spec: TrainSpec) -> tuple[Checkpoint, TrainLog]:
    """Continue the denoising objective on a stream of abstracts."""
    if spec.stage is not Stage.PRETRAIN:
        raise ValueError(f"pretrain called with stage={spec.stage.value}")
    sequences = []
    for doc in docs:
        seq = ckpt.tokenizer.encode(doc.abstract).truncated(spec.max_input_len)
        if len(seq) >= 2:  # corruption must leave at least one survivor
            sequences.append(seq)
    if not sequences:
        raise ValueError("no usable documents in the pre-training stream")

    def pair_at(epoch: int, index: int):
        pair = corrupt_spans(sequences[index], spec.corruption_rate, spec.mean_span_len,
                             seed=f"{spec.seed}:{epoch}:{index}", tokenizer=ckpt.tokenizer)
        return pair.input, pair.target

    return _run_stage(ckpt, len(sequences), pair_at, spec)


def finetune(ckpt: Checkpoint, split: DatasetSplit, spec: TrainSpec) -> tuple[Checkpoint, TrainLog]:
    """Supervised fine-tuning on (context -> question) pairs."""
    if spec.stage is not Stage.FINETUNE:
        raise ValueError(f"finetune called with stage={spec.stage.value}")
    if not split.examples:
        raise ValueError(f"fine-tuning split {split.name.value!r} is empty")
    pairs = [
        make_qg_pair(ex, ckpt.tokenizer, prefix=spec.qg_prefix,
                     max_input_len=spec.max_input_len, max_target_len=spec.max_target_len)
        for ex in split.examples
    ]

    def pair_at(epoch: int, index: int):
        return pairs[index]

    return _run_stage(ckpt, len(pairs), pair_at, spec)


def _run_stage(
    ckpt: Checkpoint,
    n_examples: int,
    pair_at: Callable[[int, int], tuple[TokenSequence, TokenSequence]],
    spec: TrainSpec,
) -> tuple[Checkpoint, TrainLog]:
    module = ckpt.clone_module()
    module.train()
    optimizer = torch.optim.Adam(module.parameters(), lr=spec.learning_rate)

    steps_per_epoch = max(1, math.ceil(n_examples / spec.batch_size))
    budget = spec.steps if spec.steps is not None else spec.epochs * steps_per_epoch

    start_step = 0
    if spec.resume:
        if ckpt.trainer_state is None:
            raise ValueError("resume requested but the checkpoint carries no trainer state")
        optimizer.load_state_dict(ckpt.trainer_state["optimizer"])
        start_step = int(ckpt.trainer_state["step"])
        torch.set_rng_state(ckpt.trainer_state["torch_rng"])
    else:
        torch.manual_seed(_stable_int("train", spec.seed))

    log = TrainLog()
    t_start = time.monotonic()
    perm_epoch, perm = -1, []
    for step in range(start_step, start_step + budget):
        epoch, position = divmod(step, steps_per_epoch)
        if epoch != perm_epoch:
            perm = _epoch_permutation(spec.seed, epoch, n_examples)
            perm_epoch = epoch
        indices = perm[position * spec.batch_size:(position + 1) * spec.batch_size]
        batch = [pair_at(epoch, i) for i in indices]

        lr = learning_rate_at(spec, step)
        for group in optimizer.param_groups:
            group["lr"] = lr
        optimizer.zero_grad()
        src_ids, src_mask = pad_batch([p[0] for p in batch])
        tgt_ids, _ = pad_batch([p[1] for p in batch])
        loss_tensor = compute_batch_loss(module, src_ids, src_mask, tgt_ids)
        loss_value = float(loss_tensor.detach())
        if not math.isfinite(loss_value):
            raise RuntimeError(
                f"non-finite loss {loss_value} at step {step} (lr={lr:g}, "
                f"stage={spec.stage.value}, dataset={spec.dataset_id})"
            )
        loss_tensor.backward()
        if spec.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(module.parameters(), spec.grad_clip)
        optimizer.step()

        done = step + 1
        if done % spec.log_every == 0 or done == start_step + budget:
            log.append(TrainRecord(step=done, loss=loss_value, learning_rate=lr,
                                   wall_time=time.monotonic() - t_start))

    module.eval()
    provenance = _extend_provenance(ckpt.provenance, spec, budget, resumed=spec.resume)
    trainer_state = {
        "optimizer": optimizer.state_dict(),
        "step": start_step + budget,
        "torch_rng": torch.get_rng_state(),
    }
    new_ckpt = Checkpoint(config=ckpt.config, module=module, tokenizer=ckpt.tokenizer,
                          provenance=provenance, trainer_state=trainer_state)
    return new_ckpt, log


def _extend_provenance(provenance: list[StageRecord], spec: TrainSpec,
                       steps_done: int, resumed: bool) -> list[StageRecord]:
    out = list(provenance)
    record = StageRecord(stage=spec.stage.value, dataset_id=spec.dataset_id,
                         steps=steps_done, seed=spec.seed)
    if resumed and out:
        last = out[-1]
        if (last.stage, last.dataset_id, last.seed) == (record.stage, record.dataset_id, record.seed):
            out[-1] = replace(last, steps=last.steps + steps_done)
            return out
    out.append(record)
    return out
