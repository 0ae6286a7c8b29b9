"""Epoch loop with noisy early stopping, clean early stopping and no stopping.

One call to :func:`run_training` logs every metric track each epoch, so a
single run yields the selections of all requested policies at once.  Each
policy follows the patience rule: a strictly better monitored accuracy
saves a checkpoint and resets the counter; anything else increments it, and
the policy halts once the counter reaches the patience.
"""

from __future__ import annotations

import enum
import io
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .datasets import SplitBundle
from .errors import DomainError, NumericalError
from .estimators import evaluate_accuracy, load_checkpoint, save_checkpoint, sgd_epoch
from .losses import LossSpec
from .risk import g_vector

__all__ = [
    "TrainConfig", "PolicyKind", "StoppingPolicy", "PatienceTracker", "EpochRecord", "RunLog",
    "run_training", "evaluate_accuracy", "NES", "ES", "WES",
]


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 100
    patience: int = 10
    lr: float = 0.05
    batch: int = 128
    loss: LossSpec = field(default_factory=LossSpec)
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1:
            raise DomainError("max_epochs must be >= 1")
        if self.patience < 1:
            raise DomainError("patience must be >= 1")
        if self.batch < 1 or not self.lr >= 0:
            raise DomainError("batch must be >= 1 and lr >= 0")

    def echo(self) -> list[str]:
        return [f"max_epochs={self.max_epochs}", f"patience={self.patience}", f"lr={self.lr!r}",
                f"batch={self.batch}", f"seed={self.seed}", f"loss={self.loss.describe()}"]


class PolicyKind(str, enum.Enum):
    NES = "NES"
    ES = "ES"
    WES = "WES"


@dataclass(frozen=True)
class StoppingPolicy:
    kind: PolicyKind

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))

    @property
    def monitor(self) -> str | None:
        return {PolicyKind.NES: "noisy_val_acc", PolicyKind.ES: "clean_val_acc"}.get(self.kind)


NES = StoppingPolicy(PolicyKind.NES)
ES = StoppingPolicy(PolicyKind.ES)
WES = StoppingPolicy(PolicyKind.WES)


class PatienceTracker:
    """Patience bookkeeping for one monitored accuracy.

    ``update`` returns True when the new value is a strict improvement, in
    which case the caller saves the current model as the best one.
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = 0
        self.waited = 0
        self.halted_at: int | None = None

    @property
    def halted(self) -> bool:
        return self.halted_at is not None

    def update(self, epoch: int, value: float) -> bool:
        if self.halted:
            return False
        improved = value > self.best
        if improved:
            self.best, self.best_epoch, self.waited = value, epoch, 0
        else:
            self.waited += 1
        if self.waited >= self.patience:
            self.halted_at = epoch
        return improved


def select_epoch(metric: Sequence[float], patience: int) -> tuple[int, int]:
    """Apply the patience rule to a metric sequence; return ``(best, last)`` 1-based epochs."""
    tr = PatienceTracker(patience)
    for e, v in enumerate(metric, start=1):
        tr.update(e, v)
        if tr.halted:
            return tr.best_epoch, e
    return tr.best_epoch, len(metric)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    noisy_val_acc: float
    clean_val_acc: float
    clean_test_acc: float
    g: tuple[float, ...] | None = None


TRACKS = ("train_loss", "noisy_val_acc", "clean_val_acc", "clean_test_acc")


@dataclass
class RunLog:
    records: list[EpochRecord] = field(default_factory=list)
    chosen: dict[str, int] = field(default_factory=dict)
    config: list[str] = field(default_factory=list)
    wall_time: float = 0.0

    def __len__(self):
        return len(self.records)

    def track(self, name: str) -> np.ndarray:
        if name not in TRACKS:
            raise KeyError(f"unknown track {name!r}")
        return np.array([getattr(r, name) for r in self.records])

    def gvectors(self) -> np.ndarray | None:
        if not self.records or self.records[0].g is None:
            return None
        return np.array([r.g for r in self.records])

    def test_acc(self, policy: str) -> float:
        e = self.chosen[PolicyKind(policy).value]
        return self.records[e - 1].clean_test_acc

    def select(self, policy, patience: int) -> int:
        """Post-hoc selection of ``policy`` from the logged tracks."""
        kind = PolicyKind(getattr(policy, "kind", policy))
        if kind is PolicyKind.WES:
            return len(self.records)
        best, _ = select_epoch(self.track(StoppingPolicy(kind).monitor), patience)
        return best

    def csv_body(self) -> str:
        buf = io.StringIO()
        g = self.gvectors()
        head = ["epoch", *TRACKS]
        if g is not None:
            head += [f"g{k + 1}" for k in range(g.shape[1])]
        buf.write(",".join(head) + "\n")
        for r in self.records:
            row = [str(r.epoch)] + [repr(float(getattr(r, t))) for t in TRACKS]
            if r.g is not None:
                row += [repr(float(v)) for v in r.g]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def chosen_line(self) -> str:
        parts = [f"{k.value}={self.chosen.get(k.value, 'NA')}" for k in PolicyKind]
        return "#chosen " + " ".join(parts)

    def to_csv(self, include_time: bool = True) -> str:
        lines = [f"#{c}" for c in self.config]
        if include_time:
            lines.append(f"#wall_time_s={self.wall_time:.3f}")
        return "\n".join(lines) + "\n" + self.csv_body() + self.chosen_line() + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "RunLog":
        log = cls()
        header = None
        for line in text.splitlines():
            if not line.strip():
                continue
            if line.startswith("#chosen"):
                for tok in line.split()[1:]:
                    k, v = tok.split("=")
                    if v != "NA":
                        log.chosen[k] = int(v)
            elif line.startswith("#wall_time_s="):
                log.wall_time = float(line.split("=", 1)[1])
            elif line.startswith("#"):
                log.config.append(line[1:])
            elif header is None:
                header = line.split(",")
            else:
                vals = line.split(",")
                row = dict(zip(header, vals))
                missing = [t for t in ("epoch", *TRACKS) if t not in row]
                if missing:
                    raise KeyError(f"run log lacks columns {missing}")
                g = tuple(float(row[h]) for h in header if h.startswith("g")) or None
                log.records.append(EpochRecord(int(row["epoch"]), *(float(row[t]) for t in TRACKS), g))
        if header is None:
            raise ValueError("run log has no header row")
        return log

    @classmethod
    def load(cls, path) -> "RunLog":
        with open(path) as fh:
            return cls.from_csv(fh.read())


def run_training(model, splits: SplitBundle, config: TrainConfig, policy: StoppingPolicy = NES,
                 also: Iterable[StoppingPolicy] = (), checkpoint_dir=None,
                 gvector_field: Callable | None = None, step: Callable | None = None,
                 config_echo: Sequence[str] = ()):
    """Train ``model`` and return ``(selected model, RunLog)`` for ``policy``.

    Selections for the policies in ``also`` are recorded in the log too;
    training continues until every requested policy has halted (to
    ``max_epochs`` when WES is among them).  Best models are checkpointed to
    ``checkpoint_dir`` (a temporary directory when omitted).  ``step`` replaces
    the default SGD epoch; it is called as ``step(model, train, epoch)`` and
    returns the mean training loss.
    """
    policies = [policy, *[p for p in also if p.kind != policy.kind]]
    kinds = [p.kind for p in policies]
    if PolicyKind.NES in kinds and splits.noisy_val.noisy_labels is None:
        raise DomainError("NES needs a validation split with noisy labels")
    cfg = config
    if step is None:
        def step(m, train, epoch):
            _, loss = sgd_epoch(m, train, cfg.loss, cfg.lr, cfg.batch, seed=cfg.seed, epoch=epoch)
            return loss

    trackers = {k: PatienceTracker(cfg.patience) for k in kinds if k is not PolicyKind.WES}
    log = RunLog(config=[*config_echo, *cfg.echo(), "policies=" + ",".join(k.value for k in kinds)])
    tmp = None
    if checkpoint_dir is None:
        tmp = tempfile.TemporaryDirectory(prefix="nes-ckpt-")
        checkpoint_dir = tmp.name
    os.makedirs(checkpoint_dir, exist_ok=True)
    ckpt = {k: os.path.join(checkpoint_dir, f"best_{k.value}.ckpt") for k in trackers}
    final_path = os.path.join(checkpoint_dir, "final.ckpt")
    t0 = time.perf_counter()
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            try:
                train_loss = float(step(model, splits.train, epoch))
            except NumericalError as exc:
                exc.runlog = log
                exc.epoch = epoch if exc.epoch is None else exc.epoch
                raise
            if not np.isfinite(train_loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch}", epoch=epoch,
                                     loss_kind=cfg.loss.kind.value, runlog=log)
            # NES sees only the noisy validation labels; ES only the clean ones.
            noisy_val = evaluate_accuracy(model, splits.noisy_val, "noisy")
            clean_val = evaluate_accuracy(model, splits.clean_val, "clean")
            test = evaluate_accuracy(model, splits.test, "clean")
            g = None
            if gvector_field is not None:
                g = tuple(g_vector(model, splits.test.features, gvector_field).values.tolist())
            log.records.append(EpochRecord(epoch, train_loss, noisy_val, clean_val, test, g))
            monitored = {PolicyKind.NES: noisy_val, PolicyKind.ES: clean_val}
            for k, tr in trackers.items():
                if tr.update(epoch, monitored[k]):
                    save_checkpoint(model, ckpt[k])
            if PolicyKind.WES not in kinds and all(tr.halted for tr in trackers.values()):
                break
        log.wall_time = time.perf_counter() - t0
        save_checkpoint(model, final_path)
        for k, tr in trackers.items():
            log.chosen[k.value] = tr.best_epoch
        if PolicyKind.WES in kinds:
            log.chosen[PolicyKind.WES.value] = len(log.records)
        if policy.kind is PolicyKind.WES:
            selected = load_checkpoint(final_path)
        else:
            selected = load_checkpoint(ckpt[policy.kind])
    finally:
        if tmp is not None:
            tmp.cleanup()
    return selected, log
