"""Minibatch supervised environments (sinusoid regression, two-moons classification).

The observation at step ``t`` carries the input batch presented at ``t`` and
the targets of the batch presented at ``t - 1``. Batches follow a shuffled
epoch schedule; the permutation of the running epoch travels in the
observation's ``info`` so the next observation is a function of the history
and the generator alone.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import PreconditionError
from ..futures import EvalProbe
from ..process import Environment, History, Observation, Output
from . import datasets


class SupervisedEnv(Environment):
    def __init__(self, train_x, train_y, val_x, val_y, *, batch_size: int, num_epochs: int,
                 task: str = "regression", n_classes: int = 1, task_ids=None, grid=None):
        if task not in ("regression", "classification"):
            raise PreconditionError(f"unknown task {task!r}")
        if batch_size < 1:
            raise PreconditionError("batch size must be positive")
        self.train_x = np.asarray(train_x, float)
        self.train_y = np.asarray(train_y)
        self.val_x = np.asarray(val_x, float)
        self.val_y = np.asarray(val_y)
        if len(self.train_x) == 0:
            raise PreconditionError("empty training set")
        self.batch_size = int(batch_size)
        self.num_epochs = int(num_epochs)
        self.task = task
        self.n_classes = n_classes
        self.input_dim = self.train_x.shape[1]
        self.grid = grid
        if task_ids is None:
            self.pools = [np.arange(len(self.train_x))]
        else:
            task_ids = np.asarray(task_ids)
            self.pools = [np.flatnonzero(task_ids == k) for k in np.unique(task_ids)]
        self.boundary_epoch = num_epochs // 2 if len(self.pools) > 1 else None

    # -- schedule -----------------------------------------------------------

    def task_of_epoch(self, epoch: int) -> int:
        if len(self.pools) == 1:
            return 0
        per = max(1, self.num_epochs // len(self.pools))
        return min(epoch // per, len(self.pools) - 1)

    def pool(self, epoch: int) -> np.ndarray:
        return self.pools[self.task_of_epoch(epoch)]

    def batches_in_epoch(self, epoch: int) -> int:
        return math.ceil(len(self.pool(epoch)) / self.batch_size)

    def epoch_of_time(self, t: int) -> int:
        """Epoch of the batch presented at time ``t`` (time 0 is batch 0)."""
        e, seen = 0, 0
        while True:
            seen += self.batches_in_epoch(e)
            if t < seen:
                return e
            e += 1

    def steps_per_run(self) -> int:
        return sum(self.batches_in_epoch(e) for e in range(self.num_epochs))

    def boundary_time(self) -> int | None:
        if self.boundary_epoch is None:
            return None
        return sum(self.batches_in_epoch(e) for e in range(self.boundary_epoch))

    def epoch_stream(self, epoch: int, rng: np.random.Generator) -> list[np.ndarray]:
        order = rng.permutation(self.pool(epoch))
        return [order[i : i + self.batch_size] for i in range(0, len(order), self.batch_size)]

    # -- Environment --------------------------------------------------------

    def _emit(self, epoch, batch, order, target):
        idx = order[batch * self.batch_size : (batch + 1) * self.batch_size]
        info = {
            "epoch": epoch,
            "batch": batch,
            "order": order,
            "idx": idx,
            "boundary": self.boundary_epoch is not None and epoch == self.boundary_epoch and batch == 0,
        }
        return Observation("supervised", x=self.train_x[idx], target=target, info=info)

    def initial(self, rng):
        return self._emit(0, 0, rng.permutation(self.pool(0)), None)

    def next(self, history: History, output: Output, rng):
        last = history.last_observation
        if last.hybrid:
            raise PreconditionError("the real environment cannot continue a hybrid history")
        info = last.info
        target = self.train_y[info["idx"]]
        epoch, batch = info["epoch"], info["batch"] + 1
        order = info["order"]
        if batch >= self.batches_in_epoch(epoch):
            epoch, batch = epoch + 1, 0
            order = rng.permutation(self.pool(epoch))
        return self._emit(epoch, batch, order, target)

    def hybrid_inputs(self, rng, at_time: int) -> np.ndarray:
        pool = self.pool(self.epoch_of_time(at_time))
        return self.train_x[pool[rng.integers(0, len(pool), size=self.batch_size)]]

    def borrow(self, history, output, rng, at_time):
        """Fresh inputs from the training input marginal at ``at_time``;
        the learner's sampled targets stand in for the true ones."""
        return Observation("supervised", x=self.hybrid_inputs(rng, at_time), target=output.value, hybrid=True)

    def probes(self) -> EvalProbe:
        return EvalProbe(self.val_x, "validation")

    def grid_probes(self, n: int = 40) -> EvalProbe:
        if self.grid is not None:
            return EvalProbe(self.grid, "grid")
        lo = self.train_x.min(0) - 0.5
        hi = self.train_x.max(0) + 0.5
        if self.input_dim == 1:
            return EvalProbe(np.linspace(lo[0], hi[0], n)[:, None], "grid")
        gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], n), np.linspace(lo[1], hi[1], n))
        return EvalProbe(np.stack([gx.ravel(), gy.ravel()], 1), "grid", {"shape": (n, n)})

    def validation_set(self):
        return self.val_x, self.val_y

    def training_set(self):
        return self.train_x, self.train_y

    def dump(self, path):
        task = np.zeros(len(self.train_x), dtype=int)
        for k, p in enumerate(self.pools):
            task[p] = k
        return datasets.dump_csv(path, {
            "train": (self.train_x, self.train_y, task),
            "validation": (self.val_x, self.val_y),
        })


def supervised_epoch_stream(env: SupervisedEnv, epoch: int, rng) -> list[np.ndarray]:
    """Shuffled partition of the epoch's pool into batches (last may be short)."""
    return env.epoch_stream(epoch, rng)


def class_incremental_stream(env: SupervisedEnv, epoch: int, batch_index: int, rng):
    """Batch ``batch_index`` of ``epoch`` plus the boundary flag."""
    if len(env.pools) < 2:
        raise PreconditionError("environment is not class-incremental")
    batches = env.epoch_stream(epoch, rng)
    if not 0 <= batch_index < len(batches):
        raise PreconditionError("batch index out of range")
    idx = batches[batch_index]
    boundary = epoch == env.boundary_epoch and batch_index == 0
    return env.train_x[idx], env.train_y[idx], boundary


def make_sinusoid(rng, *, num_samples=40, num_val=100, noise=0.1, batch_size=10, num_epochs=30,
                  lo=-4.0, hi=4.0) -> SupervisedEnv:
    tx, ty = datasets.gen_sinusoid(num_samples, noise, rng, lo, hi)
    vx, vy = datasets.gen_sinusoid(num_val, noise, rng, lo, hi)
    return SupervisedEnv(tx, ty, vx, vy, batch_size=batch_size, num_epochs=num_epochs, task="regression")


def make_moons(rng, *, num_samples=100, num_val=100, noise=0.1, batch_size=25, num_epochs=30,
               incremental=False) -> SupervisedEnv:
    """Two-moons classification; ``incremental`` gives one moon per task
    with ``num_samples`` points each."""
    if incremental:
        x0, y0 = _one_moon(num_samples, noise, 0, rng)
        x1, y1 = _one_moon(num_samples, noise, 1, rng)
        tx, ty = np.concatenate([x0, x1]), np.concatenate([y0, y1])
        task_ids = ty.copy()
    else:
        tx, ty = datasets.gen_two_moons(num_samples, noise, rng)
        task_ids = None
    vx, vy = datasets.gen_two_moons(num_val, noise, rng)
    return SupervisedEnv(tx, ty, vx, vy, batch_size=batch_size, num_epochs=num_epochs,
                         task="classification", n_classes=2, task_ids=task_ids)


def _one_moon(n, noise, label, rng):
    x, y = datasets.gen_two_moons(2 * n, noise, rng)
    keep = np.flatnonzero(y == label)[:n]
    return x[keep], y[keep]


def make_pairs(x, y, *, grid=None, batch_size: int = 1, num_epochs: int = 1) -> SupervisedEnv:
    """A fixed small dataset presented one pair at a time; probes on ``grid``."""
    x = np.asarray(x, float).reshape(len(x), -1)
    y = np.asarray(y, float)
    if grid is None:
        grid = np.linspace(x.min() - 1.0, x.max() + 1.0, 21)[:, None]
    grid = np.asarray(grid, float).reshape(len(grid), -1)
    env = SupervisedEnv(x, y, grid, np.zeros(len(grid)), batch_size=batch_size, num_epochs=num_epochs,
                        task="regression", grid=grid)
    return env
