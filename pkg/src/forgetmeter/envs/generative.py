"""Unlabelled data streams for generative learners."""
from __future__ import annotations

import math

import numpy as np

from ..errors import PreconditionError
from ..futures import EvalProbe
from ..process import Environment, Observation
from . import datasets


class GenerativeEnv(Environment):
    """Shuffled minibatches of a fixed point cloud, epoch after epoch.

    Time zero carries no data. In futures rollouts the learner's own
    generated batch is the observation.
    """

    def __init__(self, train_x, val_x, *, batch_size: int, num_epochs: int, n_probes: int = 256,
                 probe_seed: int = 2024):
        self.train_x = np.asarray(train_x, float)
        self.val_x = np.asarray(val_x, float)
        if batch_size < 1:
            raise PreconditionError("batch size must be positive")
        self.batch_size = int(batch_size)
        self.num_epochs = int(num_epochs)
        self.input_dim = self.train_x.shape[1]
        self.n_probes = n_probes
        self.probe_seed = probe_seed

    def batches_in_epoch(self) -> int:
        return math.ceil(len(self.train_x) / self.batch_size)

    def steps_per_run(self) -> int:
        return self.batches_in_epoch() * self.num_epochs

    def initial(self, rng):
        return Observation("generative", x=None, info={"epoch": 0, "batch": -1, "order": rng.permutation(len(self.train_x))})

    def next(self, history, output, rng):
        last = history.last_observation
        if last.hybrid:
            raise PreconditionError("the real environment cannot continue a hybrid history")
        epoch, batch, order = last.info["epoch"], last.info["batch"] + 1, last.info["order"]
        if batch >= self.batches_in_epoch():
            epoch, batch, order = epoch + 1, 0, rng.permutation(len(self.train_x))
        idx = order[batch * self.batch_size : (batch + 1) * self.batch_size]
        return Observation("generative", x=self.train_x[idx], info={"epoch": epoch, "batch": batch, "order": order})

    def borrow(self, history, output, rng, at_time):
        return Observation("generative", x=np.asarray(output.value, float), hybrid=True)

    def probes(self) -> EvalProbe:
        """Fixed noise vectors pushed through the learner's sampler."""
        z = np.random.default_rng(self.probe_seed).standard_normal((self.n_probes, self.input_dim))
        return EvalProbe(z, "noise")

    def validation_set(self):
        return None

    def held_out(self) -> np.ndarray:
        return self.val_x


def make_moons_generative(rng, *, num_samples=10_000, num_val=1_000, noise=0.05, batch_size=2_500,
                          num_epochs=250, n_probes=256) -> GenerativeEnv:
    tx, _ = datasets.gen_two_moons(num_samples, noise, rng)
    vx, _ = datasets.gen_two_moons(num_val, noise, rng)
    return GenerativeEnv(tx, vx, batch_size=batch_size, num_epochs=num_epochs, n_probes=n_probes)
