"""Toy dataset generators and CSV dumps."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..errors import PreconditionError


def gen_two_moons(n: int, noise: float, rng: np.random.Generator):
    """Two interleaved half circles of unit radius.

    Class 0 is the upper moon centred at the origin, class 1 the lower moon
    centred at (1, -0.5). Angles are uniform on [0, pi]; Gaussian noise of
    scale ``noise`` is added to both coordinates. Returns ``(points, labels)``
    in shuffled order.
    """
    if n < 1:
        raise PreconditionError("need at least one point")
    if noise < 0:
        raise PreconditionError("noise must be non-negative")
    n0 = (n + 1) // 2
    n1 = n - n0
    th0 = rng.uniform(0.0, np.pi, n0)
    th1 = rng.uniform(0.0, np.pi, n1)
    upper = np.stack([np.cos(th0), np.sin(th0)], axis=1)
    lower = np.stack([1.0 - np.cos(th1), 0.5 - np.sin(th1)], axis=1)
    pts = np.concatenate([upper, lower])
    labels = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    if noise > 0:
        pts = pts + rng.normal(0.0, noise, size=pts.shape)
    order = rng.permutation(n)
    return pts[order], labels[order]


def gen_sinusoid(n: int, noise: float, rng: np.random.Generator, lo: float = -4.0, hi: float = 4.0):
    if n < 1:
        raise PreconditionError("need at least one point")
    if not hi > lo:
        raise PreconditionError("empty input range")
    x = rng.uniform(lo, hi, size=(n, 1))
    y = np.sin(x[:, 0]) + rng.normal(0.0, noise, size=n)
    return x, y


def dump_csv(path, splits: dict) -> Path:
    """Write ``{split: (inputs, targets[, tasks])}`` as one long CSV.

    Columns are ``x0..x{d-1}, y, split, task``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    dim = None
    for split, arrays in splits.items():
        x, y = np.asarray(arrays[0], float), np.asarray(arrays[1])
        if x.ndim == 1:
            x = x[:, None]
        task = np.asarray(arrays[2]) if len(arrays) > 2 else np.zeros(len(x), dtype=int)
        dim = x.shape[1]
        for xi, yi, ti in zip(x, y, task):
            rows.append([*(repr(float(v)) for v in xi), str(yi.item()), split, str(int(ti))])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(dim or 0)] + ["y", "split", "task"])
        w.writerows(rows)
    return path
