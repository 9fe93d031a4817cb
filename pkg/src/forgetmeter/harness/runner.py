"""Run experiments, sweeps and DQN studies; every run yields a :class:`RunRecord`."""
from __future__ import annotations

import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import predictive as pd
from ..envs.cartpole import CartpoleEnv
from ..envs.generative import make_moons_generative
from ..envs.signals import CoinFlipEnv
from ..envs.supervised import make_moons, make_sinusoid
from ..errors import PreconditionError
from ..futures import HybridEnvironment
from ..learners.dqn import DqnConfig, DqnLearner, evaluate_return
from ..learners.flow import FlowLearner
from ..learners.supervised import MlpLearner
from ..learners.thought import Degenerate
from ..meter import ForgettingConfig, estimate_gammas, resolve_probes
from ..process import run_interaction
from ..streams import child_rng, derive_int, particle_rngs
from .config import ExperimentConfig


def training_efficiency(loss_curve) -> float:
    """Inverse area under the loss curve after normalising steps to [0, 1]
    and losses by the initial loss. Returns ``inf`` when the area is zero."""
    pts = [(float(s), float(l)) for s, l in loss_curve]
    if len(pts) < 2:
        raise PreconditionError("need at least two loss points")
    steps = np.array([p[0] for p in pts])
    loss = np.array([p[1] for p in pts])
    if not np.all(np.isfinite(loss)):
        raise PreconditionError("losses must be finite")
    if np.any(loss < 0):
        raise PreconditionError("losses must be non-negative")
    if np.all(loss == 0):
        raise PreconditionError("losses are all zero")
    if loss[0] <= 0:
        raise PreconditionError("initial loss must be positive to normalise")
    span = steps[-1] - steps[0]
    if span <= 0:
        raise PreconditionError("steps must increase")
    area = float(np.trapezoid(loss / loss[0], (steps - steps[0]) / span))
    return math.inf if area == 0 else 1.0 / area


@dataclass
class RunRecord:
    run_id: str
    seed: int
    setting: str
    config_hash: str
    metrics: dict = field(default_factory=dict)  # name -> [(step, value)]
    gamma_trace: list = field(default_factory=list)  # dicts: t, k, gamma, std_error, flags
    efficiency: float = float("nan")
    efficiency_infinite: bool = False
    complete: bool = True
    error: str | None = None
    panels: dict | None = None
    params: dict = field(default_factory=dict)  # e.g. the swept value
    boundary: int | None = None  # first step of the second task, if any

    def add(self, name: str, step: int, value: float) -> None:
        self.metrics.setdefault(name, []).append((int(step), float(value)))

    def gammas(self, k: int | None = None) -> np.ndarray:
        ks = {g["k"] for g in self.gamma_trace}
        if k is None:
            k = max(ks) if ks else 0
        return np.array([g["gamma"] for g in self.gamma_trace if g["k"] == k])

    def gamma_times(self, k: int | None = None) -> np.ndarray:
        ks = {g["k"] for g in self.gamma_trace}
        if k is None:
            k = max(ks) if ks else 0
        return np.array([g["t"] for g in self.gamma_trace if g["k"] == k])

    def gamma_bar(self, k: int | None = None) -> float:
        g = self.gammas(k)
        return float(np.mean(g)) if len(g) else float("nan")


def coefficient_of_variation(values) -> float:
    v = np.asarray(values, float)
    m = float(np.mean(v))
    return float(np.std(v) / m) if m > 0 else float("nan")


# -- construction -------------------------------------------------------------


@dataclass
class Case:
    env: object
    learner: object
    total_steps: int
    loss: object  # state -> float
    divergence_probes: object = None


def build_case(cfg: ExperimentConfig, seed: int) -> Case:
    e, l = cfg.env, cfg.learner
    data = child_rng(seed, "data")
    s = cfg.setting
    if s in ("regression", "classification", "class_incremental"):
        if s == "regression":
            env = make_sinusoid(data, **e)
            learner = MlpLearner(1, l["hidden"], optimizer=l["optimizer"], lr=l["lr"], momentum=l["momentum"])
        else:
            env = make_moons(data, incremental=(s == "class_incremental"), **e)
            learner = MlpLearner(2, l["hidden"], task="classification", n_classes=2,
                                 optimizer=l["optimizer"], lr=l["lr"], momentum=l["momentum"])
        X, Y = env.training_set()
        return Case(env, learner, env.steps_per_run(), lambda st: learner.dataset_loss(st, X, Y))
    if s == "generative":
        env = make_moons_generative(data, **e)
        learner = FlowLearner(2, l["hidden"], l["lr"], l["num_steps"], l["hybrid_batch"])
        return Case(env, learner, env.steps_per_run(), learner.loss_of)
    if s == "rl":
        env = CartpoleEnv(n_probes=e["n_probes"])
        learner = DqnLearner(DqnConfig(**l))
        return Case(env, learner, learner.cfg.total_timesteps, learner.loss_of)
    if s == "degenerate":
        env = CoinFlipEnv(p=e["p"])
        learner = Degenerate()
        # expected 0/1 error of the constant guess against the coin
        return Case(env, learner, int(e["steps"]), lambda st: e["p"] if st["value"] == 0 else 1.0 - e["p"])
    raise PreconditionError(f"unknown setting {s!r}")


def forgetting_config(cfg: ExperimentConfig) -> ForgettingConfig:
    f = cfg.forgetting
    return ForgettingConfig(k=f["k"], num_particles=f["num_particles"], divergence=f["divergence"],
                            probes=f["probes"], mixture_policy=f["mixture_policy"], bootstrap=f["bootstrap"])


def measurement_times(cfg: ExperimentConfig, total: int) -> list[int]:
    every = max(1, int(round(cfg.measure_fraction * total)))
    return list(range(every, total + 1, every))


# -- single runs ----------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, seed: int, *, measure: bool = True, panels: bool = False,
                   run_id: str | None = None) -> RunRecord:
    """One full interaction with forgetting estimates on the measurement schedule.

    Training, estimation and evaluation draw from separate child streams of
    ``seed``, so switching measurement off leaves training bit-identical.
    Errors end the run early; the partial record comes back marked incomplete.
    """
    case = build_case(cfg, seed)
    env, learner = case.env, case.learner
    rec = RunRecord(run_id or f"{cfg.name}-s{seed}", seed, cfg.setting, cfg.hash())
    fcfg = forgetting_config(cfg)
    ks = sorted(set(cfg.forgetting["ks"]))
    times = set(measurement_times(cfg, case.total_steps))
    gamma_root = derive_int(child_rng(seed, "gamma"))
    state0 = learner.init_state(child_rng(seed, "init"))
    loss0 = case.loss(state0)
    if math.isfinite(loss0):
        rec.add("train_loss", 0, loss0)
    val = env.validation_set() if hasattr(env, "validation_set") else None
    boundary = getattr(env, "boundary_time", lambda: None)()
    rec.boundary = boundary
    panel_time = None
    if panels and cfg.setting in ("classification", "class_incremental"):
        sched = sorted(times)
        panel_time = min((t for t in sched if t >= boundary), default=sched[-1]) if boundary else sched[-1]

    def on_step(t, state, history):
        loss = case.loss(state)
        if math.isfinite(loss):
            rec.add("train_loss", t, loss)
        if cfg.setting == "rl":
            rec.add("reward", t, history.last_observation.reward)
        if t not in times:
            return
        if val is not None:
            rec.add("val_loss", t, learner.dataset_loss(state, *val))
        if cfg.setting == "rl":
            rec.add("eval_return", t, evaluate_return(learner, state, env, child_rng(seed, "eval", t), cfg.eval_steps))
        if not measure:
            return
        for est in estimate_gammas(learner, state, history, env, fcfg, gamma_root, ks):
            rec.gamma_trace.append({"t": t, "k": est.k, "gamma": est.gamma, "std_error": est.std_error,
                                    "infinite": est.infinite, "dropped": est.dropped, **est.flags})
            rec.add(f"gamma_k{est.k}", t, est.gamma)
            if fcfg.bootstrap:
                rec.add(f"gamma_se_k{est.k}", t, est.std_error)
            if "transitory" in est.flags:
                rec.add(f"transitory_k{est.k}", t, float(est.flags["transitory"]))
        if t == panel_time:
            rec.panels = decision_panels(learner, state, history, env, fcfg, gamma_root, t)

    try:
        run_interaction(env, learner, case.total_steps, (), child_rng(seed, "run"), state=state0, on_step=on_step)
    except Exception as exc:  # keep what was measured so far
        rec.complete = False
        rec.error = "".join(traceback.format_exception_only(type(exc), exc)).strip()
    curve = rec.metrics.get("train_loss", [])
    if len(curve) >= 2:
        try:
            rec.efficiency = training_efficiency(curve)
            rec.efficiency_infinite = math.isinf(rec.efficiency)
        except PreconditionError:
            pass
    return rec


def decision_panels(learner, state, history, env, fcfg: ForgettingConfig, root: int, t: int, n: int = 30) -> dict:
    """Class-1 probabilities on a grid: the live predictive and the mixture of
    ``fcfg.k``-update futures (white = 0.5 when rendered)."""
    lo = env.train_x.min(0) - 0.5
    hi = env.train_x.max(0) + 0.5
    gx, gy = np.linspace(lo[0], hi[0], n), np.linspace(lo[1], hi[1], n)
    pts = np.stack(np.meshgrid(gx, gy), -1).reshape(-1, 2)
    st = learner.prepare_estimate(state, env)
    M = min(fcfg.num_particles, 200)
    hybrid = HybridEnvironment(env, learner, at_time=history.time)
    preds, _ = learner.particle_predictives(st, history, hybrid, [fcfg.k], particle_rngs(root, t, M, "panels"), pts)
    mix = pd.mixture_predictive(preds[0])
    ref = learner.probe(st, pts)
    return {"t": t, "k": fcfg.k, "x": gx.tolist(), "y": gy.tolist(),
            "reference": ref.probs[:, 1].reshape(n, n).tolist(), "futures": mix.probs[:, 1].reshape(n, n).tolist()}


# -- sweeps ---------------------------------------------------------------------


def worker_count() -> int:
    raw = os.environ.get("FORGETMETER_THREADS")
    if raw:
        try:
            n = int(raw)
        except ValueError as exc:
            raise PreconditionError("FORGETMETER_THREADS must be an integer") from exc
        if n < 1:
            raise PreconditionError("FORGETMETER_THREADS must be positive")
        return n
    return os.cpu_count() or 1


def _cell(args):
    cfg, seed, run_id, params = args
    rec = run_experiment(cfg, seed, run_id=run_id)
    rec.params = params
    return rec


def run_cells(cells, workers: int | None = None) -> list[RunRecord]:
    """Run ``(cfg, seed, run_id, params)`` cells, in a process pool if allowed."""
    workers = min(workers or worker_count(), len(cells)) or 1
    if workers == 1:
        return [_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_cell, cells))


@dataclass
class SweepResult:
    axis: str
    values: list
    records: list
    table: list  # per value: value, gamma_bar mean/std, efficiency mean/std, n

    def column(self, key: str) -> np.ndarray:
        return np.array([row[key] for row in self.table])


def run_sweep(cfg: ExperimentConfig, axis: str, values, seeds, workers: int | None = None) -> SweepResult:
    """One run per (value, seed); failed cells stay in the records, marked incomplete."""
    values = list(values)
    if not values:
        raise PreconditionError("sweep needs at least one value")
    cells = []
    for v in values:
        c = cfg.with_override(axis, v)
        for s in seeds:
            cells.append((c, int(s), f"{cfg.name}-{axis}={v}-s{s}", {axis: v}))
    records = run_cells(cells, workers)
    table = []
    for v in values:
        recs = [r for r in records if r.params[axis] == v and r.complete]
        gb = np.array([r.gamma_bar(cfg.forgetting["k"]) for r in recs])
        ef = np.array([r.efficiency for r in recs])
        table.append({
            "value": v, "n": len(recs),
            "gamma_bar": float(np.mean(gb)) if len(gb) else float("nan"),
            "gamma_bar_std": float(np.std(gb)) if len(gb) else float("nan"),
            "efficiency": float(np.mean(ef)) if len(ef) else float("nan"),
            "efficiency_std": float(np.std(ef)) if len(ef) else float("nan"),
        })
    return SweepResult(axis, values, records, table)


def run_dqn(cfg: ExperimentConfig, seeds, workers: int | None = None):
    """DQN runs plus an instability report (coefficient of variation of each
    seed's forgetting trace)."""
    if cfg.setting != "rl":
        raise PreconditionError("run_dqn needs an rl config")
    cells = [(cfg, int(s), f"{cfg.name}-s{s}", {}) for s in seeds]
    records = run_cells(cells, workers)
    k = cfg.forgetting["k"]
    report = {r.seed: coefficient_of_variation(r.gammas(k)) for r in records}
    return records, report
