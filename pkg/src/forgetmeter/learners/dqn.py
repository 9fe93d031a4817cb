"""Deep Q-learning with an experience replay buffer and a hard-synced target network."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .. import kernels
from .. import predictive as pd
from ..envs.cartpole import CartpoleEnv, cartpole_step, cartpole_step_batch
from ..errors import NumericalDivergenceError, PreconditionError
from ..process import Learner
from . import mlp

HYBRID_TARGETS = ("self", "borrowed")


@dataclass(frozen=True)
class DqnConfig:
    hidden: int = 5
    lr: float = 2.5e-4
    batch_size: int = 128
    buffer_size: int = 10_000
    start_e: float = 1.0
    end_e: float = 0.05
    exploration_fraction: float = 0.5
    learning_starts: int = 10_000
    train_frequency: int = 10
    target_network_frequency: int = 500
    tau: float = 1.0
    gamma: float = 0.99
    total_timesteps: int = 200_000
    temperature: float = 1.0
    hybrid_targets: str = "self"
    transitory_window: int = 50  # env steps after a target sync that count as transitory

    def __post_init__(self):
        if self.buffer_size < 1 or self.batch_size < 1:
            raise PreconditionError("buffer and batch sizes must be positive")
        if not 0.0 <= self.end_e <= self.start_e <= 1.0:
            raise PreconditionError("need 0 <= end_e <= start_e <= 1")
        if not 0.0 < self.tau <= 1.0:
            raise PreconditionError("tau must lie in (0, 1]")
        if self.hybrid_targets not in HYBRID_TARGETS:
            raise PreconditionError(f"hybrid_targets must be one of {HYBRID_TARGETS}")
        if self.temperature <= 0:
            raise PreconditionError("temperature must be positive")


class _Log:
    """Growable transition arrays shared by every buffer view that extends it."""

    def __init__(self, alloc: int, dim: int):
        self.s = np.zeros((alloc, dim))
        self.a = np.zeros(alloc, dtype=np.int64)
        self.r = np.zeros(alloc)
        self.s2 = np.zeros((alloc, dim))
        self.d = np.zeros(alloc)
        self.length = 0

    @property
    def alloc(self) -> int:
        return len(self.r)


@dataclass(frozen=True)
class ReplayBuffer:
    """FIFO of the latest ``capacity`` transitions ``(s, a, r, s', done)``.

    Buffers are immutable views ``[end - size, end)`` onto an append-only
    log. ``add`` writes in place when this view owns the log's tail and
    copies the live window otherwise, so cloning a state is free.
    """

    capacity: int
    log: _Log
    end: int = 0

    @classmethod
    def empty(cls, capacity: int, dim: int = 4) -> "ReplayBuffer":
        return cls(capacity, _Log(capacity + 4096, dim), 0)

    @property
    def size(self) -> int:
        return min(self.end, self.capacity)

    def add(self, s, a, r, s2, done) -> "ReplayBuffer":
        log, end = self.log, self.end
        if log.length != end or end >= log.alloc:
            lo = end - self.size
            fresh = _Log(self.capacity + 4096, log.s.shape[1])
            for name in ("s", "a", "r", "s2", "d"):
                getattr(fresh, name)[: self.size] = getattr(log, name)[lo:end]
            fresh.length = end = self.size
            log = fresh
        log.s[end], log.a[end], log.r[end], log.s2[end], log.d[end] = s, a, r, s2, float(done)
        log.length = end + 1
        return ReplayBuffer(self.capacity, log, end + 1)

    def window(self):
        """(s, a, r, s2, d) arrays of the live contents, oldest first."""
        lo = self.end - self.size
        L = self.log
        return L.s[lo : self.end], L.a[lo : self.end], L.r[lo : self.end], L.s2[lo : self.end], L.d[lo : self.end]

    def recent(self, n: int) -> np.ndarray:
        """Window indices of the ``n`` newest transitions."""
        n = min(n, self.size)
        return np.arange(self.size - n, self.size)


@dataclass
class DqnState:
    params: dict
    target: dict
    opt: mlp.OptimizerState
    buffer: ReplayBuffer
    step: int = 0
    pending: np.ndarray | None = None
    pending_terminal: bool = False
    last_sync: int = 0
    td_var: float = 1.0
    last_loss: float = float("nan")


def epsilon(cfg: DqnConfig, step: int) -> float:
    span = cfg.exploration_fraction * cfg.total_timesteps
    frac = 1.0 if span <= 0 else min(1.0, step / span)
    return cfg.start_e + frac * (cfg.end_e - cfg.start_e)


def q_values(params: dict, states) -> np.ndarray:
    return mlp.forward(params, np.atleast_2d(states))[0]


def td_targets(target: dict, r, s2, d, gamma: float) -> np.ndarray:
    q2 = kernels.mlp_forward(target["W1"], target["b1"], target["W2"], target["b2"], s2)
    return r + gamma * (1.0 - d) * q2.max(-1)


def dqn_act(state: DqnState, cfg: DqnConfig, obs, rng) -> int:
    """epsilon-greedy action; one uniform per call."""
    return int(pd.sample(DqnLearner.greedy_mix(q_values(state.params, obs)[0], epsilon(cfg, state.step)), rng))


class DqnLearner(Learner):
    """Q-network with one tanh hidden layer, two actions.

    The predictive at a state is the epsilon-greedy action distribution;
    probes report the temperature softmax over Q-values. One update
    consumes ``train_frequency`` interaction steps.
    """

    output_kind = "action"
    input_dim = 4

    def __init__(self, cfg: DqnConfig = DqnConfig()):
        self.cfg = cfg
        self.steps_per_update = cfg.train_frequency

    def init_state(self, rng):
        params = mlp.init_params(rng, 4, self.cfg.hidden, 2)
        opt = mlp.OptimizerState("adam", self.cfg.lr).zeros_like(params)
        return DqnState(params, mlp.copy_params(params), opt, ReplayBuffer.empty(self.cfg.buffer_size))

    def clone(self, state):
        return DqnState(mlp.copy_params(state.params), mlp.copy_params(state.target), state.opt.copy(),
                        state.buffer, state.step,
                        None if state.pending is None else state.pending.copy(), state.pending_terminal,
                        state.last_sync, state.td_var, state.last_loss)

    @staticmethod
    def greedy_mix(q: np.ndarray, eps: float) -> pd.Categorical:
        greedy = np.zeros(2)
        greedy[int(np.argmax(q))] = 1.0
        return pd.Categorical(eps / 2.0 + (1.0 - eps) * greedy, (0, 1))

    def predict(self, state, obs):
        return self.greedy_mix(q_values(state.params, obs.x)[0], epsilon(self.cfg, state.step))

    def probe(self, state, points):
        return pd.Categorical(mlp.softmax(q_values(state.params, points) / self.cfg.temperature), (0, 1))

    def observe_initial(self, state, obs):
        return replace(self.clone(state), pending=np.asarray(obs.x, float), pending_terminal=obs.terminal)

    # -- updates ------------------------------------------------------------

    def learn(self, state, obs, out, rng):
        cfg = self.cfg
        new = self.clone(state)
        if not state.pending_terminal and state.pending is not None:
            done = obs.terminal and not obs.info.get("truncated", False)
            new.buffer = new.buffer.add(state.pending, int(out.value), obs.reward, obs.x, done)
        new.pending = np.asarray(obs.x, float)
        new.pending_terminal = bool(obs.terminal)
        new.step += 1
        if self._trains(new.step, new.buffer.size):
            idx = rng.integers(0, new.buffer.size, cfg.batch_size)
            bs, ba, br, bs2, bd = (x[idx] for x in new.buffer.window())
            if obs.hybrid and cfg.hybrid_targets == "self":
                q = kernels.mlp_forward(new.params["W1"], new.params["b1"], new.params["W2"], new.params["b2"],
                                        bs[None])[0]
                y = q[np.arange(len(idx)), ba] + np.sqrt(state.td_var) * rng.standard_normal(len(idx))
            else:
                y = td_targets(new.target, br, bs2[None], bd, cfg.gamma)[0]
            lv, grads = self._td_grad(new.params, bs[None], ba[None], y[None])
            new.params, new.opt = mlp.apply_update(new.params, grads, new.opt)
            new.last_loss = float(lv[0])
        if new.step % cfg.target_network_frequency == 0:
            new.target = self._sync(new.params, new.target)
            new.last_sync = new.step
        return new

    def infer(self, state, obs, out, rng):
        return replace(self.clone(state), pending=np.asarray(obs.x, float), pending_terminal=bool(obs.terminal))

    def _trains(self, step: int, size: int) -> bool:
        cfg = self.cfg
        return step > cfg.learning_starts and step % cfg.train_frequency == 0 and size >= min(cfg.batch_size, cfg.buffer_size)

    def _sync(self, params, target):
        tau = self.cfg.tau
        return {k: tau * params[k] + (1.0 - tau) * target[k] for k in params}

    @staticmethod
    def _td_grad(params, S, A, y):
        """Squared TD error on the taken action only; shapes (M,B,4), (M,B), (M,B)."""
        mask = np.eye(2)[A]
        T = mask * y[..., None]
        lv, *g = kernels.mlp_grad(params["W1"], params["b1"], params["W2"], params["b2"], S, T, mask, kernels.MSE)
        if not np.all(np.isfinite(lv)):
            raise NumericalDivergenceError("non-finite TD loss")
        return lv, dict(zip(mlp.KEYS, g))

    def td_loss(self, params, target, S, A, r, S2, d) -> float:
        y = td_targets(target, r, np.asarray(S2)[None], d, self.cfg.gamma)[0]
        return float(self._td_grad(params, np.asarray(S)[None], np.asarray(A)[None], y[None])[0][0])

    def prepare_estimate(self, state, env):
        """Refit the TD-error variance on the most recent transitions."""
        b = state.buffer
        if b.size == 0:
            return state
        bs, ba, br, bs2, bd = (x[b.recent(1000)] for x in b.window())
        q = q_values(state.params, bs)[np.arange(len(ba)), ba]
        y = td_targets(state.target, br, bs2[None], bd, self.cfg.gamma)[0]
        new = self.clone(state)
        new.td_var = max(float(np.mean((q - y) ** 2)), 1e-6)
        return new

    def transitory(self, state) -> bool:
        """Inside the target-lag window after a sync, or before training starts."""
        return state.step <= self.cfg.learning_starts or state.step - state.last_sync < self.cfg.transitory_window

    def loss_of(self, state):
        return state.last_loss

    def check_finite(self, state, step=None):
        for key in mlp.KEYS:
            if not np.all(np.isfinite(state.params[key])):
                raise NumericalDivergenceError("non-finite Q-network parameter", step)

    # -- vectorised futures -------------------------------------------------

    def particle_predictives(self, state, history, hybrid, ks, rngs, probes, mode="learning"):
        """Batched rollouts on cartpole. Particles share the realised replay
        buffer and keep only their own appended transitions; each particle's
        stream is consumed as in the generic path (action uniform, reset
        draw, batch indices, target noise)."""
        if (mode != "learning" or not isinstance(hybrid.base, CartpoleEnv) or state.pending is None
                or state.buffer.size < min(self.cfg.batch_size, self.cfg.buffer_size)):
            return super().particle_predictives(state, history, hybrid, ks, rngs, probes, mode)
        cfg = self.cfg
        env = hybrid.base
        ks = sorted(ks)
        M = len(rngs)
        H = ks[-1] * cfg.train_frequency
        base = state.buffer
        C, size0 = base.capacity, base.size
        win = base.window()
        P = mlp.tile(state.params, M)
        Pt = mlp.tile(state.target, M)
        opt = state.opt.tile(M)
        cur = np.repeat(state.pending[None], M, 0)
        cur_term = np.full(M, state.pending_terminal)
        ep = np.full(M, history.last_observation.info.get("episode_step", 0))
        Ls, La, Lr, Ls2, Ld = np.zeros((M, H, 4)), np.zeros((M, H), np.int64), np.zeros((M, H)), \
            np.zeros((M, H, 4)), np.zeros((M, H))
        n_loc = np.zeros(M, dtype=np.int64)
        step = state.step
        sd = np.sqrt(state.td_var)
        pr = np.asarray(probes, float)
        out, done_k = [], 0
        for k in ks:
            for _ in range((k - done_k) * cfg.train_frequency):
                q = kernels.mlp_forward(P["W1"], P["b1"], P["W2"], P["b2"], cur[:, None, :])[:, 0, :]
                eps = epsilon(cfg, step)
                p0 = eps / 2.0 + (1.0 - eps) * (np.argmax(q, -1) == 0)
                u = np.empty(M)
                resets = {}
                for m, rng in enumerate(rngs):
                    u[m] = rng.random(())
                    if cur_term[m]:
                        resets[m] = env.reset_state(rng)
                act = (u >= p0).astype(np.int64)
                nxt, term = cartpole_step_batch(cur, act, env.params)
                ep_n = ep + 1
                trunc = (ep_n >= env.params.max_steps) & ~term
                # transitions from non-terminal states go to the local buffer
                store = ~cur_term
                j = n_loc[store]
                Ls[store, j], La[store, j], Lr[store, j] = cur[store], act[store], 1.0
                Ls2[store, j], Ld[store, j] = nxt[store], term[store].astype(float)
                n_loc += store
                new_term = term | trunc
                for m, s0 in resets.items():
                    nxt[m], new_term[m], ep_n[m] = s0, False, 0
                if not np.all(np.isfinite(nxt)):
                    raise NumericalDivergenceError("non-finite cartpole state")
                cur, cur_term, ep = nxt, new_term, ep_n
                step += 1
                sizes = np.minimum(size0 + n_loc, C)
                if self._trains(step, int(sizes.min())):
                    idx = np.empty((M, cfg.batch_size), dtype=np.int64)
                    noise = np.zeros((M, cfg.batch_size))
                    for m, rng in enumerate(rngs):
                        idx[m] = rng.integers(0, sizes[m], cfg.batch_size)
                        if cfg.hybrid_targets == "self":
                            noise[m] = rng.standard_normal(cfg.batch_size)
                    S, A, R, S2, D = self._gather(win, (Ls, La, Lr, Ls2, Ld), size0, n_loc, sizes, idx)
                    if cfg.hybrid_targets == "self":
                        qs = kernels.mlp_forward(P["W1"], P["b1"], P["W2"], P["b2"], S)
                        y = np.take_along_axis(qs, A[..., None], -1)[..., 0] + sd * noise
                    else:
                        q2 = kernels.mlp_forward(Pt["W1"], Pt["b1"], Pt["W2"], Pt["b2"], S2)
                        y = R + cfg.gamma * (1.0 - D) * q2.max(-1)
                    _, g = self._td_grad(P, S, A, y)
                    P, opt = mlp.apply_update(P, g, opt)
                if step % cfg.target_network_frequency == 0:
                    Pt = self._sync(P, Pt)
            done_k = k
            qp = kernels.mlp_forward(P["W1"], P["b1"], P["W2"], P["b2"], pr[None])
            out.append(pd.Categorical(mlp.softmax(qp / cfg.temperature), (0, 1)))
        return out, np.ones(M, dtype=bool)

    @staticmethod
    def _gather(win, local, size0, n_loc, sizes, idx):
        """Entries ``idx`` (M,B) of each particle's buffer: the shared window
        of ``size0`` realised transitions followed by its own appends, of
        which the latest ``sizes[m]`` are live."""
        g = (size0 + n_loc - sizes)[:, None] + idx  # position in window + appends
        own = g >= size0
        gb = np.where(own, 0, g)
        gl = np.where(own, g - size0, 0)
        out = []
        for b_arr, l_arr in zip(win, local):
            from_base = b_arr[gb]
            ix = gl if l_arr.ndim == 2 else gl[..., None]
            from_loc = np.take_along_axis(l_arr, ix, axis=1)
            mask = own if from_base.ndim == 2 else own[..., None]
            out.append(np.where(mask, from_loc, from_base))
        return out


def evaluate_return(learner: DqnLearner, state: DqnState, env: CartpoleEnv, rng, num_steps: int = 1000) -> float:
    """Mean return of the greedy policy over ``num_steps`` interaction steps
    (completed episodes; the partial one if none completed)."""
    s = env.reset_state(rng)
    returns, ret, n = [], 0.0, 0
    for _ in range(num_steps):
        a = int(np.argmax(q_values(state.params, s)[0]))
        s, r, term = cartpole_step(s, a, env.params)
        ret += r
        n += 1
        if term or n >= env.params.max_steps:
            returns.append(ret)
            s, ret, n = env.reset_state(rng), 0.0, 0
    return float(np.mean(returns)) if returns else ret
