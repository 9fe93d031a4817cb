"""Pole balancing on a cart with the usual benchmark constants."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import NumericalDivergenceError, PreconditionError
from ..futures import EvalProbe
from ..process import Environment, Observation

THETA_LIMIT = 12 * 2 * math.pi / 360
X_LIMIT = 2.4


@dataclass(frozen=True)
class CartpoleParams:
    gravity: float = 9.8
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    half_length: float = 0.5
    force: float = 10.0
    dt: float = 0.02
    max_steps: int = 500


def cartpole_step(state, action: int, p: CartpoleParams = CartpoleParams()):
    """One semi-implicit Euler step; returns ``(state', reward, terminal)``."""
    if action not in (0, 1):
        raise PreconditionError("action must be 0 or 1")
    x, x_dot, theta, theta_dot = (float(v) for v in state)
    f = p.force if action == 1 else -p.force
    cos, sin = math.cos(theta), math.sin(theta)
    total = p.cart_mass + p.pole_mass
    pml = p.pole_mass * p.half_length
    temp = (f + pml * theta_dot * theta_dot * sin) / total
    theta_acc = (p.gravity * sin - cos * temp) / (p.half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total))
    x_acc = temp - pml * theta_acc * cos / total
    x_dot = x_dot + p.dt * x_acc
    x = x + p.dt * x_dot
    theta_dot = theta_dot + p.dt * theta_acc
    theta = theta + p.dt * theta_dot
    new = np.array([x, x_dot, theta, theta_dot])
    if not np.all(np.isfinite(new)):
        raise NumericalDivergenceError("non-finite cartpole state")
    terminal = abs(x) > X_LIMIT or abs(theta) > THETA_LIMIT
    return new, 1.0, terminal


def cartpole_step_batch(states: np.ndarray, actions: np.ndarray, p: CartpoleParams = CartpoleParams()):
    """Vectorised :func:`cartpole_step` over rows of ``states``."""
    x, x_dot, theta, theta_dot = states.T
    f = np.where(actions == 1, p.force, -p.force)
    cos, sin = np.cos(theta), np.sin(theta)
    total = p.cart_mass + p.pole_mass
    pml = p.pole_mass * p.half_length
    temp = (f + pml * theta_dot * theta_dot * sin) / total
    theta_acc = (p.gravity * sin - cos * temp) / (p.half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total))
    x_acc = temp - pml * theta_acc * cos / total
    x_dot = x_dot + p.dt * x_acc
    x = x + p.dt * x_dot
    theta_dot = theta_dot + p.dt * theta_acc
    theta = theta + p.dt * theta_dot
    new = np.stack([x, x_dot, theta, theta_dot], 1)
    terminal = (np.abs(x) > X_LIMIT) | (np.abs(theta) > THETA_LIMIT)
    return new, terminal


def cartpole_energy(state, p: CartpoleParams = CartpoleParams()) -> float:
    """Mechanical energy with the pole as a uniform rod (pivot at the cart)."""
    x, x_dot, theta, theta_dot = (float(v) for v in state)
    l = p.half_length
    vx = x_dot + l * theta_dot * math.cos(theta)
    vy = -l * theta_dot * math.sin(theta)
    inertia = p.pole_mass * l * l / 3.0
    kinetic = 0.5 * p.cart_mass * x_dot**2 + 0.5 * p.pole_mass * (vx * vx + vy * vy) + 0.5 * inertia * theta_dot**2
    return kinetic + p.pole_mass * p.gravity * l * math.cos(theta)


class CartpoleEnv(Environment):
    """Episodes restart after a terminal observation.

    An observation carries the state reached by the previous action; the
    one following a terminal observation is a fresh start, and the action
    taken there is ignored. ``info["truncated"]`` marks time-limit ends.
    """

    input_dim = 4

    def __init__(self, params: CartpoleParams = CartpoleParams(), n_probes: int = 64, probe_seed: int = 12345):
        self.params = params
        self.n_probes = n_probes
        self.probe_seed = probe_seed
        self._probes = None

    def reset_state(self, rng) -> np.ndarray:
        return rng.uniform(-0.05, 0.05, size=4)

    def initial(self, rng):
        return Observation("rl", x=self.reset_state(rng), info={"episode_step": 0})

    def _advance(self, prev: Observation, action, rng, hybrid: bool) -> Observation:
        if prev.terminal:
            return Observation("rl", x=self.reset_state(rng), hybrid=hybrid, info={"episode_step": 0})
        s, r, term = cartpole_step(prev.x, int(action), self.params)
        n = prev.info.get("episode_step", 0) + 1
        truncated = n >= self.params.max_steps and not term
        return Observation("rl", x=s, reward=r, terminal=term or truncated, hybrid=hybrid,
                           info={"episode_step": n, "truncated": truncated})

    def next(self, history, output, rng):
        return self._advance(history.last_observation, output.value, rng, False)

    def borrow(self, history, output, rng, at_time):
        # actions are the learner's own; dynamics are the real ones
        return self._advance(history.last_observation, output.value, rng, True)

    def probes(self) -> EvalProbe:
        if self._probes is None:
            self._probes = EvalProbe(self._visited_states(), "visited states")
        return self._probes

    def _visited_states(self) -> np.ndarray:
        """States from uniform-random play under a fixed seed."""
        rng = np.random.default_rng(self.probe_seed)
        out, s = [], self.reset_state(rng)
        while len(out) < self.n_probes:
            out.append(s)
            s, _, term = cartpole_step(s, int(rng.integers(2)), self.params)
            if term:
                s = self.reset_state(rng)
        return np.asarray(out)


def random_episode_lengths(n: int, rng, params: CartpoleParams = CartpoleParams()) -> np.ndarray:
    env = CartpoleEnv(params)
    lengths = np.empty(n, dtype=int)
    for i in range(n):
        s, steps, done = env.reset_state(rng), 0, False
        while not done and steps < params.max_steps:
            s, _, done = cartpole_step(s, int(rng.integers(2)), params)
            steps += 1
        lengths[i] = steps
    return lengths
