"""Online policy-evaluation update rules.

States are integer indices; ``next_state=None`` marks a terminal transition
(bootstrap value 0).  The predecessor of the first state of an episode is a
dummy start state with value 0 and reward 0, so backward-looking targets are
defined from ``t = 0`` onward.  By default only the forward head is trained at
``t = 0`` and the backward and bidirectional heads start at ``t = 1``;
``update_at_episode_start=True`` trains them against the dummy start as well.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .approx import (HEADS, PARAMETERIZATIONS, FeatureMap, MultiHeadNet, forward_all,
                     gradient, sgd_step)
from .mdp import BackwardKernel, Policy, TabularMdp

ALGORITHMS = ("TD0", "TDLambda", "RefreshedTDLambda", "BiTD")
THETA_TARGETS = ("td", "bi_minus_back", "bi_minus_mc")
PHI_TARGETS = ("mc", "td", "bi_minus_fwd")
PSI_TARGETS = ("bellman", "back_plus_td", "back_plus_fwd")
TARGET_CATALOG = tuple(
    [f"theta:{k}" for k in THETA_TARGETS]
    + [f"phi:{k}" for k in PHI_TARGETS]
    + [f"psi:{k}" for k in PSI_TARGETS])
_PREV_KINDS = {"phi:td", "psi:bellman"}

ValueFn = Callable[[Optional[int]], tuple[float, float, float]]


@dataclass(frozen=True)
class LearnerConfig:
    algorithm: str
    alpha: float
    lam: float = 0.0
    gamma: float = 0.99
    parameterization: str = "BiTD_FR"
    theta_target: str = "td"
    phi_target: str = "mc"
    psi_target: str = "bellman"
    update_at_episode_start: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ValueError(f"parameterization must be one of {PARAMETERIZATIONS}")
        if not self.alpha >= 0:
            raise ValueError("alpha must be non-negative")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        for value, allowed in ((self.theta_target, THETA_TARGETS),
                               (self.phi_target, PHI_TARGETS),
                               (self.psi_target, PSI_TARGETS)):
            if value not in allowed:
                raise ValueError(f"unknown target {value!r}; choose from {allowed}")

    @property
    def label(self) -> str:
        if self.algorithm != "BiTD":
            return self.algorithm
        extra = [f"{h}={v}" for h, v, d in (("theta", self.theta_target, "td"),
                                             ("phi", self.phi_target, "mc"),
                                             ("psi", self.psi_target, "bellman")) if v != d]
        return self.parameterization + (f"[{','.join(extra)}]" if extra else "")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        return out

    @classmethod
    def from_dict(cls, blob: dict) -> "LearnerConfig":
        blob = dict(blob)
        if "lambda" in blob:
            blob["lam"] = blob.pop("lambda")
        return cls(**blob)


@dataclass
class LearnerState:
    """Per-episode memory.  ``backward_return`` always holds ``Gb_t`` for the current step."""

    decay: float
    trace: np.ndarray | None = None
    backward_return: float = 0.0
    prev_state: int | None = None
    prev_reward: float = 0.0
    t: int = 0
    episode_states: list[int] = field(default_factory=list)

    @classmethod
    def for_config(cls, config: LearnerConfig) -> "LearnerState":
        return cls(decay=config.lam * config.gamma)

    def begin_episode(self) -> None:
        self.trace = None
        self.backward_return = 0.0
        self.prev_state = None
        self.prev_reward = 0.0
        self.t = 0
        self.episode_states = []

    def advance(self, state: int, reward: float) -> None:
        self.backward_return = self.decay * (self.backward_return + reward)
        self.prev_state = state
        self.prev_reward = reward
        self.t += 1
        self.episode_states.append(state)


def net_values(net: MultiHeadNet, fmap: FeatureMap) -> ValueFn:
    def value(state):
        if state is None:
            return 0.0, 0.0, 0.0
        return forward_all(net, fmap.encode(state))
    return value


def table_values(v_fwd: np.ndarray, v_back: np.ndarray, v_bi: np.ndarray,
                 terminal: np.ndarray | None = None) -> ValueFn:
    def value(state):
        if state is None or (terminal is not None and terminal[state]):
            return 0.0, 0.0, 0.0
        return float(v_fwd[state]), float(v_back[state]), float(v_bi[state])
    return value


def _forward_delta(net, fmap, state, reward, next_state, gamma):
    x = fmap.encode(state)
    v_s = forward_all(net, x)[0]
    v_n = 0.0 if next_state is None else forward_all(net, fmap.encode(next_state))[0]
    return reward + gamma * v_n - v_s, x


def td0_step(net: MultiHeadNet, fmap: FeatureMap, state: int, reward: float,
             next_state: int | None, config: LearnerConfig) -> tuple[MultiHeadNet, float]:
    delta, x = _forward_delta(net, fmap, state, reward, next_state, config.gamma)
    g = gradient(net, x, "forward")
    return sgd_step(net, g, config.alpha * delta), delta


def td_lambda_step(net, fmap, state, reward, next_state, learner_state: LearnerState,
                   config: LearnerConfig):
    """Accumulating-trace TD(lambda); the trace keeps gradients from old weights."""
    delta, x = _forward_delta(net, fmap, state, reward, next_state, config.gamma)
    g = gradient(net, x, "forward").values
    prev = learner_state.trace
    trace = g.copy() if prev is None else learner_state.decay * prev + g
    learner_state.trace = trace
    return sgd_step(net, trace, config.alpha * delta), delta, trace


def refreshed_trace(net: MultiHeadNet, fmap: FeatureMap, states: list[int], decay: float) -> np.ndarray:
    """``sum_i decay^(t-i) grad v(S_i)`` with every gradient taken at the current weights."""
    acc = np.zeros(net.layout.size)
    for s in states:
        acc = decay * acc + gradient(net, fmap.encode(s), "forward").values
    return acc


def refreshed_td_lambda_step(net, fmap, state, reward, next_state, learner_state: LearnerState,
                             config: LearnerConfig):
    """TD(lambda) with the trace recomputed at the current weights; O(t) per step."""
    delta, _ = _forward_delta(net, fmap, state, reward, next_state, config.gamma)
    trace = refreshed_trace(net, fmap, learner_state.episode_states + [state], learner_state.decay)
    return sgd_step(net, trace, config.alpha * delta), delta


def backward_mc_step(net, fmap, learner_state: LearnerState, state: int,
                     config: LearnerConfig) -> tuple[MultiHeadNet, float]:
    """Regress the backward head on the running backward return."""
    target = learner_state.backward_return
    if learner_state.t == 0 and not config.update_at_episode_start:
        return net, target
    x = fmap.encode(state)
    delta = target - forward_all(net, x)[1]
    return sgd_step(net, gradient(net, x, "backward"), config.alpha * delta), target


def _target(kind: str, value: ValueFn, learner_state: LearnerState, state: int,
            reward: float, next_state: int | None, lam: float, gamma: float,
            dummy_start: bool = True) -> float:
    if kind not in TARGET_CATALOG:
        raise ValueError(f"unknown target kind {kind!r}; choose from {TARGET_CATALOG}")
    if kind in _PREV_KINDS:
        if learner_state.t > 0 and learner_state.prev_state is None:
            raise ValueError(f"{kind} needs the previous state but none was recorded")
        if learner_state.t == 0 and not dummy_start:
            raise ValueError(f"{kind} needs a previous state; none exists at t=0")
    f_s, b_s, bi_s = value(state)
    lg = lam * gamma
    if kind == "theta:td":
        return reward + gamma * value(next_state)[0]
    if kind == "theta:bi_minus_back":
        return bi_s - b_s
    if kind == "theta:bi_minus_mc":
        return bi_s - learner_state.backward_return
    if kind == "phi:mc":
        return learner_state.backward_return
    if kind == "phi:td":
        prev_b = value(learner_state.prev_state)[1]
        return lg * learner_state.prev_reward + lg * prev_b
    if kind == "phi:bi_minus_fwd":
        return bi_s - f_s
    if kind == "psi:bellman":
        g2l = gamma * gamma * lam
        bi_n = value(next_state)[2]
        bi_p = value(learner_state.prev_state)[2]
        return (reward * (1.0 - g2l) + gamma * bi_n + gamma * lam * bi_p) / (1.0 + g2l)
    if kind == "psi:back_plus_td":
        return b_s + reward + gamma * value(next_state)[0]
    return b_s + f_s  # psi:back_plus_fwd


def snapshot_target(kind: str, net: MultiHeadNet, fmap: FeatureMap,
                      learner_state: LearnerState, state: int, reward: float,
                      next_state: int | None, config: LearnerConfig,
                      dummy_start: bool = True) -> float:
    """Scalar regression target of one catalog entry, e.g. ``"psi:bellman"``."""
    return _target(kind, net_values(net, fmap), learner_state, state, reward, next_state,
                   config.lam, config.gamma, dummy_start)


def head_targets(value: ValueFn, learner_state: LearnerState, state: int, reward: float,
                 next_state: int | None, config: LearnerConfig) -> dict[str, float]:
    kinds = {"forward": f"theta:{config.theta_target}",
             "backward": f"phi:{config.phi_target}",
             "bidirectional": f"psi:{config.psi_target}"}
    if learner_state.t == 0 and not config.update_at_episode_start:
        kinds = {"forward": kinds["forward"]}
    return {head: _target(kind, value, learner_state, state, reward, next_state,
                          config.lam, config.gamma)
            for head, kind in kinds.items()}


def bitd_step(net: MultiHeadNet, fmap: FeatureMap, learner_state: LearnerState, state: int,
              reward: float, next_state: int | None, config: LearnerConfig) -> MultiHeadNet:
    """Joint update of all three heads from one frozen snapshot of the weights."""
    value = net_values(net, fmap)
    x = fmap.encode(state)
    current = dict(zip(HEADS, value(state)))
    targets = head_targets(value, learner_state, state, reward, next_state, config)
    update = np.zeros(net.layout.size)
    for head in HEADS:
        if head in targets:
            update = update + (targets[head] - current[head]) * gradient(net, x, head).values
    return sgd_step(net, update, config.alpha)


class Learner:
    """Drives one update rule over a stream of transitions."""

    def __init__(self, net: MultiHeadNet, fmap: FeatureMap, config: LearnerConfig):
        if net.parameterization != config.parameterization:
            net = net.with_parameterization(config.parameterization)
        self.net = net
        self.fmap = fmap
        self.config = config
        self.state = LearnerState.for_config(config)

    def begin_episode(self) -> None:
        self.state.begin_episode()

    def observe(self, state: int, reward: float, next_state: int | None) -> None:
        cfg, ls = self.config, self.state
        if cfg.algorithm == "TD0":
            self.net, _ = td0_step(self.net, self.fmap, state, reward, next_state, cfg)
        elif cfg.algorithm == "TDLambda":
            self.net, _, _ = td_lambda_step(self.net, self.fmap, state, reward, next_state, ls, cfg)
        elif cfg.algorithm == "RefreshedTDLambda":
            self.net, _ = refreshed_td_lambda_step(self.net, self.fmap, state, reward,
                                                   next_state, ls, cfg)
        else:
            self.net = bitd_step(self.net, self.fmap, ls, state, reward, next_state, cfg)
        ls.advance(state, reward)
        if next_state is None:
            ls.begin_episode()


def expected_deltas(value: ValueFn, mdp: TabularMdp, policy: Policy, kernel: BackwardKernel,
                    config: LearnerConfig) -> dict[str, np.ndarray]:
    """Expected per-state TD errors of the configured BiTD targets under stationary sampling.

    Windows ``(S_{t-1}, R_{t-1}, S_t, R_t, S_{t+1})`` are enumerated with their
    exact probabilities given ``S_t = s``.  For the Monte-Carlo backward
    target the conditional mean of ``Gb_t`` given the window is
    ``lam*gamma*(R_{t-1} + vb(S_{t-1}))`` (time-reversed Markov property),
    evaluated through ``value``.
    """
    pi, P, R = policy.action_probs, mdp.transition, mdp.reward
    d = kernel.visit_dist
    out = {h: np.zeros(mdp.n_states) for h in HEADS}
    lg = config.lam * config.gamma
    for s in mdp.nonterminal:
        if d[s] <= 0:
            continue
        prevs = [(kernel.p_start[s], None, 0.0)]
        for sp in mdp.nonterminal:
            for ap in range(mdp.n_actions):
                w = d[sp] * pi[sp, ap] * P[sp, ap, s] / d[s]
                if w > 0:
                    prevs.append((w, int(sp), float(R[sp, ap])))
        nexts = []
        for a in range(mdp.n_actions):
            for sn in np.flatnonzero(P[s, a] > 0):
                w = pi[s, a] * P[s, a, sn]
                if w > 0:
                    nexts.append((w, None if mdp.terminal[sn] else int(sn), float(R[s, a])))
        current = value(int(s))
        for wp, sp, rp in prevs:
            ls = LearnerState(decay=lg, prev_state=sp, prev_reward=rp, t=0 if sp is None else 1,
                              backward_return=0.0 if sp is None else lg * (rp + value(sp)[1]))
            for wn, sn, r in nexts:
                targets = head_targets(value, ls, int(s), r, sn, config)
                for i, head in enumerate(HEADS):
                    if head in targets:
                        out[head][s] += wp * wn * (targets[head] - current[i])
    return out
