"""Finite MDPs, rollouts, stationary visitation and time-reversed kernels.

State indices cover both non-terminal and terminal states.  Terminal states
are absorbing with zero reward; value tables carry 0 there.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

logger = logging.getLogger(__name__)

PROB_TOL = 1e-12


class ConvergenceError(RuntimeError):
    pass


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP ``(S, A, P, R, d0, gamma)`` with explicit terminal flags.

    ``transition[s, a, s']`` is the next-state probability, ``reward[s, a]``
    the deterministic reward for taking ``a`` in ``s``.
    """

    transition: np.ndarray
    reward: np.ndarray
    start_dist: np.ndarray
    terminal: np.ndarray
    gamma: float
    name: str = "custom"

    def __post_init__(self):
        P = _readonly(self.transition)
        R = _readonly(self.reward)
        d0 = _readonly(self.start_dist)
        term = np.array(self.terminal, dtype=bool)
        term.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "start_dist", d0)
        object.__setattr__(self, "terminal", term)

        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must be [S, A, S], got {P.shape}")
        n_s, n_a, _ = P.shape
        if n_s < 1 or n_a < 1:
            raise ValueError("need at least one state and one action")
        if R.shape != (n_s, n_a):
            raise ValueError(f"reward must be [S, A] = {(n_s, n_a)}, got {R.shape}")
        if d0.shape != (n_s,) or term.shape != (n_s,):
            raise ValueError("start_dist and terminal must have one entry per state")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > PROB_TOL):
            raise ValueError("every transition row must be a probability vector")
        if np.any(d0 < 0) or abs(d0.sum() - 1.0) > PROB_TOL:
            raise ValueError("start_dist must sum to 1")
        if np.any(d0[term] > 0):
            raise ValueError("terminal states cannot carry start probability")
        for s in np.flatnonzero(term):
            if np.any(P[s, :, s] != 1.0) or np.any(R[s] != 0.0):
                raise ValueError(f"terminal state {s} must self-loop with reward 0")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def nonterminal(self) -> np.ndarray:
        return np.flatnonzero(~self.terminal)

    def with_gamma(self, gamma: float) -> "TabularMdp":
        return TabularMdp(self.transition, self.reward, self.start_dist,
                          self.terminal, gamma, self.name)


@dataclass(frozen=True)
class Policy:
    action_probs: np.ndarray

    def __post_init__(self):
        pi = _readonly(self.action_probs)
        object.__setattr__(self, "action_probs", pi)
        if pi.ndim != 2:
            raise ValueError("action_probs must be [S, A]")
        if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > PROB_TOL):
            raise ValueError("each policy row must sum to 1")

    @classmethod
    def uniform(cls, mdp: TabularMdp) -> "Policy":
        return cls(np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions))


class Transition(NamedTuple):
    state: int
    action: int
    reward: float
    next_state: int


@dataclass
class Trajectory:
    transitions: list[Transition] = field(default_factory=list)
    terminated: bool = False

    def __len__(self):
        return len(self.transitions)

    @property
    def states(self) -> list[int]:
        return [tr.state for tr in self.transitions]

    @property
    def rewards(self) -> np.ndarray:
        return np.array([tr.reward for tr in self.transitions])

    def returns(self, gamma: float) -> np.ndarray:
        """Discounted returns ``G_t`` for every step (truncated at the end)."""
        out = np.zeros(len(self))
        g = 0.0
        for t in range(len(self) - 1, -1, -1):
            g = self.transitions[t].reward + gamma * g
            out[t] = g
        return out

    def backward_returns(self, lam: float, gamma: float) -> np.ndarray:
        """``sum_{i=1}^t (lam*gamma)^i R_{t-i}`` for every step."""
        out = np.zeros(len(self))
        for t in range(1, len(self)):
            out[t] = lam * gamma * (out[t - 1] + self.transitions[t - 1].reward)
        return out


def check_trajectory(traj: Trajectory, mdp: TabularMdp) -> None:
    for a, b in zip(traj.transitions, traj.transitions[1:]):
        if a.next_state != b.state:
            raise ValueError("consecutive transitions do not chain")
    if traj.terminated and traj.transitions:
        if not mdp.terminal[traj.transitions[-1].next_state]:
            raise ValueError("terminated trajectory must end in a terminal state")


# -- builders ---------------------------------------------------------------

LEFT, RIGHT = 0, 1


def build_chain(n_nonterminal: int = 9, reward_amplitude: float = 5.0,
                gamma: float = 0.99) -> TabularMdp:
    """Linear chain with two absorbing ends.

    States ``0 .. n-1`` are non-terminal; ``n`` is the left terminal and
    ``n+1`` the right one.  Entering non-terminal state ``i`` pays
    ``+amplitude`` for even ``i`` and ``-amplitude`` for odd ``i``; entering a
    terminal pays 0.  Episodes start uniformly over non-terminal states.
    """
    if n_nonterminal < 2:
        raise ValueError("chain needs at least 2 non-terminal states")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    n = n_nonterminal
    n_s = n + 2
    P = np.zeros((n_s, 2, n_s))
    R = np.zeros((n_s, 2))
    for s in range(n):
        for a, step in ((LEFT, -1), (RIGHT, 1)):
            nxt = s + step
            if nxt < 0:
                nxt = n
            elif nxt >= n:
                nxt = n + 1
            P[s, a, nxt] = 1.0
            if nxt < n:
                R[s, a] = reward_amplitude if nxt % 2 == 0 else -reward_amplitude
    for s in (n, n + 1):
        P[s, :, s] = 1.0
    d0 = np.zeros(n_s)
    d0[:n] = 1.0 / n
    term = np.zeros(n_s, dtype=bool)
    term[n:] = True
    return TabularMdp(P, R, d0, term, gamma, name=f"chain{n}")


def build_two_state(gamma: float = 0.99) -> TabularMdp:
    """``s0 -> s1 -> terminal`` with a single action and zero rewards."""
    P = np.zeros((3, 1, 3))
    P[0, 0, 1] = 1.0
    P[1, 0, 2] = 1.0
    P[2, 0, 2] = 1.0
    return TabularMdp(P, np.zeros((3, 1)), np.array([1.0, 0.0, 0.0]),
                      np.array([False, False, True]), gamma, name="two_state")


def mdp_from_dict(spec: dict) -> TabularMdp:
    """Build an MDP from a JSON-style description.

    Either ``{"preset": "chain", ...kwargs}`` / ``{"preset": "two_state"}`` or
    an explicit description::

        {"n_states": 3, "n_actions": 1, "gamma": 0.9,
         "terminal": [2], "start": {"0": 1.0},
         "transitions": [[s, a, s_next, prob], ...],
         "rewards": [[s, a, r], ...]}
    """
    spec = dict(spec)
    preset = spec.pop("preset", None)
    if preset is not None:
        try:
            builder = PRESETS[preset]
        except KeyError:
            raise ValueError(f"unknown MDP preset {preset!r}; "
                             f"choose from {sorted(PRESETS)}") from None
        return builder(**spec)

    n_s, n_a = int(spec["n_states"]), int(spec["n_actions"])
    P = np.zeros((n_s, n_a, n_s))
    R = np.zeros((n_s, n_a))
    term = np.zeros(n_s, dtype=bool)
    term[list(spec.get("terminal", []))] = True
    for s, a, nxt, p in spec["transitions"]:
        P[int(s), int(a), int(nxt)] += float(p)
    for s, a, r in spec.get("rewards", []):
        R[int(s), int(a)] = float(r)
    for s in np.flatnonzero(term):
        P[s] = 0.0
        P[s, :, s] = 1.0
    d0 = np.zeros(n_s)
    for s, p in spec["start"].items():
        d0[int(s)] = float(p)
    return TabularMdp(P, R, d0, term, float(spec["gamma"]),
                      name=spec.get("name", "custom"))


def load_mdp(path: str | Path) -> TabularMdp:
    return mdp_from_dict(json.loads(Path(path).read_text()))


PRESETS = {"chain": build_chain, "two_state": build_two_state}


# -- policy-induced quantities ------------------------------------------------

def policy_matrices(mdp: TabularMdp, policy: Policy) -> tuple[np.ndarray, np.ndarray]:
    """State-to-state kernel ``P_pi[s, s']`` and expected reward ``r_pi[s]``."""
    pi = policy.action_probs
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("policy shape does not match the MDP")
    P_pi = np.einsum("sa,sat->st", pi, mdp.transition)
    r_pi = np.einsum("sa,sa->s", pi, mdp.reward)
    return P_pi, r_pi


def draw(cdf: np.ndarray, u: float) -> int:
    """Inverse-CDF draw: first index whose cumulative mass exceeds ``u``."""
    k = int(np.searchsorted(cdf, u, side="right"))
    return min(k, len(cdf) - 1)


@dataclass(frozen=True)
class SamplingTables:
    """Cumulative tables shared by the Python rollouts and the compiled kernel."""

    start_cdf: np.ndarray
    policy_cdf: np.ndarray
    transition_cdf: np.ndarray
    reward: np.ndarray
    terminal: np.ndarray

    @classmethod
    def build(cls, mdp: TabularMdp, policy: Policy) -> "SamplingTables":
        return cls(np.cumsum(mdp.start_dist),
                   np.cumsum(policy.action_probs, axis=1),
                   np.cumsum(mdp.transition, axis=2),
                   np.asarray(mdp.reward, float),
                   np.asarray(mdp.terminal, bool))


def sample_episode(mdp: TabularMdp, policy: Policy, rng: np.random.Generator,
                   max_steps: int = 10_000) -> Trajectory:
    tables = SamplingTables.build(mdp, policy)
    traj = Trajectory()
    s = draw(tables.start_cdf, rng.random())
    for _ in range(max_steps):
        a = draw(tables.policy_cdf[s], rng.random())
        nxt = draw(tables.transition_cdf[s, a], rng.random())
        traj.transitions.append(Transition(s, a, float(mdp.reward[s, a]), nxt))
        if mdp.terminal[nxt]:
            traj.terminated = True
            break
        s = nxt
    return traj


class Step(NamedTuple):
    state: int
    action: int
    reward: float
    next_state: int
    terminal: bool
    episode_start: bool


def transition_stream(tables: SamplingTables, uniforms: np.ndarray,
                      max_episode_steps: int = 10_000) -> Iterator[Step]:
    """Continual rollout driven by pre-drawn uniforms of shape ``(3, steps)``.

    Row 0 seeds episode starts, row 1 actions, row 2 next states.  The
    compiled training kernel consumes the same rows identically.
    """
    s, ep_len = -1, 0
    for k in range(uniforms.shape[1]):
        start = s < 0
        if start:
            s = draw(tables.start_cdf, uniforms[0, k])
            ep_len = 0
        a = draw(tables.policy_cdf[s], uniforms[1, k])
        nxt = draw(tables.transition_cdf[s, a], uniforms[2, k])
        done = bool(tables.terminal[nxt])
        yield Step(s, a, float(tables.reward[s, a]), nxt, done, start)
        ep_len += 1
        s = -1 if done or ep_len >= max_episode_steps else nxt


# -- stationary visitation and the backward kernel ---------------------------

def restart_chain(mdp: TabularMdp, policy: Policy) -> np.ndarray:
    """State kernel where reaching a terminal state restarts from ``d0``."""
    P_pi, _ = policy_matrices(mdp, policy)
    M = P_pi.copy()
    M[mdp.terminal] = mdp.start_dist
    return M


def visitation_distribution(mdp: TabularMdp, policy: Policy, tol: float = 1e-13,
                            max_iters: int = 1_000_000) -> np.ndarray:
    """On-policy state distribution of the restart-augmented chain.

    Power iteration runs on the lazy chain ``(I + M) / 2`` (same stationary
    law, aperiodic even when episodes have fixed length).  The result is
    restricted to non-terminal states and renormalized; terminal entries are 0.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    M = 0.5 * (np.eye(mdp.n_states) + restart_chain(mdp, policy))
    mu = np.full(mdp.n_states, 1.0 / mdp.n_states)
    for _ in range(max_iters):
        nxt = mu @ M
        change = 0.5 * np.abs(nxt - mu).sum()
        mu = nxt
        if change < tol:
            break
    else:
        raise ConvergenceError(f"power iteration did not reach tol={tol} "
                               f"within {max_iters} iterations")
    d = np.where(mdp.terminal, 0.0, mu)
    return d / d.sum()


@dataclass(frozen=True)
class BackwardKernel:
    """Time-reversed dynamics under the stationary visitation distribution.

    ``p_back[s, s']`` is the probability that the predecessor of ``s`` was
    ``s'``; ``p_start[s]`` the probability that ``s`` opened the episode (the
    predecessor is the dummy start state, whose value and reward are 0).
    """

    p_back: np.ndarray
    p_start: np.ndarray
    r_back: np.ndarray
    visit_dist: np.ndarray
    unreachable: tuple[int, ...] = ()

    @property
    def n_states(self) -> int:
        return self.p_back.shape[0]

    def row_mass(self) -> np.ndarray:
        return self.p_back.sum(axis=1) + self.p_start


def backward_kernel(mdp: TabularMdp, policy: Policy,
                    visit_dist: np.ndarray | None = None) -> BackwardKernel:
    d = visitation_distribution(mdp, policy) if visit_dist is None else np.asarray(visit_dist, float)
    if d.shape != (mdp.n_states,):
        raise ValueError("visit_dist must have one entry per state")
    P_pi, _ = policy_matrices(mdp, policy)
    live = ~mdp.terminal & (d > 0)
    unreachable = tuple(int(s) for s in np.flatnonzero(~mdp.terminal & (d <= 0)))
    if unreachable:
        logger.warning("states with zero visitation mass excluded: %s", unreachable)

    pi = policy.action_probs
    nt = ~mdp.terminal
    # joint stationary flow into s from (s', a'): d(s') pi(a'|s') P(s|s',a')
    flow = d[:, None, None] * pi[:, :, None] * mdp.transition
    flow[~nt] = 0.0
    inv_d = np.zeros_like(d)
    inv_d[live] = 1.0 / d[live]

    p_back = (d[:, None] * P_pi).T * inv_d[:, None]
    p_back[~live] = 0.0
    p_back[:, ~nt] = 0.0
    start_rate = float(d[nt] @ P_pi[np.ix_(nt, mdp.terminal)].sum(axis=1))
    p_start = np.where(live, start_rate * mdp.start_dist * inv_d, 0.0)
    r_back = np.einsum("pat,pa->t", flow, mdp.reward) * inv_d
    r_back[~live] = 0.0
    return BackwardKernel(_readonly(p_back), _readonly(p_start), _readonly(r_back),
                          _readonly(d), unreachable)
