"""Exhaustive-enumeration check of the discounted-value-sum identity.

For trajectories conditioned on ``S_t = s`` the identity reads::

    E[sum_{i<=t} (lam*g)^(t-i) v(S_i)]
        = E[G_t + Gb_t - g (lam*g)^(t+1) G_0] / (1 - g^2 lam)

where ``Gb_t`` is the backward return.  The left side uses the solved forward
values; the right side uses only rewards, with the future part computed as a
finite-horizon expectation.  ``lhs_returns`` is the left side with each
``v(S_i)`` replaced by the realized return ``G_i``; that form holds pathwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exact import solve_forward
from .mdp import Policy, TabularMdp, policy_matrices

MAX_PATHS = 10_000_000


@dataclass(frozen=True)
class LemmaResult:
    state: int
    t: int
    lam: float
    probability: float
    lhs: float
    rhs: float
    lhs_returns: float

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def gap_returns(self) -> float:
        return abs(self.lhs_returns - self.rhs)


def _horizon_values(mdp: TabularMdp, policy: Policy, tail_tol: float) -> np.ndarray:
    P_pi, r_pi = policy_matrices(mdp, policy)
    g = mdp.gamma
    rmax = np.abs(r_pi).max(initial=0.0)
    horizon = 0
    if rmax > 0:
        horizon = int(np.ceil(np.log(tail_tol * (1 - g) / rmax) / np.log(g))) + 1
    u = np.zeros(mdp.n_states)
    for _ in range(max(horizon, 1)):
        u = r_pi + g * P_pi @ u
        u[mdp.terminal] = 0.0
    return u


def _prefixes(mdp: TabularMdp, policy: Policy, t: int):
    """Yield ``(prob, states, rewards)`` for all live length-``t`` prefixes."""
    pi, P = policy.action_probs, mdp.transition
    frontier = [(float(p), (int(s),), ()) for s, p in enumerate(mdp.start_dist) if p > 0]
    for _ in range(t):
        nxt = []
        for prob, states, rewards in frontier:
            s = states[-1]
            for a in np.flatnonzero(pi[s] > 0):
                for s2 in np.flatnonzero(P[s, a] > 0):
                    if mdp.terminal[s2]:
                        continue
                    nxt.append((prob * pi[s, a] * P[s, a, s2], states + (int(s2),),
                                rewards + (float(mdp.reward[s, a]),)))
        if len(nxt) > MAX_PATHS:
            raise ValueError(f"enumeration exceeds {MAX_PATHS} weighted paths")
        frontier = nxt
    return frontier


def value_sum_table(mdp: TabularMdp, policy: Policy, t: int, lam: float,
                 tail_tol: float = 1e-13) -> dict[int, LemmaResult]:
    """Both sides of the identity for every state reachable at time ``t``."""
    g = mdp.gamma
    lg = lam * g
    v = solve_forward(mdp, policy).values
    v_h = _horizon_values(mdp, policy, tail_tol)
    acc: dict[int, np.ndarray] = {}
    for prob, states, rewards in _prefixes(mdp, policy, t):
        s = states[-1]
        future = v_h[s]
        lhs = sum(lg ** (t - i) * v[si] for i, si in enumerate(states))
        back = sum(lg**i * rewards[t - i] for i in range(1, t + 1))
        # G_i = sum_{j=i}^{t-1} g^(j-i) R_j + g^(t-i) G_t
        g_i = np.empty(t + 1)
        g_i[t] = future
        for i in range(t - 1, -1, -1):
            g_i[i] = rewards[i] + g * g_i[i + 1]
        lhs_ret = sum(lg ** (t - i) * g_i[i] for i in range(t + 1))
        rhs = (future + back - g * lg ** (t + 1) * g_i[0]) / (1.0 - g * g * lam)
        row = acc.setdefault(s, np.zeros(4))
        row += prob * np.array([1.0, lhs, rhs, lhs_ret])
    return {s: LemmaResult(s, t, lam, w, lhs / w, rhs / w, lr / w)
            for s, (w, lhs, rhs, lr) in sorted(acc.items())}


def value_sum_check(mdp: TabularMdp, policy: Policy, state: int, t: int,
                 lam: float) -> tuple[float, float, float]:
    """``(lhs, rhs, |lhs - rhs|)`` conditioned on ``S_t = state``."""
    table = value_sum_table(mdp, policy, t, lam)
    if state not in table:
        raise ValueError(f"state {state} is unreachable at time {t}")
    res = table[state]
    return res.lhs, res.rhs, res.gap
