"""Reference computations that avoid the package's own solvers.

Everything here works from raw arrays ``(P, R, d0, terminal, gamma)`` and a
policy matrix, using per-episode occupancy (renewal-reward) instead of the
stationary power iteration and the time-reversed kernel.  Running this file
regenerates ``fixtures/frozen.json``; the tests compare the package against
those frozen numbers.
"""
import json
from pathlib import Path

import numpy as np

FIXTURE = Path(__file__).parent / "fixtures" / "frozen.json"


def chain_arrays(n=9, amp=5.0, gamma=0.99):
    """Chain built from its verbal description, independently of the package builder."""
    S = n + 2
    P = np.zeros((S, 2, S))
    R = np.zeros((S, 2))
    for s in range(n):
        for a, nxt in ((0, s - 1 if s > 0 else n), (1, s + 1 if s < n - 1 else n + 1)):
            P[s, a, nxt] = 1.0
            if nxt < n:
                R[s, a] = amp if nxt % 2 == 0 else -amp
    P[n, :, n] = 1.0
    P[n + 1, :, n + 1] = 1.0
    d0 = np.r_[np.full(n, 1.0 / n), 0.0, 0.0]
    term = np.r_[np.zeros(n, bool), True, True]
    return P, R, d0, term, gamma


def two_state_arrays(gamma=0.99):
    P = np.zeros((3, 1, 3))
    P[0, 0, 1] = P[1, 0, 2] = P[2, 0, 2] = 1.0
    return P, np.zeros((3, 1)), np.array([1.0, 0, 0]), np.array([False, False, True]), gamma


# four live states, one terminal, two actions; stochastic moves and mixed-sign rewards
SMALL_SPEC = {
    "n_states": 5, "n_actions": 2, "gamma": 0.9, "terminal": [4],
    "start": {"0": 0.5, "1": 0.25, "2": 0.25},
    "transitions": [[0, 0, 1, 0.7], [0, 0, 2, 0.3], [0, 1, 3, 1.0],
                    [1, 0, 0, 0.5], [1, 0, 4, 0.5], [1, 1, 2, 0.6], [1, 1, 3, 0.4],
                    [2, 0, 3, 0.8], [2, 0, 0, 0.2], [2, 1, 4, 1.0],
                    [3, 0, 4, 0.9], [3, 0, 1, 0.1], [3, 1, 0, 0.5], [3, 1, 2, 0.5]],
    "rewards": [[0, 0, 1.0], [0, 1, -2.0], [1, 0, 0.5], [1, 1, 3.0],
                [2, 0, -1.0], [2, 1, 4.0], [3, 0, 2.0], [3, 1, -0.5]],
}


def small_arrays():
    spec = SMALL_SPEC
    S, A = spec["n_states"], spec["n_actions"]
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    for s, a, nxt, p in spec["transitions"]:
        P[s, a, nxt] = p
    for s, a, r in spec["rewards"]:
        R[s, a] = r
    P[4, :, 4] = 1.0
    d0 = np.zeros(S)
    for s, p in spec["start"].items():
        d0[int(s)] = p
    term = np.array([False] * 4 + [True])
    return P, R, d0, term, spec["gamma"]


def uniform_policy(P):
    return np.full(P.shape[:2], 1.0 / P.shape[1])


def forward_values(P, R, d0, term, gamma, pi, tol=1e-12, max_iters=200_000):
    v = np.zeros(len(term))
    for _ in range(max_iters):
        new = np.zeros_like(v)
        for s in range(len(v)):
            if term[s]:
                continue
            new[s] = sum(pi[s, a] * (R[s, a] + gamma * P[s, a] @ v) for a in range(P.shape[1]))
        if np.abs(new - v).max() < tol:
            return new
        v = new
    raise RuntimeError("value iteration did not settle")


def episode_occupancy(P, d0, term, pi, tol=1e-16):
    """Expected visits per episode to each state, summed step by step."""
    live = np.where(term, 0.0, 1.0)
    P_pi = np.einsum("sa,sat->st", pi, P)
    a = d0 * live
    N = np.zeros_like(a)
    while a.sum() > tol:
        N += a
        a = (a @ P_pi) * live
    return N


def visitation(P, d0, term, pi):
    N = episode_occupancy(P, d0, term, pi)
    return N / N.sum()


def backward_values(P, R, d0, term, gamma, pi, lam, tol=1e-16):
    """Per-episode ratio E[sum_t Gb_t 1{S_t=s}] / E[sum_t 1{S_t=s}]."""
    live = np.where(term, 0.0, 1.0)
    lg = lam * gamma
    a = d0 * live
    c = np.zeros_like(a)
    N = np.zeros_like(a)
    C = np.zeros_like(a)
    while a.sum() > tol:
        N += a
        C += c
        a_next = np.zeros_like(a)
        c_next = np.zeros_like(a)
        for s in np.flatnonzero(a > 0):
            for act in range(P.shape[1]):
                w = pi[s, act] * P[s, act]
                a_next += a[s] * w
                c_next += lg * (c[s] + R[s, act] * a[s]) * w
        a, c = a_next * live, c_next * live
    out = np.zeros_like(a)
    out[N > 0] = C[N > 0] / N[N > 0]
    return out


def bidirectional_values(P, R, d0, term, gamma, pi, lam, tol=1e-12, max_iters=2_000_000):
    """Fixpoint iteration of the symmetric Bellman-style equation with occupancy-based reversal."""
    N = episode_occupancy(P, d0, term, pi)
    P_pi = np.einsum("sa,sat->st", pi, P)
    r_pi = np.einsum("sa,sa->s", pi, R)
    S = len(term)
    back = np.zeros((S, S))
    for s in range(S):
        if term[s] or N[s] <= 0:
            continue
        for sp in range(S):
            if not term[sp]:
                back[s, sp] = N[sp] * P_pi[sp, s] / N[s]
    g2l = gamma * gamma * lam
    v = np.zeros(S)
    for _ in range(max_iters):
        new = ((1 - g2l) * r_pi + gamma * P_pi @ v + lam * gamma * back @ v) / (1 + g2l)
        new[term] = 0.0
        if np.abs(new - v).max() < tol:
            return new
        v = new
    raise RuntimeError("fixpoint iteration did not settle")


def mstde(v, P, R, term, gamma, pi, mu):
    P_pi = np.einsum("sa,sat->st", pi, P)
    r_pi = np.einsum("sa,sa->s", pi, R)
    total = 0.0
    for s in range(len(v)):
        if mu[s] > 0:
            total += mu[s] * (r_pi[s] + gamma * P_pi[s] @ v - v[s]) ** 2
    return total


def finite_difference(f, params, eps=1e-5):
    g = np.zeros_like(params)
    for i in range(len(params)):
        up, dn = params.copy(), params.copy()
        up[i] += eps
        dn[i] -= eps
        g[i] = (f(up) - f(dn)) / (2 * eps)
    return g


def compute_frozen():
    out = {}
    for name, arrays in (("chain9", chain_arrays()), ("two_state", two_state_arrays()),
                         ("chain5_g09", chain_arrays(5, 5.0, 0.9)), ("small", small_arrays())):
        P, R, d0, term, gamma = arrays
        pi = uniform_policy(P)
        entry = {"forward": forward_values(P, R, d0, term, gamma, pi).tolist(),
                 "visitation": visitation(P, d0, term, pi).tolist(),
                 "backward": {}, "bidirectional": {}}
        for lam in (0.0, 0.4, 0.95, 1.0):
            entry["backward"][str(lam)] = backward_values(P, R, d0, term, gamma, pi, lam).tolist()
            entry["bidirectional"][str(lam)] = bidirectional_values(
                P, R, d0, term, gamma, pi, lam).tolist()
        out[name] = entry
    return out


if __name__ == "__main__":
    FIXTURE.parent.mkdir(exist_ok=True)
    FIXTURE.write_text(json.dumps(compute_frozen(), indent=1) + "\n")
    print(f"wrote {FIXTURE}")
