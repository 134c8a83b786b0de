"""Stale-gradient diagnostics and evaluation metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .approx import FeatureMap, MultiHeadNet, forward_all, gradient, init_net
from .exact import ValueTable
from .learners import LearnerConfig, LearnerState, refreshed_td_lambda_step, td_lambda_step
from .mdp import Policy, TabularMdp, build_two_state, policy_matrices


@dataclass(frozen=True)
class StalenessRecord:
    """Stored vs fresh gradient of one past state's value at step ``t``.

    ``stale_effect`` and ``fresh_effect`` are the first-order changes of
    ``v(S_i)`` per unit step size produced by that state's trace contribution
    when it uses the stored gradient and the current one respectively.
    """

    t: int
    i: int
    state: int
    dot: float
    cosine: float
    obtuse: bool
    stale_effect: float
    fresh_effect: float


@dataclass(frozen=True)
class MetricSeries:
    steps: np.ndarray
    mstde: np.ndarray
    rmsve: np.ndarray

    def __post_init__(self):
        if not len(self.steps) == len(self.mstde) == len(self.rmsve):
            raise ValueError("metric arrays must be aligned")


def staleness_probe(nets: list[MultiHeadNet], fmap: FeatureMap, episode_states: list[int],
                    lam: float, gamma: float, delta: float = 1.0,
                    head: str = "forward") -> list[StalenessRecord]:
    """Compare each past state's stored gradient with its gradient now.

    ``nets[i]`` holds the weights in use when ``episode_states[i]`` was
    visited; the last entry is the current step ``t``.
    """
    if len(nets) != len(episode_states) or not nets:
        raise ValueError("need one recorded net per visited state")
    t = len(nets) - 1
    now = nets[-1]
    out = []
    for i in range(t):
        x = fmap.encode(episode_states[i])
        old = gradient(nets[i], x, head).values
        new = gradient(now, x, head).values
        dot = float(old @ new)
        norm = float(np.linalg.norm(old) * np.linalg.norm(new))
        cosine = float(np.clip(dot / norm, -1.0, 1.0)) if norm > 0 else 0.0
        w = delta * (lam * gamma) ** (t - i)
        out.append(StalenessRecord(t, i, int(episode_states[i]), dot, cosine, dot < 0,
                                   w * dot, w * float(new @ new)))
    return out


@dataclass(frozen=True)
class StaleDemo:
    seed: int
    alpha: float
    lam: float
    gamma: float
    net0: MultiHeadNet
    net1: MultiHeadNet
    net_stale: MultiHeadNet
    net_fresh: MultiHeadNet
    delta0: float
    delta1: float
    record: StalenessRecord
    values: dict

    @property
    def dv_stale(self) -> float:
        return self.values["stale"][0] - self.values["t1"][0]

    @property
    def dv_fresh(self) -> float:
        return self.values["fresh"][0] - self.values["t1"][0]


def run_two_state_episode(net: MultiHeadNet, fmap: FeatureMap, alpha: float, lam: float,
                          gamma: float, mdp: TabularMdp | None = None) -> dict:
    """One episode of the two-state MDP with both trace rules from the same start.

    Step 0 is shared (both traces equal the gradient at ``s0``); step 1 is
    applied once with the stored trace and once with the refreshed trace.
    """
    mdp = mdp or build_two_state(gamma)
    cfg = LearnerConfig("TDLambda", alpha=alpha, lam=lam, gamma=gamma,
                        parameterization=net.parameterization)
    ls = LearnerState.for_config(cfg)
    r0, r1 = float(mdp.reward[0, 0]), float(mdp.reward[1, 0])
    net1, delta0, _ = td_lambda_step(net, fmap, 0, r0, 1, ls, cfg)
    ls.advance(0, r0)
    fresh_ls = LearnerState(decay=ls.decay, episode_states=list(ls.episode_states), t=ls.t)
    net_stale, delta1, _ = td_lambda_step(net1, fmap, 1, r1, None, ls, cfg)
    net_fresh, _ = refreshed_td_lambda_step(net1, fmap, 1, r1, None, fresh_ls, cfg)
    (record,) = staleness_probe([net, net1], fmap, [0, 1], lam, gamma, delta1)
    v = lambda n: tuple(forward_all(n, fmap.encode(s))[0] for s in (0, 1))
    return {"net1": net1, "net_stale": net_stale, "net_fresh": net_fresh,
            "delta0": delta0, "delta1": delta1, "record": record,
            "values": {"t0": v(net), "t1": v(net1), "stale": v(net_stale), "fresh": v(net_fresh)}}


def is_exhibit(run: dict, require_positive_delta: bool = True) -> bool:
    d1 = run["delta1"]
    vals = run["values"]
    dv_stale = vals["stale"][0] - vals["t1"][0]
    dv_fresh = vals["fresh"][0] - vals["t1"][0]
    if d1 == 0.0 or (require_positive_delta and d1 <= 0.0):
        return False
    return (run["record"].obtuse and np.sign(dv_stale) == -np.sign(d1)
            and np.sign(dv_fresh) == np.sign(d1))


def find_stale_demo(seeds=range(10_000), alpha: float = 1.0, hidden: int = 2,
                    init_scale: float = 2.0, bias_scale: float = 2.0, lam: float = 0.95,
                    gamma: float = 0.99, torso: str = "relu",
                    require_positive_delta: bool = True) -> StaleDemo | None:
    """First seed whose initialization shows the wrong-direction trace update.

    Returns ``None`` when no seed in range qualifies.
    """
    mdp = build_two_state(gamma)
    fmap = FeatureMap.one_hot(2)
    for seed in seeds:
        rng = np.random.default_rng(seed)
        net = init_net(2, hidden, rng, torso=torso, scale=init_scale, bias_scale=bias_scale)
        run = run_two_state_episode(net, fmap, alpha, lam, gamma, mdp)
        if is_exhibit(run, require_positive_delta):
            return StaleDemo(int(seed), alpha, lam, gamma, net, run["net1"], run["net_stale"],
                             run["net_fresh"], run["delta0"], run["delta1"], run["record"],
                             run["values"])
    return None


# -- metrics -------------------------------------------------------------------

def forward_values(source, mdp: TabularMdp, fmap: FeatureMap | None = None) -> np.ndarray:
    """Forward values for every state from a table, an array, or a net + features."""
    if isinstance(source, ValueTable):
        return np.asarray(source.values, float)
    if isinstance(source, MultiHeadNet):
        if fmap is None:
            raise ValueError("a net needs a feature map")
        v = np.zeros(mdp.n_states)
        for s in mdp.nonterminal:
            v[s] = forward_all(source, fmap.encode(int(s)))[0]
        return v
    v = np.asarray(source, float)
    if v.shape != (mdp.n_states,):
        raise ValueError("value array must cover every state")
    return v


def mstde(source, mdp: TabularMdp, policy: Policy, visit_dist: np.ndarray,
          fmap: FeatureMap | None = None) -> float:
    """Visitation-weighted squared expected Bellman residual of the forward values."""
    v = forward_values(source, mdp, fmap).copy()
    v[mdp.terminal] = 0.0
    P_pi, r_pi = policy_matrices(mdp, policy)
    resid = r_pi + mdp.gamma * P_pi @ v - v
    resid[mdp.terminal] = 0.0
    return float(visit_dist @ resid**2)


def rmsve(source, exact, visit_dist: np.ndarray, mdp: TabularMdp | None = None,
          fmap: FeatureMap | None = None) -> float:
    if isinstance(source, MultiHeadNet):
        if mdp is None:
            raise ValueError("a net needs the MDP to enumerate states")
        v = forward_values(source, mdp, fmap)
    else:
        v = np.asarray(getattr(source, "values", source), float)
    ref = np.asarray(getattr(exact, "values", exact), float)
    if v.shape != ref.shape or v.shape != np.shape(visit_dist):
        raise ValueError("value tables and visit distribution must match")
    return float(np.sqrt(visit_dist @ (v - ref) ** 2))
