"""Reference training loop built on the per-step update rules."""
from __future__ import annotations

import numpy as np

from ..approx import MultiHeadNet, forward_all
from ..learners import Learner, LearnerConfig
from ..mdp import SamplingTables, transition_stream
from . import _codes


class _RowFeatures:
    def __init__(self, matrix):
        self.matrix = matrix

    def encode(self, state):
        return self.matrix[state]


def _metrics(v, p_pi, r_pi, mu, v_true, gamma):
    w = mu > 0
    resid = (r_pi + gamma * (p_pi @ v) - v)[w]
    err = (v - v_true)[w]
    return float(mu[w] @ (resid * resid)), float(np.sqrt(mu[w] @ (err * err)))


def train_run(features, terminal, start_cdf, policy_cdf, transition_cdf, reward,
              p_pi, r_pi, mu, v_true, params0, n_inputs, hidden, torso, parameterization,
              algorithm, alpha, lam, gamma, theta_target, phi_target, psi_target,
              update_at_start, uniforms, eval_interval, max_episode_steps):
    terminal = np.asarray(terminal, bool)
    live = np.flatnonzero(~terminal)
    fmap = _RowFeatures(np.asarray(features, float))
    net = MultiHeadNet(np.array(params0, float), n_inputs, hidden,
                       _codes.decode(_codes.PARAMETERIZATION, parameterization),
                       _codes.decode(_codes.TORSO, torso))
    config = LearnerConfig(_codes.decode(_codes.ALGORITHM, algorithm), alpha, lam, gamma,
                           net.parameterization,
                           _codes.decode(_codes.THETA, theta_target),
                           _codes.decode(_codes.PHI, phi_target),
                           _codes.decode(_codes.PSI, psi_target),
                           bool(update_at_start))
    learner = Learner(net, fmap, config)
    tables = SamplingTables(start_cdf, policy_cdf, transition_cdf, reward, terminal)

    steps = uniforms.shape[1]
    n_eval = steps // eval_interval + 1
    mstde = np.full(n_eval, np.inf)
    rmsve = np.full(n_eval, np.inf)
    v = np.zeros(len(terminal))

    def evaluate(k):
        for s in live:
            v[s] = forward_all(learner.net, fmap.encode(s))[0]
        m, r = _metrics(v, p_pi, r_pi, mu, v_true, gamma)
        ok = np.isfinite(m) and m <= _codes.DIVERGENCE_LIMIT and np.all(np.isfinite(learner.net.params))
        if ok:
            mstde[k], rmsve[k] = m, r
        return ok

    with np.errstate(all="ignore"):
        if not evaluate(0):
            return mstde, rmsve, True, np.array(learner.net.params)
        stream = transition_stream(tables, uniforms, max_episode_steps)
        for k, step in enumerate(stream, start=1):
            if step.episode_start:
                learner.begin_episode()
            learner.observe(step.state, step.reward, None if step.terminal else step.next_state)
            if k % eval_interval == 0 and not evaluate(k // eval_interval):
                return mstde, rmsve, True, np.array(learner.net.params)
    return mstde, rmsve, False, np.array(learner.net.params)
