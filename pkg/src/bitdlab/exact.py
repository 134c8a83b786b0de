"""Exact dynamic programming for forward, backward and bidirectional values."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .mdp import BackwardKernel, ConvergenceError, Policy, TabularMdp, policy_matrices

DIRECTIONS = ("forward", "backward", "bidirectional")


@dataclass(frozen=True)
class ValueTable:
    """Values for every state index; terminal entries are 0 by convention."""

    direction: str
    values: np.ndarray
    lam: float = 0.0
    gamma: float = 0.99

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        v = np.array(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("value table entries must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    def with_values(self, values: np.ndarray) -> "ValueTable":
        return replace(self, values=values)


@dataclass(frozen=True)
class FixpointReport:
    iterations: int
    final_residual: float
    empirical_factor: float
    theoretical_factor: float
    residuals: tuple[float, ...] = field(default=(), repr=False)


def contraction_factor(direction: str, lam: float, gamma: float) -> float:
    """Worst-case max-norm contraction factor of the direction's operator."""
    if direction == "forward":
        return gamma
    if direction == "backward":
        return lam * gamma
    if direction == "bidirectional":
        return gamma * (1.0 + lam) / (1.0 + lam * gamma**2)
    raise ValueError(f"unknown direction {direction!r}")


def _live_mask(mdp: TabularMdp, kernel: BackwardKernel | None = None) -> np.ndarray:
    mask = ~mdp.terminal
    if kernel is not None:
        mask = mask & (kernel.visit_dist > 0)
    return mask


def _check_kernel(n: int, kernel: BackwardKernel) -> None:
    if kernel.n_states != n:
        raise ValueError(f"kernel covers {kernel.n_states} states, values cover {n}")


# -- direct solves -------------------------------------------------------------

def solve_forward(mdp: TabularMdp, policy: Policy) -> ValueTable:
    """Solve ``(I - gamma P_pi) v = r_pi`` on the non-terminal states."""
    P_pi, r_pi = policy_matrices(mdp, policy)
    nt = mdp.nonterminal
    A = np.eye(len(nt)) - mdp.gamma * P_pi[np.ix_(nt, nt)]
    v = np.zeros(mdp.n_states)
    v[nt] = np.linalg.solve(A, r_pi[nt])
    resid = np.abs(A @ v[nt] - r_pi[nt]).max(initial=0.0)
    assert resid < 1e-10 * max(1.0, np.abs(v).max()), resid
    return ValueTable("forward", v, 0.0, mdp.gamma)


def solve_backward(kernel: BackwardKernel, lam: float, gamma: float) -> ValueTable:
    """Fixpoint of the backward operator by a direct linear solve."""
    live = kernel.visit_dist > 0
    B = kernel.p_back[np.ix_(live, live)]
    lg = lam * gamma
    v = np.zeros(kernel.n_states)
    v[live] = np.linalg.solve(np.eye(B.shape[0]) - lg * B, lg * kernel.r_back[live])
    return ValueTable("backward", v, lam, gamma)


def solve_bidirectional(mdp: TabularMdp, policy: Policy, kernel: BackwardKernel,
                        lam: float) -> ValueTable:
    """Fixpoint of the bidirectional operator by a direct linear solve."""
    _check_kernel(mdp.n_states, kernel)
    g = mdp.gamma
    P_pi, r_pi = policy_matrices(mdp, policy)
    live = _live_mask(mdp, kernel)
    A = ((1.0 + g * g * lam) * np.eye(live.sum())
         - g * P_pi[np.ix_(live, live)] - lam * g * kernel.p_back[np.ix_(live, live)])
    v = np.zeros(mdp.n_states)
    v[live] = np.linalg.solve(A, (1.0 - g * g * lam) * r_pi[live])
    return ValueTable("bidirectional", v, lam, g)


# -- one-sweep operators --------------------------------------------------------

def apply_forward_operator(values: ValueTable, mdp: TabularMdp, policy: Policy) -> ValueTable:
    if values.direction != "forward":
        raise ValueError("forward operator expects a forward value table")
    if len(values) != mdp.n_states:
        raise ValueError("value table does not match the MDP")
    P_pi, r_pi = policy_matrices(mdp, policy)
    out = r_pi + mdp.gamma * P_pi @ values.values
    out[mdp.terminal] = 0.0
    return values.with_values(out)


def apply_backward_operator(values: ValueTable, kernel: BackwardKernel,
                            lam: float, gamma: float) -> ValueTable:
    """``lam*gamma * (r_back(s) + sum_s' p_back(s'|s) v(s'))``; dummy start is 0."""
    if values.direction != "backward":
        raise ValueError("backward operator expects a backward value table")
    _check_kernel(len(values), kernel)
    lg = lam * gamma
    out = lg * kernel.r_back + lg * kernel.p_back @ values.values
    out[kernel.visit_dist <= 0] = 0.0
    return values.with_values(out)


def apply_bidirectional_operator(values: ValueTable, mdp: TabularMdp, policy: Policy,
                                 kernel: BackwardKernel, lam: float,
                                 gamma: float | None = None) -> ValueTable:
    if values.direction != "bidirectional":
        raise ValueError("bidirectional operator expects a bidirectional value table")
    if len(values) != mdp.n_states:
        raise ValueError("value table does not match the MDP")
    _check_kernel(mdp.n_states, kernel)
    g = mdp.gamma if gamma is None else gamma
    P_pi, r_pi = policy_matrices(mdp, policy)
    v = values.values
    out = ((1.0 - g * g * lam) * r_pi + g * P_pi @ v
           + lam * g * kernel.p_back @ v) / (1.0 + g * g * lam)
    out[~_live_mask(mdp, kernel)] = 0.0
    return values.with_values(out)


def iterate_fixpoint(operator: Callable[[ValueTable], ValueTable], initial: ValueTable,
                     tol: float = 1e-10, max_iters: int = 1_000_000,
                     theoretical_factor: float | None = None,
                     window: int = 10) -> tuple[ValueTable, FixpointReport]:
    """Apply ``operator`` until the max-norm change drops below ``tol``.

    The empirical contraction factor is the geometric mean of the last
    ``window`` successive residual ratios.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if theoretical_factor is None:
        theoretical_factor = contraction_factor(initial.direction, initial.lam, initial.gamma)
    v = initial
    residuals: list[float] = []
    for it in range(1, max_iters + 1):
        nxt = operator(v)
        res = float(np.abs(nxt.values - v.values).max(initial=0.0))
        residuals.append(res)
        v = nxt
        if res < tol:
            break
    else:
        raise ConvergenceError(f"no fixpoint within {max_iters} iterations "
                               f"(last residual {residuals[-1]:.3e})")
    ratios = [b / a for a, b in zip(residuals, residuals[1:]) if a > 0 and b > 0]
    tail = ratios[-window:]
    emp = math.exp(sum(map(math.log, tail)) / len(tail)) if tail else 0.0
    report = FixpointReport(it, residuals[-1], emp, theoretical_factor, tuple(residuals))
    return v, report


def bidirectional_consistency(v_fwd: ValueTable, v_back: ValueTable, v_bi: ValueTable) -> float:
    """Max-norm gap between the bidirectional table and forward + backward."""
    return float(np.abs(v_bi.values - v_fwd.values - v_back.values).max(initial=0.0))
