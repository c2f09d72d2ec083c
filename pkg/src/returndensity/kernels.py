"""Hot loops: the tabular learning loop and Monte Carlo return rollouts.

All randomness is drawn up front by the caller (uniforms, reward draws) so the
numba and pure-numpy paths consume identical streams and agree up to libm
rounding.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import USE_NUMBA, jit
from .updates import (
    GAUSSIAN,
    LAPLACE,
    apply_increment,
    fisher_times,
    ng_direction,
)

QQ, WATKINS, QHAT = 0, 1, 2
SOFTMAX, EPSILON_GREEDY = 0, 1


@jit
def qhat_value(kind, p0, p1, p2, q, zq):
    """q-quantile of one density; ``zq`` is the standard-normal q-quantile."""
    if kind == GAUSSIAN:
        return p0 + p1 * zq
    if kind == LAPLACE:
        if q <= 0.5:
            return p0 + p1 * math.log(2.0 * q)
        return p0 - p1 * math.log(2.0 - 2.0 * q)
    if q <= p2:
        return p0 + p1 / (1.0 - p2) * math.log(q / p2)
    return p0 - p1 / p2 * math.log((1.0 - q) / (1.0 - p2))


@jit
def argmax_first(row):
    best = 0
    for a in range(1, row.shape[0]):
        if row[a] > row[best]:
            best = a
    return best


@jit
def policy_probs(policy, row, explore, out):
    """Fill ``out`` with softmax(beta * row) or epsilon-greedy probabilities."""
    n = row.shape[0]
    if policy == EPSILON_GREEDY:
        best = argmax_first(row)
        for a in range(n):
            out[a] = explore / n
        out[best] += 1.0 - explore
        return
    mx = row[0]
    for a in range(1, n):
        if row[a] > mx:
            mx = row[a]
    total = 0.0
    for a in range(n):
        out[a] = math.exp(explore * (row[a] - mx))
        total += out[a]
    for a in range(n):
        out[a] /= total


@jit
def select_action_u(policy, row, explore, u_act, u_eps):
    n = row.shape[0]
    if policy == EPSILON_GREEDY:
        if u_eps < explore:
            a = int(u_act * n)
            return a if a < n else n - 1
        return argmax_first(row)
    mx = row[0]
    for a in range(1, n):
        if row[a] > mx:
            mx = row[a]
    total = 0.0
    for a in range(n):
        total += math.exp(explore * (row[a] - mx))
    threshold = u_act * total
    cum = 0.0
    for a in range(n):
        cum += math.exp(explore * (row[a] - mx))
        if threshold < cum:
            return a
    return n - 1


@jit
def sample_index(cdf_row, u):
    n = cdf_row.shape[0]
    for j in range(n):
        if u < cdf_row[j]:
            return j
    return n - 1


@jit
def agent_update(agent, kind, onpolicy, policy, natural, q, zq, values, qtab,
                 s, a, r, s2, alpha, explore, gamma, probs, skew_lo, skew_hi):
    """One learning update at (s, a) given reward ``r`` and successor ``s2``.

    Returns False when the update produced a non-finite value.
    """
    n_a = qtab.shape[1]
    if agent == WATKINS:
        best = qtab[s2, argmax_first(qtab[s2])]
        qtab[s, a] = qtab[s, a] + alpha * (r + gamma * best - qtab[s, a])
        return math.isfinite(qtab[s, a])
    if agent == QHAT:
        best = qtab[s2, argmax_first(qtab[s2])]
        backup = r + gamma * best
        if backup < qtab[s, a]:
            qtab[s, a] = backup
        return math.isfinite(qtab[s, a])

    c0, c1, c2 = values[s, a, 0], values[s, a, 1], values[s, a, 2]
    if onpolicy:
        policy_probs(policy, qtab[s2], explore, probs)
        g0, g1, g2 = 0.0, 0.0, 0.0
        for a2 in range(n_a):
            w = probs[a2]
            if w == 0.0:
                continue
            h = ng_direction(kind, c0, c1, c2, values[s2, a2, 0], values[s2, a2, 1],
                             values[s2, a2, 2], r, gamma)
            g0 += w * h[0]
            g1 += w * h[1]
            g2 += w * h[2]
    else:
        a2 = argmax_first(qtab[s2])
        g0, g1, g2 = ng_direction(kind, c0, c1, c2, values[s2, a2, 0], values[s2, a2, 1],
                                  values[s2, a2, 2], r, gamma)
    if not natural:
        g0, g1, g2 = fisher_times(kind, c1, c2, g0, g1, g2)
    n0, n1, n2 = apply_increment(kind, c0, c1, c2, alpha / gamma, g0, g1, g2, skew_lo, skew_hi)
    values[s, a, 0] = n0
    values[s, a, 1] = n1
    values[s, a, 2] = n2
    qtab[s, a] = qhat_value(kind, n0, n1, n2, q, zq)
    return math.isfinite(n0) and math.isfinite(n1) and math.isfinite(n2) and math.isfinite(qtab[s, a])


@jit
def train_kernel(agent, kind, onpolicy, policy, natural, q, zq, values, qtab,
                 trans_cdf, reward_kind, reward_value, draws,
                 alpha, explore, u_act, u_eps, u_next, s0, gamma, rewards_out, skew_lo, skew_hi):
    """Run ``len(alpha)`` learning steps in place.

    Returns ``(final_state, bad_step)`` with ``bad_step = -1`` on success.
    """
    n_steps = alpha.shape[0]
    probs = np.empty(qtab.shape[1])
    s = s0
    for t in range(n_steps):
        a = select_action_u(policy, qtab[s], explore[t], u_act[t], u_eps[t])
        s2 = sample_index(trans_cdf[s, a], u_next[t])
        k = reward_kind[s, a, s2]
        r = reward_value[s, a, s2] if k == 0 else draws[k - 1, t]
        rewards_out[t] = r
        ok = agent_update(agent, kind, onpolicy, policy, natural, q, zq, values, qtab,
                          s, a, r, s2, alpha[t], explore[t], gamma, probs, skew_lo, skew_hi)
        if not ok:
            return s2, t
        s = s2
    return s, -1


# Monte Carlo rollouts --------------------------------------------------------------------


@jit
def _rollouts_loop(policy_cdf, trans_cdf, reward_kind, reward_value, u_act, u_next, s0, gamma,
                   out, hits):
    horizon, n = u_next.shape
    states = np.full(n, s0, dtype=np.int64)
    out[:] = 0.0
    disc = 1.0
    for k in range(horizon):
        for i in range(n):
            s = states[i]
            a = sample_index(policy_cdf[s], u_act[k, i])
            s2 = sample_index(trans_cdf[s, a], u_next[k, i])
            kind = reward_kind[s, a, s2]
            hits[k, i] = kind
            if kind == 0:
                out[i] += disc * reward_value[s, a, s2]
            states[i] = s2
        disc *= gamma


def _rollouts_vectorized(policy_cdf, trans_cdf, reward_kind, reward_value, u_act, u_next, s0, gamma,
                         out, hits):
    horizon, n = u_next.shape
    states = np.full(n, s0, dtype=np.int64)
    g = np.zeros(n)
    disc = 1.0
    n_a = policy_cdf.shape[1]
    n_s = trans_cdf.shape[2]
    for k in range(horizon):
        a = np.minimum((policy_cdf[states] <= u_act[k][:, None]).sum(axis=1), n_a - 1)
        s2 = np.minimum((trans_cdf[states, a] <= u_next[k][:, None]).sum(axis=1), n_s - 1)
        kind = reward_kind[states, a, s2]
        hits[k] = kind
        g += disc * np.where(kind == 0, reward_value[states, a, s2], 0.0)
        disc *= gamma
        states = s2
    out[:] = g


def rollout_returns(policy_cdf, trans_cdf, reward_kind, reward_value, u_act, u_next, s0, gamma,
                    backend=None):
    """Truncated discounted returns of ``u_next.shape[1]`` rollouts from ``s0``.

    Stochastic rewards are left out of the returns.  The second result, ``hits``
    (horizon, n), holds the stochastic spec index + 1 wherever one was collected,
    so the caller can draw exactly the variates it needs.
    """
    horizon, n = u_next.shape
    out = np.empty(n)
    hits = np.zeros((horizon, n), dtype=np.int64)
    use_loop = USE_NUMBA if backend is None else backend == "numba"
    fn = _rollouts_loop if use_loop else _rollouts_vectorized
    fn(policy_cdf, trans_cdf, reward_kind, reward_value, u_act, u_next, int(s0), float(gamma), out, hits)
    return out, hits
