"""Compiled inner loops. Callers pass plain arrays; all randomness comes from
the numpy Generator handed in, so results match the pure-Python paths."""
import numpy as np
from numba import njit


@njit(cache=True)
def bellman_sweeps(P, R, gamma, V, tol, max_iter):
    S, A = R.shape
    Q = np.empty((S, A))
    resid = np.inf
    it = 0
    while it < max_iter:
        it += 1
        resid = 0.0
        newV = np.empty(S)
        for s in range(S):
            best = -np.inf
            for a in range(A):
                q = R[s, a]
                acc = 0.0
                for sp in range(S):
                    acc += P[s, a, sp] * V[sp]
                q += gamma * acc
                Q[s, a] = q
                if q > best:
                    best = q
            newV[s] = best
            d = abs(best - V[s])
            if d > resid:
                resid = d
        V = newV
        if resid <= tol:
            break
    return V, Q, resid, it


@njit(cache=True)
def finite_horizon_plan(P, R, L):
    """Undiscounted L-step DP; ties go to the lowest action index."""
    S, A = R.shape
    policy = np.zeros((L, S), dtype=np.int64)
    V = np.zeros(S)
    for k in range(L - 1, -1, -1):
        newV = np.empty(S)
        for s in range(S):
            best = -np.inf
            besta = 0
            for a in range(A):
                q = R[s, a]
                for sp in range(S):
                    p = P[s, a, sp]
                    if p != 0.0:
                        q += p * V[sp]
                if q > best + 1e-12:
                    best = q
                    besta = a
            newV[s] = best
            policy[k, s] = besta
        V = newV
    return policy, V


@njit(cache=True)
def draw_next(cum_row, u):
    n = cum_row.shape[0]
    i = np.searchsorted(cum_row, u, side="right")
    if i >= n:
        i = n - 1
    return i


@njit(cache=True)
def rollout(cumP, R, bernoulli, policy, s, n_max, rng,
            counts, trans, rew_sum, visits, watch, threshold,
            tr_s, tr_a, tr_r, pos):
    """Follow a stationary policy for up to n_max steps, updating the count
    tensors in place. Stops right after a step that brings a watched pair's
    count up to `threshold`. Steps are written to the trace arrays from index
    `pos` when those are non-empty. Returns (steps, final state, reward total)."""
    total = 0.0
    steps = 0
    record = tr_s.shape[0] > 0
    while steps < n_max:
        a = policy[s]
        sp = draw_next(cumP[s, a], rng.random())
        if bernoulli:
            r = 1.0 if rng.random() < R[s, a] else 0.0
        else:
            r = R[s, a]
        if record:
            tr_s[pos + steps] = s
            tr_a[pos + steps] = a
            tr_r[pos + steps] = r
        visits[s] += 1
        counts[s, a] += 1
        trans[s, a, sp] += 1
        rew_sum[s, a] += r
        total += r
        steps += 1
        hit = watch[s, a] and counts[s, a] >= threshold
        s = sp
        if hit:
            break
    return steps, s, total


@njit(cache=True)
def known_state_arrays(counts, trans, m):
    S, A = counts.shape
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    for s in range(S):
        for a in range(A):
            n = counts[s, a]
            if n >= m:
                for sp in range(S):
                    P[s, a, sp] = trans[s, a, sp] / n
            else:
                P[s, a, s] = 1.0
                R[s, a] = 1.0
    return P, R


@njit(cache=True)
def sparse_rows(P):
    """Successor lists of a dense (S, A, S) tensor: (idx, prob, nnz)."""
    S, A, _ = P.shape
    nnz = np.zeros((S, A), dtype=np.int64)
    K = 1
    for s in range(S):
        for a in range(A):
            c = 0
            for sp in range(S):
                if P[s, a, sp] != 0.0:
                    c += 1
            nnz[s, a] = c
            if c > K:
                K = c
    idx = np.zeros((S, A, K), dtype=np.int64)
    pr = np.zeros((S, A, K))
    for s in range(S):
        for a in range(A):
            j = 0
            for sp in range(S):
                if P[s, a, sp] != 0.0:
                    idx[s, a, j] = sp
                    pr[s, a, j] = P[s, a, sp]
                    j += 1
    return idx, pr, nnz


@njit(cache=True)
def sparse_sweeps(idx, pr, nnz, R, gamma, V, tol, max_iter):
    """bellman_sweeps on successor lists."""
    S, A = R.shape
    Q = np.empty((S, A))
    newV = np.empty(S)
    V = V.copy()
    resid = np.inf
    it = 0
    while it < max_iter:
        it += 1
        resid = 0.0
        for s in range(S):
            best = -np.inf
            for a in range(A):
                acc = 0.0
                for j in range(nnz[s, a]):
                    acc += pr[s, a, j] * V[idx[s, a, j]]
                q = R[s, a] + gamma * acc
                Q[s, a] = q
                if q > best:
                    best = q
            newV[s] = best
            d = abs(best - V[s])
            if d > resid:
                resid = d
        V[:] = newV
        if resid <= tol:
            break
    return V, Q, resid, it


@njit(cache=True)
def _set_known_row(s, a, counts, trans, idx, pr, nnz):
    S = trans.shape[2]
    n = counts[s, a]
    j = 0
    for sp in range(S):
        if trans[s, a, sp] > 0:
            idx[s, a, j] = sp
            pr[s, a, j] = trans[s, a, sp] / n
            j += 1
    nnz[s, a] = j


@njit(cache=True)
def _sparse_plan(idx, pr, nnz, R, L):
    """Undiscounted L-step DP on successor lists; ties to the lowest action."""
    S, A = R.shape
    policy = np.zeros((L, S), dtype=np.int64)
    V = np.zeros(S)
    newV = np.empty(S)
    for k in range(L - 1, -1, -1):
        for s in range(S):
            best = -np.inf
            besta = 0
            for a in range(A):
                q = R[s, a]
                for j in range(nnz[s, a]):
                    q += pr[s, a, j] * V[idx[s, a, j]]
                if q > best + 1e-12:
                    best = q
                    besta = a
            newV[s] = best
            policy[k, s] = besta
        V[:] = newV
    return policy


@njit(cache=True)
def explore_loop(cumP, R, bernoulli, m, L, budget, s, rng, counts, trans, rew_sum,
                 tr_s, tr_a, tr_sp, tr_r, tr_mode, pol):
    """Least-tried actions in under-visited states, L-step escape plans
    elsewhere. Runs until every pair has m visits or the budget is spent.
    `pol` (steps x S, or empty) receives the committed stationary policy.
    Returns (steps, final state, pairs still under m)."""
    S, A = counts.shape
    # known-state MDP as successor lists, kept current as counts change
    idx = np.zeros((S, A, S), dtype=np.int64)
    pr = np.zeros((S, A, S))
    nnz = np.ones((S, A), dtype=np.int64)
    Rk = np.zeros((S, A))
    under = np.zeros(S, dtype=np.bool_)
    n_under = 0
    for x in range(S):
        for b in range(A):
            if counts[x, b] < m:
                under[x] = True
                n_under += 1
                idx[x, b, 0] = x
                pr[x, b, 0] = 1.0
                Rk[x, b] = 1.0
            else:
                _set_known_row(x, b, counts, trans, idx, pr, nnz)
    record_pol = pol.shape[0] > 0
    plan = np.zeros((1, S), dtype=np.int64)
    have_plan = False
    k = 0
    steps = 0
    while n_under > 0 and steps < budget:
        if under[s]:
            a = 0
            for b in range(1, A):
                if counts[s, b] < counts[s, a]:
                    a = b
            mode = 0
            have_plan = False
        else:
            if not have_plan or k >= L:
                plan = _sparse_plan(idx, pr, nnz, Rk, L)
                have_plan = True
                k = 0
            a = plan[k, s]
            k += 1
            mode = 1
        if record_pol:
            for x in range(S):
                if under[x] or not have_plan:
                    best = 0
                    for b in range(1, A):
                        if counts[x, b] < counts[x, best]:
                            best = b
                    pol[steps, x] = best
                else:
                    pol[steps, x] = plan[k - 1 if mode == 1 else 0, x]
        sp = draw_next(cumP[s, a], rng.random())
        if bernoulli:
            r = 1.0 if rng.random() < R[s, a] else 0.0
        else:
            r = R[s, a]
        counts[s, a] += 1
        trans[s, a, sp] += 1
        rew_sum[s, a] += r
        tr_s[steps] = s
        tr_a[steps] = a
        tr_sp[steps] = sp
        tr_r[steps] = r
        tr_mode[steps] = mode
        steps += 1
        if counts[s, a] >= m:
            Rk[s, a] = 0.0
            _set_known_row(s, a, counts, trans, idx, pr, nnz)
            if counts[s, a] == m:
                n_under -= 1
                still = False
                for b in range(A):
                    if counts[s, b] < m:
                        still = True
                under[s] = still
        s = sp
    return steps, s, n_under


@njit(cache=True)
def optimistic_rows(counts, trans, rew_sum, m, states, idx, pr, nnz, Rk):
    """Refresh the Rmax model rows of the given states: empirical rows for
    pairs with m visits, rewarding self-loops (reward 1) for the rest."""
    A = counts.shape[1]
    for i in range(states.shape[0]):
        s = states[i]
        for a in range(A):
            if counts[s, a] >= m:
                _set_known_row(s, a, counts, trans, idx, pr, nnz)
                Rk[s, a] = rew_sum[s, a] / counts[s, a]
            else:
                idx[s, a, 0] = s
                pr[s, a, 0] = 1.0
                nnz[s, a] = 1
                Rk[s, a] = 1.0
