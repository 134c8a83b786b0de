# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training loop; consumes the same uniforms as the Python reference."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, isfinite

cnp.import_array()

cdef double DIVERGENCE_LIMIT = 1e12

# coefficients on (A, B) for forward, backward, bidirectional, per parameterization
cdef double COMBO[3][3][2]
_combo_rows = (((1.0, 0.0), (0.0, 1.0), (1.0, 1.0)),
               ((1.0, -1.0), (0.0, 1.0), (1.0, 0.0)),
               ((1.0, 0.0), (-1.0, 1.0), (0.0, 1.0)))
for _i in range(3):
    for _j in range(3):
        for _k in range(2):
            COMBO[_i][_j][_k] = _combo_rows[_i][_j][_k]


cdef inline Py_ssize_t _draw(const double[:] cdf, double u) nogil:
    cdef Py_ssize_t k = 0
    cdef Py_ssize_t n = cdf.shape[0]
    while k < n - 1 and u >= cdf[k]:
        k += 1
    return k


cdef struct Net:
    int d
    int h
    int relu
    int size
    int oW, ob, owA, obA, owB, obB


cdef Net _layout(int d, int h, int relu):
    cdef Net n
    n.d = d
    n.h = h
    n.relu = relu
    if relu:
        n.oW = 0
        n.ob = h * d
        n.owA = n.ob + h
        n.obA = n.owA + h
        n.owB = n.obA + 1
        n.obB = n.owB + h
        n.size = n.obB + 1
    else:
        n.owA = 0
        n.owB = d
        n.size = 2 * d
    return n


cdef inline void _heads(Net n, double* p, const double[:, :] X, Py_ssize_t s,
                        double* z, double* a, double* b) nogil:
    cdef int i, j
    cdef double acc, hv
    if not n.relu:
        a[0] = 0.0
        b[0] = 0.0
        for j in range(n.d):
            a[0] += p[n.owA + j] * X[s, j]
            b[0] += p[n.owB + j] * X[s, j]
        return
    a[0] = p[n.obA]
    b[0] = p[n.obB]
    for i in range(n.h):
        acc = p[n.ob + i]
        for j in range(n.d):
            acc += p[n.oW + i * n.d + j] * X[s, j]
        z[i] = acc
        hv = acc if acc > 0.0 else 0.0
        a[0] += p[n.owA + i] * hv
        b[0] += p[n.owB + i] * hv


cdef inline void _add_grad(Net n, double* p, const double[:, :] X, Py_ssize_t s,
                           double* z, double ca, double cb, double scale, double* out) nogil:
    """out += scale * (ca * grad A + cb * grad B); ``z`` from a prior _heads call."""
    cdef int i, j
    cdef double act, back, hv
    if not n.relu:
        for j in range(n.d):
            out[n.owA + j] += scale * ca * X[s, j]
            out[n.owB + j] += scale * cb * X[s, j]
        return
    for i in range(n.h):
        act = 1.0 if z[i] > 0.0 else 0.0
        hv = z[i] * act
        back = (ca * p[n.owA + i] + cb * p[n.owB + i]) * act
        for j in range(n.d):
            out[n.oW + i * n.d + j] += scale * back * X[s, j]
        out[n.ob + i] += scale * back
        out[n.owA + i] += scale * ca * hv
        out[n.owB + i] += scale * cb * hv
    out[n.obA] += scale * ca
    out[n.obB] += scale * cb


cdef inline void _values(Net n, int pc, double* p, const double[:, :] X, Py_ssize_t s,
                         double* z, double* v3) nogil:
    cdef double a, b
    cdef int k
    _heads(n, p, X, s, z, &a, &b)
    for k in range(3):
        v3[k] = COMBO[pc][k][0] * a + COMBO[pc][k][1] * b


cdef bint _evaluate(Net n, int pc, double* p, const double[:, :] X, const unsigned char[:] term,
                    const double[:, :] p_pi, const double[:] r_pi, const double[:] mu,
                    const double[:] v_true, double gamma, double* z, double[::1] v,
                    double[::1] mstde, double[::1] rmsve, Py_ssize_t slot):
    cdef Py_ssize_t q, q2, S = X.shape[0]
    cdef double acc, msum = 0.0, rsum = 0.0
    cdef double w3[3]
    for q in range(S):
        v[q] = 0.0
        if not term[q]:
            _values(n, pc, p, X, q, z, w3)
            v[q] = w3[0]
    for q in range(S):
        if mu[q] > 0.0:
            acc = r_pi[q] - v[q]
            for q2 in range(S):
                acc += gamma * p_pi[q, q2] * v[q2]
            msum += mu[q] * acc * acc
            rsum += mu[q] * (v[q] - v_true[q]) * (v[q] - v_true[q])
    for q in range(n.size):
        if not isfinite(p[q]):
            return False
    if not isfinite(msum) or msum > DIVERGENCE_LIMIT:
        return False
    mstde[slot] = msum
    rmsve[slot] = sqrt(rsum)
    return True


def train_run(const double[:, :] features, terminal, const double[:] start_cdf,
              const double[:, :] policy_cdf, const double[:, :, :] transition_cdf,
              const double[:, :] reward, const double[:, :] p_pi, const double[:] r_pi,
              const double[:] mu, const double[:] v_true, params0, int n_inputs, int hidden,
              int torso, int parameterization, int algorithm, double alpha, double lam,
              double gamma, int theta_target, int phi_target, int psi_target,
              bint update_at_start, const double[:, :] uniforms, int eval_interval,
              int max_episode_steps):
    cdef const unsigned char[:] term = np.ascontiguousarray(terminal, dtype=np.uint8)
    cdef Net n = _layout(n_inputs, hidden, 1 if torso == 0 else 0)
    cdef double[::1] params = np.array(params0, dtype=float)
    if params.shape[0] != n.size:
        raise ValueError("parameter vector does not match the layout")
    cdef Py_ssize_t S = features.shape[0]
    cdef Py_ssize_t steps = uniforms.shape[1]
    cdef Py_ssize_t n_eval = steps // eval_interval + 1
    mstde_arr = np.full(n_eval, np.inf)
    rmsve_arr = np.full(n_eval, np.inf)
    cdef double[::1] mstde = mstde_arr
    cdef double[::1] rmsve = rmsve_arr
    cdef double[::1] trace = np.zeros(n.size)
    cdef double[::1] update = np.zeros(n.size)
    cdef double[::1] z = np.zeros(max(hidden, 1))
    cdef double[::1] zs = np.zeros(max(hidden, 1))
    cdef double[::1] v = np.zeros(S)
    cdef Py_ssize_t[::1] episode = np.zeros(max_episode_steps + 1, dtype=np.intp)
    cdef double* p = &params[0]
    cdef int pc = parameterization
    cdef double decay = lam * gamma
    cdef double g2l = gamma * gamma * lam
    cdef Py_ssize_t k, i, j, s = -1, a, nxt, prev = -1, ep_len = 0, t = 0, e
    cdef double r, prev_r = 0.0, G = 0.0, delta
    cdef double cur[3]
    cdef double vn[3]
    cdef double vp[3]
    cdef double tgt[3]
    cdef bint done, have_trace = False
    cdef int n_heads

    if not _evaluate(n, pc, p, features, term, p_pi, r_pi, mu, v_true, gamma, &z[0], v, mstde, rmsve, 0):
        return mstde_arr, rmsve_arr, True, np.asarray(params).copy()

    for k in range(steps):
        if s < 0:
            s = _draw(start_cdf, uniforms[0, k])
            ep_len = 0
            t = 0
            prev = -1
            prev_r = 0.0
            G = 0.0
            have_trace = False
        a = _draw(policy_cdf[s], uniforms[1, k])
        nxt = _draw(transition_cdf[s, a], uniforms[2, k])
        r = reward[s, a]
        done = term[nxt] != 0

        _values(n, pc, p, features, s, &zs[0], cur)
        if done:
            vn[0] = 0.0; vn[1] = 0.0; vn[2] = 0.0
        else:
            _values(n, pc, p, features, nxt, &z[0], vn)

        if algorithm == 0:  # TD(0)
            delta = r + gamma * vn[0] - cur[0]
            for i in range(n.size):
                update[i] = 0.0
            _add_grad(n, p, features, s, &zs[0], COMBO[pc][0][0], COMBO[pc][0][1], 1.0, &update[0])
            for i in range(n.size):
                p[i] += alpha * delta * update[i]
        elif algorithm == 1:  # accumulating trace, stored gradients
            delta = r + gamma * vn[0] - cur[0]
            for i in range(n.size):
                trace[i] = decay * trace[i] if have_trace else 0.0
            have_trace = True
            _add_grad(n, p, features, s, &zs[0], COMBO[pc][0][0], COMBO[pc][0][1], 1.0, &trace[0])
            for i in range(n.size):
                p[i] += alpha * delta * trace[i]
        elif algorithm == 2:  # trace rebuilt at the current weights
            delta = r + gamma * vn[0] - cur[0]
            episode[t] = s
            for i in range(n.size):
                trace[i] = 0.0
            for e in range(t + 1):
                for i in range(n.size):
                    trace[i] *= decay
                _values(n, pc, p, features, episode[e], &z[0], vp)
                _add_grad(n, p, features, episode[e], &z[0],
                          COMBO[pc][0][0], COMBO[pc][0][1], 1.0, &trace[0])
            for i in range(n.size):
                p[i] += alpha * delta * trace[i]
        else:  # three heads from one frozen snapshot
            if prev >= 0:
                _values(n, pc, p, features, prev, &z[0], vp)
            else:
                vp[0] = 0.0; vp[1] = 0.0; vp[2] = 0.0
            if theta_target == 0:
                tgt[0] = r + gamma * vn[0]
            elif theta_target == 1:
                tgt[0] = cur[2] - cur[1]
            else:
                tgt[0] = cur[2] - G
            if phi_target == 0:
                tgt[1] = G
            elif phi_target == 1:
                tgt[1] = decay * prev_r + decay * vp[1]
            else:
                tgt[1] = cur[2] - cur[0]
            if psi_target == 0:
                tgt[2] = (r * (1.0 - g2l) + gamma * vn[2] + gamma * lam * vp[2]) / (1.0 + g2l)
            elif psi_target == 1:
                tgt[2] = cur[1] + r + gamma * vn[0]
            else:
                tgt[2] = cur[1] + cur[0]
            n_heads = 3 if (t > 0 or update_at_start) else 1
            for i in range(n.size):
                update[i] = 0.0
            for j in range(n_heads):
                _add_grad(n, p, features, s, &zs[0], COMBO[pc][j][0], COMBO[pc][j][1],
                          tgt[j] - cur[j], &update[0])
            for i in range(n.size):
                p[i] += alpha * update[i]

        G = decay * (G + r)
        prev = s
        prev_r = r
        t += 1
        ep_len += 1
        if done or ep_len >= max_episode_steps:
            s = -1
        else:
            s = nxt

        if (k + 1) % eval_interval == 0:
            if not _evaluate(n, pc, p, features, term, p_pi, r_pi, mu, v_true, gamma,
                             &z[0], v, mstde, rmsve, (k + 1) // eval_interval):
                return mstde_arr, rmsve_arr, True, np.asarray(params).copy()

    return mstde_arr, rmsve_arr, False, np.asarray(params).copy()
