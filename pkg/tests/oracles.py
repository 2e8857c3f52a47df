"""Independent reference computations used by the tests.

Nothing here imports solver code from pillarmkl; each oracle re-derives its
answer by brute force or a different algorithm.
"""
import itertools
import math
import statistics

import numpy as np
from numba import njit


# -- SVM dual: accelerated projected gradient ------------------------------

@njit(cache=True)
def _project(v, y, C):
    """Euclidean projection onto {0 <= a <= C, y'a = 0} by bisection on the
    multiplier of the equality constraint."""
    lo, hi = -1e6, 1e6
    a = np.empty_like(v)
    for _ in range(200):
        lam = 0.5 * (lo + hi)
        s = 0.0
        for i in range(v.size):
            ai = min(max(v[i] - lam * y[i], 0.0), C)
            a[i] = ai
            s += y[i] * ai
        if s > 0:
            lo = lam
        else:
            hi = lam
        if hi - lo < 1e-15 * max(1.0, abs(lam)):
            break
    lam = 0.5 * (lo + hi)
    for i in range(v.size):
        a[i] = min(max(v[i] - lam * y[i], 0.0), C)
    return a


@njit(cache=True)
def pg_dual_oracle(K, y, C, steps):
    """Maximise sum(a) - 1/2 a'Qa over the SVM dual feasible set with
    Nesterov-accelerated projected gradient ascent; returns (alpha, value)."""
    n = y.size
    Q = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            Q[i, j] = y[i] * y[j] * K[i, j]
    L = np.max(np.abs(np.linalg.eigvalsh(Q)))
    step = 1.0 / L
    a = np.zeros(n)
    z = a.copy()
    t = 1.0
    best = -np.inf
    best_a = a.copy()
    for k in range(steps):
        grad = 1.0 - Q @ z
        a_next = _project(z + step * grad, y, C)
        val = a_next.sum() - 0.5 * a_next @ (Q @ a_next)
        if val > best:
            best = val
            best_a = a_next.copy()
        else:
            t = 1.0  # restart momentum when the objective stalls
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        z = a_next + ((t - 1.0) / t_next) * (a_next - a)
        diff = np.max(np.abs(a_next - a))
        a = a_next
        t = t_next
        if diff < 1e-13 and k > 100:
            break
    return best_a, best


# -- LP: vertex enumeration --------------------------------------------------

def vertex_enumeration(c, A, b):
    """max c'x over {A x <= b, x >= 0} by enumerating all basic solutions."""
    c = np.asarray(c, float)
    n = c.size
    G = np.vstack([A, -np.eye(n)])
    h = np.concatenate([b, np.zeros(n)])
    combos = np.array(list(itertools.combinations(range(G.shape[0]), n)))
    M = G[combos]
    rhs = h[combos]
    det = np.linalg.det(M)
    ok = np.abs(det) > 1e-10
    xs = np.linalg.solve(M[ok], rhs[ok][..., None])[..., 0]
    feas = np.all(xs @ G.T <= h + 1e-9 * np.maximum(1.0, np.abs(h)), axis=1)
    if not feas.any():
        return None, None
    vals = xs[feas] @ c
    k = int(np.argmax(vals))
    return float(vals[k]), xs[feas][k]


# -- kernels ------------------------------------------------------------------

def naive_rbf(x, z, gamma):
    out = np.empty((len(x), len(z)))
    for i in range(len(x)):
        for j in range(len(z)):
            d2 = 0.0
            for t in range(len(x[i])):
                d2 += (float(x[i][t]) - float(z[j][t])) ** 2
            out[i, j] = math.exp(-gamma * d2)
    return out


def naive_median_gamma(x):
    dists = []
    for i in range(len(x)):
        for j in range(i + 1, len(x)):
            dists.append(math.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(x[i], x[j]))))
    m = statistics.median(dists)
    return 1.0 / (2 * m * m)


def naive_combine(ks, beta):
    n = len(ks[0])
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            for k, b in zip(ks, beta):
                out[i, j] += b * k[i][j]
    return out


def naive_quadratic(alpha, y, K):
    s = 0.0
    for i in range(len(alpha)):
        for j in range(len(alpha)):
            s += alpha[i] * alpha[j] * y[i] * y[j] * K[i][j]
    return s


# -- Fisher vectors -----------------------------------------------------------

def naive_avg_loglik(weights, means, sigmas, X):
    total = 0.0
    for x in X:
        comps = []
        for w, mu, sd in zip(weights, means, sigmas):
            lp = math.log(w)
            for xd, md, sdd in zip(x, mu, sd):
                lp += -0.5 * math.log(2 * math.pi) - math.log(sdd) - 0.5 * ((xd - md) / sdd) ** 2
            comps.append(lp)
        top = max(comps)
        total += top + math.log(sum(math.exp(c - top) for c in comps))
    return total / len(X)


def fd_gradients(weights, means, sigmas, X, h=1e-5):
    """Central finite differences of the average log-likelihood w.r.t. each
    mean and standard deviation."""
    d_mu = np.zeros_like(means)
    d_sd = np.zeros_like(sigmas)
    for k in range(means.shape[0]):
        for d in range(means.shape[1]):
            for target, out in ((means, d_mu), (sigmas, d_sd)):
                orig = target[k, d]
                target[k, d] = orig + h
                up = naive_avg_loglik(weights, means, sigmas, X)
                target[k, d] = orig - h
                down = naive_avg_loglik(weights, means, sigmas, X)
                target[k, d] = orig
                out[k, d] = (up - down) / (2 * h)
    return d_mu, d_sd


# -- evaluation ---------------------------------------------------------------

def argmax_accuracy(scores, truth):
    """Recompute accuracy from a score matrix: first maximal column wins."""
    hits = 0
    for row, t in zip(scores, truth):
        best = 0
        for c in range(1, len(row)):
            if row[c] > row[best]:
                best = c
        hits += best == t
    return hits / len(truth)


def class_histogram(truth, n_classes):
    counts = [0] * n_classes
    for t in truth:
        counts[t] += 1
    return counts


# -- MKL grid searches --------------------------------------------------------

def simplex_grid(n_kernels, step=0.05):
    m = int(round(1 / step))
    for combo in itertools.product(range(m + 1), repeat=n_kernels - 1):
        if sum(combo) <= m:
            yield np.array(list(combo) + [m - sum(combo)], float) / m


def sphere_grid(n_kernels, step=0.05):
    """Nonnegative unit-sphere points whose first n-1 coordinates are on the grid."""
    m = int(round(1 / step))
    for combo in itertools.product(range(m + 1), repeat=n_kernels - 1):
        head = np.array(combo, float) / m
        rest = 1.0 - float(head @ head)
        if rest >= -1e-12:
            yield np.concatenate([head, [math.sqrt(max(rest, 0.0))]])
