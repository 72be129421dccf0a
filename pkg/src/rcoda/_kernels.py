"""Compiled single-site Gibbs kernels.

The kernels seed numba's own generator from a 32-bit seed at entry, so a call
is a pure function of its arguments.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _seed(seed):
    np.random.seed(seed)


@njit(cache=True)
def _site_update(z, i, nbr, q, boltz, w):
    k = nbr.shape[1]
    for c in range(q):
        w[c] = 0.0
    # w holds neighbour counts first, then weights
    for j in range(k):
        n = nbr[i, j]
        if n < 0:
            break
        w[z[n]] += 1.0
    total = 0.0
    for c in range(q):
        w[c] = boltz[int(w[c])]
        total += w[c]
    u = np.random.random() * total
    acc = 0.0
    new = q - 1
    for c in range(q):
        acc += w[c]
        if u < acc:
            new = c
            break
    z[i] = new


@njit(cache=True)
def gibbs_sweeps(z, nbr, present, q, beta, sweeps, seed):
    """Raster-scan Gibbs for the Potts model; modifies ``z`` in place."""
    _seed(seed)
    n = z.shape[0]
    k = nbr.shape[1]
    boltz = np.empty(k + 1)
    for m in range(k + 1):
        boltz[m] = np.exp(beta * m)
    w = np.empty(q)
    for _ in range(sweeps):
        for i in range(n):
            if present[i]:
                _site_update(z, i, nbr, q, boltz, w)
    return z


@njit(cache=True)
def bond_count_nb(z, edges):
    u = 0
    for e in range(edges.shape[0]):
        if z[edges[e, 0]] == z[edges[e, 1]]:
            u += 1
    return u


@njit(cache=True)
def gibbs_bonds_trace(z, nbr, present, edges, q, beta, sweeps, seed):
    """Gibbs sweeps recording the bond count after every sweep."""
    _seed(seed)
    n = z.shape[0]
    k = nbr.shape[1]
    boltz = np.empty(k + 1)
    for m in range(k + 1):
        boltz[m] = np.exp(beta * m)
    w = np.empty(q)
    trace = np.empty(sweeps, dtype=np.int64)
    for s in range(sweeps):
        for i in range(n):
            if present[i]:
                _site_update(z, i, nbr, q, boltz, w)
        trace[s] = bond_count_nb(z, edges)
    return trace


@njit(cache=True)
def gibbs_sweeps_field(z, nbr, present, q, beta, logpot, sweeps, seed):
    """Raster-scan Gibbs with a per-site external log-potential ``logpot[i, c]``."""
    _seed(seed)
    n = z.shape[0]
    k = nbr.shape[1]
    w = np.empty(q)
    for _ in range(sweeps):
        for i in range(n):
            if not present[i]:
                continue
            for c in range(q):
                w[c] = logpot[i, c]
            for j in range(k):
                m = nbr[i, j]
                if m < 0:
                    break
                w[z[m]] += beta
            top = w[0]
            for c in range(1, q):
                if w[c] > top:
                    top = w[c]
            total = 0.0
            for c in range(q):
                w[c] = np.exp(w[c] - top)
                total += w[c]
            u = np.random.random() * total
            acc = 0.0
            new = q - 1
            for c in range(q):
                acc += w[c]
                if u < acc:
                    new = c
                    break
            z[i] = new
    return z
