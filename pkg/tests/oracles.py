"""Brute-force reference computations, independent of the package internals."""

import itertools
import math


def lattice_edges(rows, cols, second=False):
    steps = [(0, 1), (1, 0)] + ([(1, 1), (1, -1)] if second else [])
    edges = []
    for r in range(rows):
        for c in range(cols):
            for dr, dc in steps:
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols:
                    edges.append((r * cols + c, rr * cols + cc))
    return edges


def bonds(z, edges):
    return sum(z[a] == z[b] for a, b in edges)


def log_constant(rows, cols, q, beta, second=False):
    edges = lattice_edges(rows, cols, second)
    terms = [beta * bonds(z, edges) for z in itertools.product(range(q), repeat=rows * cols)]
    m = max(terms)
    return m + math.log(sum(math.exp(t - m) for t in terms))


def conditional_block(z, sites, rows, cols, q, beta, second=False):
    """log pi(z_A | z_rest) by enumerating every configuration of the block A."""
    edges = lattice_edges(rows, cols, second)
    z = list(z)
    num = beta * bonds(z, edges)
    terms = []
    for vals in itertools.product(range(q), repeat=len(sites)):
        w = list(z)
        for s, v in zip(sites, vals):
            w[s] = v
        terms.append(beta * bonds(w, edges))
    m = max(terms)
    return num - (m + math.log(sum(math.exp(t - m) for t in terms)))
