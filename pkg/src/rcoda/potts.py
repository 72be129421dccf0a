"""Potts model primitives: bond counts, Gibbs simulation and exact normalising constants.

Fields are integer arrays of shape ``(rows, cols)`` holding 0-based states
``0..q-1``; file formats convert to 1-based labels at the boundary.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .lattice import LatticeGeometry, Order

logger = logging.getLogger(__name__)

DEFAULT_SWEEPS = 5000

ENUMERATION_MAX_SITES = 20
ENUMERATION_MAX_STATES = 2**24
TRANSFER_MAX_WIDTH = 12
TRANSFER_MAX_TENSOR = 2**24


class CapacityError(ValueError):
    """Lattice too large for the exact backends."""


@dataclass(frozen=True)
class PottsModel:
    geometry: LatticeGeometry
    q: int
    beta: float

    def __post_init__(self):
        if self.q < 2:
            raise ValueError("q must be >= 2")
        if not np.isfinite(self.beta) or self.beta < 0:
            raise ValueError(f"beta must be finite and >= 0, got {self.beta}")


def kernel_seed(seed) -> int:
    """Reduce an arbitrary integer seed to the 32-bit seed the compiled kernels take."""
    return int(np.random.default_rng(seed).integers(0, 2**32 - 1))


def check_field(field, geometry: LatticeGeometry, q: int | None = None) -> np.ndarray:
    z = np.asarray(field)
    if z.shape != geometry.shape:
        if z.size == geometry.size:
            z = z.reshape(geometry.shape)
        else:
            raise ValueError(f"field shape {z.shape} does not match geometry {geometry.shape}")
    if not np.issubdtype(z.dtype, np.integer):
        raise ValueError("field must hold integer states")
    if q is not None:
        vals = z.ravel()[geometry.present]
        if vals.size and (vals.min() < 0 or vals.max() >= q):
            raise ValueError(f"field states must lie in 0..{q - 1}")
    return z


def bond_count(field, geometry: LatticeGeometry) -> int:
    """U(z): number of unordered neighbour pairs in equal states."""
    z = check_field(field, geometry).ravel()
    e = geometry.edges
    return int(np.count_nonzero(z[e[:, 0]] == z[e[:, 1]]))


def random_field(geometry: LatticeGeometry, q: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.integers(0, q, size=geometry.shape).astype(np.int64)
    if geometry.mask is not None:
        z[~geometry.mask] = 0
    return z


def gibbs_sample(model: PottsModel, sweeps: int = DEFAULT_SWEEPS, seed: int = 0, initial=None) -> np.ndarray:
    """Run ``sweeps`` raster-scan Gibbs sweeps and return the final field."""
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    g = model.geometry
    rng = np.random.default_rng(seed)
    if initial is None:
        z = random_field(g, model.q, rng)
    else:
        z = check_field(initial, g, model.q).astype(np.int64).copy()
    flat = z.ravel()
    _kernels.gibbs_sweeps(
        flat, g.neighbours, g.present, model.q, float(model.beta), int(sweeps), kernel_seed(rng.integers(2**63))
    )
    return flat.reshape(g.shape)


# ---------------------------------------------------------------------------
# exact normalising constant
# ---------------------------------------------------------------------------


def _enumeration_feasible(geometry: LatticeGeometry, q: int) -> bool:
    n = geometry.n_sites
    return n <= ENUMERATION_MAX_SITES and q**n <= ENUMERATION_MAX_STATES


def _enumerate_bond_histogram(geometry: LatticeGeometry, q: int) -> np.ndarray:
    """Number of configurations with each bond count, by brute force."""
    n = geometry.n_sites
    if not _enumeration_feasible(geometry, q):
        raise CapacityError(
            f"enumeration needs <= {ENUMERATION_MAX_SITES} sites and q^N <= {ENUMERATION_MAX_STATES}; "
            f"got N={n}, q={q}"
        )
    # relabel present sites to 0..n-1
    local = np.full(geometry.size, -1)
    local[geometry.present] = np.arange(n)
    e = local[geometry.edges]
    hist = np.zeros(len(e) + 1, dtype=np.int64)
    powers = q ** np.arange(n, dtype=np.int64)
    total = q**n
    chunk = 1 << 18
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        states = (codes[:, None] // powers) % q
        u = (states[:, e[:, 0]] == states[:, e[:, 1]]).sum(axis=1)
        hist += np.bincount(u, minlength=len(hist))
    return hist


def _oriented(geometry: LatticeGeometry):
    """Rows, cols, flat presence with the narrow side as the raster width."""
    mask = geometry.mask if geometry.mask is not None else np.ones(geometry.shape, bool)
    if geometry.cols > geometry.rows:
        mask = mask.T
    rows, cols = mask.shape
    return rows, cols, mask.ravel()


def _transfer_width(geometry: LatticeGeometry) -> int:
    w = min(geometry.rows, geometry.cols)
    return w + 1 if geometry.order is Order.SECOND else w


def _check_transfer(geometry: LatticeGeometry, q: int, extra: int = 1):
    w = _transfer_width(geometry)
    if min(geometry.rows, geometry.cols) > TRANSFER_MAX_WIDTH or q ** (w + 1) * extra > TRANSFER_MAX_TENSOR:
        raise CapacityError(
            f"transfer recursion needs min(rows, cols) <= {TRANSFER_MAX_WIDTH} and "
            f"q^(width+1) <= {TRANSFER_MAX_TENSOR}; got {geometry.rows}x{geometry.cols}, q={q}"
        )


def _preceding(rows, cols, pres, k, second):
    """Buffer distances of already-visited neighbours of site k."""
    r, c = divmod(k, cols)
    cand = [(1, c > 0), (cols, r > 0)]
    if second:
        cand += [(cols + 1, r > 0 and c > 0), (cols - 1, r > 0 and c < cols - 1)]
    return [d for d, ok in cand if ok and pres[k - d]]


def _transfer_sweep(geometry: LatticeGeometry):
    """Raster-order schedule of a site-wise transfer recursion.

    The buffer tensor has one axis per buffered site, oldest first; each step
    appends the new site as a trailing axis, applies the bond factors listed
    in ``axes`` and sums out the oldest axis.
    """
    rows, cols, pres = _oriented(geometry)
    second = geometry.order is Order.SECOND
    w = cols + 1 if second else cols
    for k in range(rows * cols):
        axes = [w - d for d in _preceding(rows, cols, pres, k, second)] if pres[k] else []
        yield w, axes, bool(pres[k])


def _eq_mask(q, w, axes):
    """Integer tensor counting equalities between the new site and the given buffer axes."""
    m = np.zeros((q,) * (w + 1), dtype=np.int64)
    eye = np.eye(q, dtype=np.int64)
    for ax in axes:
        shape = [1] * (w + 1)
        shape[ax] = q
        shape[w] = q
        m = m + eye.reshape(shape)
    return m


def transfer_log_constant(geometry: LatticeGeometry, q: int, beta: float) -> float:
    """log C(beta) by a site-wise transfer recursion with running renormalisation."""
    _check_transfer(geometry, q)
    w = _transfer_width(geometry)
    t = np.zeros((q,) * w)
    t[(0,) * w] = 1.0  # virtual absent sites before the first row
    log_scale = 0.0
    onehot = np.zeros(q)
    onehot[0] = 1.0
    eye_w = np.exp(beta * np.eye(q))
    for w, axes, present in _transfer_sweep(geometry):
        if present:
            new = np.broadcast_to(t[..., None], (q,) * (w + 1)).copy()
            for ax in axes:
                shape = [1] * (w + 1)
                shape[ax] = q
                shape[w] = q
                new *= eye_w.reshape(shape)
        else:
            new = t[..., None] * onehot
        t = new.sum(axis=0)
        s = t.max()
        t /= s
        log_scale += np.log(s)
    return float(np.log(t.sum()) + log_scale)


def transfer_bond_histogram(geometry: LatticeGeometry, q: int) -> np.ndarray:
    """log of the number of configurations at each bond count (``-inf`` where none).

    Same recursion as ``transfer_log_constant`` but carrying a polynomial in
    the bond count instead of a weight, so C(beta) for every beta follows from
    one pass.
    """
    n_levels = geometry.n_edges + 1
    _check_transfer(geometry, q, extra=n_levels)
    w = _transfer_width(geometry)
    t = np.zeros((q,) * w + (n_levels,))
    t[(0,) * w + (0,)] = 1.0
    log_scale = 0.0
    for w, axes, present in _transfer_sweep(geometry):
        if present:
            m = _eq_mask(q, w, axes)
            base = t[..., None, :]
            new = np.zeros((q,) * (w + 1) + (n_levels,))
            for mv in range(int(m.max()) + 1):
                sel = (m == mv)[..., None]
                if mv == 0:
                    shifted = np.broadcast_to(base, new.shape)
                else:
                    shifted = np.zeros(new.shape)
                    shifted[..., mv:] = base[..., : n_levels - mv]
                new += np.where(sel, shifted, 0.0)
        else:
            onehot = np.zeros(q)
            onehot[0] = 1.0
            new = t[..., None, :] * onehot[:, None]
        t = new.sum(axis=0)
        s = t.max()
        t /= s
        log_scale += np.log(s)
    counts = t.reshape(-1, n_levels).sum(axis=0)
    with np.errstate(divide="ignore"):
        return np.log(counts) + log_scale


@lru_cache(maxsize=256)
def log_bond_histogram(geometry: LatticeGeometry, q: int) -> np.ndarray:
    """Cached log density of states; enumeration when cheap, transfer otherwise."""
    if _enumeration_feasible(geometry, q) and q**geometry.n_sites <= 2**16:
        with np.errstate(divide="ignore"):
            h = np.log(_enumerate_bond_histogram(geometry, q).astype(float))
    else:
        h = transfer_bond_histogram(geometry, q)
    h.setflags(write=False)
    return h


def log_constant_from_histogram(log_hist: np.ndarray, beta) -> np.ndarray | float:
    u = np.arange(len(log_hist))
    beta = np.asarray(beta, dtype=float)
    vals = log_hist + beta[..., None] * u
    return logsumexp(vals, axis=-1)


def exact_log_constant(model: PottsModel, method: str = "auto") -> float:
    """log C(beta) = log sum_z exp(beta U(z)).

    ``method`` is ``"enumerate"``, ``"transfer"`` or ``"auto"`` (enumeration
    for small lattices, transfer otherwise).
    """
    g, q, beta = model.geometry, model.q, float(model.beta)
    if method not in ("auto", "enumerate", "transfer"):
        raise ValueError(f"unknown method {method!r}")
    if beta == 0.0:
        return g.n_sites * math.log(q)
    if method == "auto":
        method = "enumerate" if _enumeration_feasible(g, q) and q**g.n_sites <= 2**16 else "transfer"
    if method == "enumerate":
        hist = _enumerate_bond_histogram(g, q)
        with np.errstate(divide="ignore"):
            return float(log_constant_from_histogram(np.log(hist.astype(float)), beta))
    if method == "transfer":
        try:
            return transfer_log_constant(g, q, beta)
        except CapacityError:
            if _enumeration_feasible(g, q):
                return exact_log_constant(model, "enumerate")
            raise
    raise ValueError(f"unknown method {method!r}")


def exact_log_likelihood(field, model: PottsModel) -> float:
    """beta U(z) - log C(beta)."""
    u = bond_count(check_field(field, model.geometry, model.q), model.geometry)
    return model.beta * u - exact_log_constant(model)


# ---------------------------------------------------------------------------
# E[U | beta] by Monte Carlo
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BondsCurve:
    beta: np.ndarray
    mean_U: np.ndarray
    se_U: np.ndarray
    n_edges: int
    sweeps: int
    burn_in: int

    def rows(self):
        return [(float(b), float(m), float(s)) for b, m, s in zip(self.beta, self.mean_U, self.se_U)]


def batch_means_se(x: np.ndarray, n_batches: int = 20) -> float:
    """Standard error of the mean of an autocorrelated series by batch means."""
    x = np.asarray(x, dtype=float)
    n_batches = max(2, min(n_batches, len(x) // 2))
    size = len(x) // n_batches
    if size < 1:
        return float("nan")
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))


def expected_bonds_curve(
    geometry: LatticeGeometry,
    q: int,
    beta_grid,
    sweeps: int = 2000,
    burn_in: int = 500,
    seed: int = 0,
    n_batches: int = 20,
) -> BondsCurve:
    """Monte Carlo estimate of E[U | beta] along an increasing grid starting at 0.

    Each grid point runs its own chain (warm-started from the previous point's
    final state) and the standard error comes from batch means.
    """
    grid = np.asarray(beta_grid, dtype=float)
    if grid.ndim != 1 or len(grid) == 0 or grid[0] != 0.0:
        raise ValueError("beta grid must start at 0")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("beta grid must be strictly increasing")
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(len(grid) + 1)
    z = random_field(geometry, q, np.random.default_rng(children[-1])).ravel()
    means, ses = np.empty(len(grid)), np.empty(len(grid))
    for k, b in enumerate(grid):
        ks = kernel_seed(children[k])
        trace = _kernels.gibbs_bonds_trace(
            z, geometry.neighbours, geometry.present, geometry.edges, q, float(b), burn_in + sweeps, ks
        )[burn_in:]
        means[k] = trace.mean()
        ses[k] = batch_means_se(trace, n_batches)
    return BondsCurve(grid, means, ses, geometry.n_edges, sweeps, burn_in)
