"""Log-likelihood approximations for the Potts interaction parameter.

Every backend is compiled once per field: the neighbour-state counts of all
conditioned sites are reduced to distinct patterns with multiplicities, so a
likelihood evaluation during MCMC costs O(#patterns) rather than O(N).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .lattice import DecompositionPlan, LatticeGeometry, Order, build_plan
from .potts import (
    CapacityError,
    PottsModel,
    bond_count,
    check_field,
    expected_bonds_curve,
    log_bond_histogram,
    transfer_log_constant,
)

BACKENDS = ("exact", "pl", "rcoda", "rcoda-m", "rcoda-c", "tdi")


class RangeError(ValueError):
    """Parameter outside the range a lookup table covers."""


class IncompatibleBackend(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    beta: float
    alpha: float = 1.0
    T: int = 0
    q: int = 2
    order: Order = Order.FIRST

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.T < 0:
            raise ValueError("T must be >= 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


def _lse_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def neighbour_state_counts(flat: np.ndarray, nbrs: np.ndarray, q: int) -> np.ndarray:
    """``counts[i, c]`` = number of listed neighbours of site i in state c."""
    valid = nbrs >= 0
    vals = np.where(valid, flat[np.maximum(nbrs, 0)], -1)
    return np.stack([(vals == c).sum(axis=1) for c in range(q)], axis=1)


@dataclass
class PatternTable:
    """Distinct (own-state count, sorted neighbour counts, level) rows with multiplicities."""

    own: np.ndarray
    counts: np.ndarray
    level: np.ndarray
    weight: np.ndarray

    @classmethod
    def empty(cls, q: int) -> "PatternTable":
        return cls(np.zeros(0), np.zeros((0, q)), np.zeros(0, dtype=np.int64), np.zeros(0))

    @classmethod
    def from_sites(cls, flat, sites, nbrs, q, level=0) -> "PatternTable":
        if len(sites) == 0:
            return cls.empty(q)
        counts = neighbour_state_counts(flat, nbrs, q)
        own = counts[np.arange(len(sites)), flat[sites]]
        # the softmax normaliser is symmetric in states, so sorting compresses further
        key = np.concatenate([own[:, None], np.sort(counts, axis=1)], axis=1)
        uniq, mult = np.unique(key, axis=0, return_counts=True)
        return cls(
            uniq[:, 0].astype(float),
            uniq[:, 1:].astype(float),
            np.full(len(uniq), level, dtype=np.int64),
            mult.astype(float),
        )

    @classmethod
    def concat(cls, tables, q) -> "PatternTable":
        tables = [t for t in tables if len(t.weight)]
        if not tables:
            return cls.empty(q)
        return cls(
            np.concatenate([t.own for t in tables]),
            np.concatenate([t.counts for t in tables]),
            np.concatenate([t.level for t in tables]),
            np.concatenate([t.weight for t in tables]),
        )

    def loglik(self, beta_eff) -> float:
        """Sum of log full-conditional probabilities; ``beta_eff`` scalar or per-row."""
        if len(self.weight) == 0:
            return 0.0
        b = np.broadcast_to(np.asarray(beta_eff, dtype=float), self.own.shape)
        terms = b * self.own - _lse_rows(b[:, None] * self.counts)
        return float(self.weight @ terms)


def conditional_block_loglik(field, conditioned_sites, cond_neighbours, beta_eff: float, q: int) -> float:
    """log prod_i P(z_i | listed neighbours) for mutually independent conditioned sites."""
    flat = np.asarray(field).ravel()
    sites = np.asarray(conditioned_sites, dtype=np.int64)
    nbrs = np.asarray(cond_neighbours, dtype=np.int64).reshape(len(sites), -1)
    if len(sites) == 0:
        return 0.0
    if nbrs.max(initial=-1) >= flat.size or sites.max() >= flat.size:
        raise ValueError("plan indices exceed field size")
    counts = neighbour_state_counts(flat, nbrs, q).astype(float)
    own = counts[np.arange(len(sites)), flat[sites]]
    return float(np.sum(beta_eff * own - _lse_rows(beta_eff * counts)))


class Likelihood:
    """Compiled log-likelihood of beta (and alpha where relevant) for one field."""

    name = "base"
    uses_alpha = False

    def __call__(self, beta: float, alpha: float = 1.0) -> float:
        raise NotImplementedError

    def beta_support(self) -> tuple[float, float]:
        return (0.0, np.inf)


class PseudoLikelihood(Likelihood):
    name = "pl"

    def __init__(self, field, geometry: LatticeGeometry, q: int):
        z = check_field(field, geometry, q)
        flat = z.ravel().astype(np.int64)
        sites = np.flatnonzero(geometry.present)
        self.n_sites = len(sites)
        self.q = q
        self.patterns = PatternTable.from_sites(flat, sites, geometry.neighbours[sites], q)

    def __call__(self, beta, alpha=1.0):
        return self.patterns.loglik(beta)


class _HistogramTerm:
    """Exact Potts log-likelihood of a fixed (small) field as a function of beta."""

    def __init__(self, field, geometry: LatticeGeometry, q: int):
        self.geometry = geometry
        self.q = q
        self.U = bond_count(field, geometry)
        self.n_sites = geometry.n_sites
        try:
            self.log_hist = log_bond_histogram(geometry, q)
            ok = np.isfinite(self.log_hist)
            self._u = np.flatnonzero(ok).astype(float)
            self._lh = self.log_hist[ok]
        except CapacityError:
            self.log_hist = None
            # per-beta fallback must at least be feasible
            transfer_log_constant(geometry, q, 0.0)

    def log_constant(self, beta) -> float:
        if beta == 0.0:
            return self.n_sites * np.log(self.q)
        if self.log_hist is not None:
            v = self._lh + beta * self._u
            m = v.max()
            return float(m + np.log(np.exp(v - m).sum()))
        return transfer_log_constant(self.geometry, self.q, beta)

    def __call__(self, beta) -> float:
        return beta * self.U - self.log_constant(beta)


class ExactLikelihood(Likelihood):
    name = "exact"

    def __init__(self, field, geometry: LatticeGeometry, q: int):
        z = check_field(field, geometry, q)
        self.term = _HistogramTerm(z, geometry, q)

    def __call__(self, beta, alpha=1.0):
        return self.term(beta)


class RcodaLikelihood(Likelihood):
    """Recursive conditional decomposition likelihood.

    Level t contributes conditional factors at ``alpha**t * beta``; the
    terminal lattice contributes an exact Potts term at
    ``alpha**terminal_exponent * beta`` (default exponent T), or the
    independent-field value ``-n log q`` when ``terminal="independent"``.

    For second-order plans ``variant`` selects how coding class 2 is treated:
    ``"M"`` conditions it on the remainder only, ``"C"`` also on class 1.
    """

    uses_alpha = True

    def __init__(
        self,
        field,
        plan: DecompositionPlan,
        q: int,
        variant: str | None = None,
        terminal: str = "exact",
        terminal_exponent: int | None = None,
    ):
        g = plan.geometry
        z = check_field(field, g, q)
        flat = z.ravel().astype(np.int64)
        second = plan.order is Order.SECOND
        if second:
            variant = (variant or "C").upper()
            if variant not in ("M", "C"):
                raise ValueError("variant must be 'M' or 'C'")
        elif variant is not None:
            raise IncompatibleBackend("RCoDA-M/RCoDA-C need a second-order plan")
        if terminal not in ("exact", "independent"):
            raise ValueError("terminal must be 'exact' or 'independent'")
        self.name = "rcoda" if not second else f"rcoda-{variant.lower()}"
        self.plan = plan
        self.q = q
        self.variant = variant
        self.T = plan.T
        self.terminal_exponent = self.T if terminal_exponent is None else int(terminal_exponent)
        self.uses_alpha = self.T > 0

        tables = []
        for t, lv in enumerate(plan.levels):
            tables.append(PatternTable.from_sites(flat, lv.conditioned, lv.cond_neighbours, q, t))
            if second:
                nb = lv.class2_neighbours
                if variant == "C":
                    nb = np.concatenate([nb, lv.class2_cross], axis=1)
                tables.append(PatternTable.from_sites(flat, lv.class2, nb, q, t))
        self.patterns = PatternTable.concat(tables, q)

        tfield = plan.sublattice_field(flat.reshape(g.shape), plan.T)
        self.terminal_mode = terminal
        self.n_terminal = plan.terminal_geometry.n_sites
        self.terminal = _HistogramTerm(tfield, plan.terminal_geometry, q) if terminal == "exact" else None

    def level_terms(self, beta, alpha=1.0) -> tuple[float, float]:
        """(sum of conditional factors, terminal term)."""
        cond = self.patterns.loglik(beta * alpha ** self.patterns.level) if self.T else 0.0
        b_term = beta * alpha ** self.terminal_exponent
        if self.terminal is None:
            term = -self.n_terminal * np.log(self.q)
        else:
            term = self.terminal(b_term)
        return cond, term

    def __call__(self, beta, alpha=1.0):
        cond, term = self.level_terms(beta, alpha)
        return cond + term


# ---------------------------------------------------------------------------
# thermodynamic integration
# ---------------------------------------------------------------------------


@dataclass
class TdiTable:
    """log C(beta) on a grid, from E[U | beta] integrated by the trapezoid rule."""

    beta_grid: np.ndarray
    log_c: np.ndarray
    se: np.ndarray
    rows: int
    cols: int
    order: Order
    q: int
    geometry_key: str
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.beta_grid = np.asarray(self.beta_grid, dtype=float)
        self.log_c = np.asarray(self.log_c, dtype=float)
        self.se = np.asarray(self.se, dtype=float)
        self.order = Order(self.order)
        if self.beta_grid[0] != 0.0 or np.any(np.diff(self.beta_grid) <= 0):
            raise ValueError("table grid must start at 0 and increase strictly")

    @property
    def beta_max(self) -> float:
        return float(self.beta_grid[-1])

    def covers(self, lo: float, hi: float) -> bool:
        return lo >= self.beta_grid[0] and hi <= self.beta_max + 1e-12

    def interpolate(self, beta: float) -> float:
        if beta < 0 or beta > self.beta_max + 1e-12:
            raise RangeError(f"beta={beta} outside TDI table range [0, {self.beta_max}]")
        return float(np.interp(beta, self.beta_grid, self.log_c))

    def matches(self, geometry: LatticeGeometry, q: int) -> bool:
        return self.geometry_key == geometry.key and self.q == q

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(f"# rows={self.rows} cols={self.cols} order={self.order.value} q={self.q} geometry={self.geometry_key}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["beta", "logC", "se"])
        for b, c, s in zip(self.beta_grid, self.log_c, self.se):
            w.writerow([repr(float(b)), repr(float(c)), repr(float(s))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "TdiTable":
        lines = Path(path).read_text().splitlines()
        if not lines or not lines[0].startswith("#"):
            raise ValueError(f"{path}: missing TDI table header line")
        meta = dict(kv.split("=", 1) for kv in lines[0][1:].split())
        body = list(csv.DictReader(lines[1:]))
        return cls(
            beta_grid=[float(r["beta"]) for r in body],
            log_c=[float(r["logC"]) for r in body],
            se=[float(r["se"]) for r in body],
            rows=int(meta["rows"]),
            cols=int(meta["cols"]),
            order=Order(meta["order"]),
            q=int(meta["q"]),
            geometry_key=meta["geometry"],
        )


def default_tdi_grid(order: Order, beta_max: float | None = None, step: float = 0.01) -> np.ndarray:
    if beta_max is None:
        beta_max = 0.9 if Order(order) is Order.FIRST else 0.5
    n = int(round(beta_max / step))
    return np.round(np.linspace(0.0, n * step, n + 1), 10)


def build_tdi_table(
    geometry: LatticeGeometry,
    q: int,
    beta_grid=None,
    sweeps: int = 2000,
    burn_in: int = 500,
    seed: int = 0,
) -> TdiTable:
    grid = default_tdi_grid(geometry.order) if beta_grid is None else np.asarray(beta_grid, dtype=float)
    if grid[0] != 0.0:
        raise ValueError("TDI grid must start at beta = 0")
    curve = expected_bonds_curve(geometry, q, grid, sweeps=sweeps, burn_in=burn_in, seed=seed)
    mean = curve.mean_U.copy()
    se = curve.se_U.copy()
    # every bond matches with probability 1/q at beta = 0
    mean[0] = geometry.n_edges / q
    se[0] = 0.0
    h = np.diff(grid)
    log_c = np.empty(len(grid))
    var = np.empty(len(grid))
    log_c[0] = geometry.n_sites * np.log(q)
    var[0] = 0.0
    for k in range(1, len(grid)):
        log_c[k] = log_c[k - 1] + 0.5 * h[k - 1] * (mean[k - 1] + mean[k])
        coef = np.zeros(k + 1)
        coef[:-1] += 0.5 * h[:k]
        coef[1:] += 0.5 * h[:k]
        var[k] = np.sum((coef * se[: k + 1]) ** 2)
    return TdiTable(
        beta_grid=grid,
        log_c=log_c,
        se=np.sqrt(var),
        rows=geometry.rows,
        cols=geometry.cols,
        order=geometry.order,
        q=q,
        geometry_key=geometry.key,
        meta={"sweeps": sweeps, "burn_in": burn_in, "seed": seed},
    )


class TdiLikelihood(Likelihood):
    name = "tdi"

    def __init__(self, field, geometry: LatticeGeometry, q: int, table: TdiTable):
        if not table.matches(geometry, q):
            raise IncompatibleBackend(
                f"TDI table was built for {table.rows}x{table.cols} {table.order.value} q={table.q}, "
                f"not {geometry!r} q={q}"
            )
        self.table = table
        self.U = bond_count(check_field(field, geometry, q), geometry)

    def __call__(self, beta, alpha=1.0):
        return beta * self.U - self.table.interpolate(beta)

    def beta_support(self):
        return (0.0, self.table.beta_max)


def tdi_loglik(field, q: int, beta: float, table: TdiTable, geometry: LatticeGeometry | None = None) -> float:
    if geometry is None:
        geometry = LatticeGeometry(table.rows, table.cols, table.order)
    return TdiLikelihood(field, geometry, q, table)(beta)


# ---------------------------------------------------------------------------
# functional entry points
# ---------------------------------------------------------------------------


def pseudo_loglik(field, q: int, beta: float, geometry: LatticeGeometry) -> float:
    z = check_field(field, geometry, q).ravel().astype(np.int64)
    sites = np.flatnonzero(geometry.present)
    return conditional_block_loglik(z, sites, geometry.neighbours[sites], beta, q)


def rcoda_loglik_first(field, params: ModelParams, plan: DecompositionPlan, **kw) -> float:
    if plan.order is not Order.FIRST:
        raise IncompatibleBackend("first-order RCoDA needs a first-order plan")
    if plan.T != params.T:
        raise ValueError(f"plan has T={plan.T}, params have T={params.T}")
    return RcodaLikelihood(field, plan, params.q, **kw)(params.beta, params.alpha)


def rcoda_loglik_second(field, params: ModelParams, plan: DecompositionPlan, variant: str = "C", **kw) -> float:
    if plan.order is not Order.SECOND:
        raise IncompatibleBackend("RCoDA-M/RCoDA-C need a second-order plan")
    if plan.T != params.T:
        raise ValueError(f"plan has T={plan.T}, params have T={params.T}")
    return RcodaLikelihood(field, plan, params.q, variant=variant, **kw)(params.beta, params.alpha)


def make_likelihood(
    backend: str,
    field,
    geometry: LatticeGeometry,
    q: int,
    *,
    T: int | None = None,
    plan: DecompositionPlan | None = None,
    table: TdiTable | None = None,
    terminal: str = "exact",
    terminal_exponent: int | None = None,
) -> Likelihood:
    """Compile the named backend for ``field``."""
    backend = backend.lower()
    if backend == "pl":
        return PseudoLikelihood(field, geometry, q)
    if backend == "exact":
        return ExactLikelihood(field, geometry, q)
    if backend == "tdi":
        if table is None:
            raise IncompatibleBackend("the tdi backend needs a lookup table")
        return TdiLikelihood(field, geometry, q, table)
    if backend in ("rcoda", "rcoda-m", "rcoda-c"):
        want = Order.FIRST if backend == "rcoda" else Order.SECOND
        if geometry.order is not want:
            raise IncompatibleBackend(f"backend {backend!r} needs a {want.value}-order geometry, got {geometry.order.value}")
        if plan is None:
            plan = build_plan(geometry, T)
        variant = None if backend == "rcoda" else backend[-1].upper()
        return RcodaLikelihood(field, plan, q, variant=variant, terminal=terminal, terminal_exponent=terminal_exponent)
    raise ValueError(f"unknown backend {backend!r}; choose from {', '.join(BACKENDS)}")
