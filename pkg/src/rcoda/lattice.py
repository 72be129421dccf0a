"""Lattice geometry, neighbourhood systems and recursive sublattice plans.

Sites are stored row-major, ``index = row * cols + col``.  A geometry may carry
a presence mask: the first-order recursion rotates the surviving sublattice by
45 degrees, and the rotated point set generally fills only part of its
bounding rectangle.  Absent sites have no neighbours and are never neighbours.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class Order(str, enum.Enum):
    FIRST = "first"
    SECOND = "second"


# forward half-stencils; the backward half is implied by symmetry
_FORWARD = {
    Order.FIRST: ((0, 1), (1, 0)),
    Order.SECOND: ((0, 1), (1, 0), (1, 1), (1, -1)),
}


def _coerce_order(order) -> Order:
    if isinstance(order, Order):
        return order
    try:
        return Order(str(order).lower())
    except ValueError:
        raise ValueError(f"unknown neighbourhood order {order!r}; use 'first' or 'second'") from None


@dataclass(frozen=True, eq=False)
class LatticeGeometry:
    """A rows x cols rectangle with free boundaries.

    ``mask`` is ``None`` for a full rectangle, otherwise a read-only boolean
    array of shape ``(rows, cols)``.
    """

    rows: int
    cols: int
    order: Order = Order.FIRST
    mask: np.ndarray | None = None
    boundary: str = "free"

    def __post_init__(self):
        if int(self.rows) < 1 or int(self.cols) < 1:
            raise ValueError(f"lattice dimensions must be positive, got {self.rows}x{self.cols}")
        object.__setattr__(self, "rows", int(self.rows))
        object.__setattr__(self, "cols", int(self.cols))
        object.__setattr__(self, "order", _coerce_order(self.order))
        if self.boundary != "free":
            raise ValueError("only free boundaries are supported")
        if self.mask is not None:
            m = np.array(self.mask, dtype=bool)
            if m.shape != (self.rows, self.cols):
                raise ValueError(f"mask shape {m.shape} does not match {self.rows}x{self.cols}")
            if m.all():
                m = None
            else:
                m.setflags(write=False)
            object.__setattr__(self, "mask", m)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def size(self) -> int:
        """Number of cells in the bounding rectangle (present or not)."""
        return self.rows * self.cols

    @cached_property
    def present(self) -> np.ndarray:
        """Flat boolean presence vector."""
        if self.mask is None:
            return np.ones(self.size, dtype=bool)
        return self.mask.ravel().copy()

    @property
    def n_sites(self) -> int:
        return int(self.present.sum())

    @cached_property
    def key(self) -> str:
        h = hashlib.sha1(f"{self.rows}x{self.cols}:{self.order.value}".encode())
        if self.mask is not None:
            h.update(np.packbits(self.mask).tobytes())
        return h.hexdigest()[:16]

    def __eq__(self, other):
        return isinstance(other, LatticeGeometry) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        extra = "" if self.mask is None else f", n_sites={self.n_sites}"
        return f"LatticeGeometry({self.rows}x{self.cols}, {self.order.value}{extra})"

    @property
    def max_degree(self) -> int:
        return 4 if self.order is Order.FIRST else 8

    @cached_property
    def edges(self) -> np.ndarray:
        """Unordered neighbour pairs as an ``(E, 2)`` int array, each pair once."""
        r, c = np.divmod(np.arange(self.size), self.cols)
        pres = self.present
        out = []
        for dr, dc in _FORWARD[self.order]:
            rr, cc = r + dr, c + dc
            ok = (rr >= 0) & (rr < self.rows) & (cc >= 0) & (cc < self.cols) & pres
            j = rr[ok] * self.cols + cc[ok]
            i = np.flatnonzero(ok)
            keep = pres[j]
            out.append(np.stack([i[keep], j[keep]], axis=1))
        e = np.concatenate(out) if out else np.empty((0, 2), dtype=np.int64)
        e = e.astype(np.int64)
        e.setflags(write=False)
        return e

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def neighbours(self) -> np.ndarray:
        """Padded neighbour table of shape ``(size, max_degree)``; ``-1`` marks no neighbour."""
        nbr = np.full((self.size, self.max_degree), -1, dtype=np.int64)
        fill = np.zeros(self.size, dtype=np.int64)
        for a, b in self.edges:
            nbr[a, fill[a]] = b
            fill[a] += 1
            nbr[b, fill[b]] = a
            fill[b] += 1
        nbr.setflags(write=False)
        return nbr

    def degree(self) -> np.ndarray:
        return (self.neighbours >= 0).sum(axis=1)

    def neighbours_of(self, row: int, col: int) -> list[tuple[int, int]]:
        idx = self.neighbours[row * self.cols + col]
        return [divmod(int(j), self.cols) for j in idx[idx >= 0]]


def build_geometry(rows: int, cols: int, order="first") -> LatticeGeometry:
    return LatticeGeometry(rows, cols, _coerce_order(order))


@dataclass(frozen=True, eq=False)
class Level:
    """One step of the recursion.

    All site indices refer to the ORIGINAL flattened field, so likelihood code
    can gather values without following the remap chain.

    For first order only ``conditioned``/``cond_neighbours`` are used.  For
    second order ``conditioned`` is coding class 1 (conditioned on every other
    class) and ``class2`` is coding class 2, whose neighbour lists are split
    into remainder neighbours (``class2_neighbours``) and class-1 neighbours
    (``class2_cross``).
    """

    geometry: LatticeGeometry
    index_map: np.ndarray
    conditioned: np.ndarray
    cond_neighbours: np.ndarray
    remainder: np.ndarray
    next_geometry: LatticeGeometry
    next_index_map: np.ndarray
    class2: np.ndarray | None = None
    class2_neighbours: np.ndarray | None = None
    class2_cross: np.ndarray | None = None
    halved_axis: int | None = None

    @property
    def n_conditioned(self) -> int:
        n = len(self.conditioned)
        if self.class2 is not None:
            n += len(self.class2)
        return n


@dataclass(frozen=True, eq=False)
class DecompositionPlan:
    """Recursive decomposition of a lattice into conditioned sets and a terminal lattice."""

    geometry: LatticeGeometry
    levels: tuple[Level, ...]
    terminal_geometry: LatticeGeometry
    terminal_index_map: np.ndarray

    @property
    def T(self) -> int:
        return len(self.levels)

    @property
    def order(self) -> Order:
        return self.geometry.order

    @cached_property
    def terminal_sites(self) -> np.ndarray:
        m = self.terminal_index_map.ravel()
        return m[m >= 0]

    @cached_property
    def key(self) -> str:
        return f"{self.geometry.key}-T{self.T}"

    def level_index_map(self, t: int) -> np.ndarray:
        """Index map (original site per cell, -1 if absent) of the level-t lattice."""
        if t == 0:
            return self.levels[0].index_map if self.levels else self.terminal_index_map
        if t == self.T:
            return self.terminal_index_map
        return self.levels[t].index_map

    def level_geometry(self, t: int) -> LatticeGeometry:
        if t == self.T:
            return self.terminal_geometry
        return self.levels[t].geometry

    def sublattice_field(self, field: np.ndarray, t: int) -> np.ndarray:
        """Extract the level-t lattice of ``field`` as a standalone array (absent cells = 0)."""
        imap = self.level_index_map(t)
        flat = np.asarray(field).ravel()
        out = np.where(imap >= 0, flat[np.maximum(imap, 0)], 0)
        return out.astype(flat.dtype)

    def to_dict(self) -> dict:
        def coords(idx):
            return [list(divmod(int(i), self.geometry.cols)) for i in idx]

        levels = []
        for t, lv in enumerate(self.levels):
            d = {
                "level": t,
                "shape": list(lv.geometry.shape),
                "n_sites": lv.geometry.n_sites,
                "conditioned": coords(lv.conditioned),
                "remainder": coords(lv.remainder),
                "next_shape": list(lv.next_geometry.shape),
            }
            if lv.class2 is not None:
                d["class1"] = d.pop("conditioned")
                d["class2"] = coords(lv.class2)
                d["halved_axis"] = lv.halved_axis
                d["class_sizes"] = [len(lv.conditioned), len(lv.class2)] + _remainder_class_sizes(lv)
            levels.append(d)
        return {
            "rows": self.geometry.rows,
            "cols": self.geometry.cols,
            "order": self.order.value,
            "T": self.T,
            "levels": levels,
            "terminal": {
                "shape": list(self.terminal_geometry.shape),
                "n_sites": self.terminal_geometry.n_sites,
                "sites": coords(self.terminal_sites),
            },
            "key": self.key,
        }


def _remainder_class_sizes(lv: Level) -> list[int]:
    # classes 3 and 4 split the remainder lines by parity of the other axis
    g = lv.geometry
    r, c = np.divmod(np.arange(g.size), g.cols)
    other = c if lv.halved_axis == 0 else r
    a = r if lv.halved_axis == 0 else c
    rem = (a % 2 == 0)
    return [int((rem & (other % 2 == 1)).sum()), int((rem & (other % 2 == 0)).sum())]


def _gather(index_map: np.ndarray, local: np.ndarray) -> np.ndarray:
    """Map local flat indices (``-1`` allowed) through ``index_map``."""
    flat = index_map.ravel()
    return np.where(local >= 0, flat[np.maximum(local, 0)], -1)


def _first_order_level(geom: LatticeGeometry, imap: np.ndarray) -> Level:
    r, c = np.divmod(np.arange(geom.size), geom.cols)
    pres = geom.present
    odd = ((r + c) % 2 == 1) & pres
    even = ((r + c) % 2 == 0) & pres
    if not even.any():
        # only odd sites left: they share no edges, keep one as the remainder
        keep = np.flatnonzero(odd)[0]
        odd[keep], even[keep] = False, True
    cond_local = np.flatnonzero(odd)
    cond = _gather(imap, cond_local)
    nbrs = _gather(imap, geom.neighbours[cond_local])

    er, ec = r[even], c[even]
    u = (er + ec) // 2
    v = (er - ec) // 2
    u = u - u.min()
    v = v - v.min()
    shape = (int(u.max()) + 1, int(v.max()) + 1)
    nmap = np.full(shape, -1, dtype=np.int64)
    nmap[u, v] = _gather(imap, np.flatnonzero(even))
    ngeom = LatticeGeometry(shape[0], shape[1], Order.FIRST, nmap >= 0)
    return Level(
        geometry=geom,
        index_map=imap,
        conditioned=cond,
        cond_neighbours=nbrs,
        remainder=nmap.ravel()[nmap.ravel() >= 0],
        next_geometry=ngeom,
        next_index_map=nmap,
    )


def _second_order_level(geom: LatticeGeometry, imap: np.ndarray, axis: int) -> Level:
    """Split on ``axis``: lines with odd index along it are conditioned (classes 1, 2),
    lines with even index survive (classes 3, 4) and are compressed contiguously."""
    r, c = np.divmod(np.arange(geom.size), geom.cols)
    a, b = (r, c) if axis == 0 else (c, r)
    cls1 = np.flatnonzero((a % 2 == 1) & (b % 2 == 1))
    cls2 = np.flatnonzero((a % 2 == 1) & (b % 2 == 0))
    nbr = geom.neighbours

    def split(local_nbrs, keep):
        out = np.where(keep, local_nbrs, -1)
        # compact valid entries to the left; keeps row-major order of neighbours
        order = np.argsort(out < 0, axis=1, kind="stable")
        return np.take_along_axis(out, order, axis=1)

    n2 = nbr[cls2]
    valid = n2 >= 0
    n2a = np.where(valid, a[np.maximum(n2, 0)], -1)
    on_remainder = valid & (n2a % 2 == 0)
    on_class1 = valid & (n2a % 2 == 1)

    if axis == 0:
        nmap = imap[0::2, :]
    else:
        nmap = imap[:, 0::2]
    nmap = np.ascontiguousarray(nmap)
    ngeom = LatticeGeometry(nmap.shape[0], nmap.shape[1], Order.SECOND)
    return Level(
        geometry=geom,
        index_map=imap,
        conditioned=_gather(imap, cls1),
        cond_neighbours=_gather(imap, nbr[cls1]),
        remainder=nmap.ravel().copy(),
        next_geometry=ngeom,
        next_index_map=nmap,
        class2=_gather(imap, cls2),
        class2_neighbours=_gather(imap, split(n2, on_remainder)),
        class2_cross=_gather(imap, split(n2, on_class1)),
        halved_axis=axis,
    )


def _second_order_axis(t: int, shape: tuple[int, int]) -> int | None:
    # alternate labelling: columns are halved on even levels, rows on odd ones
    preferred = 1 if t % 2 == 0 else 0
    if shape[preferred] > 1:
        return preferred
    if shape[1 - preferred] > 1:
        return 1 - preferred
    return None


def _max_T(geometry: LatticeGeometry) -> int:
    t = 0
    for _ in _walk(geometry):
        t += 1
    return t


def _walk(geometry: LatticeGeometry):
    """Yield successive levels until the lattice is a single site."""
    geom = geometry
    imap = np.arange(geom.size, dtype=np.int64).reshape(geom.shape)
    if geom.mask is not None:
        imap = np.where(geom.mask, imap, -1)
    t = 0
    while geom.n_sites > 1:
        if geometry.order is Order.FIRST:
            lv = _first_order_level(geom, imap)
        else:
            axis = _second_order_axis(t, geom.shape)
            if axis is None:
                return
            lv = _second_order_level(geom, imap, axis)
        yield lv
        geom, imap = lv.next_geometry, lv.next_index_map
        t += 1


def build_plan(geometry: LatticeGeometry, T: int | None = None) -> DecompositionPlan:
    """Build a decomposition plan with ``T`` levels (``default_T`` when omitted)."""
    if T is None:
        T = default_T(geometry)
    if T < 0:
        raise ValueError("T must be >= 0")
    levels = []
    walker = _walk(geometry)
    for _ in range(T):
        lv = next(walker, None)
        if lv is None:
            raise ValueError(
                f"T={T} is too large for {geometry!r}: remainder would be empty; "
                f"maximum feasible T is {_max_T(geometry)}"
            )
        levels.append(lv)
    if levels:
        tgeom, tmap = levels[-1].next_geometry, levels[-1].next_index_map
    else:
        tgeom = geometry
        tmap = np.arange(geometry.size, dtype=np.int64).reshape(geometry.shape)
        if geometry.mask is not None:
            tmap = np.where(geometry.mask, tmap, -1)
    for arr in (tmap,):
        arr.setflags(write=False)
    return DecompositionPlan(geometry, tuple(levels), tgeom, tmap)


def build_plan_first_order(geometry: LatticeGeometry, T: int | None = None) -> DecompositionPlan:
    if geometry.order is not Order.FIRST:
        raise ValueError("first-order plan requested for a second-order geometry")
    return build_plan(geometry, T)


def build_plan_second_order(geometry: LatticeGeometry, T: int | None = None) -> DecompositionPlan:
    if geometry.order is not Order.SECOND:
        raise ValueError("second-order plan requested for a first-order geometry")
    return build_plan(geometry, T)


def default_T(geometry: LatticeGeometry, max_side: int = 4) -> int:
    """Smallest T whose terminal lattice fits in ``max_side x max_side``."""
    t = 0
    if geometry.rows <= max_side and geometry.cols <= max_side:
        return 0
    for lv in _walk(geometry):
        t += 1
        g = lv.next_geometry
        if g.rows <= max_side and g.cols <= max_side:
            return t
    return t
