"""Replicated simulation studies: RMSE and coverage tables, decay curves, E[U|beta] scans.

Seeds are derived from the master seed and a task's coordinates only, so a
report does not depend on how tasks are scheduled across workers.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .inference import McmcSettings, Prior, mple_beta, sample_posterior
from .lattice import Order, build_geometry, build_plan
from .likelihood import TdiTable, build_tdi_table, default_tdi_grid, make_likelihood
from .potts import PottsModel, expected_bonds_curve, gibbs_sample

logger = logging.getLogger(__name__)

KINDS = ("rmse", "coverage", "decay", "bonds")


def derive_seed(master: int, *key) -> int:
    """64-bit seed from a master seed and a tuple of non-negative integers."""
    state = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key)).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def _beta_key(beta: float) -> int:
    return int(round(beta * 1_000_000))


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode())


@dataclass
class ExperimentSpec:
    kind: str
    sizes: list = field(default_factory=lambda: [32])
    q: list = field(default_factory=lambda: [2])
    order: str = "first"
    betas: list = field(default_factory=lambda: [0.2, 0.5, 0.8])
    backends: list = field(default_factory=lambda: ["rcoda", "pl"])
    replicates: int = 200
    sweeps: int = 5000
    mcmc: dict = field(default_factory=dict)
    prior: list = field(default_factory=lambda: [0.0, 0.9])
    level: float = 0.95
    master_seed: int = 0
    T: int | None = None
    tdi: dict = field(default_factory=dict)
    max_level: int = 8
    min_sublattice_sites: int = 256
    beta_grid: list | None = None
    bonds_sweeps: int = 2000
    bonds_burn_in: int = 500
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if isinstance(self.q, int):
            self.q = [self.q]
        if isinstance(self.sizes, int):
            self.sizes = [self.sizes]
        self.order = Order(self.order).value
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        lo, hi = self.prior
        if self.kind in ("rmse", "coverage", "decay"):
            bad = [b for b in self.betas if not lo <= b <= hi]
            if bad:
                raise ValueError(f"betas {bad} outside prior support [{lo}, {hi}]")
        if self.kind == "decay" and self.order != "first":
            raise ValueError("decay-curve study needs a first-order lattice")
        McmcSettings.from_dict(self.mcmc)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known - {"$schema", "description"}
        if unknown:
            raise ValueError(f"unknown spec keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def preset(cls, name: str) -> "ExperimentSpec":
        text = resources.files("rcoda.presets").joinpath(f"{name}.json").read_text()
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return asdict(self)


def list_presets() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("rcoda.presets").iterdir() if p.name.endswith(".json"))


@dataclass
class ExperimentReport:
    spec: ExperimentSpec
    cells: list
    replicates: list
    wall_time_s: float = 0.0

    CELL_COLUMNS = ("kind", "size", "q", "order", "backend", "beta", "t", "metric", "value", "se", "n_effective", "n_failed")

    def cells_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.CELL_COLUMNS, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for c in self.cells:
            w.writerow({k: _fmt(c.get(k, "")) for k in self.CELL_COLUMNS})
        return buf.getvalue()

    def replicates_csv(self) -> str:
        buf = io.StringIO()
        if not self.replicates:
            return ""
        cols = list(self.replicates[0].keys())
        for r in self.replicates:
            for k in r:
                if k not in cols:
                    cols.append(k)
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in self.replicates:
            w.writerow({k: _fmt(r.get(k, "")) for k in cols})
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "cells": self.cells, "wall_time_s": self.wall_time_s}

    def write(self, outdir) -> dict:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"report_csv": out / "report.csv", "replicates_csv": out / "replicates.csv", "report_json": out / "report.json"}
        paths["report_csv"].write_text(self.cells_csv())
        paths["replicates_csv"].write_text(self.replicates_csv())
        paths["report_json"].write_text(json.dumps(self.to_dict(), indent=2, default=_fmt) + "\n")
        return paths

    def cell(self, metric: str, **match) -> dict:
        for c in self.cells:
            if c["metric"] == metric and all(c.get(k) == v for k, v in match.items()):
                return c
        raise KeyError(f"no {metric} cell matching {match}")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _map(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=1))


# ---------------------------------------------------------------------------
# replicate fits (rmse / coverage)
# ---------------------------------------------------------------------------


def _fit_replicate(task) -> list:
    spec, size, q, beta, rep, tables = task
    geom = build_geometry(size, size, spec.order)
    data_seed = derive_seed(spec.master_seed, 1, size, q, _beta_key(beta), rep)
    z = gibbs_sample(PottsModel(geom, q, beta), spec.sweeps, data_seed)
    plan = build_plan(geom, spec.T) if any(b.startswith("rcoda") for b in spec.backends) else None
    prior = Prior(*spec.prior)
    out = []
    for backend in spec.backends:
        mcmc_seed = derive_seed(spec.master_seed, 2, size, q, _beta_key(beta), rep, _name_key(backend))
        rec = {"size": size, "q": q, "beta": beta, "rep": rep, "backend": backend,
               "data_seed": data_seed, "mcmc_seed": mcmc_seed}
        try:
            lik = make_likelihood(backend, z, geom, q, plan=plan, table=tables.get((size, q)))
            settings = McmcSettings.from_dict({**spec.mcmc, "seed": mcmc_seed})
            chain = sample_posterior(lik, prior, settings)
            s = chain.summary(spec.level)["beta"]
            rec.update(post_mean=s["mean"], post_sd=s["sd"], ci_lo=s["lo"], ci_hi=s["hi"],
                       covered=int(s["lo"] <= beta <= s["hi"]), accept_beta=chain.acceptance_rate["beta"], error="")
        except Exception as exc:  # a failed replicate must not abort the cell
            rec.update(error=f"{type(exc).__name__}: {exc}")
        out.append(rec)
    return out


def _tables_for(spec: ExperimentSpec) -> dict:
    tables = {}
    if "tdi" not in spec.backends:
        return tables
    t = {"sweeps": 1000, "burn_in": 200, "step": 0.01, **spec.tdi}
    grid = default_tdi_grid(spec.order, beta_max=t.get("beta_max", spec.prior[1]), step=t["step"])
    for size in spec.sizes:
        for q in spec.q:
            geom = build_geometry(size, size, spec.order)
            seed = derive_seed(spec.master_seed, 3, size, q)
            tables[(size, q)] = build_tdi_table(geom, q, grid, t["sweeps"], t["burn_in"], seed)
    return tables


def _replicate_records(spec: ExperimentSpec, workers: int):
    tables = _tables_for(spec)
    tasks = [
        (spec, size, q, beta, rep, tables)
        for size in spec.sizes
        for q in spec.q
        for beta in spec.betas
        for rep in range(spec.replicates)
    ]
    return [rec for recs in _map(_fit_replicate, tasks, workers) for rec in recs]


def _cell_base(spec, size, q, backend, beta):
    return {"kind": spec.kind, "size": size, "q": q, "order": spec.order, "backend": backend, "beta": beta, "t": ""}


def _group(records):
    groups = {}
    for r in records:
        groups.setdefault((r["size"], r["q"], r["backend"], r["beta"]), []).append(r)
    return groups


def run_rmse(spec: ExperimentSpec, workers: int = 1) -> ExperimentReport:
    t0 = time.time()
    records = _replicate_records(spec, workers)
    cells = []
    for (size, q, backend, beta), recs in _group(records).items():
        ok = [r for r in recs if not r["error"]]
        base = {**_cell_base(spec, size, q, backend, beta), "n_effective": len(ok), "n_failed": len(recs) - len(ok)}
        if ok:
            err = np.array([r["post_mean"] for r in ok]) - beta
            mse = float(np.mean(err**2))
            rmse = float(np.sqrt(mse))
            se_mse = float(np.std(err**2, ddof=1) / np.sqrt(len(err))) if len(err) > 1 else float("nan")
            se_rmse = se_mse / (2 * rmse) if rmse > 0 else float("nan")
            cells.append({**base, "metric": "rmse", "value": rmse, "se": se_rmse})
            cells.append({**base, "metric": "bias", "value": float(err.mean()),
                          "se": float(err.std(ddof=1) / np.sqrt(len(err))) if len(err) > 1 else float("nan")})
        else:
            cells.append({**base, "metric": "rmse", "value": float("nan"), "se": float("nan")})
    return ExperimentReport(spec, cells, records, round(time.time() - t0, 3))


def run_coverage(spec: ExperimentSpec, workers: int = 1) -> ExperimentReport:
    t0 = time.time()
    records = _replicate_records(spec, workers)
    cells = []
    for (size, q, backend, beta), recs in _group(records).items():
        ok = [r for r in recs if not r["error"]]
        base = {**_cell_base(spec, size, q, backend, beta), "n_effective": len(ok), "n_failed": len(recs) - len(ok)}
        if ok:
            p = float(np.mean([r["covered"] for r in ok]))
            cells.append({**base, "metric": "coverage", "value": p, "se": float(np.sqrt(p * (1 - p) / len(ok)))})
            cells.append({**base, "metric": "mean_ci_width", "value": float(np.mean([r["ci_hi"] - r["ci_lo"] for r in ok])),
                          "se": ""})
        else:
            cells.append({**base, "metric": "coverage", "value": float("nan"), "se": float("nan")})
    return ExperimentReport(spec, cells, records, round(time.time() - t0, 3))


# ---------------------------------------------------------------------------
# decay-curve study
# ---------------------------------------------------------------------------


def _decay_replicate(task) -> dict:
    spec, size, q, beta, rep = task
    geom = build_geometry(size, size, "first")
    data_seed = derive_seed(spec.master_seed, 1, size, q, _beta_key(beta), rep)
    mcmc_seed = derive_seed(spec.master_seed, 2, size, q, _beta_key(beta), rep, _name_key("rcoda"))
    rec = {"size": size, "q": q, "beta": beta, "rep": rep, "data_seed": data_seed, "mcmc_seed": mcmc_seed}
    try:
        z = gibbs_sample(PottsModel(geom, q, beta), spec.sweeps, data_seed)
        plan = build_plan(geom, spec.T)
        lik = make_likelihood("rcoda", z, geom, q, plan=plan)
        chain = sample_posterior(lik, Prior(*spec.prior), McmcSettings.from_dict({**spec.mcmc, "seed": mcmc_seed}))
        a_hat = float(chain.alpha_draws.mean())
        b_hat = float(chain.beta_draws.mean())
        rec.update(alpha_hat=a_hat, beta_hat=b_hat, error="")
        for t in range(min(spec.max_level, plan.T) + 1):
            g_t = plan.level_geometry(t)
            if g_t.n_sites < spec.min_sublattice_sites:
                break
            sub = plan.sublattice_field(z, t)
            rec[f"beta_t{t}"] = mple_beta(sub, g_t, q).beta
            rec[f"decay_t{t}"] = a_hat**t * b_hat
    except Exception as exc:
        rec["error"] = f"{type(exc).__name__}: {exc}"
    return rec


def run_decay_curve(spec: ExperimentSpec, workers: int = 1) -> ExperimentReport:
    t0 = time.time()
    tasks = [(spec, s, q, b, r) for s in spec.sizes for q in spec.q for b in spec.betas for r in range(spec.replicates)]
    records = _map(_decay_replicate, tasks, workers)
    cells = []
    for size in spec.sizes:
        for q in spec.q:
            for beta in spec.betas:
                recs = [r for r in records if r["size"] == size and r["q"] == q and r["beta"] == beta and not r["error"]]
                n_failed = sum(1 for r in records if r["size"] == size and r["q"] == q and r["beta"] == beta and r["error"])
                for t in range(spec.max_level + 1):
                    for metric, key in (("beta_t", f"beta_t{t}"), ("alpha_t_beta", f"decay_t{t}")):
                        vals = np.array([r[key] for r in recs if key in r])
                        if len(vals) == 0:
                            continue
                        se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else float("nan")
                        cells.append({**_cell_base(spec, size, q, "rcoda", beta), "t": t, "metric": metric,
                                      "value": float(vals.mean()), "se": se, "n_effective": len(vals),
                                      "n_failed": n_failed})
    return ExperimentReport(spec, cells, records, round(time.time() - t0, 3))


# ---------------------------------------------------------------------------
# E[U | beta] scans
# ---------------------------------------------------------------------------


def _bonds_task(task):
    spec, size, q = task
    geom = build_geometry(size, size, spec.order)
    grid = spec.beta_grid if spec.beta_grid is not None else list(np.round(np.arange(0, 0.81, 0.02), 10))
    seed = derive_seed(spec.master_seed, 4, size, q)
    curve = expected_bonds_curve(geom, q, grid, spec.bonds_sweeps, spec.bonds_burn_in, seed)
    return size, q, geom.n_edges, seed, curve


def run_bonds_curve(spec: ExperimentSpec, workers: int = 1) -> ExperimentReport:
    t0 = time.time()
    results = _map(_bonds_task, [(spec, s, q) for s in spec.sizes for q in spec.q], workers)
    cells, records = [], []
    for size, q, n_edges, seed, curve in results:
        records.append({"size": size, "q": q, "n_edges": n_edges, "seed": seed})
        for b, m, s in curve.rows():
            base = {**_cell_base(spec, size, q, "gibbs", b), "n_effective": spec.bonds_sweeps, "n_failed": 0}
            cells.append({**base, "metric": "mean_U", "value": m, "se": s})
            cells.append({**base, "metric": "mean_U_per_edge", "value": m / n_edges, "se": s / n_edges})
    return ExperimentReport(spec, cells, records, round(time.time() - t0, 3))


RUNNERS = {"rmse": run_rmse, "coverage": run_coverage, "decay": run_decay_curve, "bonds": run_bonds_curve}


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> ExperimentReport:
    return RUNNERS[spec.kind](spec, workers)
