"""Gaussian mixture with a hidden Potts label field.

One MCMC iteration: a full Gibbs sweep over the labels, conjugate updates of
the component means and variances, then Metropolis-Hastings on beta (and
alpha for RCoDA backends) with the likelihood backend compiled on the current
labels.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .inference import reflect, summarize
from .lattice import LatticeGeometry, build_geometry, build_plan
from .likelihood import RangeError, TdiTable, make_likelihood
from .potts import PottsModel, gibbs_sample, kernel_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MixturePriors:
    mu_mean: float = 0.5
    mu_sd: float = 100.0
    sigma2_shape: float = 0.001
    sigma2_scale: float = 0.001
    beta_lo: float = 0.0
    beta_hi: float = 4.0
    alpha_lo: float = 0.0
    alpha_hi: float = 1.0


@dataclass(frozen=True)
class HmrfSettings:
    iterations: int = 6000
    burn_in: int = 2000
    seed: int = 0
    proposal_sd_beta: float = 0.05
    proposal_sd_alpha: float = 0.1
    adapt: bool = True
    target_accept: float = 0.35
    beta_init: float = 0.5
    alpha_init: float = 0.5
    n_snapshots: int = 200
    T: int | None = None

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")


@dataclass
class HmrfResult:
    geometry: LatticeGeometry
    K: int
    backend: str | None
    mu: np.ndarray
    sigma2: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray | None
    burn_in: int
    snapshot_iters: np.ndarray
    snapshots: np.ndarray
    empty_events: int
    acceptance: dict
    settings: HmrfSettings
    priors: MixturePriors

    def retained(self, name: str) -> np.ndarray:
        return getattr(self, name)[self.burn_in :]

    def summary(self, level: float = 0.95) -> dict:
        out = {}
        for k in range(self.K):
            out[f"mu{k + 1}"] = summarize(self.mu[self.burn_in :, k], level)._asdict()
            out[f"sigma{k + 1}"] = summarize(np.sqrt(self.sigma2[self.burn_in :, k]), level)._asdict()
        out["beta"] = summarize(self.retained("beta"), level)._asdict()
        if self.alpha is not None:
            out["alpha"] = summarize(self.retained("alpha"), level)._asdict()
        return out

    def label_map(self) -> np.ndarray:
        """Per-pixel modal label across stored snapshots."""
        counts = np.stack([(self.snapshots == k).sum(axis=0) for k in range(self.K)])
        return counts.argmax(axis=0).reshape(self.geometry.shape)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["iteration"] + [f"mu{k + 1}" for k in range(self.K)] + [f"sigma2_{k + 1}" for k in range(self.K)]
        head += ["beta", "alpha"]
        w.writerow(head)
        for i in range(len(self.beta)):
            a = "" if self.alpha is None else repr(float(self.alpha[i]))
            w.writerow([i, *map(float, self.mu[i]), *map(float, self.sigma2[i]), float(self.beta[i]), a])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "backend": self.backend,
            "K": self.K,
            "summary": self.summary(),
            "acceptance_rate": self.acceptance,
            "empty_component_events": self.empty_events,
            "settings": asdict(self.settings),
            "priors": asdict(self.priors),
        }


def _log_normal_pdf(y: np.ndarray, mu: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
    return -0.5 * np.log(2 * np.pi * sigma2)[None, :] - (y[:, None] - mu[None, :]) ** 2 / (2 * sigma2[None, :])


def _initial_state(y: np.ndarray, K: int):
    qs = np.quantile(y, np.arange(1, K) / K)
    z = np.searchsorted(qs, y, side="right").astype(np.int64)
    mu = np.array([y[z == k].mean() if np.any(z == k) else np.quantile(y, (k + 0.5) / K) for k in range(K)])
    var = np.array([y[z == k].var() if np.sum(z == k) > 1 else y.var() for k in range(K)])
    return z, mu, np.maximum(var, 1e-6)


def fit_hmrf(
    y,
    K: int = 2,
    backend: str | None = "rcoda",
    order="first",
    priors: MixturePriors = MixturePriors(),
    settings: HmrfSettings = HmrfSettings(),
    table: TdiTable | None = None,
    beta_fixed: float | None = None,
) -> HmrfResult:
    """MCMC for the hidden-Potts Gaussian mixture.

    ``backend=None`` disables the spatial term's inference and holds beta at
    ``beta_fixed`` (default 0, an iid mixture).
    """
    y2 = np.asarray(y, dtype=float)
    if y2.ndim != 2 or not np.all(np.isfinite(y2)):
        raise ValueError("y must be a finite 2-D array")
    geom = build_geometry(*y2.shape, order)
    yv = y2.ravel()
    n = yv.size
    rng = np.random.default_rng(settings.seed)
    plan = None
    if backend in ("rcoda", "rcoda-m", "rcoda-c"):
        plan = build_plan(geom, settings.T)
    if backend == "tdi":
        if table is None:
            raise ValueError("tdi backend needs a table")
        if table.beta_max < priors.beta_hi:
            raise RangeError(f"TDI table ends at beta={table.beta_max}, prior reaches {priors.beta_hi}")

    z, mu, sigma2 = _initial_state(yv, K)
    if backend is None:
        beta = 0.0 if beta_fixed is None else float(beta_fixed)
    else:
        beta = float(settings.beta_init)
    uses_alpha = plan is not None and plan.T > 0
    alpha = settings.alpha_init if uses_alpha else 1.0

    it_n = settings.iterations
    tr_mu = np.empty((it_n, K))
    tr_s2 = np.empty((it_n, K))
    tr_b = np.empty(it_n)
    tr_a = np.empty(it_n) if uses_alpha else None
    acc = {"beta": 0, "alpha": 0}
    n_retained = it_n - settings.burn_in
    snap_iters = settings.burn_in + np.unique(
        np.linspace(0, n_retained - 1, min(settings.n_snapshots, n_retained)).round().astype(int)
    )
    snap_set = {int(i): j for j, i in enumerate(snap_iters)}
    snaps = np.empty((len(snap_iters), n), dtype=np.int8)
    log_sd = {"beta": math.log(settings.proposal_sd_beta), "alpha": math.log(settings.proposal_sd_alpha)}
    empty_events = 0
    prec0 = 1.0 / priors.mu_sd**2

    for it in range(it_n):
        # (i) labels
        logpot = _log_normal_pdf(yv, mu, sigma2)
        _kernels.gibbs_sweeps_field(
            z, geom.neighbours, geom.present, K, beta, logpot, 1, kernel_seed(rng.integers(2**63))
        )
        # (ii) means, then ordering, (iii) variances
        counts = np.bincount(z, minlength=K)
        sums = np.bincount(z, weights=yv, minlength=K)
        for k in range(K):
            if counts[k] == 0:
                empty_events += 1
                mu[k] = rng.normal(priors.mu_mean, priors.mu_sd)
                continue
            prec = prec0 + counts[k] / sigma2[k]
            mean = (priors.mu_mean * prec0 + sums[k] / sigma2[k]) / prec
            mu[k] = rng.normal(mean, 1.0 / math.sqrt(prec))
        perm = np.argsort(mu, kind="stable")
        if np.any(perm != np.arange(K)):
            inv = np.empty(K, dtype=np.int64)
            inv[perm] = np.arange(K)
            z[:] = inv[z]
            mu, sigma2 = mu[perm], sigma2[perm]
            counts = counts[perm]
        ss = np.bincount(z, weights=(yv - mu[z]) ** 2, minlength=K)
        for k in range(K):
            shape = priors.sigma2_shape + counts[k] / 2.0
            scale = priors.sigma2_scale + ss[k] / 2.0
            sigma2[k] = scale / rng.gamma(shape)
        sigma2 = np.maximum(sigma2, 1e-12)

        # (iv) spatial parameters on the current labels
        if backend is not None:
            lik = make_likelihood(backend, z.reshape(geom.shape), geom, K, plan=plan, table=table)
            adapting = settings.adapt and it < settings.burn_in
            gain = 1.0 / (it + 1) ** 0.6
            cur = lik(beta, alpha)
            prop = reflect(beta + math.exp(log_sd["beta"]) * rng.standard_normal(), priors.beta_lo, priors.beta_hi)
            new = lik(prop, alpha)
            log_r = new - cur
            if math.log(rng.random()) < log_r:
                beta, cur = prop, new
                acc["beta"] += it >= settings.burn_in
            if adapting:
                log_sd["beta"] += gain * (min(1.0, math.exp(min(log_r, 0.0))) - settings.target_accept)
            if uses_alpha:
                prop = reflect(alpha + math.exp(log_sd["alpha"]) * rng.standard_normal(), priors.alpha_lo, priors.alpha_hi)
                new = lik(beta, prop)
                log_r = new - cur
                if math.log(rng.random()) < log_r:
                    alpha = prop
                    acc["alpha"] += it >= settings.burn_in
                if adapting:
                    log_sd["alpha"] += gain * (min(1.0, math.exp(min(log_r, 0.0))) - settings.target_accept)

        tr_mu[it], tr_s2[it], tr_b[it] = mu, sigma2, beta
        if uses_alpha:
            tr_a[it] = alpha
        j = snap_set.get(it)
        if j is not None:
            snaps[j] = z

    if empty_events:
        logger.warning("component emptied %d times; its parameters were redrawn from the prior", empty_events)
    acceptance = {"beta": acc["beta"] / n_retained}
    if uses_alpha:
        acceptance["alpha"] = acc["alpha"] / n_retained
    return HmrfResult(
        geometry=geom,
        K=K,
        backend=backend,
        mu=tr_mu,
        sigma2=tr_s2,
        beta=tr_b,
        alpha=tr_a,
        burn_in=settings.burn_in,
        snapshot_iters=snap_iters,
        snapshots=snaps,
        empty_events=empty_events,
        acceptance=acceptance,
        settings=settings,
        priors=priors,
    )


def posterior_predictive_check(
    y,
    result: HmrfResult,
    levels=(0.95, 0.90, 0.80),
    refresh_sweeps: int = 1,
    seed: int = 0,
    min_retained: int = 500,
) -> dict:
    """Share of observed pixels inside central per-pixel predictive intervals.

    One replicate image per stored snapshot: the snapshot labels get
    ``refresh_sweeps`` Gibbs sweeps under the Potts prior at that draw's beta,
    then intensities are drawn from the component normals.
    """
    yv = np.asarray(y, dtype=float).ravel()
    n_ret = len(result.beta) - result.burn_in
    if n_ret < min_retained:
        raise ValueError(f"need at least {min_retained} retained draws, chain has {n_ret}")
    if len(result.snapshot_iters) < 20:
        raise ValueError("need at least 20 stored label snapshots")
    g = result.geometry
    rng = np.random.default_rng(seed)
    reps = np.empty((len(result.snapshot_iters), yv.size))
    for j, it in enumerate(result.snapshot_iters):
        z = result.snapshots[j].astype(np.int64)
        if refresh_sweeps > 0:
            _kernels.gibbs_sweeps(
                z, g.neighbours, g.present, result.K, float(result.beta[it]), refresh_sweeps,
                kernel_seed(rng.integers(2**63)),
            )
        mu, s2 = result.mu[it], result.sigma2[it]
        reps[j] = mu[z] + np.sqrt(s2[z]) * rng.standard_normal(yv.size)
    out = {}
    for lv in levels:
        tail = (1.0 - lv) / 2.0
        lo, hi = np.quantile(reps, [tail, 1.0 - tail], axis=0)
        out[f"{lv:.2f}"] = float(np.mean((yv >= lo) & (yv <= hi)))
    return {"coverage": out, "n_replicates": len(reps), "refresh_sweeps": refresh_sweeps}


def synthetic_image(rows: int, cols: int, beta: float, mu, sigma, order="first", sweeps: int = 5000, seed: int = 0):
    """Simulate labels from a Potts model and intensities from component normals."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), mu.shape)
    geom = build_geometry(rows, cols, order)
    ss = np.random.SeedSequence(seed).spawn(2)
    z = gibbs_sample(PottsModel(geom, len(mu), beta), sweeps, int(ss[0].generate_state(1)[0]))
    rng = np.random.default_rng(ss[1])
    y = mu[z] + sigma[z] * rng.standard_normal(z.shape)
    return y, z
