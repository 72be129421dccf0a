"""Random-walk Metropolis-Hastings posteriors for (beta[, alpha]) and MPLE point estimates."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize_scalar

from .lattice import LatticeGeometry
from .likelihood import Likelihood, PseudoLikelihood, RangeError, TdiLikelihood


@dataclass(frozen=True)
class Prior:
    beta_lo: float = 0.0
    beta_hi: float = 0.9
    alpha_lo: float | None = 0.0
    alpha_hi: float | None = 1.0

    def __post_init__(self):
        if not self.beta_lo < self.beta_hi:
            raise ValueError("beta prior needs lo < hi")
        if (self.alpha_lo is None) != (self.alpha_hi is None):
            raise ValueError("alpha prior bounds must both be set or both be None")
        if self.alpha_lo is not None and not self.alpha_lo < self.alpha_hi:
            raise ValueError("alpha prior needs lo < hi")

    @classmethod
    def simulation(cls):
        return cls(0.0, 0.9)

    @classmethod
    def hmrf(cls):
        return cls(0.0, 4.0)

    @property
    def has_alpha(self) -> bool:
        return self.alpha_lo is not None


@dataclass(frozen=True)
class McmcSettings:
    iterations: int = 6000
    burn_in: int = 2000
    proposal_sd_beta: float = 0.05
    proposal_sd_alpha: float = 0.1
    seed: int = 0
    adapt: bool = True
    target_accept: float = 0.35
    beta_init: float | None = None
    alpha_init: float | None = None

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.proposal_sd_beta <= 0 or self.proposal_sd_alpha <= 0:
            raise ValueError("proposal sds must be positive")

    @classmethod
    def from_dict(cls, d: dict | None) -> "McmcSettings":
        return cls(**(d or {}))


class Summary(NamedTuple):
    mean: float
    sd: float
    lo: float
    hi: float
    level: float
    n: int

    def covers(self, value: float) -> bool:
        return self.lo <= value <= self.hi


def summarize(draws, level: float = 0.95) -> Summary:
    """Mean, sd and equal-tailed credible interval from empirical quantiles."""
    x = np.asarray(draws, dtype=float)
    if x.size == 0:
        raise ValueError("cannot summarise an empty chain")
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(x, [tail, 1.0 - tail])
    sd = float(x.std(ddof=1)) if x.size > 1 else 0.0
    return Summary(float(x.mean()), sd, float(lo), float(hi), level, int(x.size))


@dataclass
class ChainResult:
    beta: np.ndarray
    alpha: np.ndarray | None
    loglik: np.ndarray
    accepted_beta: np.ndarray
    accepted_alpha: np.ndarray | None
    burn_in: int
    backend: str
    settings: McmcSettings
    prior: Prior
    final_sd: dict = field(default_factory=dict)

    @property
    def beta_draws(self) -> np.ndarray:
        return self.beta[self.burn_in :]

    @property
    def alpha_draws(self) -> np.ndarray | None:
        return None if self.alpha is None else self.alpha[self.burn_in :]

    @property
    def acceptance_rate(self) -> dict:
        out = {"beta": float(self.accepted_beta[self.burn_in :].mean())}
        if self.accepted_alpha is not None:
            out["alpha"] = float(self.accepted_alpha[self.burn_in :].mean())
        return out

    def summary(self, level: float = 0.95) -> dict:
        out = {"beta": summarize(self.beta_draws, level)._asdict()}
        if self.alpha is not None:
            out["alpha"] = summarize(self.alpha_draws, level)._asdict()
        return out

    def to_dict(self, level: float = 0.95) -> dict:
        return {
            "backend": self.backend,
            "summary": self.summary(level),
            "acceptance_rate": self.acceptance_rate,
            "n_retained": int(len(self.beta_draws)),
            "settings": asdict(self.settings),
            "prior": asdict(self.prior),
            "final_proposal_sd": self.final_sd,
        }

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "beta", "alpha", "loglik", "accepted_beta", "accepted_alpha"])
        for i in range(len(self.beta)):
            a = "" if self.alpha is None else repr(float(self.alpha[i]))
            aa = "" if self.accepted_alpha is None else int(self.accepted_alpha[i])
            w.writerow([i, repr(float(self.beta[i])), a, repr(float(self.loglik[i])), int(self.accepted_beta[i]), aa])
        return buf.getvalue()


def reflect(x: float, lo: float, hi: float) -> float:
    """Fold ``x`` back into ``[lo, hi]``; keeps a symmetric proposal symmetric."""
    width = hi - lo
    y = (x - lo) % (2.0 * width)
    return lo + (2.0 * width - y if y > width else y)


def _initial_point(lik: Likelihood, prior: Prior, with_alpha: bool, settings: McmcSettings):
    lo, hi = prior.beta_lo, prior.beta_hi
    betas = lo + (hi - lo) * (np.arange(40) + 0.5) / 40
    alphas = np.array([0.25, 0.5, 0.75]) if with_alpha else np.array([1.0])
    if settings.alpha_init is not None:
        alphas = np.array([settings.alpha_init])
    if settings.beta_init is not None:
        betas = np.array([settings.beta_init])
    best = (-np.inf, betas[0], alphas[0])
    for a in alphas:
        for b in betas:
            v = lik(b, a)
            if v > best[0]:
                best = (v, b, a)
    return float(best[1]), float(best[2])


def sample_posterior(lik: Likelihood, prior: Prior, settings: McmcSettings = McmcSettings()) -> ChainResult:
    """Componentwise random-walk MH with reflection at the uniform prior's bounds.

    Proposal scales adapt (Robbins-Monro on log scale) during burn-in only.
    """
    lo, hi = prior.beta_lo, prior.beta_hi
    if isinstance(lik, TdiLikelihood) and not lik.table.covers(lo, hi):
        raise RangeError(
            f"TDI table covers beta in [0, {lik.table.beta_max}] but the prior support is [{lo}, {hi}]"
        )
    with_alpha = bool(getattr(lik, "uses_alpha", False)) and prior.has_alpha
    rng = np.random.default_rng(settings.seed)
    n = settings.iterations
    beta, alpha = _initial_point(lik, prior, with_alpha, settings)
    cur = lik(beta, alpha)

    tr_b = np.empty(n)
    tr_a = np.empty(n) if with_alpha else None
    tr_l = np.empty(n)
    acc_b = np.zeros(n, dtype=bool)
    acc_a = np.zeros(n, dtype=bool) if with_alpha else None
    log_sd = {"beta": math.log(settings.proposal_sd_beta), "alpha": math.log(settings.proposal_sd_alpha)}

    for it in range(n):
        adapting = settings.adapt and it < settings.burn_in
        gain = 1.0 / (it + 1) ** 0.6

        prop = reflect(beta + math.exp(log_sd["beta"]) * rng.standard_normal(), lo, hi)
        new = lik(prop, alpha)
        log_r = new - cur
        if math.log(rng.random()) < log_r:
            beta, cur = prop, new
            acc_b[it] = True
        if adapting:
            log_sd["beta"] += gain * (min(1.0, math.exp(min(log_r, 0.0))) - settings.target_accept)

        if with_alpha:
            prop = reflect(alpha + math.exp(log_sd["alpha"]) * rng.standard_normal(), prior.alpha_lo, prior.alpha_hi)
            new = lik(beta, prop)
            log_r = new - cur
            if math.log(rng.random()) < log_r:
                alpha, cur = prop, new
                acc_a[it] = True
            if adapting:
                log_sd["alpha"] += gain * (min(1.0, math.exp(min(log_r, 0.0))) - settings.target_accept)
            tr_a[it] = alpha
        tr_b[it] = beta
        tr_l[it] = cur

    return ChainResult(
        beta=tr_b,
        alpha=tr_a,
        loglik=tr_l,
        accepted_beta=acc_b,
        accepted_alpha=acc_a,
        burn_in=settings.burn_in,
        backend=getattr(lik, "name", type(lik).__name__),
        settings=settings,
        prior=prior,
        final_sd={k: math.exp(v) for k, v in log_sd.items()},
    )


class MpleResult(NamedTuple):
    beta: float
    at_boundary: bool


def mple_beta(field, geometry: LatticeGeometry, q: int, search_interval=(0.0, 2.0), tol: float = 1e-6) -> MpleResult:
    """Maximum pseudo-likelihood estimate of beta (bounded Brent search)."""
    lo, hi = search_interval
    if not 0.0 <= lo < hi:
        raise ValueError("search interval must satisfy 0 <= lo < hi")
    pl = PseudoLikelihood(field, geometry, q)
    res = minimize_scalar(lambda b: -pl(b), bounds=(lo, hi), method="bounded", options={"xatol": tol})
    b = float(res.x)
    edge = 10 * tol
    return MpleResult(b, bool(b - lo < edge or hi - b < edge))
