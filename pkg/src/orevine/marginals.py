"""Two-component gamma/beta mixture marginals.

Each univariate descriptor distribution is modeled as

    f(x) = lambda * f1(x) + (1 - lambda) * f2(x)

with both components from the same family (gamma with shape/scale, or beta
on (0, 1)).  Parameters are estimated with a guarded EM algorithm whose
observed-data log-likelihood is non-decreasing by construction: any M-step
update that fails to improve the weighted complete-data objective is
rejected in favor of the previous parameters.

An optional truncation interval renormalizes the density to a sub-interval
of the support (used for the composite-class composition marginal).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from .errors import ArgumentError, FittingError

BETA_CLAMP = 1e-6          # beta-family data clamped to [BETA_CLAMP, 1 - BETA_CLAMP]
COLLAPSE_WEIGHT = 1e-6     # mixing weight below which a component is considered dead
QUANTILE_FTOL = 1e-9


@dataclass(frozen=True)
class GammaParams:
    """Gamma density x^(a-1) exp(-x/b) / (b^a Gamma(a)) with shape a, scale b."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)
                and self.alpha > 0 and self.beta > 0):
            raise ArgumentError(f"gamma parameters must be finite and positive: {self}")

    @property
    def mean(self) -> float:
        return self.alpha * self.beta

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = ((self.alpha - 1.0) * np.log(x) - x / self.beta
                   - self.alpha * np.log(self.beta) - special.gammaln(self.alpha))
        return np.where(x > 0, out, -np.inf)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return special.gammainc(self.alpha, np.maximum(x, 0.0) / self.beta)


@dataclass(frozen=True)
class BetaParams:
    """Beta density x^(p-1) (1-x)^(q-1) / B(p, q) on (0, 1)."""

    p: float
    q: float

    def __post_init__(self):
        if not (np.isfinite(self.p) and np.isfinite(self.q) and self.p > 0 and self.q > 0):
            raise ArgumentError(f"beta parameters must be finite and positive: {self}")

    @property
    def mean(self) -> float:
        return self.p / (self.p + self.q)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = ((self.p - 1.0) * np.log(x) + (self.q - 1.0) * np.log1p(-x)
                   - special.betaln(self.p, self.q))
        return np.where((x > 0) & (x < 1), out, -np.inf)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return special.betainc(self.p, self.q, np.clip(x, 0.0, 1.0))


@dataclass(frozen=True)
class MixtureModel:
    """Two-component mixture with optional truncation to a sub-interval."""

    family: str                      # "gamma" | "beta"
    comp1: GammaParams | BetaParams
    comp2: GammaParams | BetaParams
    lam: float                       # weight of comp1, in [0, 1]
    truncation: tuple[float, float] | None = None
    degenerate: bool = False         # set when EM hit a collapse/zero-variance path

    def __post_init__(self):
        if self.family not in ("gamma", "beta"):
            raise ArgumentError(f"unknown mixture family {self.family!r}")
        if not (0.0 <= self.lam <= 1.0):
            raise ArgumentError(f"mixing ratio must lie in [0, 1], got {self.lam}")
        if self.truncation is not None:
            lo, hi = self.truncation
            if not lo < hi:
                raise ArgumentError(f"empty truncation interval {self.truncation}")

    @property
    def support(self) -> tuple[float, float]:
        base = (0.0, np.inf) if self.family == "gamma" else (0.0, 1.0)
        if self.truncation is None:
            return base
        return (max(base[0], self.truncation[0]), min(base[1], self.truncation[1]))

    def _raw_density(self, x):
        d1 = np.exp(self.comp1.logpdf(x))
        d2 = np.exp(self.comp2.logpdf(x))
        return self.lam * d1 + (1.0 - self.lam) * d2

    def _raw_cdf(self, x):
        return self.lam * self.comp1.cdf(x) + (1.0 - self.lam) * self.comp2.cdf(x)

    def _truncation_mass(self) -> float:
        lo, hi = self.truncation
        return float(self._raw_cdf(hi) - self._raw_cdf(lo))

    def density(self, x):
        x = np.asarray(x, dtype=float)
        if self.truncation is None:
            return self._raw_density(x)
        lo, hi = self.truncation
        mass = self._truncation_mass()
        inside = (x > lo) & (x < hi)
        return np.where(inside, self._raw_density(x) / mass, 0.0)

    def log_density(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.density(x))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.truncation is None:
            return self._raw_cdf(x)
        lo, hi = self.truncation
        mass = self._truncation_mass()
        scaled = (self._raw_cdf(np.clip(x, lo, hi)) - self._raw_cdf(lo)) / mass
        return np.clip(scaled, 0.0, 1.0)

    def quantile(self, p):
        """Inverse CDF by bracketed bisection, |F(x) - p| < 1e-9."""
        p = np.asarray(p, dtype=float)
        if np.any((p <= 0.0) | (p >= 1.0)):
            raise ArgumentError("quantile probabilities must lie in (0, 1)")
        scalar = p.ndim == 0
        p = np.atleast_1d(p)
        lo_s, hi_s = self.support
        lo = np.full(p.shape, lo_s)
        if np.isinf(hi_s):
            hi = np.full(p.shape, max(self.comp1.mean, self.comp2.mean) + 1.0)
            while True:
                short = self.cdf(hi) < p
                if not np.any(short):
                    break
                hi[short] *= 2.0
        else:
            hi = np.full(p.shape, hi_s)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < p
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.max(hi - lo) < 1e-14 * max(1.0, np.max(np.abs(hi))):
                break
        out = 0.5 * (lo + hi)
        return float(out[0]) if scalar else out


def mixture_density(model: MixtureModel, x):
    """Evaluate the (possibly truncated) mixture density."""
    return model.density(x)


def mixture_cdf(model: MixtureModel, x):
    """Evaluate the mixture CDF via regularized incomplete gamma/beta functions."""
    return model.cdf(x)


def mixture_quantile(model: MixtureModel, p):
    """Invert the mixture CDF; p must lie strictly inside (0, 1)."""
    return model.quantile(p)


# ---------------------------------------------------------------------------
# EM fitting
# ---------------------------------------------------------------------------

def _gamma_mom(x: np.ndarray, w: np.ndarray | None = None) -> GammaParams:
    if w is None:
        w = np.ones_like(x)
    m = np.average(x, weights=w)
    v = np.average((x - m) ** 2, weights=w)
    v = max(v, 1e-12 * max(m * m, 1e-12))
    alpha = np.clip(m * m / v, 1e-3, 1e6)
    beta = np.clip(m / alpha, 1e-12, 1e12)
    return GammaParams(float(alpha), float(beta))


def _beta_mom(x: np.ndarray, w: np.ndarray | None = None) -> BetaParams:
    if w is None:
        w = np.ones_like(x)
    m = np.average(x, weights=w)
    v = np.average((x - m) ** 2, weights=w)
    v = min(max(v, 1e-12), m * (1.0 - m) * 0.999)
    s = m * (1.0 - m) / v - 1.0
    p = np.clip(m * s, 1e-3, 1e6)
    q = np.clip((1.0 - m) * s, 1e-3, 1e6)
    return BetaParams(float(p), float(q))


def _weighted_gamma_mle(x: np.ndarray, w: np.ndarray, start: GammaParams) -> GammaParams:
    """Maximize the w-weighted gamma log-likelihood (Newton on the shape)."""
    wsum = w.sum()
    mean_x = float((w * x).sum() / wsum)
    mean_lx = float((w * np.log(x)).sum() / wsum)
    s = np.log(mean_x) - mean_lx
    if s <= 1e-12:  # zero-variance weighting; push towards a spike
        alpha = 1e6
    else:
        alpha = (3.0 - s + np.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
        for _ in range(40):
            g = np.log(alpha) - special.digamma(alpha) - s
            gp = 1.0 / alpha - special.polygamma(1, alpha)
            step = g / gp
            new = alpha - step
            if new <= 0:
                new = alpha / 2.0
            if abs(new - alpha) < 1e-12 * alpha:
                alpha = new
                break
            alpha = new
    alpha = float(np.clip(alpha, 1e-3, 1e6))
    beta = float(np.clip(mean_x / alpha, 1e-12, 1e12))
    return GammaParams(alpha, beta)


def _weighted_beta_mle(x: np.ndarray, w: np.ndarray, start: BetaParams) -> BetaParams:
    """Maximize the w-weighted beta log-likelihood (2-D Newton with damping)."""
    wsum = w.sum()
    c1 = float((w * np.log(x)).sum() / wsum)
    c2 = float((w * np.log1p(-x)).sum() / wsum)
    p, q = start.p, start.q
    for _ in range(60):
        common = special.digamma(p + q)
        g1 = special.digamma(p) - common - c1
        g2 = special.digamma(q) - common - c2
        tri = special.polygamma(1, p + q)
        j11 = special.polygamma(1, p) - tri
        j22 = special.polygamma(1, q) - tri
        det = j11 * j22 - tri * tri
        if not np.isfinite(det) or abs(det) < 1e-300:
            break
        dp = (g1 * j22 + g2 * tri) / det
        dq = (g2 * j11 + g1 * tri) / det
        # Jacobian off-diagonal is -tri; solve [j11 -tri; -tri j22] [dp dq] = [g1 g2]
        step = 1.0
        while (p - step * dp <= 0 or q - step * dq <= 0) and step > 1e-8:
            step /= 2.0
        p_new, q_new = p - step * dp, q - step * dq
        if abs(p_new - p) < 1e-12 * p and abs(q_new - q) < 1e-12 * q:
            p, q = p_new, q_new
            break
        p, q = p_new, q_new
    p = float(np.clip(p, 1e-3, 1e7))
    q = float(np.clip(q, 1e-3, 1e7))
    return BetaParams(p, q)


def _component_loglik(family: str, params, x: np.ndarray) -> np.ndarray:
    return params.logpdf(x)


def _mixture_loglik(family: str, c1, c2, lam: float, x: np.ndarray) -> float:
    l1 = _component_loglik(family, c1, x) + np.log(max(lam, 1e-300))
    l2 = _component_loglik(family, c2, x) + np.log(max(1.0 - lam, 1e-300))
    return float(np.logaddexp(l1, l2).sum())


def _order_components(model: MixtureModel) -> MixtureModel:
    """Resolve label switching: component 1 is the one with the smaller mean."""
    if model.comp1.mean <= model.comp2.mean:
        return model
    return replace(model, comp1=model.comp2, comp2=model.comp1, lam=1.0 - model.lam)


def fit_mixture_em(data, family: str, max_iter: int = 500, tol: float = 1e-8,
                   truncation: tuple[float, float] | None = None,
                   init: MixtureModel | None = None) -> MixtureModel:
    """Fit a two-component mixture by EM.

    Initialization is deterministic: the sample is split at its median and a
    method-of-moments fit of each half seeds the components, with lambda = 0.5
    (or, when `init` is given, that model's parameters, which makes warm
    restarts on slightly perturbed data cheap).  The observed-data
    log-likelihood is guaranteed non-decreasing: M-step updates that would
    lower a component's weighted objective are discarded.

    Parameters
    ----------
    data : array_like
        Raw observations.  Gamma fits use only the x > 0 samples; beta fits
        clamp samples into [1e-6, 1 - 1e-6].
    family : {"gamma", "beta"}
    truncation : tuple, optional
        Attach a truncation interval to the returned model (the EM itself
        runs on the untruncated likelihood; the returned density is
        renormalized over the interval).
    """
    if family not in ("gamma", "beta"):
        raise ArgumentError(f"unknown mixture family {family!r}")
    x = np.asarray(data, dtype=float).ravel()
    if family == "gamma":
        x = x[x > 0]
    else:
        x = np.clip(x[np.isfinite(x)], BETA_CLAMP, 1.0 - BETA_CLAMP)
    if x.size < 10:
        raise FittingError(
            f"need at least 10 in-support samples to fit a {family} mixture, got {x.size}")

    mom = _gamma_mom if family == "gamma" else _beta_mom
    mle = _weighted_gamma_mle if family == "gamma" else _weighted_beta_mle

    # Zero-variance data cannot support a two-component fit; return a spike.
    if np.var(x) < 1e-20 * max(1.0, np.mean(x) ** 2):
        spike = mom(x + np.array([-1e-6, 1e-6]).repeat(np.ceil(x.size / 2))[: x.size])
        model = MixtureModel(family, spike, spike, 1.0,
                             truncation=truncation, degenerate=True)
        return _order_components(model)

    if init is not None:
        if init.family != family:
            raise ArgumentError("init model family does not match")
        c1, c2, lam = init.comp1, init.comp2, min(max(init.lam, 0.01), 0.99)
    else:
        med = np.median(x)
        lower = x[x <= med]
        upper = x[x > med]
        if upper.size == 0:  # heavy ties at the median
            lower, upper = x[x < med], x[x >= med]
        if lower.size == 0 or upper.size == 0:
            lower = upper = x
        c1, c2 = mom(lower), mom(upper)
        lam = 0.5

    ll = _mixture_loglik(family, c1, c2, lam, x)
    degenerate = False
    for _ in range(max_iter):
        # E-step
        l1 = _component_loglik(family, c1, x) + np.log(max(lam, 1e-300))
        l2 = _component_loglik(family, c2, x) + np.log(max(1.0 - lam, 1e-300))
        norm = np.logaddexp(l1, l2)
        g1 = np.exp(l1 - norm)
        g2 = 1.0 - g1

        lam_new = float(np.mean(g1))
        if lam_new < COLLAPSE_WEIGHT or lam_new > 1.0 - COLLAPSE_WEIGHT:
            degenerate = True
            lam = float(np.clip(lam_new, 0.0, 1.0))
            break

        # M-step with guarded acceptance per component (keeps EM monotone)
        def improved(params_old, params_new, resp):
            q_old = float((resp * params_old.logpdf(x)).sum())
            q_new = float((resp * params_new.logpdf(x)).sum())
            return params_new if q_new >= q_old else params_old

        c1 = improved(c1, mle(x, g1, c1), g1)
        c2 = improved(c2, mle(x, g2, c2), g2)
        lam = lam_new

        ll_new = _mixture_loglik(family, c1, c2, lam, x)
        if ll_new < ll - 1e-8 * max(1.0, abs(ll)):
            raise FittingError("EM log-likelihood decreased; numerical failure")
        if abs(ll_new - ll) < tol * max(1.0, abs(ll)):
            ll = ll_new
            break
        ll = ll_new

    model = MixtureModel(family, c1, c2, lam, truncation=truncation,
                         degenerate=degenerate)
    return _order_components(model)
