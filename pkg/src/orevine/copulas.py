"""Bivariate pair copulas: Frank, Joe, Clayton, Gumbel, independence.

Every family supports CDF, density, the conditional CDF h(u|v) = dC/dv and
its inverse, plus rotations by 90/180/270 degrees.  The rotation convention
is pinned as

    c90(u, v)  = c(v, 1 - u)
    c180(u, v) = c(1 - u, 1 - v)
    c270(u, v) = c(1 - v, u)

which corresponds to (U, V) = (1 - B, A), (1 - A, 1 - B) and (B, 1 - A) for
a base pair (A, B).  All four base families are exchangeable, so rotated
CDFs and h-functions reduce to base-family calls:

    C90(u, v)  = v - C(v, 1 - u)          h90(u|v)  = 1 - h(1 - u | v)
    C180(u, v) = u + v - 1 + C(1-u, 1-v)  h180(u|v) = 1 - h(1 - u | 1 - v)
    C270(u, v) = u - C(1 - v, u)          h270(u|v) = h(u | 1 - v)

Densities are evaluated in log space; Frank uses an independence-limit
series branch for |theta| < 1e-5.  Kendall's tau follows the plain
concordance-count definition (ties contribute zero through sgn(0) = 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError

FAMILIES = ("independence", "frank", "clayton", "gumbel", "joe")
ROTATIONS = (0, 90, 180, 270)

# admissible parameter search ranges per family
THETA_RANGE = {
    "clayton": (1e-4, 50.0),
    "gumbel": (1.0 + 1e-4, 50.0),
    "joe": (1.0 + 1e-4, 50.0),
    "frank": (-50.0, 50.0),
}
FRANK_SERIES_THRESHOLD = 1e-5
DENSITY_CLAMP = 1e-10   # boundary inputs pulled to this interior margin
H_INVERSE_FTOL = 1e-9


@dataclass(frozen=True)
class PairCopula:
    """A parametric bivariate copula with an optional rotation.

    theta is None exactly for the independence family.  `fallback` marks a
    copula returned by `fit_pair` after every parametric candidate failed
    numerically.
    """

    family: str
    rotation: int = 0
    theta: float | None = None
    fallback: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ArgumentError(f"unknown copula family {self.family!r}")
        if self.rotation not in ROTATIONS:
            raise ArgumentError(f"rotation must be one of {ROTATIONS}")
        if self.family == "independence":
            if self.theta is not None:
                raise ArgumentError("independence copula has no parameter")
            return
        if self.theta is None or not np.isfinite(self.theta):
            raise ArgumentError(f"{self.family} copula requires a finite parameter")
        _check_theta(self.family, self.theta)

    @property
    def n_params(self) -> int:
        return 0 if self.family == "independence" else 1


def _check_theta(family: str, theta: float) -> None:
    if family == "clayton" and theta <= 0:
        raise ArgumentError(f"Clayton parameter must be > 0, got {theta}")
    if family in ("gumbel", "joe") and theta < 1.0:
        raise ArgumentError(f"{family} parameter must be >= 1, got {theta}")
    if family == "frank" and theta == 0.0:
        raise ArgumentError("Frank parameter must be nonzero")


def _clamp(u, eps: float = DENSITY_CLAMP):
    return np.clip(np.asarray(u, dtype=float), eps, 1.0 - eps)


# ---------------------------------------------------------------------------
# base-family formulas (rotation 0), vectorized over numpy arrays
# ---------------------------------------------------------------------------

def _base_cdf(family: str, theta: float, u, v):
    if family == "independence":
        return u * v
    if family == "clayton":
        a = -theta * np.log(u)
        b = -theta * np.log(v)
        m = np.maximum(a, b)
        # log(u^-t + v^-t - 1) computed without overflow
        log_s = m + np.log(np.exp(a - m) + np.exp(b - m) - np.exp(-m))
        return np.exp(-log_s / theta)
    if family == "gumbel":
        x = -np.log(u)
        y = -np.log(v)
        lx = theta * np.log(x)
        ly = theta * np.log(y)
        log_s = np.logaddexp(lx, ly)
        return np.exp(-np.exp(log_s / theta))
    if family == "frank":
        if abs(theta) < FRANK_SERIES_THRESHOLD:
            return u * v * (1.0 + 0.5 * theta * (1.0 - u) * (1.0 - v))
        gu = -np.expm1(-theta * u)    # 1 - e^(-theta u)
        gv = -np.expm1(-theta * v)
        g1 = -np.expm1(-theta)
        return -np.log1p(-gu * gv / g1) / theta
    if family == "joe":
        x = np.exp(theta * np.log1p(-u))  # (1-u)^theta
        y = np.exp(theta * np.log1p(-v))
        t = x + y - x * y
        return 1.0 - np.exp(np.log(t) / theta)
    raise ArgumentError(family)


def _base_log_density(family: str, theta: float, u, v):
    if family == "independence":
        return np.zeros(np.broadcast(u, v).shape)
    if family == "clayton":
        a = -theta * np.log(u)
        b = -theta * np.log(v)
        m = np.maximum(a, b)
        log_s = m + np.log(np.exp(a - m) + np.exp(b - m) - np.exp(-m))
        return (np.log1p(theta) - (theta + 1.0) * (np.log(u) + np.log(v))
                - (1.0 / theta + 2.0) * log_s)
    if family == "gumbel":
        x = -np.log(u)
        y = -np.log(v)
        log_x = np.log(x)
        log_y = np.log(y)
        log_s = np.logaddexp(theta * log_x, theta * log_y)
        s_pow = np.exp(log_s / theta)          # S^(1/theta)
        return (-s_pow + x + y + (theta - 1.0) * (log_x + log_y)
                + (2.0 / theta - 2.0) * log_s + np.log1p((theta - 1.0) / s_pow))
    if family == "frank":
        if abs(theta) < FRANK_SERIES_THRESHOLD:
            return np.log1p(0.5 * theta * (1.0 - 2.0 * u) * (1.0 - 2.0 * v))
        au = np.exp(-theta * u)
        av = np.exp(-theta * v)
        a1 = np.exp(-theta)
        d = au + av - a1 - au * av
        return (np.log(theta * -np.expm1(-theta)) - theta * (u + v)
                - 2.0 * np.log(np.abs(d)))
    if family == "joe":
        lx = theta * np.log1p(-u)
        ly = theta * np.log1p(-v)
        x = np.exp(lx)
        y = np.exp(ly)
        t = x + y - x * y
        with np.errstate(divide="ignore"):
            log_t = np.log(t)
        return ((1.0 / theta - 2.0) * log_t
                + (theta - 1.0) * (np.log1p(-u) + np.log1p(-v))
                + np.log(theta - 1.0 + x + y - x * y))
    raise ArgumentError(family)


def _base_h(family: str, theta: float, u, v):
    """h(u|v) = dC(u, v)/dv for the unrotated family."""
    if family == "independence":
        return np.broadcast_to(np.asarray(u, dtype=float),
                               np.broadcast(u, v).shape).copy()
    if family == "clayton":
        a = -theta * np.log(u)
        b = -theta * np.log(v)
        m = np.maximum(a, b)
        log_s = m + np.log(np.exp(a - m) + np.exp(b - m) - np.exp(-m))
        return np.exp(-(theta + 1.0) * np.log(v) - (1.0 / theta + 1.0) * log_s)
    if family == "gumbel":
        x = -np.log(u)
        y = -np.log(v)
        log_s = np.logaddexp(theta * np.log(x), theta * np.log(y))
        s_pow = np.exp(log_s / theta)
        log_h = (-s_pow + (1.0 / theta - 1.0) * log_s
                 + (theta - 1.0) * np.log(y) + y)
        return np.exp(log_h)
    if family == "frank":
        if abs(theta) < FRANK_SERIES_THRESHOLD:
            return u * (1.0 + 0.5 * theta * (1.0 - u) * (1.0 - 2.0 * v))
        au = np.exp(-theta * u)
        av = np.exp(-theta * v)
        a1 = np.exp(-theta)
        d = au + av - a1 - au * av
        return av * -np.expm1(-theta * u) / d
    if family == "joe":
        x = np.exp(theta * np.log1p(-u))
        y = np.exp(theta * np.log1p(-v))
        t = x + y - x * y
        return np.exp((1.0 / theta - 1.0) * np.log(t)
                      + np.log1p(-x) + (theta - 1.0) * np.log1p(-v))
    raise ArgumentError(family)


def _base_h_inverse(family: str, theta: float, p, v):
    """Solve h(u|v) = p for u in the unrotated family."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    if family == "independence":
        return np.broadcast_to(p, np.broadcast(p, v).shape).copy()
    if family == "clayton":
        # closed form, evaluated in logs to survive extreme parameters
        t = -theta / (theta + 1.0) * np.log(p) - theta * np.log(v)
        s = -theta * np.log(v)
        m = np.maximum(t, s)
        inner = m + np.log(np.exp(t - m) - np.exp(s - m) + np.exp(-m))
        return np.exp(-inner / theta)
    if family == "frank":
        if abs(theta) < FRANK_SERIES_THRESHOLD:
            return _bisect_h(family, theta, p, v)
        # p = av (1 - au) / (au + av - a1 - au av), solved for au:
        # au (p (1 - av) + av) = av - p (av - a1)
        av = np.exp(-theta * v)
        a1 = np.exp(-theta)
        au = (av - p * (av - a1)) / (p * (1.0 - av) + av)
        au = np.clip(au, 1e-300, None)
        return np.clip(-np.log(au) / theta, 0.0, 1.0)
    # gumbel, joe: monotone bisection
    return _bisect_h(family, theta, p, v)


def _bisect_h(family: str, theta: float, p, v):
    p, v = np.broadcast_arrays(np.asarray(p, float), np.asarray(v, float))
    lo = np.full(p.shape, DENSITY_CLAMP)
    hi = np.full(p.shape, 1.0 - DENSITY_CLAMP)
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        below = _base_h(family, theta, mid, v) < p
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# public rotation-aware operations
# ---------------------------------------------------------------------------

def pair_cdf(cop: PairCopula, u, v):
    """C(u, v) with grounded margins; accepts scalars or arrays in [0, 1]."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    v = np.clip(np.asarray(v, dtype=float), 0.0, 1.0)
    uc, vc = _clamp(u), _clamp(v)
    fam, th = cop.family, cop.theta
    if cop.rotation == 0:
        out = _base_cdf(fam, th, uc, vc) if fam != "independence" else u * v
    elif cop.rotation == 90:
        out = v - _base_cdf(fam, th, vc, 1.0 - uc)
    elif cop.rotation == 180:
        out = u + v - 1.0 + _base_cdf(fam, th, 1.0 - uc, 1.0 - vc)
    else:
        out = u - _base_cdf(fam, th, 1.0 - vc, uc)
    out = np.clip(out, 0.0, 1.0)
    # exact margins on the boundary
    out = np.where(u == 0.0, 0.0, out)
    out = np.where(v == 0.0, 0.0, out)
    out = np.where(u == 1.0, v, out)
    out = np.where(v == 1.0, u, out)
    return out if out.ndim else float(out)


def pair_log_density(cop: PairCopula, u, v):
    """log c(u, v); boundary inputs are clamped to the interior."""
    u = _clamp(u)
    v = _clamp(v)
    fam, th = cop.family, cop.theta
    if cop.rotation == 0:
        out = _base_log_density(fam, th, u, v)
    elif cop.rotation == 90:
        out = _base_log_density(fam, th, v, 1.0 - u)
    elif cop.rotation == 180:
        out = _base_log_density(fam, th, 1.0 - u, 1.0 - v)
    else:
        out = _base_log_density(fam, th, 1.0 - v, u)
    return out if out.ndim else float(out)


def pair_density(cop: PairCopula, u, v):
    """c(u, v) >= 0."""
    out = np.exp(pair_log_density(cop, u, v))
    return out if isinstance(out, np.ndarray) and out.ndim else float(out)


def pair_h(cop: PairCopula, u, cond):
    """Conditional CDF h(u | cond) = dC(u, v)/dv evaluated at v = cond."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    uc = _clamp(u)
    vc = _clamp(cond)
    fam, th = cop.family, cop.theta
    if cop.rotation == 0:
        out = _base_h(fam, th, uc, vc)
    elif cop.rotation == 90:
        out = 1.0 - _base_h(fam, th, 1.0 - uc, vc)
    elif cop.rotation == 180:
        out = 1.0 - _base_h(fam, th, 1.0 - uc, 1.0 - vc)
    else:
        out = _base_h(fam, th, uc, 1.0 - vc)
    out = np.clip(out, 0.0, 1.0)
    out = np.where(u == 0.0, 0.0, out)
    out = np.where(u == 1.0, 1.0, out)
    return out if out.ndim else float(out)


def pair_h2(cop: PairCopula, v, cond):
    """Conditional CDF of the second argument: dC(u, v)/du at u = cond.

    For the unrotated (exchangeable) families this coincides with
    pair_h(cop, v, cond); rotations break exchangeability, so vine
    bookkeeping must pick the correct direction explicitly.
    """
    v = np.clip(np.asarray(v, dtype=float), 0.0, 1.0)
    vc = _clamp(v)
    uc = _clamp(cond)
    fam, th = cop.family, cop.theta
    if cop.rotation == 0:
        out = _base_h(fam, th, vc, uc)
    elif cop.rotation == 90:
        out = _base_h(fam, th, vc, 1.0 - uc)
    elif cop.rotation == 180:
        out = 1.0 - _base_h(fam, th, 1.0 - vc, 1.0 - uc)
    else:
        out = 1.0 - _base_h(fam, th, 1.0 - vc, uc)
    out = np.clip(out, 0.0, 1.0)
    out = np.where(v == 0.0, 0.0, out)
    out = np.where(v == 1.0, 1.0, out)
    return out if out.ndim else float(out)


def pair_h2_inverse(cop: PairCopula, p, cond):
    """Solve pair_h2(cop, v, cond) = p for v."""
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ArgumentError("h-inverse probabilities must lie in (0, 1)")
    pc = _clamp(p)
    uc = _clamp(cond)
    fam, th = cop.family, cop.theta
    if cop.rotation == 0:
        out = _base_h_inverse(fam, th, pc, uc)
    elif cop.rotation == 90:
        out = _base_h_inverse(fam, th, pc, 1.0 - uc)
    elif cop.rotation == 180:
        out = 1.0 - _base_h_inverse(fam, th, 1.0 - pc, 1.0 - uc)
    else:
        out = 1.0 - _base_h_inverse(fam, th, 1.0 - pc, uc)
    out = np.clip(out, DENSITY_CLAMP, 1.0 - DENSITY_CLAMP)
    return out if out.ndim else float(out)


def pair_h_inverse(cop: PairCopula, p, cond):
    """Solve h(u | cond) = p for u; |h(result|cond) - p| < 1e-9."""
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ArgumentError("h-inverse probabilities must lie in (0, 1)")
    pc = _clamp(p)
    vc = _clamp(cond)
    fam, th = cop.family, cop.theta
    if cop.rotation == 0:
        out = _base_h_inverse(fam, th, pc, vc)
    elif cop.rotation == 90:
        out = 1.0 - _base_h_inverse(fam, th, 1.0 - pc, vc)
    elif cop.rotation == 180:
        out = 1.0 - _base_h_inverse(fam, th, 1.0 - pc, 1.0 - vc)
    else:
        out = _base_h_inverse(fam, th, pc, 1.0 - vc)
    out = np.clip(out, DENSITY_CLAMP, 1.0 - DENSITY_CLAMP)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Kendall's tau, the independence pre-test, tau -> theta starts
# ---------------------------------------------------------------------------

def kendall_tau(y, y2) -> float:
    """Concordance-based rank correlation.

    tau = 2 / (n (n-1)) * sum_{i<j} sgn(y_i - y_j) sgn(y2_i - y2_j).

    Tied pairs contribute zero; the denominator is always n (n-1) / 2.
    """
    y = np.asarray(y, dtype=float).ravel()
    y2 = np.asarray(y2, dtype=float).ravel()
    if y.shape != y2.shape:
        raise ArgumentError("kendall_tau requires equal-length vectors")
    n = y.size
    if n < 2:
        raise ArgumentError("kendall_tau requires at least two observations")
    total = 0
    chunk = max(1, int(4e6) // n)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        sa = np.sign(y[start:stop, None] - y[None, :])
        sb = np.sign(y2[start:stop, None] - y2[None, :])
        prod = (sa * sb).astype(np.int64)
        # keep only j > i within this block of rows
        cols = np.arange(n)[None, :]
        rows = np.arange(start, stop)[:, None]
        total += int(prod[cols > rows].sum())
    return 2.0 * total / (n * (n - 1))


def independence_test(tau: float, n: int) -> bool:
    """True (independent) iff |tau| sqrt(9 n (n-1) / (2 (2n+5))) <= 1.96."""
    if n < 2:
        raise ArgumentError("independence test requires n >= 2")
    statistic = abs(tau) * np.sqrt(9.0 * n * (n - 1) / (2.0 * (2.0 * n + 5.0)))
    return bool(statistic <= 1.96)


def _tau_theta_start(family: str, tau: float) -> float | None:
    """Rough tau -> theta inversions used to seed the likelihood search."""
    t = min(abs(tau), 0.95)
    if family == "clayton":
        return max(2.0 * t / (1.0 - t), 2e-4) if t > 1e-3 else 0.1
    if family in ("gumbel", "joe"):
        return max(1.0 / (1.0 - t), 1.0 + 2e-4)
    if family == "frank":
        # crude inversion of tau = 1 - 4/theta (1 - D1(theta))
        guess = 1.0 if t < 0.1 else t * 12.0
        return guess if tau >= 0 else -guess
    return None


def _golden_max(f, lo: float, hi: float, tol: float = 1e-6):
    """Golden-section maximization of a unimodal scalar function."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = c if fc >= fd else d
    return x, max(fc, fd)


def _maximize_theta(f, lo: float, hi: float, seeds=(), tol: float = 1e-6):
    """Bracket the maximum on a coarse grid, then golden-section refine."""
    grid = list(np.geomspace(max(lo, 1e-4), hi, 12)) if lo > 0 else \
        list(np.linspace(lo, hi, 15))
    grid = sorted(set(np.clip(list(grid) + [g for g in seeds if g is not None],
                              lo, hi)))
    vals = [f(g) for g in grid]
    best = int(np.argmax(vals))
    a = grid[max(best - 1, 0)]
    b = grid[min(best + 1, len(grid) - 1)]
    if a == b:
        return a, vals[best]
    x, fx = _golden_max(f, a, b, tol=tol)
    if vals[best] > fx:
        return grid[best], vals[best]
    return x, fx


def fit_pair(u, v, candidates=("frank", "clayton", "gumbel", "joe"),
             rotations=ROTATIONS) -> PairCopula:
    """Select and fit a pair copula by maximum likelihood.

    The independence pre-test runs first; when it does not reject, the
    independence copula is returned without any likelihood search.
    Otherwise every candidate family x rotation is fitted by bounded 1-D
    maximization of the log-likelihood and the best one wins.  Ties are
    broken by the fixed candidate order (frank, clayton, gumbel, joe; then
    rotation ascending).
    """
    u = _clamp(np.asarray(u, dtype=float).ravel())
    v = _clamp(np.asarray(v, dtype=float).ravel())
    if u.shape != v.shape:
        raise ArgumentError("fit_pair requires equal-length samples")
    return _fit_pair_with_tau(u, v, kendall_tau(u, v), candidates, rotations)


def refit_theta(cop: PairCopula, u, v) -> PairCopula:
    """Re-estimate theta keeping family and rotation fixed (fast refits)."""
    if cop.family == "independence":
        return cop
    u = _clamp(np.asarray(u, dtype=float).ravel())
    v = _clamp(np.asarray(v, dtype=float).ravel())

    def loglik(theta):
        ll = pair_log_density(PairCopula(cop.family, cop.rotation, float(theta)), u, v)
        return float(np.sum(np.where(np.isfinite(ll), ll, -1e10)))

    lo, hi = THETA_RANGE[cop.family]
    if cop.family == "frank":
        lo, hi = (1e-4, hi) if cop.theta > 0 else (lo, -1e-4)
    theta, _ = _maximize_theta(loglik, lo, hi, seeds=[cop.theta])
    return PairCopula(cop.family, cop.rotation, float(theta))


def _fit_pair_with_tau(u, v, tau: float, candidates,
                       rotations=ROTATIONS) -> PairCopula:
    n = u.size
    if independence_test(tau, n):
        return PairCopula("independence")

    best: tuple[float, PairCopula] | None = None
    for family in candidates:
        if family == "independence":
            continue
        lo, hi = THETA_RANGE[family]
        if family == "frank":
            search_ranges = [(lo, -1e-4), (1e-4, hi)]
        else:
            search_ranges = [(lo, hi)]
        for rotation in rotations:
            def loglik(theta, _rot=rotation, _fam=family):
                cop = PairCopula(_fam, _rot, float(theta))
                ll = pair_log_density(cop, u, v)
                ll = np.where(np.isfinite(ll), ll, -1e10)
                return float(np.sum(ll))

            seed = _tau_theta_start(family, tau)
            cand_best = None
            for rlo, rhi in search_ranges:
                seeds = [s for s in (seed, -seed if seed else None)
                         if s is not None and rlo <= s <= rhi]
                try:
                    theta, ll = _maximize_theta(loglik, rlo, rhi, seeds=seeds)
                except (FloatingPointError, ValueError):
                    continue
                if not np.isfinite(ll):
                    continue
                if cand_best is None or ll > cand_best[0]:
                    cand_best = (ll, theta)
            if cand_best is None:
                continue
            ll, theta = cand_best
            if best is None or ll > best[0]:
                best = (ll, PairCopula(family, rotation, float(theta)))

    if best is None:
        return PairCopula("independence", fallback=True)
    return best[1]


def pseudo_observations(data) -> np.ndarray:
    """Column-wise rank transform to (0, 1) with average ranks for ties."""
    from scipy.stats import rankdata

    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        return rankdata(arr, method="average") / (arr.size + 1.0)
    return np.column_stack([rankdata(arr[:, j], method="average") / (arr.shape[0] + 1.0)
                            for j in range(arr.shape[1])])
