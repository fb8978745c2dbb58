"""Composite seven-variate descriptor density and composition predictors.

The dataset splits by composition into nearly-pure-valuable rows
(rat >= 1 - epsilon), nearly-pure-non-valuable rows (rat <= epsilon) and
composite rows in between.  Six-variate densities are fitted to the two
pure classes and a seven-variate density (with the composition marginal
truncated to the open interval) to the composite class; the full density
places uniform atoms of width `atom_width` at the two ends:

    f(x) = n_nv/n * (1/w) * f_nv(x_1..6)   for x7 in [0, eps]
         = n_c/n  *         f_c(x)         for x7 in (eps, 1 - eps]
         = n_v/n  * (1/w) * f_v(x_1..6)    for x7 in (1 - eps, 1]
         = 0                               otherwise.

Prediction from a CT-based six-vector compares the class-weighted
likelihoods; the valuable class wins ties (>=), the non-valuable class
needs a strict majority (>), and otherwise the output is the median of the
conditional composition density, obtained by bisection on the
quadrature-backed conditional CDF.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .descriptors import Dataset
from .errors import ArgumentError, FittingError
from .marginals import MixtureModel, fit_mixture_em
from .vine import (
    ArchimedeanModel,
    RVineModel,
    fit_archimedean,
    fit_sequential,
)

DEFAULT_EPSILON = 0.01
DEFAULT_ATOM_WIDTH = 0.01
QUAD_TOL = 1e-8
MEDIAN_TOL = 1e-6
GAMMA_COLUMNS = ("med", "iqr", "vol")

EngineModel = RVineModel | ArchimedeanModel


@dataclass(frozen=True)
class CompositeModel:
    """The three fitted class densities with their sample counts."""

    f_v: EngineModel
    f_nv: EngineModel
    f_c: EngineModel
    n_v: int
    n_nv: int
    n_c: int
    epsilon: float = DEFAULT_EPSILON
    atom_width: float = DEFAULT_ATOM_WIDTH
    engine: str = "rvine"

    def __post_init__(self):
        if not (0.0 < self.epsilon < 0.5):
            raise ArgumentError("epsilon must lie in (0, 0.5)")
        if self.atom_width <= 0:
            raise ArgumentError("atom width must be positive")
        if self.f_v.d != self.f_nv.d or self.f_c.d != self.f_v.d + 1:
            raise ArgumentError("class densities have inconsistent dimensions")

    @property
    def n(self) -> int:
        return self.n_v + self.n_nv + self.n_c

    @property
    def d_ct(self) -> int:
        return self.f_v.d

    def sample(self, n: int, seed) -> np.ndarray:
        """Draw rows from the composite density itself (uniform atoms)."""
        rng = np.random.default_rng(seed)
        props = np.array([self.n_nv, self.n_c, self.n_v], dtype=float) / self.n
        which = rng.choice(3, size=n, p=props)
        rows = np.empty((n, self.d_ct + 1))
        for cls, model in ((0, self.f_nv), (1, self.f_c), (2, self.f_v)):
            idx = np.flatnonzero(which == cls)
            if idx.size == 0:
                continue
            sub_seed = rng.integers(0, 2 ** 63 - 1)
            draw = model.sample(idx.size, seed=sub_seed)
            if cls == 1:
                rows[idx] = draw
            else:
                rows[idx, : self.d_ct] = draw
                u = rng.uniform(0.0, self.atom_width, size=idx.size)
                rows[idx, self.d_ct] = u if cls == 0 else 1.0 - u
        return rows


@dataclass(frozen=True)
class Prediction:
    """Predicted volume fraction of valuable minerals for one particle."""

    value: float | None
    label: str                      # valuable | non_valuable | composite | out_of_support
    conditional_median: float | None = None

    def __post_init__(self):
        if self.label not in ("valuable", "non_valuable", "composite",
                              "out_of_support"):
            raise ArgumentError(f"unknown prediction class {self.label!r}")


# ---------------------------------------------------------------------------
# partitioning and fitting
# ---------------------------------------------------------------------------

def partition_dataset(dataset: Dataset, epsilon: float = DEFAULT_EPSILON):
    """Split by composition: (D_v, D_nv, D_c); the pure classes drop rat."""
    if not dataset.has_rat:
        raise ArgumentError("partitioning requires the rat column")
    rat = dataset.column("rat")
    if np.isnan(rat).any():
        raise ArgumentError("every row must carry a composition value")
    v_mask = rat >= 1.0 - epsilon
    nv_mask = rat <= epsilon
    c_mask = ~(v_mask | nv_mask)
    return (dataset.subset(v_mask).without_rat(),
            dataset.subset(nv_mask).without_rat(),
            dataset.subset(c_mask))


def _marginal_family(column: str) -> str:
    return "gamma" if column in GAMMA_COLUMNS else "beta"


def fit_class_marginals(data: Dataset, epsilon: float, init=None,
                        tol: float = 1e-8) -> tuple[MixtureModel, ...]:
    out = []
    for j, col in enumerate(data.columns):
        truncation = (epsilon, 1.0 - epsilon) if col == "rat" else None
        out.append(fit_mixture_em(data.matrix[:, j], _marginal_family(col),
                                  truncation=truncation, tol=tol,
                                  init=None if init is None else init[j]))
    return tuple(out)


def _fit_engine(data: Dataset, marginals, engine: str, candidates=None,
                min_rows: int = 30, template: EngineModel | None = None):
    if engine == "rvine":
        kw = {} if candidates is None else {"candidates": candidates}
        return fit_sequential(data.matrix, marginals, min_rows=min_rows,
                              template=template, **kw)
    if engine == "archimedean":
        if template is not None:
            # keep the family, re-estimate theta
            kw = {"candidates": (template.family,)}
        else:
            kw = {} if candidates is None else {"candidates": candidates}
        return fit_archimedean(data.matrix, marginals, min_rows=min_rows, **kw)
    raise ArgumentError(f"unknown engine {engine!r}")


def fit_composite(dataset: Dataset, engine: str = "rvine",
                  epsilon: float = DEFAULT_EPSILON,
                  atom_width: float = DEFAULT_ATOM_WIDTH,
                  candidates=None, min_rows: int = 30,
                  em_tol: float = 1e-8,
                  template: "CompositeModel | None" = None) -> CompositeModel:
    """Fit the three class densities and record the class counts.

    With `template` given (fast leave-one-out refits), each class model
    reuses the template's vine structure and copula families and only
    re-estimates parameters.
    """
    d_v, d_nv, d_c = partition_dataset(dataset, epsilon)
    for name, part in (("valuable", d_v), ("non_valuable", d_nv),
                       ("composite", d_c)):
        if len(part) < min_rows:
            raise FittingError(
                f"partition {name} has {len(part)} rows; needs >= {min_rows}")

    models = {}
    for key, part in (("v", d_v), ("nv", d_nv), ("c", d_c)):
        tmpl = getattr(template, f"f_{key}") if template is not None else None
        # warm restarts tolerate a looser EM stop; the optimum moves O(1/n)
        marginals = fit_class_marginals(
            part, epsilon, init=None if tmpl is None else tmpl.marginals,
            tol=em_tol if tmpl is None else max(em_tol, 1e-6))
        models[key] = _fit_engine(part, marginals, engine, candidates,
                                  min_rows=min_rows, template=tmpl)
    return CompositeModel(models["v"], models["nv"], models["c"],
                          n_v=len(d_v), n_nv=len(d_nv), n_c=len(d_c),
                          epsilon=epsilon, atom_width=atom_width, engine=engine)


# ---------------------------------------------------------------------------
# the composite density (Bayes mixture with end atoms)
# ---------------------------------------------------------------------------

def composite_log_density(model: CompositeModel, x) -> np.ndarray | float:
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != model.d_ct + 1:
        raise ArgumentError(f"expected {model.d_ct + 1}-dimensional points")
    x7 = arr[:, -1]
    ct = arr[:, :-1]
    n = model.n
    out = np.full(arr.shape[0], -np.inf)

    nv_mask = (x7 >= 0.0) & (x7 <= model.epsilon)
    c_mask = (x7 > model.epsilon) & (x7 <= 1.0 - model.epsilon)
    v_mask = (x7 > 1.0 - model.epsilon) & (x7 <= 1.0)
    if nv_mask.any():
        out[nv_mask] = (np.log(model.n_nv / n) - np.log(model.atom_width)
                        + model.f_nv.log_density(ct[nv_mask]))
    if c_mask.any():
        out[c_mask] = (np.log(model.n_c / n)
                       + model.f_c.log_density(arr[c_mask]))
    if v_mask.any():
        out[v_mask] = (np.log(model.n_v / n) - np.log(model.atom_width)
                       + model.f_v.log_density(ct[v_mask]))
    return float(out[0]) if scalar else out


def composite_density(model: CompositeModel, x) -> np.ndarray | float:
    """The piecewise seven-variate density with uniform end atoms."""
    out = np.exp(composite_log_density(model, x))
    return out if isinstance(out, np.ndarray) else float(out)


# ---------------------------------------------------------------------------
# quadrature helpers
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _gl_nodes(n: int):
    nodes, weights = np.polynomial.legendre.leggauss(n)
    return nodes, weights


def _panel(f, a: float, b: float, n: int = 64) -> float:
    nodes, weights = _gl_nodes(n)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    return float(half * np.dot(weights, f(mid + half * nodes)))


def adaptive_integral(f, a: float, b: float, tol: float = QUAD_TOL,
                      max_depth: int = 24) -> float:
    """Adaptive 64-node Gauss-Legendre with interval bisection.

    `f` must accept a vector of abscissae and return a vector of values.
    """
    if b <= a:
        return 0.0
    stack = [(a, b, _panel(f, a, b), 0)]
    total = 0.0
    while stack:
        lo, hi, whole, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        left = _panel(f, lo, mid)
        right = _panel(f, mid, hi)
        if depth >= max_depth or abs(left + right - whole) <= max(
                tol, tol * abs(left + right)):
            total += left + right
        else:
            stack.append((lo, mid, left, depth + 1))
            stack.append((mid, hi, right, depth + 1))
    return total


# ---------------------------------------------------------------------------
# predictors
# ---------------------------------------------------------------------------

def _conditional_slice_density(model: CompositeModel, ct: np.ndarray):
    """Vectorized s -> f_c(ct, s) for a fixed CT-based descriptor vector."""
    def f(s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        pts = np.column_stack([np.tile(ct, (s.size, 1)), s])
        with np.errstate(all="ignore"):
            return np.exp(model.f_c.log_density(pts))
    return f


def marginal_composite_ct(model: CompositeModel, ct) -> float:
    """f_c marginalized over the composition coordinate by quadrature."""
    ct = np.asarray(ct, dtype=float).ravel()
    f = _conditional_slice_density(model, ct)
    return adaptive_integral(f, model.epsilon, 1.0 - model.epsilon, tol=QUAD_TOL)


def conditional_median(model: CompositeModel, ct) -> float:
    """Median of f_c(x7 | ct) via bisection on the quadrature-backed CDF."""
    ct = np.asarray(ct, dtype=float).ravel()
    f = _conditional_slice_density(model, ct)
    a, b = model.epsilon, 1.0 - model.epsilon
    z = adaptive_integral(f, a, b, tol=QUAD_TOL)
    if z <= 0.0 or not np.isfinite(z):
        raise FittingError("conditional composition density has no mass")
    lo, hi = a, b
    f_lo = 0.0
    while hi - lo > MEDIAN_TOL:
        mid = 0.5 * (lo + hi)
        f_mid = f_lo + adaptive_integral(f, lo, mid, tol=QUAD_TOL * z)
        if f_mid < 0.5 * z:
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def predict_vfvm(model: CompositeModel, ct) -> Prediction:
    """Predict the valuable-mineral volume fraction from CT descriptors.

    Classification compares the class-weighted likelihoods; the valuable
    class wins ties (>=), non-valuable needs strict dominance (>), and the
    composite branch outputs the conditional median.
    """
    ct = np.asarray(ct, dtype=float).ravel()
    if ct.size != model.d_ct:
        raise ArgumentError(f"expected a {model.d_ct}-dimensional CT vector")
    if not np.all(np.isfinite(ct)):
        raise ArgumentError("CT descriptor vector must be finite")

    n = model.n
    with np.errstate(all="ignore"):
        like_v = model.n_v / n * float(np.exp(model.f_v.log_density(ct[None, :]))[0])
        like_nv = model.n_nv / n * float(np.exp(model.f_nv.log_density(ct[None, :]))[0])
    like_c = model.n_c / n * marginal_composite_ct(model, ct)

    if like_v <= 0.0 and like_nv <= 0.0 and like_c <= 0.0:
        return Prediction(value=None, label="out_of_support")
    if like_v >= max(like_c, like_nv):
        return Prediction(value=1.0, label="valuable")
    if like_nv > max(like_c, like_v):
        return Prediction(value=0.0, label="non_valuable")
    med = conditional_median(model, ct)
    return Prediction(value=med, label="composite", conditional_median=med)


# ---------------------------------------------------------------------------
# K-mineral generalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultiMineralModel:
    """Per-mineral pure-class densities plus a composite block density.

    `pure` holds K densities over the d CT descriptors; `f_c` is a
    (d + K - 1)-variate density whose last K - 1 coordinates are the
    composition fractions of minerals 1..K-1 (the last fraction is implied).
    """

    pure: tuple[EngineModel, ...]
    f_c: EngineModel
    counts: tuple[int, ...]
    n_c: int
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        k = len(self.pure)
        if k < 2:
            raise ArgumentError("need at least two minerals")
        if len(self.counts) != k:
            raise ArgumentError("counts must align with pure densities")
        d = self.pure[0].d
        if any(m.d != d for m in self.pure):
            raise ArgumentError("pure densities must share dimension")
        if self.f_c.d != d + k - 1:
            raise ArgumentError("composite density has wrong dimension")

    @property
    def k(self) -> int:
        return len(self.pure)

    @property
    def d_ct(self) -> int:
        return self.pure[0].d

    @property
    def n(self) -> int:
        return self.n_c + sum(self.counts)


def _composition_grid(model: MultiMineralModel, n_nodes: int = 48):
    """Nested Gauss-Legendre grid over the composition block intersected
    with the simplex sum(s) <= 1, with exact per-dimension limits (the
    integrand stays smooth on every nested cell)."""
    km1 = model.k - 1
    if km1 > 3:
        raise ArgumentError("composition blocks beyond 4 minerals are not supported")
    eps = model.epsilon
    nodes, weights = _gl_nodes(n_nodes)
    pts_out: list[np.ndarray] = []
    w_out: list[float] = []

    def recurse(prefix, wacc):
        m = len(prefix)
        remaining = km1 - m - 1
        hi = min(1.0 - eps, 1.0 - sum(prefix) - eps * remaining)
        if hi <= eps:
            return
        half = 0.5 * (hi - eps)
        mid = 0.5 * (hi + eps)
        for t, w in zip(nodes, weights):
            s_m = mid + half * t
            w_m = wacc * w * half
            if m == km1 - 1:
                pts_out.append(np.array(prefix + [s_m]))
                w_out.append(w_m)
            else:
                recurse(prefix + [s_m], w_m)

    recurse([], 1.0)
    return np.array(pts_out), np.array(w_out)


def predict_multi(model: MultiMineralModel, ct) -> np.ndarray:
    """K-component composition prediction.

    Returns the unit vector of mineral i when its weighted likelihood
    dominates the composite likelihood (>=) and every other mineral (>);
    otherwise the conditional mean vector of the composition block with the
    implied final entry.  The output is a probability vector.
    """
    ct = np.asarray(ct, dtype=float).ravel()
    if ct.size != model.d_ct:
        raise ArgumentError(f"expected a {model.d_ct}-dimensional CT vector")
    n = model.n
    with np.errstate(all="ignore"):
        like = np.array([model.counts[i] / n
                         * float(np.exp(model.pure[i].log_density(ct[None, :]))[0])
                         for i in range(model.k)])

    s_grid, w_grid = _composition_grid(model)
    pts = np.column_stack([np.tile(ct, (s_grid.shape[0], 1)), s_grid])
    with np.errstate(all="ignore"):
        dens = np.exp(model.f_c.log_density(pts))
    z = float(np.dot(w_grid, dens))
    like_c = model.n_c / n * z

    if like_c <= 0.0 and np.all(like <= 0.0):
        raise FittingError("all class likelihoods vanish at this point")

    for i in range(model.k):
        others = np.delete(like, i)
        if like[i] >= like_c and (others.size == 0 or like[i] > others.max()):
            out = np.zeros(model.k)
            out[i] = 1.0
            return out

    phi = np.array([float(np.dot(w_grid, s_grid[:, m] * dens)) / z
                    for m in range(model.k - 1)])
    out = np.concatenate([phi, [1.0 - phi.sum()]])
    out = np.clip(out, 0.0, None)
    return out / out.sum()
