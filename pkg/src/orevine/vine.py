"""R-vine copula models: structure, sequential estimation, density, sampling.

A regular vine on d variables is a nested tree sequence T_1..T_{d-1}: T_1
spans the variables, the nodes of T_i are the edges of T_{i-1}, and any two
nodes joined at level i >= 2 must share exactly one node of the previous
tree (proximity).  Each edge couples a conditioned pair of variables given
a conditioning set; with the simplifying assumption the joint density
factorizes into bivariate pair-copula densities and the marginals, with
conditional CDF arguments produced by iterated h-functions.

Structure selection follows the sequential procedure: at every level the
maximum spanning tree under |Kendall tau| weights (restricted to
proximity-feasible pairs) is chosen, each edge's pair copula is fitted by
maximum likelihood after an independence pre-test, and the h-transformed
pseudo-observations feed the next level.

The module also carries the d-dimensional one-parameter Archimedean
baseline (Frank, Joe, Clayton, Gumbel) used for model comparison, with
densities evaluated through closed-form derivatives of the inverse
generator.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .copulas import (
    PairCopula,
    _fit_pair_with_tau,
    _maximize_theta,
    kendall_tau,
    pair_h,
    pair_h2,
    pair_h2_inverse,
    pair_h_inverse,
    pair_log_density,
    refit_theta,
)
from .errors import ArgumentError, FittingError, StructuralError
from .marginals import MixtureModel

COND_CLAMP = 1e-12  # conditional CDF values are clamped here before copula calls
DEFAULT_CANDIDATES = ("frank", "clayton", "gumbel", "joe")
ARCHIMEDEAN_FAMILIES = ("frank", "clayton", "gumbel", "joe")


def _cl(a):
    return np.clip(a, COND_CLAMP, 1.0 - COND_CLAMP)


# ---------------------------------------------------------------------------
# structure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VineEdge:
    """One edge of a tree level.

    nodes are indices of the joined nodes at this level: variables for
    level 1, positions in the previous level's edge list for level >= 2.
    """

    level: int
    nodes: tuple[int, int]
    conditioned: tuple[int, int]
    conditioning: frozenset[int]

    @property
    def constraint(self) -> frozenset[int]:
        return self.conditioning | set(self.conditioned)

    def key(self):
        return (self.conditioned, tuple(sorted(self.conditioning)))


@dataclass(frozen=True)
class RVineStructure:
    """Tree sequence with per-edge conditioned/conditioning sets."""

    d: int
    levels: tuple[tuple[VineEdge, ...], ...]

    @classmethod
    def from_tree_edges(cls, d: int, tree_edges) -> "RVineStructure":
        """Build from raw node-index pairs per level; derives O(e)/S(e).

        The conditioned set is the symmetric difference of the joined
        nodes' constraint sets, the conditioning set their intersection.
        """
        levels: list[tuple[VineEdge, ...]] = []
        prev_lambda: list[frozenset[int]] = [frozenset({i}) for i in range(d)]
        for li, raw in enumerate(tree_edges, start=1):
            edges = []
            lambdas = []
            for na, nb in raw:
                if not (0 <= na < len(prev_lambda)) or not (0 <= nb < len(prev_lambda)):
                    raise StructuralError(
                        f"level {li}: node index out of range in edge ({na}, {nb})")
                lam_a, lam_b = prev_lambda[na], prev_lambda[nb]
                conditioned = tuple(sorted(lam_a ^ lam_b))
                conditioning = frozenset(lam_a & lam_b)
                edges.append(VineEdge(li, (na, nb), conditioned, conditioning))
                lambdas.append(lam_a | lam_b)
            levels.append(tuple(edges))
            prev_lambda = lambdas
        return cls(d, tuple(levels))

    @property
    def edges(self) -> list[VineEdge]:
        return [e for level in self.levels for e in level]


def dvine_structure(order) -> RVineStructure:
    """D-vine (path) structure along the given variable ordering."""
    order = list(order)
    d = len(order)
    if sorted(order) != list(range(d)):
        raise ArgumentError("order must be a permutation of 0..d-1")
    tree_edges = [[(order[i], order[i + 1]) for i in range(d - 1)]]
    for level in range(2, d):
        tree_edges.append([(i, i + 1) for i in range(d - level)])
    return RVineStructure.from_tree_edges(d, tree_edges)


def validate_structure(structure: RVineStructure) -> str | None:
    """Check the regular-vine conditions; return the first violation or None."""
    d = structure.d
    if len(structure.levels) != d - 1:
        return f"expected {d - 1} tree levels, found {len(structure.levels)}"

    prev_edge_count = d
    prev_edges: tuple[VineEdge, ...] | None = None
    for li, level in enumerate(structure.levels, start=1):
        n_nodes = prev_edge_count
        if len(level) != n_nodes - 1:
            return (f"tree {li}: expected {n_nodes - 1} edges over {n_nodes} nodes, "
                    f"found {len(level)}")
        parent = list(range(n_nodes))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for e in level:
            na, nb = e.nodes
            if not (0 <= na < n_nodes and 0 <= nb < n_nodes) or na == nb:
                return f"tree {li}: invalid edge nodes {e.nodes}"
            ra, rb = find(na), find(nb)
            if ra == rb:
                return f"tree {li}: edge {e.nodes} creates a cycle"
            parent[ra] = rb
            if li >= 2:
                a_ends = set(prev_edges[na].nodes)
                b_ends = set(prev_edges[nb].nodes)
                if len(a_ends & b_ends) != 1:
                    return (f"tree {li}: proximity violation, nodes {e.nodes} share "
                            f"{len(a_ends & b_ends)} previous-tree nodes")
            if len(e.conditioned) != 2:
                return f"tree {li}: conditioned set of {e.nodes} has size {len(e.conditioned)}"
            if len(e.conditioning) != li - 1:
                return (f"tree {li}: conditioning set of {e.nodes} has size "
                        f"{len(e.conditioning)}, expected {li - 1}")
        if len({find(i) for i in range(n_nodes)}) != 1:
            return f"tree {li}: not connected"
        prev_edges = level
        prev_edge_count = len(level)

    seen = {}
    for e in structure.edges:
        if e.conditioned in seen:
            return f"pair {e.conditioned} conditioned by two edges"
        seen[e.conditioned] = e
    if len(seen) != d * (d - 1) // 2:
        return "not every variable pair is a conditioned set"
    return None


# ---------------------------------------------------------------------------
# fitted models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RVineModel:
    structure: RVineStructure
    pair_copulas: tuple[PairCopula, ...]      # aligned with structure.edges
    marginals: tuple[MixtureModel, ...]

    def __post_init__(self):
        n_edges = len(self.structure.edges)
        if len(self.pair_copulas) != n_edges:
            raise ArgumentError(f"expected {n_edges} pair copulas")
        if len(self.marginals) != self.structure.d:
            raise ArgumentError(f"expected {self.structure.d} marginals")

    @property
    def d(self) -> int:
        return self.structure.d

    @property
    def n_copula_params(self) -> int:
        return sum(c.n_params for c in self.pair_copulas)

    def edge_items(self):
        return list(zip(self.structure.edges, self.pair_copulas))

    def log_density(self, x):
        return vine_log_density(self, x)

    def sample(self, n: int, seed) -> np.ndarray:
        return vine_sample(self, n, seed)


@dataclass(frozen=True)
class ArchimedeanModel:
    """Single-parameter d-dimensional Archimedean copula with marginals."""

    family: str
    theta: float
    marginals: tuple[MixtureModel, ...]

    def __post_init__(self):
        if self.family not in ARCHIMEDEAN_FAMILIES:
            raise ArgumentError(f"unknown Archimedean family {self.family!r}")

    @property
    def d(self) -> int:
        return len(self.marginals)

    @property
    def n_copula_params(self) -> int:
        return 1

    def log_density(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        with np.errstate(all="ignore"):
            u = np.column_stack([_cl(m.cdf(x[:, i]))
                                 for i, m in enumerate(self.marginals)])
            logc = _arch_log_density(self.family, self.theta, u)
            logm = sum(m.log_density(x[:, i]) for i, m in enumerate(self.marginals))
        return logc + logm

    def sample(self, n: int, seed) -> np.ndarray:
        u = _arch_sample_uniform(self.family, self.theta, self.d, n, seed)
        cols = [m.quantile(_cl(u[:, i])) for i, m in enumerate(self.marginals)]
        return np.column_stack(cols)


# ---------------------------------------------------------------------------
# sequential fitting (structure selection + pair-copula estimation)
# ---------------------------------------------------------------------------

def fit_sequential(data, marginals, candidates=DEFAULT_CANDIDATES,
                   min_rows: int = 30, pseudo: str = "parametric",
                   template: RVineModel | None = None) -> RVineModel:
    """Fit an R-vine to descriptor columns.

    Level 1 pseudo-observations come from the fitted parametric marginal
    CDFs (rank mode available via pseudo="ranks").  Each tree is the
    maximum spanning tree of |tau| over proximity-feasible candidate
    edges (greedy, ties broken by the lexicographically smallest edge
    key), each edge copula is chosen by an independence pre-test followed
    by per-family maximum likelihood, and transformed observations feed
    the next level.  Kendall taus are computed once per level on the
    cached conditional pseudo-observations.

    When `template` is given, its structure and per-edge families are
    reused and only the copula parameters are re-estimated (fast refits).
    """
    x = np.atleast_2d(np.asarray(data, dtype=float))
    n, d = x.shape
    if n < min_rows:
        raise FittingError(f"need at least {min_rows} rows to fit a vine, got {n}")
    marginals = tuple(marginals)
    if len(marginals) != d:
        raise ArgumentError(f"expected {d} marginals for {d} columns")

    if pseudo == "parametric":
        u = np.column_stack([_cl(marginals[i].cdf(x[:, i])) for i in range(d)])
    elif pseudo == "ranks":
        from .copulas import pseudo_observations
        u = pseudo_observations(x)
    else:
        raise ArgumentError(f"unknown pseudo-observation mode {pseudo!r}")

    if template is not None:
        return _refit_template(template, u, marginals)

    store: dict[tuple[int, frozenset[int]], np.ndarray] = {
        (i, frozenset({i})): u[:, i] for i in range(d)}

    frames: list[dict] = [{"lam": frozenset({i}), "ends": None} for i in range(d)]
    tree_edges: list[list[tuple[int, int]]] = []
    copulas: list[PairCopula] = []

    for level in range(1, d):
        cands = []
        for ia, ib in itertools.combinations(range(len(frames)), 2):
            if level >= 2:
                shared = set(frames[ia]["ends"]) & set(frames[ib]["ends"])
                if len(shared) != 1:
                    continue
            lam_a, lam_b = frames[ia]["lam"], frames[ib]["lam"]
            conditioned = tuple(sorted(lam_a ^ lam_b))
            conditioning = frozenset(lam_a & lam_b)
            j, k = conditioned
            uj = store[(j, conditioning | {j})]
            uk = store[(k, conditioning | {k})]
            tau = kendall_tau(uj, uk)
            key = (conditioned, tuple(sorted(conditioning)))
            cands.append({"ia": ia, "ib": ib, "j": j, "k": k, "tau": tau,
                          "S": conditioning, "key": key, "uj": uj, "uk": uk})

        cands.sort(key=lambda c: (-abs(c["tau"]), c["key"]))
        parent = list(range(len(frames)))

        def find(z):
            while parent[z] != z:
                parent[z] = parent[parent[z]]
                z = parent[z]
            return z

        chosen = []
        for c in cands:
            ra, rb = find(c["ia"]), find(c["ib"])
            if ra == rb:
                continue
            parent[ra] = rb
            chosen.append(c)
            if len(chosen) == len(frames) - 1:
                break
        if len(chosen) != len(frames) - 1:
            raise StructuralError(f"level {level}: feasible edge set is disconnected")
        chosen.sort(key=lambda c: c["key"])

        new_frames = []
        raw_edges = []
        for c in chosen:
            cop = _fit_pair_with_tau(c["uj"], c["uk"], c["tau"], candidates)
            copulas.append(cop)
            lam = c["S"] | {c["j"], c["k"]}
            store[(c["j"], lam)] = _cl(pair_h(cop, c["uj"], c["uk"]))
            store[(c["k"], lam)] = _cl(pair_h2(cop, c["uk"], c["uj"]))
            raw_edges.append((c["ia"], c["ib"]))
            new_frames.append({"lam": lam, "ends": (c["ia"], c["ib"])})
        tree_edges.append(raw_edges)
        frames = new_frames

    structure = RVineStructure.from_tree_edges(d, tree_edges)
    return RVineModel(structure, tuple(copulas), marginals)


def _refit_template(template: RVineModel, u: np.ndarray, marginals) -> RVineModel:
    """Keep structure + families, re-estimate copula parameters only."""
    store: dict[tuple[int, frozenset[int]], np.ndarray] = {
        (i, frozenset({i})): u[:, i] for i in range(template.d)}
    new_cops = []
    for edge, cop in template.edge_items():
        j, k = edge.conditioned
        s = edge.conditioning
        uj = store[(j, s | {j})]
        uk = store[(k, s | {k})]
        new = refit_theta(cop, uj, uk)
        new_cops.append(new)
        lam = edge.constraint
        store[(j, lam)] = _cl(pair_h(new, uj, uk))
        store[(k, lam)] = _cl(pair_h2(new, uk, uj))
    return RVineModel(template.structure, tuple(new_cops), tuple(marginals))


# ---------------------------------------------------------------------------
# density evaluation
# ---------------------------------------------------------------------------

class _ConditionalCache:
    """Memoized conditional CDF values F_{var | S} over known u columns.

    Lookup follows the vine recursion: the edge with constraint set
    S union {var} and var in its conditioned pair supplies the value via
    the appropriate h-function of its own (recursively obtained) inputs.
    """

    def __init__(self, model: RVineModel, u: np.ndarray):
        self.u = u
        self.memo: dict[tuple[int, frozenset[int]], np.ndarray] = {
            (i, frozenset()): u[:, i] for i in range(u.shape[1])}
        self.by_constraint: dict[tuple[int, frozenset[int]],
                                 tuple[VineEdge, PairCopula]] = {}
        for edge, cop in model.edge_items():
            lam = edge.constraint
            for var in edge.conditioned:
                self.by_constraint[(var, lam)] = (edge, cop)

    def value(self, var: int, cond: frozenset[int]) -> np.ndarray:
        key = (var, cond)
        if key in self.memo:
            return self.memo[key]
        hit = self.by_constraint.get((var, cond | {var}))
        if hit is None:
            raise StructuralError(
                f"conditional F_[{var} | {sorted(cond)}] is not reachable in this vine")
        edge, cop = hit
        j, k = edge.conditioned
        uj = self.value(j, edge.conditioning)
        uk = self.value(k, edge.conditioning)
        if var == j:
            out = _cl(pair_h(cop, uj, uk))
        else:
            out = _cl(pair_h2(cop, uk, uj))
        self.memo[key] = out
        return out


def vine_log_density(model: RVineModel, x) -> np.ndarray | float:
    """log f(x) per the pair-copula factorization; -inf outside support."""
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != model.d:
        raise ArgumentError(f"expected {model.d}-dimensional points")
    u = np.column_stack([_cl(m.cdf(arr[:, i])) for i, m in enumerate(model.marginals)])
    with np.errstate(divide="ignore"):
        total = sum(model.marginals[i].log_density(arr[:, i]) for i in range(model.d))
    cache = _ConditionalCache(model, u)
    for edge, cop in model.edge_items():
        if cop.family == "independence":
            continue
        j, k = edge.conditioned
        uj = cache.value(j, edge.conditioning)
        uk = cache.value(k, edge.conditioning)
        total = total + pair_log_density(cop, uj, uk)
    return float(total[0]) if scalar else total


# ---------------------------------------------------------------------------
# sampling (inverse Rosenblatt along an elimination order)
# ---------------------------------------------------------------------------

def _elimination_columns(model: RVineModel):
    """Per-variable h-function columns for sampling.

    Repeatedly strip the variable of the top remaining edge that appears
    in exactly one conditioned set per remaining level and whose level-wise
    conditioning sets are the partners below it; a valid R-vine always
    admits such an ordering.
    """
    levels = [list(level) for level in model.structure.levels]
    cop_map = dict(zip(model.structure.edges, model.pair_copulas))
    removed: set[VineEdge] = set()
    columns = []
    top_level = len(levels)
    for _ in range(model.d - 1):
        while top_level >= 1 and all(e in removed for e in levels[top_level - 1]):
            top_level -= 1
        tops = [e for e in levels[top_level - 1] if e not in removed]
        if len(tops) != 1:
            raise StructuralError("invalid vine: top tree of the remaining "
                                  "structure is not a single edge")
        top = tops[0]
        chosen = None
        for cand in top.conditioned:
            col = []
            ok = True
            for lv in range(1, top_level + 1):
                hits = [e for e in levels[lv - 1]
                        if e not in removed and cand in e.conditioned]
                if len(hits) != 1:
                    ok = False
                    break
                col.append(hits[0])
            if not ok:
                continue
            partners = [e.conditioned[0] if e.conditioned[1] == cand else e.conditioned[1]
                        for e in col]
            for lv in range(2, top_level + 1):
                if col[lv - 1].conditioning != frozenset(partners[:lv - 1]):
                    ok = False
                    break
            if ok:
                chosen = (cand, col, partners)
                break
        if chosen is None:
            raise StructuralError("no eliminable variable found; vine is invalid")
        var, col, partners = chosen
        removed.update(col)
        columns.append((var, [(e, cop_map[e]) for e in col], partners))
    eliminated = {c[0] for c in columns}
    last = next(i for i in range(model.d) if i not in eliminated)
    return columns, last


def vine_sample(model: RVineModel, n: int, seed) -> np.ndarray:
    """Draw n i.i.d. rows from the vine; deterministic for a given seed."""
    if n < 1:
        raise ArgumentError("sample size must be >= 1")
    rng = np.random.default_rng(seed)
    w = rng.uniform(COND_CLAMP, 1.0 - COND_CLAMP, size=(n, model.d))
    columns, last = _elimination_columns(model)

    u = np.empty((n, model.d))
    u[:, last] = w[:, last]
    known = {last}
    cache: dict[tuple[int, frozenset[int]], np.ndarray] = {
        (last, frozenset()): u[:, last]}
    # lazy conditional evaluator over progressively known columns
    by_constraint = {}
    for edge, cop in model.edge_items():
        for var in edge.conditioned:
            by_constraint[(var, edge.constraint)] = (edge, cop)

    def cond_value(var: int, cond: frozenset[int]) -> np.ndarray:
        key = (var, cond)
        if key in cache:
            return cache[key]
        if not cond:
            if var not in known:
                raise StructuralError(f"variable {var} needed before it is sampled")
            cache[key] = u[:, var]
            return cache[key]
        edge, cop = by_constraint[(var, cond | {var})]
        j, k = edge.conditioned
        uj = cond_value(j, edge.conditioning)
        uk = cond_value(k, edge.conditioning)
        out = _cl(pair_h(cop, uj, uk)) if var == j else _cl(pair_h2(cop, uk, uj))
        cache[key] = out
        return out

    for var, col, partners in reversed(columns):
        t = w[:, var]
        for (edge, cop), q in zip(reversed(col), reversed(partners)):
            cond = cond_value(q, edge.conditioning)
            if var == edge.conditioned[0]:
                t = pair_h_inverse(cop, _cl(t), cond)
            else:
                t = pair_h2_inverse(cop, _cl(t), cond)
        u[:, var] = t
        known.add(var)
        cache[(var, frozenset())] = u[:, var]

    cols = [model.marginals[i].quantile(_cl(u[:, i])) for i in range(model.d)]
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# d-dimensional Archimedean baseline
# ---------------------------------------------------------------------------

def _arch_phi(family: str, theta: float, u: np.ndarray) -> np.ndarray:
    """Generator phi(u) with phi(1) = 0, decreasing on (0, 1]."""
    if family == "clayton":
        with np.errstate(over="ignore"):
            return np.expm1(-theta * np.log(u))          # u^-theta - 1
    if family == "gumbel":
        return np.exp(theta * np.log(-np.log(u)))        # (-ln u)^theta
    if family == "frank":
        num = np.expm1(-theta * u)
        den = np.expm1(-theta)
        return -np.log(num / den)
    if family == "joe":
        w = np.exp(theta * np.log1p(-u))                 # (1-u)^theta
        return -np.log1p(-w)
    raise ArgumentError(family)


def _arch_log_neg_phi_prime(family: str, theta: float, u: np.ndarray) -> np.ndarray:
    if family == "clayton":
        return np.log(theta) - (theta + 1.0) * np.log(u)
    if family == "gumbel":
        return np.log(theta) + (theta - 1.0) * np.log(-np.log(u)) - np.log(u)
    if family == "frank":
        # theta e^(-theta u) / (1 - e^(-theta u)), positive for theta > 0
        return (np.log(abs(theta)) - theta * u
                - np.log(np.abs(-np.expm1(-theta * u))))
    if family == "joe":
        w = np.exp(theta * np.log1p(-u))
        return (np.log(theta) + (theta - 1.0) * np.log1p(-u) - np.log1p(-w))
    raise ArgumentError(family)


def _gumbel_poly(order: int, alpha: float) -> np.ndarray:
    """Coefficients of P_m(x) = (-1)^m Q_m(x), Q_1 = -alpha x,
    Q_{m+1} = alpha x (Q_m' - Q_m) - m Q_m."""
    q = np.zeros(order + 1)
    q[1] = -alpha
    for m in range(1, order):
        nq = np.zeros(order + 1)
        for k in range(0, m + 1):
            c = q[k]
            if c == 0.0:
                continue
            nq[k] += alpha * k * c       # alpha x Q'
            nq[k + 1] -= alpha * c       # -alpha x Q
            nq[k] -= m * c               # -m Q
        q = nq
    return q * (-1.0) ** order


def _eulerian_poly(order: int) -> np.ndarray:
    """Numerator coefficients N_m of Li_{-m}(g) = N_m(g) / (1-g)^(m+1)."""
    n = np.zeros(order + 2)
    n[1] = 1.0                            # Li_0 = g / (1 - g)
    for m in range(order):
        # Li_{-(m+1)} = g d/dg [N / (1-g)^(m+1)]
        #            = g [N' (1-g) + (m+1) N] / (1-g)^(m+2)
        deriv = np.polynomial.polynomial.polyder(n)
        term = np.polynomial.polynomial.polysub(
            deriv, np.polynomial.polynomial.polymulx(deriv))
        term = np.polynomial.polynomial.polyadd(term, (m + 1) * n)
        n = np.polynomial.polynomial.polymulx(term)
        n = np.pad(n, (0, max(0, order + 2 - n.size)))[: order + 2]
    return n


def _joe_coeffs(order: int, alpha: float) -> np.ndarray:
    """c_{m,j} with psi^(m)(t) = sum_j c_{m,j} y^j (1-y)^(alpha-j), y = e^-t."""
    c = np.zeros(order + 1)
    c[1] = -alpha
    for m in range(1, order):
        nc = np.zeros(order + 1)
        for j in range(1, m + 1):
            if c[j] == 0.0:
                continue
            nc[j] += -j * c[j]
            nc[j + 1] += (alpha - j) * c[j]
        c = nc
    return c


def _arch_log_psi_m(family: str, theta: float, m: int, t: np.ndarray) -> np.ndarray:
    """log of (-1)^m psi^(m)(t) for the inverse generator psi."""
    t = np.asarray(t, dtype=float)
    if family == "clayton":
        const = np.sum(np.log(1.0 / theta + np.arange(m)))
        return const - (1.0 / theta + m) * np.log1p(t)
    if family == "gumbel":
        alpha = 1.0 / theta
        with np.errstate(divide="ignore"):
            log_t = np.log(t)
        if m == 0:
            return -np.exp(alpha * log_t)
        coeffs = _gumbel_poly(m, alpha)
        terms = [np.log(c) + k * alpha * log_t
                 for k, c in enumerate(coeffs) if c > 0.0]
        log_p = terms[0] if len(terms) == 1 else np.logaddexp.reduce(np.stack(terms))
        return -np.exp(alpha * log_t) - m * log_t + log_p
    if family == "frank":
        # (-1)^m psi^(m) = (1/theta) Li_{1-m... } with g = (1 - e^-theta) e^-t
        g = -np.expm1(-theta) * np.exp(-t)
        g = np.clip(g, 0.0, 1.0 - 1e-16)
        if m == 0:
            return np.log(-np.log1p(-g) / theta)
        coeffs = _eulerian_poly(m - 1)
        with np.errstate(divide="ignore"):
            log_g = np.log(g)
        terms = [np.log(c) + k * log_g for k, c in enumerate(coeffs) if c > 0.0]
        log_num = terms[0] if len(terms) == 1 else np.logaddexp.reduce(np.stack(terms))
        return log_num - m * np.log1p(-g) - np.log(theta)
    if family == "joe":
        alpha = 1.0 / theta
        log_y = -t
        log_1my = np.log(-np.expm1(-t))
        if m == 0:
            return np.log(-np.expm1(alpha * log_1my))
        coeffs = _joe_coeffs(m, alpha)
        sign = (-1.0) ** m
        terms = [np.log(sign * c) + j * log_y + (alpha - j) * log_1my
                 for j, c in enumerate(coeffs) if sign * c > 0.0]
        return terms[0] if len(terms) == 1 else np.logaddexp.reduce(np.stack(terms))
    raise ArgumentError(family)


def _arch_log_density(family: str, theta: float, u: np.ndarray) -> np.ndarray:
    """log c(u_1..u_d) for the d-dimensional Archimedean copula."""
    d = u.shape[1]
    t = np.sum(_arch_phi(family, theta, u), axis=1)
    out = _arch_log_psi_m(family, theta, d, t)
    out = out + np.sum(_arch_log_neg_phi_prime(family, theta, u), axis=1)
    return out


def _arch_cond_cdf(family: str, theta: float, m: int, t_prev: np.ndarray,
                   phi_u: np.ndarray) -> np.ndarray:
    """F(u_{m+1} | u_1..u_m) = psi^(m)(t_prev + phi(u)) / psi^(m)(t_prev)."""
    num = _arch_log_psi_m(family, theta, m, t_prev + phi_u)
    den = _arch_log_psi_m(family, theta, m, t_prev)
    return np.exp(num - den)


def _arch_sample_uniform(family: str, theta: float, d: int, n: int, seed) -> np.ndarray:
    """Conditional-inversion sampling of the Archimedean copula itself."""
    rng = np.random.default_rng(seed)
    w = rng.uniform(1e-12, 1.0 - 1e-12, size=(n, d))
    u = np.empty((n, d))
    u[:, 0] = w[:, 0]
    t_prev = _arch_phi(family, theta, u[:, 0])
    for m in range(1, d):
        target = w[:, m]
        lo = np.full(n, COND_CLAMP)
        hi = np.full(n, 1.0 - COND_CLAMP)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            f = _arch_cond_cdf(family, theta, m, t_prev, _arch_phi(family, theta, mid))
            below = f < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        u[:, m] = 0.5 * (lo + hi)
        t_prev = t_prev + _arch_phi(family, theta, u[:, m])
    return u


def fit_archimedean(data, marginals, candidates=ARCHIMEDEAN_FAMILIES,
                    min_rows: int = 30) -> ArchimedeanModel:
    """Fit the best single-theta d-dimensional Archimedean copula by ML.

    Negative Frank parameters are admissible only in the bivariate case;
    for d >= 3 every family is searched on its positive range.
    """
    x = np.atleast_2d(np.asarray(data, dtype=float))
    n, d = x.shape
    if n < min_rows:
        raise FittingError(f"need at least {min_rows} rows, got {n}")
    marginals = tuple(marginals)
    u = np.column_stack([_cl(marginals[i].cdf(x[:, i])) for i in range(d)])

    best = None
    for family in candidates:
        if family == "clayton":
            ranges = [(1e-4, 50.0)]
        elif family == "frank":
            ranges = [(-50.0, -1e-4), (1e-4, 50.0)] if d == 2 else [(1e-4, 50.0)]
        else:
            ranges = [(1.0 + 1e-4, 50.0)]

        def loglik(th, _fam=family):
            with np.errstate(all="ignore"):
                ll = _arch_log_density(_fam, float(th), u)
            ll = np.where(np.isfinite(ll), ll, -1e10)
            return float(np.sum(ll))

        for lo, hi in ranges:
            try:
                th, ll = _maximize_theta(loglik, lo, hi)
            except (ValueError, FloatingPointError):
                continue
            if not np.isfinite(ll):
                continue
            if best is None or ll > best[0]:
                best = (ll, family, float(th))
    if best is None:
        raise FittingError("all Archimedean candidate fits failed numerically")
    return ArchimedeanModel(best[1], best[2], marginals)
