import itertools

import numpy as np
import pytest
from scipy import stats

from orevine.copulas import PairCopula, fit_pair, kendall_tau
from orevine.errors import ArgumentError, FittingError
from orevine.marginals import BetaParams, MixtureModel, fit_mixture_em
from orevine.vine import (
    ArchimedeanModel,
    RVineModel,
    RVineStructure,
    fit_archimedean,
    fit_sequential,
    validate_structure,
    vine_log_density,
    vine_sample,
)


def uniform_marginal():
    return MixtureModel("beta", BetaParams(1.0, 1.0), BetaParams(1.0, 1.0), 0.5)


def beta_marginal(p, q):
    return MixtureModel("beta", BetaParams(p, q), BetaParams(p, q), 0.5)


def path_vine_3(cop01: PairCopula, cop12: PairCopula, cop02: PairCopula,
                marginals=None) -> RVineModel:
    structure = RVineStructure.from_tree_edges(3, [[(0, 1), (1, 2)], [(0, 1)]])
    if marginals is None:
        marginals = tuple(uniform_marginal() for _ in range(3))
    return RVineModel(structure, (cop01, cop12, cop02), tuple(marginals))


def prufer_trees(d):
    """All labeled spanning trees on d nodes via Prufer sequences."""
    for seq in itertools.product(range(d), repeat=d - 2):
        degree = [1] * d
        for s in seq:
            degree[s] += 1
        edges = []
        seq_list = list(seq)
        leaves = sorted(i for i in range(d) if degree[i] == 1)
        for s in seq_list:
            leaf = leaves.pop(0)
            edges.append(tuple(sorted((leaf, s))))
            degree[s] -= 1
            if degree[s] == 1:
                # insert keeping sorted order
                import bisect
                bisect.insort(leaves, s)
        edges.append(tuple(sorted(leaves)))
        yield edges


# independent scalar implementations used as oracles -------------------------

def clayton_cdf_scalar(u, v, th):
    return (u ** -th + v ** -th - 1.0) ** (-1.0 / th)


def clayton_density_scalar(u, v, th):
    return (1 + th) * (u * v) ** (-th - 1) * (u ** -th + v ** -th - 1) ** (-1 / th - 2)


def clayton_h_scalar(u, v, th):
    return v ** (-th - 1) * (u ** -th + v ** -th - 1.0) ** (-1.0 / th - 1.0)


class TestStructure:
    def test_three_dim_path_sets(self):
        s = RVineStructure.from_tree_edges(3, [[(0, 1), (1, 2)], [(0, 1)]])
        assert validate_structure(s) is None
        top = s.levels[1][0]
        assert top.conditioned == (0, 2)
        assert top.conditioning == frozenset({1})

    def test_proximity_violation_reported(self):
        # star at level 1; level-2 edge joining two prev edges sharing a node is
        # fine, but a 4-star allows a T2 pair sharing only the center: build a
        # path instead and join the two end edges of a 4-path (share nothing)
        s = RVineStructure.from_tree_edges(4, [[(0, 1), (1, 2), (2, 3)],
                                               [(0, 2), (0, 1)],
                                               [(0, 1)]])
        report = validate_structure(s)
        assert report is not None and "proximity" in report

    def test_fitted_structures_always_valid(self):
        rng = np.random.default_rng(99)
        for trial in range(20):
            d = int(rng.integers(3, 6))
            n = 120
            z = rng.standard_normal((n, d)) @ rng.uniform(-1, 1, (d, d))
            u = np.column_stack([stats.rankdata(z[:, i]) / (n + 1) for i in range(d)])
            model = fit_sequential(u, [uniform_marginal()] * d, min_rows=30)
            assert validate_structure(model.structure) is None

    def test_wrong_level_count(self):
        s = RVineStructure.from_tree_edges(3, [[(0, 1), (1, 2)]])
        assert validate_structure(s) is not None


class TestFitSequential:
    def test_d2_single_edge(self):
        rng = np.random.default_rng(0)
        u = rng.uniform(size=(200, 2))
        model = fit_sequential(u, [uniform_marginal()] * 2)
        assert len(model.structure.edges) == 1
        assert model.structure.edges[0].conditioned == (0, 1)

    @pytest.mark.parametrize("d,seed", [(4, 5), (5, 6)])
    def test_t1_is_brute_force_mst(self, d, seed):
        rng = np.random.default_rng(seed)
        cov = rng.uniform(-1, 1, (d, d))
        z = rng.standard_normal((500, d)) @ cov
        model = fit_sequential(z, [fit_mixture_em(z[:, i] - z[:, i].min() + 0.1, "gamma")
                                   for i in range(d)])
        fitted_t1 = {e.conditioned for e in model.structure.levels[0]}

        # oracle: exhaustive enumeration over all d^(d-2) labeled trees
        u = np.column_stack([model.marginals[i].cdf(z[:, i]) for i in range(d)])
        taus = {}
        for i, j in itertools.combinations(range(d), 2):
            taus[(i, j)] = abs(kendall_tau(u[:, i], u[:, j]))
        best_score, best_tree = -1.0, None
        count = 0
        for tree in prufer_trees(d):
            count += 1
            score = sum(taus[e] for e in tree)
            if score > best_score:
                best_score, best_tree = score, set(tree)
        assert count == d ** (d - 2)
        assert fitted_t1 == best_tree

    def test_independent_columns_all_independence(self):
        rng = np.random.default_rng(123)
        u = rng.uniform(size=(800, 4))
        model = fit_sequential(u, [uniform_marginal()] * 4)
        assert all(c.family == "independence" for c in model.pair_copulas)

    def test_too_few_rows(self):
        with pytest.raises(FittingError):
            fit_sequential(np.random.default_rng(1).uniform(size=(10, 3)),
                           [uniform_marginal()] * 3)


class TestLogDensity:
    def test_all_independence_equals_marginal_sum(self):
        structure = RVineStructure.from_tree_edges(3, [[(0, 1), (1, 2)], [(0, 1)]])
        marginals = (beta_marginal(2, 3), beta_marginal(3, 2), beta_marginal(4, 4))
        model = RVineModel(structure, tuple(PairCopula("independence") for _ in range(3)),
                           marginals)
        rng = np.random.default_rng(4)
        x = rng.uniform(0.05, 0.95, size=(50, 3))
        ld = vine_log_density(model, x)
        ref = sum(marginals[i].log_density(x[:, i]) for i in range(3))
        assert np.max(np.abs(ld - ref)) < 1e-12

    def test_matches_hand_rolled_three_factor_product(self):
        th01, th12, th02 = 2.0, 3.0, 1.5
        model = path_vine_3(PairCopula("clayton", 0, th01),
                            PairCopula("clayton", 0, th12),
                            PairCopula("clayton", 0, th02))
        rng = np.random.default_rng(8)
        for x in rng.uniform(0.1, 0.9, size=(25, 3)):
            x0, x1, x2 = x
            # independent scalar evaluation of the three-factor product
            f01 = clayton_density_scalar(x0, x1, th01)
            f12 = clayton_density_scalar(x1, x2, th12)
            h_0g1 = clayton_h_scalar(x0, x1, th01)
            h_2g1 = clayton_h_scalar(x2, x1, th12)
            expected = np.log(f01 * f12 * clayton_density_scalar(h_0g1, h_2g1, th02))
            assert vine_log_density(model, x) == pytest.approx(expected, rel=1e-9)

    def test_integral_on_unit_cube(self):
        model = path_vine_3(PairCopula("clayton", 0, 1.0),
                            PairCopula("frank", 0, 4.0),
                            PairCopula("gumbel", 0, 1.3))
        n = 60
        g = (np.arange(n) + 0.5) / n
        pts = np.array(np.meshgrid(g, g, g)).reshape(3, -1).T
        total = np.exp(vine_log_density(model, pts)).sum() / n ** 3
        assert total == pytest.approx(1.0, abs=7e-3)

    def test_permutation_consistency(self):
        # swap variables 0 and 2 in data and in the structure
        model = path_vine_3(PairCopula("clayton", 0, 2.0),
                            PairCopula("gumbel", 0, 1.6),
                            PairCopula("frank", 0, 3.0),
                            marginals=(beta_marginal(2, 4), beta_marginal(3, 3),
                                       beta_marginal(5, 2)))
        structure_p = RVineStructure.from_tree_edges(3, [[(2, 1), (1, 0)], [(0, 1)]])
        model_p = RVineModel(structure_p, model.pair_copulas,
                             (model.marginals[2], model.marginals[1], model.marginals[0]))
        rng = np.random.default_rng(10)
        x = rng.uniform(0.1, 0.9, size=(40, 3))
        ld = vine_log_density(model, x)
        ld_p = vine_log_density(model_p, x[:, ::-1])
        assert np.max(np.abs(ld - ld_p)) < 1e-10

    def test_out_of_support_is_minus_inf(self):
        model = path_vine_3(PairCopula("independence"), PairCopula("independence"),
                            PairCopula("independence"))
        assert vine_log_density(model, np.array([-0.5, 0.5, 0.5])) == -np.inf


class TestSampling:
    def test_independence_uniform_columns(self):
        model = path_vine_3(PairCopula("independence"), PairCopula("independence"),
                            PairCopula("independence"))
        x = vine_sample(model, 10_000, seed=77)
        for i in range(3):
            p = stats.kstest(x[:, i], "uniform").pvalue
            assert p > 0.01

    def test_gumbel_edge_tau(self):
        model = path_vine_3(PairCopula("gumbel", 0, 2.0), PairCopula("independence"),
                            PairCopula("independence"))
        x = vine_sample(model, 10_000, seed=13)
        tau = kendall_tau(x[:, 0], x[:, 1])
        assert tau == pytest.approx(0.5, abs=0.03)

    def test_deterministic(self):
        model = path_vine_3(PairCopula("clayton", 0, 2.0),
                            PairCopula("gumbel", 90, 1.5),
                            PairCopula("frank", 0, -3.0))
        a = vine_sample(model, 500, seed=3)
        b = vine_sample(model, 500, seed=3)
        assert np.array_equal(a, b)

    def test_sample_then_refit_recovers_taus(self):
        gen = path_vine_3(PairCopula("clayton", 0, 2.0),
                          PairCopula("gumbel", 0, 2.0),
                          PairCopula("independence"))
        x = vine_sample(gen, 10_000, seed=21)
        refit = fit_sequential(x, gen.marginals)
        gen_taus = {(0, 1): 0.5, (1, 2): 0.5, (0, 2): 0.0}
        for edge, cop in refit.edge_items():
            # empirical tau of the edge's own pseudo-observations
            u = np.column_stack([gen.marginals[i].cdf(x[:, i]) for i in range(3)])
            if not edge.conditioning:
                emp = kendall_tau(u[:, edge.conditioned[0]], u[:, edge.conditioned[1]])
            else:
                continue
            assert emp == pytest.approx(gen_taus[edge.conditioned], abs=0.05)

    def test_bad_n(self):
        model = path_vine_3(PairCopula("independence"), PairCopula("independence"),
                            PairCopula("independence"))
        with pytest.raises(ArgumentError):
            vine_sample(model, 0, seed=1)

    def test_cvine_star_sampling_taus(self):
        # star tree exercises the elimination logic differently from a path
        s = RVineStructure.from_tree_edges(4, [
            [(0, 1), (0, 2), (0, 3)],
            [(0, 1), (1, 2)],
            [(0, 1)],
        ])
        assert validate_structure(s) is None
        cops = (PairCopula("clayton", 0, 2.0), PairCopula("gumbel", 0, 2.5),
                PairCopula("frank", 0, -5.0), PairCopula("clayton", 0, 1.0),
                PairCopula("independence"), PairCopula("independence"))
        model = RVineModel(s, cops, tuple(uniform_marginal() for _ in range(4)))
        x = vine_sample(model, 20_000, seed=5)
        assert kendall_tau(x[:, 0], x[:, 1]) == pytest.approx(0.5, abs=0.02)
        assert kendall_tau(x[:, 0], x[:, 2]) == pytest.approx(0.6, abs=0.02)
        from scipy import integrate
        th = -5.0
        debye1 = integrate.quad(lambda t: t / np.expm1(t), 0, th)[0] / th
        frank_tau = 1.0 - 4.0 / th * (1.0 - debye1)
        assert kendall_tau(x[:, 0], x[:, 3]) == pytest.approx(frank_tau, abs=0.02)

    def test_general_rvine_sampling_edge_consistency(self):
        # fit an arbitrary 5-dim vine (forked tree), sample from it, and
        # require every edge's conditional pseudo-observation tau to agree
        # between the training data and the vine's own samples
        from orevine.vine import _ConditionalCache

        rng = np.random.default_rng(101)
        z = rng.standard_normal((4000, 5))
        mix = np.array([[1, .8, 0, 0, 0], [0, 1, -.7, 0, 0], [0, 0, 1, .5, .4],
                        [0, 0, 0, 1, 0], [.3, 0, 0, 0, 1]], dtype=float)
        data = z @ mix
        u = np.column_stack([stats.rankdata(data[:, i]) / (4000 + 1)
                             for i in range(5)])
        gen = fit_sequential(u, [uniform_marginal()] * 5)
        assert validate_structure(gen.structure) is None

        x = vine_sample(gen, 8000, seed=3)
        cache_fit = _ConditionalCache(gen, np.clip(u, 1e-12, 1 - 1e-12))
        cache_smp = _ConditionalCache(gen, np.clip(x, 1e-12, 1 - 1e-12))
        for edge, _ in gen.edge_items():
            tf = kendall_tau(cache_fit.value(edge.conditioned[0], edge.conditioning),
                             cache_fit.value(edge.conditioned[1], edge.conditioning))
            ts = kendall_tau(cache_smp.value(edge.conditioned[0], edge.conditioning),
                             cache_smp.value(edge.conditioned[1], edge.conditioning))
            assert ts == pytest.approx(tf, abs=0.04), edge.conditioned


class TestArchimedean:
    def test_d2_coincides_with_unrotated_fit_pair(self):
        rng = np.random.default_rng(42)
        from orevine.copulas import pair_h_inverse
        base = PairCopula("clayton", 0, 2.5)
        v = rng.uniform(1e-6, 1 - 1e-6, 3000)
        p = rng.uniform(1e-6, 1 - 1e-6, 3000)
        u = pair_h_inverse(base, p, v)
        data = np.column_stack([u, v])
        pair = fit_pair(u, v, rotations=(0,))
        arch = fit_archimedean(data, [uniform_marginal()] * 2)
        assert pair.rotation == 0
        assert arch.family == pair.family == "clayton"
        assert arch.theta == pytest.approx(pair.theta, abs=1e-3)

    def test_independent_data_theta_at_independence_end(self):
        rng = np.random.default_rng(3)
        data = rng.uniform(size=(2000, 3))
        arch = fit_archimedean(data, [uniform_marginal()] * 3)
        ll = float(np.sum(arch.log_density(data)
                          - sum(arch.marginals[i].log_density(data[:, i])
                                for i in range(3))))
        assert abs(ll) < 10.0
        if arch.family == "clayton":
            assert arch.theta < 0.05
        elif arch.family == "frank":
            assert abs(arch.theta) < 0.5
        else:
            assert arch.theta < 1.05

    def test_vine_ll_at_least_archimedean_on_vine_data(self):
        gen = path_vine_3(PairCopula("clayton", 0, 3.0), PairCopula("frank", 0, -4.0),
                          PairCopula("independence"))
        x = vine_sample(gen, 2000, seed=31)
        marginals = [uniform_marginal()] * 3
        vine = fit_sequential(x, marginals)
        arch = fit_archimedean(x, marginals)
        assert np.sum(vine_log_density(vine, x)) >= np.sum(arch.log_density(x))

    def test_gamma_marginal_archimedean_density_integrates(self):
        # 2-dim check that the generic psi-derivative machinery yields a density
        m = (beta_marginal(2, 2), beta_marginal(3, 2))
        for family, theta in [("clayton", 1.2), ("gumbel", 1.6), ("joe", 1.4),
                              ("frank", 4.0)]:
            model = ArchimedeanModel(family, theta, m)
            n = 150
            g = (np.arange(n) + 0.5) / n
            uu, vv = np.meshgrid(g, g)
            pts = np.column_stack([uu.ravel(), vv.ravel()])
            total = np.exp(model.log_density(pts)).sum() / n ** 2
            assert total == pytest.approx(1.0, abs=5e-3), family

    def test_archimedean_d3_density_integrates(self):
        m = tuple(uniform_marginal() for _ in range(3))
        for family, theta in [("clayton", 1.0), ("gumbel", 1.5), ("joe", 1.5),
                              ("frank", 5.0)]:
            model = ArchimedeanModel(family, theta, m)
            n = 50
            g = (np.arange(n) + 0.5) / n
            pts = np.array(np.meshgrid(g, g, g)).reshape(3, -1).T
            total = np.exp(model.log_density(pts)).sum() / n ** 3
            assert total == pytest.approx(1.0, abs=2e-2), family

    def test_archimedean_sampling_tau(self):
        # clayton theta=2 -> tau = 0.5 for every pair
        m = tuple(uniform_marginal() for _ in range(3))
        model = ArchimedeanModel("clayton", 2.0, m)
        x = model.sample(5000, seed=9)
        for i, j in itertools.combinations(range(3), 2):
            assert kendall_tau(x[:, i], x[:, j]) == pytest.approx(0.5, abs=0.04)

    def test_six_dim_density_matches_cdf_inclusion_exclusion(self):
        # box probability from 2^6 CDF corner evaluations (order-0 generator
        # algebra only) against a Monte Carlo integral of the density, which
        # exercises the full 6th-derivative machinery
        from orevine.vine import _arch_log_density, _arch_phi

        def arch_cdf(family, theta, u):
            t = np.sum(_arch_phi(family, theta, np.asarray(u)[None, :]))
            if family == "clayton":
                return (1.0 + t) ** (-1.0 / theta)
            if family == "gumbel":
                return np.exp(-t ** (1.0 / theta))
            if family == "frank":
                return -np.log1p(np.expm1(-theta) * np.exp(-t)) / theta
            return 1.0 - (1.0 - np.exp(-t)) ** (1.0 / theta)

        d, a, b = 6, 0.25, 0.75
        rng = np.random.default_rng(7)
        pts = rng.uniform(a, b, size=(400_000, d))
        for family, theta in [("clayton", 1.5), ("gumbel", 1.8),
                              ("joe", 1.8), ("frank", 5.0)]:
            mass = 0.0
            for corner in itertools.product((a, b), repeat=d):
                sign = (-1) ** sum(1 for c in corner if c == a)
                mass += sign * arch_cdf(family, theta, np.array(corner))
            mc = float(np.mean(np.exp(
                _arch_log_density(family, theta, pts)))) * (b - a) ** d
            assert mc == pytest.approx(mass, rel=0.02), family
