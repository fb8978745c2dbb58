import numpy as np
import pytest

from orevine.descriptors import build_dataset, mineral_ratio
from orevine.errors import ArgumentError
from orevine.model import partition_dataset
from orevine.synth import (
    Primitive,
    SceneSpec,
    benchmark_truth,
    generate_composite_dataset,
    generate_scene,
)


def ball_spec(vfvm=0.75, seed=3):
    return SceneSpec(
        dims=(50, 50, 50),
        particles=(Primitive("ball", center=(24.0, 24.0, 24.0), radius=20.0,
                             gray_mean=2.0, gray_sigma=0.05, vfvm=vfvm),),
        phase_planes=((2, 24),),
        seed=seed)


class TestGenerateScene:
    def test_ball_vfvm_by_construction(self):
        spec = ball_spec(vfvm=0.75)
        volume, labels, slices = generate_scene(spec)
        assert labels.n_particles == 1
        coords = labels.particle_voxels(1)
        ratio = mineral_ratio(coords, slices, labels.dims)
        assert ratio == pytest.approx(0.75, abs=0.05)

    def test_empty_spec(self):
        volume, labels, slices = generate_scene(SceneSpec(dims=(8, 8, 8)))
        assert labels.n_particles == 0
        assert volume.dims == (8, 8, 8)

    def test_seeded_twice_identical(self):
        a_vol, a_lab, a_slices = generate_scene(ball_spec(seed=9))
        b_vol, b_lab, b_slices = generate_scene(ball_spec(seed=9))
        assert np.array_equal(a_vol.values, b_vol.values)
        assert np.array_equal(a_lab.labels, b_lab.labels)
        for sa, sb in zip(a_slices, b_slices):
            assert np.array_equal(sa.phases, sb.phases)

    def test_overlap_rejected(self):
        spec = SceneSpec(
            dims=(30, 30, 30),
            particles=(
                Primitive("ball", center=(14, 14, 14), radius=6),
                Primitive("ball", center=(16, 14, 14), radius=6),
            ))
        with pytest.raises(ArgumentError, match="overlap"):
            generate_scene(spec)

    def test_box_particle_and_dataset(self):
        spec = SceneSpec(
            dims=(40, 40, 20),
            particles=(
                Primitive("box", center=(10, 10, 10), size=(12, 6, 4),
                          gray_mean=3.0, vfvm=1.0),
                Primitive("ball", center=(28, 28, 10), radius=6,
                          gray_mean=1.0, vfvm=0.0),
            ),
            phase_planes=((2, 10),),
            seed=5)
        volume, labels, slices = generate_scene(spec)
        ds = build_dataset(labels, volume, slices)
        assert len(ds) == 2
        assert ds.column("rat")[0] == pytest.approx(1.0)
        assert ds.column("rat")[1] == pytest.approx(0.0)
        # box median gray well above ball median gray
        assert ds.column("med")[0] > ds.column("med")[1]

    def test_spec_json_round_trip(self):
        spec = ball_spec()
        back = SceneSpec.from_json(spec.to_json())
        assert back == spec


class TestGenerateCompositeDataset:
    def test_exact_counts(self):
        truth = benchmark_truth()
        ds = generate_composite_dataset(truth, 227, 489, 625, seed=1)
        assert len(ds) == 1341
        rat = ds.column("rat")
        assert int((rat >= 0.99).sum()) == 227
        assert int((rat <= 0.01).sum()) == 489

    def test_all_composite(self):
        truth = benchmark_truth()
        ds = generate_composite_dataset(truth, 0, 0, 10, seed=2)
        assert len(ds) == 10
        rat = ds.column("rat")
        assert np.all((rat > 0.01) & (rat < 0.99))

    def test_partition_round_trip(self):
        truth = benchmark_truth()
        ds = generate_composite_dataset(truth, 30, 40, 50, seed=3)
        d_v, d_nv, d_c = partition_dataset(ds, epsilon=0.01)
        assert (len(d_v), len(d_nv), len(d_c)) == (30, 40, 50)

    def test_deterministic(self):
        truth = benchmark_truth()
        a = generate_composite_dataset(truth, 20, 20, 20, seed=7)
        b = generate_composite_dataset(truth, 20, 20, 20, seed=7)
        assert np.array_equal(a.matrix, b.matrix)

    def test_source_tags_follow_rows(self):
        truth = benchmark_truth()
        ds = generate_composite_dataset(truth, 15, 15, 15, seed=9)
        rat = ds.column("rat")
        assert all(tag == "valuable" for tag in ds.sources[rat >= 0.99])
        assert all(tag == "non_valuable" for tag in ds.sources[rat <= 0.01])

    def test_sample_then_fit_recovers_edge_taus(self):
        # generate -> partition -> fit -> compare each fitted edge's
        # empirical tau against the generator's corresponding edge tau
        from orevine.copulas import kendall_tau
        from orevine.model import fit_composite

        truth = benchmark_truth()
        ds = generate_composite_dataset(truth, 3000, 3000, 4000, seed=13)
        fitted = fit_composite(ds, engine="rvine")

        gen_tau = {"clayton": lambda t: t / (t + 2.0),
                   "gumbel": lambda t: 1.0 - 1.0 / t}
        for gen_model, fit_model, part in (
                (truth.f_v, fitted.f_v, "v"), (truth.f_c, fitted.f_c, "c")):
            gen_edges = {e.conditioned: c for e, c in gen_model.edge_items()
                         if not e.conditioning}
            # data columns for the partition
            d_v, d_nv, d_c = partition_dataset(ds)
            data = {"v": d_v, "c": d_c}[part].matrix
            u = np.column_stack([gen_model.marginals[i].cdf(data[:, i])
                                 for i in range(gen_model.d)])
            for cond, cop in gen_edges.items():
                emp = kendall_tau(u[:, cond[0]], u[:, cond[1]])
                if cop.family == "independence":
                    assert abs(emp) < 0.05
                elif cop.family in gen_tau:
                    assert emp == pytest.approx(gen_tau[cop.family](cop.theta),
                                                abs=0.05)
