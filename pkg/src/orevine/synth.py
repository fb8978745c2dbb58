"""Synthetic ground truth: voxel scenes and descriptor datasets.

Scenes render non-overlapping primitives (balls, boxes, plates) into a
grayscale volume with additive Gaussian noise, an exact label volume, and
phase slices whose per-particle valuable fraction matches the requested
composition: the particle's slice voxels are swept by a planar cut (sorted
by x, then y, z) and the leading fraction is marked valuable.

Composite datasets are drawn from a known CompositeModel with exact class
counts; pure rows carry composition 1 or 0, composite rows sample the
seven-variate density.  The deterministic benchmark model mirrors the
moderately separated three-class setting used by the acceptance suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .copulas import PairCopula
from .descriptors import COLUMNS, Dataset
from .errors import ArgumentError, ParseError
from .marginals import BetaParams, GammaParams, MixtureModel
from .model import CompositeModel
from .vine import RVineModel, dvine_structure
from .voxel import LabelVolume, PhaseSlice, VoxelVolume


@dataclass(frozen=True)
class Primitive:
    """One particle primitive: ball, box or plate (a thin box)."""

    shape: str
    center: tuple[float, float, float]
    radius: float = 0.0
    size: tuple[float, float, float] = (0.0, 0.0, 0.0)
    angles: tuple[float, float, float] = (0.0, 0.0, 0.0)  # z-y-z Euler, degrees
    gray_mean: float = 1.0
    gray_sigma: float = 0.05
    vfvm: float = 0.5

    def __post_init__(self):
        if self.shape not in ("ball", "box", "plate"):
            raise ArgumentError(f"unknown primitive shape {self.shape!r}")
        if not 0.0 <= self.vfvm <= 1.0:
            raise ArgumentError("vfvm must lie in [0, 1]")


@dataclass(frozen=True)
class SceneSpec:
    dims: tuple[int, int, int]
    particles: tuple[Primitive, ...] = ()
    phase_planes: tuple[tuple[int, int], ...] = ()   # (axis, index)
    spacing: float = 1.0
    background_mean: float = 0.2
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if min(self.dims) < 1:
            raise ArgumentError("scene dims must be positive")

    def to_json(self) -> str:
        doc = {
            "dims": list(self.dims), "spacing": self.spacing,
            "background_mean": self.background_mean,
            "noise_sigma": self.noise_sigma, "seed": self.seed,
            "phase_planes": [list(p) for p in self.phase_planes],
            "particles": [
                {"shape": p.shape, "center": list(p.center), "radius": p.radius,
                 "size": list(p.size), "angles": list(p.angles),
                 "gray_mean": p.gray_mean, "gray_sigma": p.gray_sigma,
                 "vfvm": p.vfvm}
                for p in self.particles],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        try:
            doc = json.loads(text)
            particles = tuple(
                Primitive(shape=p["shape"], center=tuple(p["center"]),
                          radius=p.get("radius", 0.0),
                          size=tuple(p.get("size", (0, 0, 0))),
                          angles=tuple(p.get("angles", (0, 0, 0))),
                          gray_mean=p.get("gray_mean", 1.0),
                          gray_sigma=p.get("gray_sigma", 0.05),
                          vfvm=p.get("vfvm", 0.5))
                for p in doc.get("particles", []))
            return cls(dims=tuple(doc["dims"]), particles=particles,
                       phase_planes=tuple(tuple(p) for p in
                                          doc.get("phase_planes", [])),
                       spacing=doc.get("spacing", 1.0),
                       background_mean=doc.get("background_mean", 0.2),
                       noise_sigma=doc.get("noise_sigma", 0.05),
                       seed=doc.get("seed", 0))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"malformed scene spec: {exc}") from exc


def _primitive_mask(prim: Primitive, dims) -> np.ndarray:
    xs = np.arange(dims[0])[:, None, None]
    ys = np.arange(dims[1])[None, :, None]
    zs = np.arange(dims[2])[None, None, :]
    cx, cy, cz = prim.center
    if prim.shape == "ball":
        return ((xs - cx) ** 2 + (ys - cy) ** 2 + (zs - cz) ** 2
                <= prim.radius ** 2)
    # box / plate: rotated half-extent test
    a, b, g = np.deg2rad(prim.angles)
    from .descriptors import _rotation_zyz
    rot = _rotation_zyz(a, b, g)
    dx = np.broadcast_to(xs - cx, dims).ravel()
    dy = np.broadcast_to(ys - cy, dims).ravel()
    dz = np.broadcast_to(zs - cz, dims).ravel()
    local = np.column_stack([dx, dy, dz]) @ rot.T
    half = np.asarray(prim.size, dtype=float) / 2.0
    return np.all(np.abs(local) <= half, axis=1).reshape(dims)


def generate_scene(spec: SceneSpec):
    """Render the scene: (grayscale volume, ground-truth labels, phase slices)."""
    rng = np.random.default_rng(spec.seed)
    labels = np.zeros(spec.dims, dtype=np.uint32)
    for pid, prim in enumerate(spec.particles, start=1):
        mask = _primitive_mask(prim, spec.dims)
        if not mask.any():
            raise ArgumentError(f"particle {pid} rasterizes to no voxels")
        if (labels[mask] != 0).any():
            raise ArgumentError(f"particle {pid} overlaps an earlier particle")
        labels[mask] = pid

    values = rng.normal(spec.background_mean, spec.noise_sigma, spec.dims)
    for pid, prim in enumerate(spec.particles, start=1):
        sel = labels == pid
        values[sel] = rng.normal(prim.gray_mean, prim.gray_sigma,
                                 int(sel.sum()))

    label_volume = LabelVolume(labels, spec.spacing)
    volume = VoxelVolume(values, spec.spacing)

    # phase assignment: pool each particle's slice voxels, planar cut along x
    plane_grids = {}
    for axis, index in spec.phase_planes:
        if not (0 <= axis <= 2) or not (0 <= index < spec.dims[axis]):
            raise ArgumentError(f"phase plane ({axis}, {index}) outside volume")
        shape = tuple(s for a, s in enumerate(spec.dims) if a != axis)
        plane_grids[(axis, index)] = np.zeros(shape, dtype=np.int64)

    for pid, prim in enumerate(spec.particles, start=1):
        pool = []
        for (axis, index), grid in plane_grids.items():
            sel = [slice(None)] * 3
            sel[axis] = index
            cross = labels[tuple(sel)] == pid
            coords2 = np.argwhere(cross)
            for c2 in coords2:
                full = np.insert(c2, axis, index)
                pool.append((tuple(full), (axis, index), tuple(c2)))
        if not pool:
            continue
        pool.sort(key=lambda item: item[0])
        seen = set()
        unique_pool = []
        for item in pool:
            if item[0] not in seen:
                seen.add(item[0])
                unique_pool.append(item)
        n_val = round(prim.vfvm * len(unique_pool))
        for rank, (_, plane, c2) in enumerate(unique_pool):
            plane_grids[plane][c2] = 1 if rank < n_val else 2

    slices = [PhaseSlice.from_plane(axis, index, grid)
              for (axis, index), grid in plane_grids.items()]
    return volume, label_volume, slices


# ---------------------------------------------------------------------------
# composite-model dataset generation
# ---------------------------------------------------------------------------

def generate_composite_dataset(truth: CompositeModel, n_v: int, n_nv: int,
                               n_c: int, seed: int) -> Dataset:
    """Sample a descriptor dataset with exact class counts.

    Pure rows carry composition exactly 1 (valuable) or 0 (non-valuable);
    composite rows sample the seven-variate class density.  Rows are
    shuffled deterministically and ids run 1..n.
    """
    if min(n_v, n_nv, n_c) < 0:
        raise ArgumentError("class counts must be non-negative")
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2 ** 63 - 1, size=3)
    blocks = []
    if n_v:
        rows = truth.f_v.sample(n_v, seed=seeds[0])
        blocks.append(np.column_stack([rows, np.ones(n_v)]))
    if n_nv:
        rows = truth.f_nv.sample(n_nv, seed=seeds[1])
        blocks.append(np.column_stack([rows, np.zeros(n_nv)]))
    if n_c:
        rows = truth.f_c.sample(n_c, seed=seeds[2])
        eps = truth.epsilon
        rows[:, -1] = np.clip(rows[:, -1], eps + 1e-9, 1.0 - eps - 1e-9)
        blocks.append(rows)
    if not blocks:
        return Dataset(np.zeros(0, dtype=np.int64), np.zeros((0, 7)), COLUMNS)
    matrix = np.vstack(blocks)
    tags = np.array(["valuable"] * n_v + ["non_valuable"] * n_nv
                    + ["composite"] * n_c, dtype=object)
    perm = rng.permutation(matrix.shape[0])
    matrix = matrix[perm]
    tags = tags[perm]
    ids = np.arange(1, matrix.shape[0] + 1, dtype=np.int64)
    return Dataset(ids, matrix, COLUMNS, tags)


# ---------------------------------------------------------------------------
# the pinned synthetic benchmark truth
# ---------------------------------------------------------------------------

def _gamma_mix(a1, b1, a2, b2, lam):
    return MixtureModel("gamma", GammaParams(a1, b1), GammaParams(a2, b2), lam)


def _beta_mix(p1, q1, p2, q2, lam, truncation=None):
    return MixtureModel("beta", BetaParams(p1, q1), BetaParams(p2, q2), lam,
                        truncation=truncation)


def benchmark_truth(epsilon: float = 0.01) -> CompositeModel:
    """Three moderately separated classes with heterogeneous dependence.

    The median-gray column separates the classes; the composite class
    couples median gray tightly to the composition fraction, which is what
    a structured (vine) fit can exploit and an exchangeable one cannot.
    """
    ind = PairCopula("independence")

    # 6-dim D-vine structures along the natural order
    s6 = dvine_structure(list(range(6)))
    marg_v = (
        _gamma_mix(60.0, 0.15, 80.0, 0.125, 0.5),     # med ~ 9.5
        _gamma_mix(4.0, 0.25, 6.0, 0.3, 0.5),         # iqr
        _gamma_mix(3.0, 120.0, 6.0, 90.0, 0.5),       # vol
        _beta_mix(6.0, 3.0, 4.0, 2.0, 0.5),           # elo
        _beta_mix(5.0, 4.0, 4.0, 3.0, 0.5),           # flat
        _beta_mix(8.0, 3.0, 9.0, 4.0, 0.5),           # sphe
    )
    cops_v = [PairCopula("frank", 0, 4.0), PairCopula("clayton", 0, 1.0), ind,
              PairCopula("gumbel", 0, 1.5), ind] + [ind] * 10
    f_v = RVineModel(s6, tuple(cops_v), marg_v)

    marg_nv = (
        _gamma_mix(25.0, 0.16, 35.0, 0.12, 0.5),      # med ~ 4.1
        _gamma_mix(3.0, 0.3, 5.0, 0.35, 0.5),
        _gamma_mix(2.5, 200.0, 5.0, 160.0, 0.5),
        _beta_mix(3.0, 5.0, 2.0, 4.0, 0.5),
        _beta_mix(4.0, 5.0, 3.0, 4.0, 0.5),
        _beta_mix(6.0, 4.0, 7.0, 5.0, 0.5),
    )
    cops_nv = [PairCopula("clayton", 0, 1.5), ind, PairCopula("frank", 0, -3.0),
               ind, PairCopula("frank", 0, 2.5)] + [ind] * 10
    f_nv = RVineModel(s6, tuple(cops_nv), marg_nv)

    # 7-dim: composition adjacent to median gray in the path
    s7 = dvine_structure([6, 0, 1, 2, 3, 4, 5])
    marg_c = (
        _gamma_mix(40.0, 0.15, 50.0, 0.14, 0.5),      # med ~ 6.5
        _gamma_mix(6.0, 0.3, 9.0, 0.25, 0.5),         # iqr larger for composites
        _gamma_mix(3.0, 140.0, 5.5, 120.0, 0.5),
        _beta_mix(4.0, 3.0, 3.0, 3.0, 0.5),
        _beta_mix(4.0, 4.0, 5.0, 5.0, 0.5),
        _beta_mix(7.0, 4.0, 8.0, 5.0, 0.5),
        _beta_mix(2.2, 2.0, 2.0, 2.2, 0.5, truncation=(epsilon, 1.0 - epsilon)),
    )
    cops_c = ([PairCopula("gumbel", 0, 2.5),          # (rat, med)
               PairCopula("frank", 0, 3.0),           # (med, iqr)
               PairCopula("clayton", 0, 0.8), ind, ind,
               PairCopula("frank", 0, 2.0)]
              + [ind] * 15)
    f_c = RVineModel(s7, tuple(cops_c), marg_c)

    return CompositeModel(f_v, f_nv, f_c, n_v=227, n_nv=489, n_c=625,
                          epsilon=epsilon, atom_width=epsilon, engine="rvine")


def load_scene_spec(path) -> SceneSpec:
    return SceneSpec.from_json(Path(path).read_text())


def save_scene_spec(path, spec: SceneSpec) -> None:
    Path(path).write_text(spec.to_json())
