"""Schema-versioned persistence for fitted models and run manifests.

Models are stored as a single JSON document (diffable, deterministic key
order) embedding the three class densities, their marginals, vine
structures and counts.  Every CLI run additionally writes a manifest with
the resolved configuration, its hash, the seed and library versions.
"""

from __future__ import annotations

import hashlib
import json
import platform
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .copulas import PairCopula
from .errors import ParseError, SchemaError
from .marginals import BetaParams, GammaParams, MixtureModel
from .model import CompositeModel
from .vine import ArchimedeanModel, RVineModel, RVineStructure

SCHEMA_VERSION = 1


def _mixture_doc(m: MixtureModel) -> dict:
    comp = (lambda c: {"alpha": c.alpha, "beta": c.beta}
            if isinstance(c, GammaParams) else {"p": c.p, "q": c.q})
    return {"family": m.family, "comp1": comp(m.comp1), "comp2": comp(m.comp2),
            "lam": m.lam,
            "truncation": list(m.truncation) if m.truncation else None,
            "degenerate": m.degenerate}


def _mixture_from(doc: dict) -> MixtureModel:
    if doc["family"] == "gamma":
        c1 = GammaParams(doc["comp1"]["alpha"], doc["comp1"]["beta"])
        c2 = GammaParams(doc["comp2"]["alpha"], doc["comp2"]["beta"])
    else:
        c1 = BetaParams(doc["comp1"]["p"], doc["comp1"]["q"])
        c2 = BetaParams(doc["comp2"]["p"], doc["comp2"]["q"])
    trunc = tuple(doc["truncation"]) if doc.get("truncation") else None
    return MixtureModel(doc["family"], c1, c2, doc["lam"], truncation=trunc,
                        degenerate=doc.get("degenerate", False))


def _copula_doc(c: PairCopula) -> dict:
    return {"family": c.family, "rotation": c.rotation, "theta": c.theta,
            "fallback": c.fallback}


def _copula_from(doc: dict) -> PairCopula:
    return PairCopula(doc["family"], doc.get("rotation", 0), doc.get("theta"),
                      doc.get("fallback", False))


def _engine_doc(model) -> dict:
    if isinstance(model, RVineModel):
        tree_edges = [[list(e.nodes) for e in level]
                      for level in model.structure.levels]
        edges = [{"conditioned": list(e.conditioned),
                  "conditioning": sorted(e.conditioning),
                  **_copula_doc(c)}
                 for e, c in model.edge_items()]
        return {"type": "rvine", "d": model.d, "tree_edges": tree_edges,
                "edges": edges,
                "marginals": [_mixture_doc(m) for m in model.marginals]}
    if isinstance(model, ArchimedeanModel):
        return {"type": "archimedean", "family": model.family,
                "theta": model.theta,
                "marginals": [_mixture_doc(m) for m in model.marginals]}
    raise SchemaError(f"cannot serialize model of type {type(model).__name__}")


def _engine_from(doc: dict):
    marginals = tuple(_mixture_from(m) for m in doc["marginals"])
    if doc["type"] == "rvine":
        structure = RVineStructure.from_tree_edges(
            doc["d"], [[tuple(e) for e in level] for level in doc["tree_edges"]])
        copulas = tuple(_copula_from(e) for e in doc["edges"])
        model = RVineModel(structure, copulas, marginals)
        # stored conditioned/conditioning are redundant; verify on load
        for edge, stored in zip(model.structure.edges, doc["edges"]):
            if (list(edge.conditioned) != stored["conditioned"]
                    or sorted(edge.conditioning) != stored["conditioning"]):
                raise ParseError("model document edge sets are inconsistent "
                                 "with its tree structure")
        return model
    if doc["type"] == "archimedean":
        return ArchimedeanModel(doc["family"], doc["theta"], marginals)
    raise SchemaError(f"unknown engine type {doc['type']!r}")


def composite_to_doc(model: CompositeModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "composite_model",
        "engine": model.engine,
        "epsilon": model.epsilon,
        "atom_width": model.atom_width,
        "counts": {"valuable": model.n_v, "non_valuable": model.n_nv,
                   "composite": model.n_c},
        "submodels": {"valuable": _engine_doc(model.f_v),
                      "non_valuable": _engine_doc(model.f_nv),
                      "composite": _engine_doc(model.f_c)},
    }


def composite_from_doc(doc: dict) -> CompositeModel:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(
            f"model document schema {version!r} is not supported by this "
            f"build (expected {SCHEMA_VERSION}); migrate the document first")
    if doc.get("kind") != "composite_model":
        raise SchemaError(f"not a composite model document: {doc.get('kind')!r}")
    try:
        sub = doc["submodels"]
        counts = doc["counts"]
        return CompositeModel(
            f_v=_engine_from(sub["valuable"]),
            f_nv=_engine_from(sub["non_valuable"]),
            f_c=_engine_from(sub["composite"]),
            n_v=int(counts["valuable"]), n_nv=int(counts["non_valuable"]),
            n_c=int(counts["composite"]),
            epsilon=float(doc["epsilon"]), atom_width=float(doc["atom_width"]),
            engine=doc["engine"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed model document: {exc}") from exc


def save_model(path, model: CompositeModel) -> None:
    Path(path).write_text(json.dumps(composite_to_doc(model), indent=2,
                                     sort_keys=True))


def load_model(path) -> CompositeModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}") from exc
    return composite_from_doc(doc)


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def write_manifest(path, command: str, config: dict, seed=None) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "versions": {
            "orevine": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))
