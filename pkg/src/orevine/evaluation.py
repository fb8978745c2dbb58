"""Model scores and leave-one-out cross-validation.

Scores follow the usual definitions: AIC = 2k - 2 LL, BIC = k ln(n) - 2 LL,
MAE/MSE of predicted against observed composition.  The parameter count k
is fixed by convention: 5 per mixture marginal (two 2-parameter components
plus the mixing ratio), 1 per non-independence pair copula, 1 per
d-dimensional Archimedean copula, plus 2 class-proportion degrees of
freedom for a composite model.

Leave-one-out refits the composite model on every n-1 subset and scores
the held-out row from its CT-based descriptors.  Exact mode repeats the
full structure selection per fold; fast mode reuses the full-data vine
structure and copula families and re-estimates parameters only.  Fold
results are reduced in row order, so reports are identical for any degree
of parallelism.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .descriptors import Dataset
from .errors import ArgumentError, FittingError
from .marginals import MixtureModel
from .model import (
    CompositeModel,
    composite_log_density,
    fit_composite,
    partition_dataset,
    predict_vfvm,
)
from .vine import ArchimedeanModel, RVineModel

MIXTURE_PARAMS = 5  # 2 + 2 component parameters + mixing ratio


@dataclass(frozen=True)
class ScoreReport:
    """One engine's scores on one subset (all rows or composite-only)."""

    engine: str
    subset: str                  # "all" | "composite_only"
    ll: float
    k: int
    n: int
    aic: float
    bic: float
    mae: float | None = None
    mse: float | None = None
    excluded_folds: int = 0

    def __post_init__(self):
        if self.subset not in ("all", "composite_only"):
            raise ArgumentError(f"unknown subset tag {self.subset!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ScoreReport":
        return cls(**doc)


def information_criteria(ll: float, k: int, n: int) -> tuple[float, float]:
    """(AIC, BIC) for a log-likelihood with k parameters on n samples."""
    if n < 1 or k < 0:
        raise ArgumentError("need n >= 1 and k >= 0")
    return 2.0 * k - 2.0 * ll, k * float(np.log(n)) - 2.0 * ll


def count_parameters(model) -> tuple[int, dict]:
    """Total parameter count plus a per-block breakdown."""
    if isinstance(model, MixtureModel):
        return MIXTURE_PARAMS, {"marginal": MIXTURE_PARAMS}
    if isinstance(model, RVineModel):
        marg = MIXTURE_PARAMS * model.d
        cop = model.n_copula_params
        return marg + cop, {"marginals": marg, "pair_copulas": cop}
    if isinstance(model, ArchimedeanModel):
        marg = MIXTURE_PARAMS * model.d
        return marg + 1, {"marginals": marg, "archimedean_copula": 1}
    if isinstance(model, CompositeModel):
        k_v, _ = count_parameters(model.f_v)
        k_nv, _ = count_parameters(model.f_nv)
        k_c, _ = count_parameters(model.f_c)
        total = k_v + k_nv + k_c + 2
        return total, {"valuable": k_v, "non_valuable": k_nv,
                       "composite": k_c, "class_proportions": 2}
    raise ArgumentError(f"cannot count parameters of {type(model).__name__}")


def prediction_errors(predictions, truth) -> tuple[float, float]:
    """(MAE, MSE) between predicted and observed composition values."""
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if p.shape != t.shape or p.size == 0:
        raise ArgumentError("predictions and truth must be equal-length, non-empty")
    err = p - t
    return float(np.mean(np.abs(err))), float(np.mean(err ** 2))


# ---------------------------------------------------------------------------
# leave-one-out cross-validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LooResult:
    report_all: ScoreReport
    report_composite: ScoreReport
    ids: np.ndarray
    truths: np.ndarray
    predictions: np.ndarray       # NaN where the fold was excluded
    composite_mask: np.ndarray
    folds_performed: int
    excluded_folds: int

    def write_errors_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("id,truth,prediction,error\n")
            for i in range(self.ids.size):
                pred = self.predictions[i]
                if np.isnan(pred):
                    fh.write(f"{int(self.ids[i])},{repr(float(self.truths[i]))},,\n")
                else:
                    fh.write(f"{int(self.ids[i])},{repr(float(self.truths[i]))},"
                             f"{repr(float(pred))},"
                             f"{repr(float(pred - self.truths[i]))}\n")


def _default_fit(dataset: Dataset, engine: str, epsilon: float, candidates,
                 min_rows: int, template):
    return fit_composite(dataset, engine=engine, epsilon=epsilon,
                         candidates=candidates, min_rows=min_rows,
                         template=template)


def _loo_fold(args):
    (i, dataset, engine, epsilon, candidates, min_rows, template,
     fit_fn, predict_fn) = args
    mask = np.ones(len(dataset), dtype=bool)
    mask[i] = False
    try:
        model = fit_fn(dataset.subset(mask), engine, epsilon, candidates,
                       min_rows, template)
        pred = predict_fn(model, dataset.matrix[i, :-1])
    except FittingError:
        return i, np.nan
    value = getattr(pred, "value", pred)
    if value is None:
        return i, np.nan
    return i, float(value)


def loo_cv(dataset: Dataset, engine: str = "rvine", epsilon: float = 0.01,
           parallelism: int = 1, fast: bool = False, candidates=None,
           min_rows: int = 30, fit_fn=None, predict_fn=None) -> LooResult:
    """Leave-one-out validation of the composition predictor.

    Returns fit scores (LL/AIC/BIC of the full-data model) combined with
    LOO MAE/MSE, over all rows and over the composite rows only.  Folds
    whose refit degenerates (or whose prediction has no support) are
    excluded and counted.  Results do not depend on `parallelism`.
    """
    if not dataset.has_rat or np.isnan(dataset.column("rat")).any():
        raise ArgumentError("leave-one-out needs a fully labeled dataset")
    n = len(dataset)
    fit_fn = fit_fn or _default_fit
    predict_fn = predict_fn or predict_vfvm

    full = fit_fn(dataset, engine, epsilon, candidates, min_rows, None)
    template = full if fast else None

    jobs = [(i, dataset, engine, epsilon, candidates, min_rows, template,
             fit_fn, predict_fn) for i in range(n)]
    predictions = np.full(n, np.nan)
    if parallelism <= 1:
        results = map(_loo_fold, jobs)
    else:
        executor = ProcessPoolExecutor(max_workers=parallelism)
        results = executor.map(_loo_fold, jobs, chunksize=max(1, n // (parallelism * 4)))
    for i, value in results:
        predictions[i] = value
    if parallelism > 1:
        executor.shutdown()

    truths = dataset.column("rat").astype(float)
    rat = truths
    composite_mask = (rat > epsilon) & (rat < 1.0 - epsilon)
    valid = ~np.isnan(predictions)
    excluded = int(n - valid.sum())

    mae_all, mse_all = prediction_errors(predictions[valid], truths[valid])
    c_valid = valid & composite_mask
    if c_valid.any():
        mae_c, mse_c = prediction_errors(predictions[c_valid], truths[c_valid])
    else:
        mae_c = mse_c = float("nan")

    if isinstance(full, CompositeModel):
        ll_all = float(np.sum(composite_log_density(full, dataset.matrix)))
        k_all, _ = count_parameters(full)
    else:  # injected fit functions may return arbitrary models
        ll_all, k_all = float("nan"), 0
    aic_all, bic_all = information_criteria(ll_all, k_all, n)
    report_all = ScoreReport(engine=engine, subset="all", ll=ll_all, k=k_all,
                             n=n, aic=aic_all, bic=bic_all, mae=mae_all,
                             mse=mse_all, excluded_folds=excluded)

    _, _, d_c = partition_dataset(dataset, epsilon)
    if isinstance(full, CompositeModel):
        ll_c = float(np.sum(full.f_c.log_density(d_c.matrix)))
        k_c, _ = count_parameters(full.f_c)
    else:
        ll_c, k_c = float("nan"), 0
    aic_c, bic_c = information_criteria(ll_c, k_c, max(len(d_c), 1))
    report_c = ScoreReport(engine=engine, subset="composite_only", ll=ll_c,
                           k=k_c, n=len(d_c), aic=aic_c, bic=bic_c, mae=mae_c,
                           mse=mse_c,
                           excluded_folds=int(composite_mask.sum() - c_valid.sum()))

    return LooResult(report_all=report_all, report_composite=report_c,
                     ids=dataset.ids.copy(), truths=truths,
                     predictions=predictions, composite_mask=composite_mask,
                     folds_performed=n, excluded_folds=excluded)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

_ROW_LABELS = {"all": ["log-likelihood", "AIC", "BIC", "MAE", "MSE"],
               "composite_only": ["log-likelihood_c", "AIC_c", "BIC_c",
                                  "MAE_c", "MSE_c"]}


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return "-"
    return f"{value:.4f}"


def render_report(scores) -> str:
    """Aligned text table comparing engines, one block per subset tag."""
    scores = list(scores)
    if not scores:
        return ""
    lines = []
    for subset in ("all", "composite_only"):
        cols = [s for s in scores if s.subset == subset]
        if not cols:
            continue
        engines = [s.engine for s in cols]
        header = ["score"] + engines
        rows = []
        for label, attr in zip(_ROW_LABELS[subset],
                               ("ll", "aic", "bic", "mae", "mse")):
            rows.append([label] + [_fmt(getattr(s, attr)) for s in cols])
        widths = [max(len(r[i]) for r in [header] + rows)
                  for i in range(len(header))]
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
        lines.append("  ".join("-" * w for w in widths))
        for r in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def scores_to_json(scores) -> str:
    return json.dumps({"schema_version": 1,
                       "scores": [s.to_dict() for s in scores]},
                      indent=2, sort_keys=True)


def scores_from_json(text: str) -> list[ScoreReport]:
    doc = json.loads(text)
    if doc.get("schema_version") != 1:
        raise ArgumentError("unknown score document schema")
    return [ScoreReport.from_dict(d) for d in doc["scores"]]
