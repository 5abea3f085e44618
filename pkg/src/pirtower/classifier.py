"""Cross-validated SVM evaluation and the two-stage intruder classifier.

Stage 1 separates intruders (human or animal) from clutter using the chirplet
parameters; stage 2 separates humans from animals using channel energies and
only ever sees events that stage 1 called intruders.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .features import FeatureTable
from .svm import SvmError, SvmModel, Standardizer, binary_targets, fit_precomputed, kernel_matrix, sq_distances

SELECTION_NOTE = ("hyperparameters chosen by average overall accuracy on the same folds that are reported "
                  "(no nested cross-validation); ties go to the earliest grid point")
INTRUDER_CLASSES = ("human", "animal")
PIPELINE_CLASSES = ("clutter", "human", "animal")


class CvError(ValueError):
    """Statistical precondition failed (too few examples for the fold count)."""


@dataclass(frozen=True)
class GridPoint:
    kernel: str
    C: float
    gamma: float = 0.0  # unused by the linear kernel

    def to_dict(self) -> dict:
        d = {"kernel": self.kernel, "C": self.C}
        if self.kernel == "rbf":
            d["gamma"] = self.gamma
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GridPoint":
        return cls(d["kernel"], float(d["C"]), float(d.get("gamma", 0.0)))


def default_grid() -> List[GridPoint]:
    """Linear kernel over C = 2^-3..2^10, then rbf over the same C and gamma = 2^-7..2^3."""
    cs = [2.0 ** e for e in range(-3, 11)]
    gammas = [2.0 ** e for e in range(-7, 4)]
    grid = [GridPoint("linear", c) for c in cs]
    grid += [GridPoint("rbf", c, g) for c in cs for g in gammas]
    return grid


def stratified_folds(strata: Sequence[str], k: int, seed: int) -> np.ndarray:
    """Fold index per example.

    Examples are shuffled with the seed, then dealt round-robin class by class
    with one running counter, so fold sizes differ by at most one both overall
    and within every class.
    """
    strata = np.asarray(strata)
    perm = np.random.default_rng(seed).permutation(len(strata))
    folds = np.empty(len(strata), dtype=np.int64)
    counter = 0
    for cls in sorted(set(strata.tolist())):
        for idx in perm[strata[perm] == cls]:
            folds[idx] = counter % k
            counter += 1
    return folds


def _check_counts(labels: np.ndarray, k: int) -> None:
    if k < 2:
        raise CvError("need at least 2 folds")
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise CvError(f"need at least two classes, got {classes.tolist()}")
    small = [f"{c} ({n})" for c, n in zip(classes.tolist(), counts.tolist()) if n < k]
    if small:
        raise CvError(f"classes with fewer examples than folds ({k}): {', '.join(small)}")


def _fit_standardized(z: np.ndarray, y: np.ndarray, point: GridPoint, st: Standardizer,
                      classes: Tuple[str, str], tol: float, max_iter: int,
                      K: Optional[np.ndarray] = None) -> SvmModel:
    if K is None:
        K = kernel_matrix(z, z, point.kernel, point.gamma)
    alpha, rho, it, gap = fit_precomputed(K, y, point.C, tol, max_iter)
    sv = alpha > 0
    return SvmModel(point.kernel, point.C, point.gamma, z[sv], alpha[sv] * y[sv], float(-rho), st, classes,
                    int(it), float(gap))


def fit_point(x: np.ndarray, labels, point: GridPoint, positive: Optional[str] = None, tol: float = 1e-3,
              max_iter: int = 100_000) -> SvmModel:
    """Train one model; unlike ``train_svm`` a class may have a single example."""
    x = np.asarray(x, dtype=float)
    if not np.isfinite(x).all():
        raise SvmError("non-finite feature")
    y, classes = binary_targets(labels, positive)
    st = Standardizer.fit(x)
    return _fit_standardized(st.transform(x), y, point, st, classes, tol, max_iter)


def _grid_predictions(x: np.ndarray, y: np.ndarray, train: np.ndarray, test: np.ndarray,
                      grid: Sequence[GridPoint], tol: float, max_iter: int) -> np.ndarray:
    """Held-out decision signs (+1/-1) for every grid point on one fold."""
    st = Standardizer.fit(x[train])
    zt, zv = st.transform(x[train]), st.transform(x[test])
    out = np.empty((len(grid), len(test)))
    d_tt = d_vt = None
    cache: Dict[Tuple[str, float], Tuple[np.ndarray, np.ndarray]] = {}
    for gi, p in enumerate(grid):
        key = (p.kernel, p.gamma if p.kernel == "rbf" else 0.0)
        if key not in cache:
            cache.clear()
            if p.kernel == "linear":
                cache[key] = (zt @ zt.T, zv @ zt.T)
            else:
                if d_tt is None:
                    d_tt, d_vt = sq_distances(zt, zt), sq_distances(zv, zt)
                cache[key] = (np.exp(-p.gamma * d_tt), np.exp(-p.gamma * d_vt))
        k_tt, k_vt = cache[key]
        alpha, rho, _, _ = fit_precomputed(k_tt, y[train], p.C, tol, max_iter)
        margin = k_vt @ (alpha * y[train]) - rho
        out[gi] = np.where(margin >= 0, 1.0, -1.0)
    return out


# --------------------------------------------------------------------------- reports


@dataclass
class CvReport:
    feature_set: str
    classes: List[str]  # confusion-matrix order
    rows: List[str]  # display order; the last row is the overall accuracy
    minimum: Dict[str, float]  # percent
    average: Dict[str, float]  # percent
    confusion: List[List[List[int]]]  # per fold, rows = true class, columns = predicted
    fold_sizes: List[int]
    chosen: Dict
    grid: List[Dict]
    grid_scores: List[float]
    seed: int
    folds: int
    selection: str = SELECTION_NOTE
    config_hash: Optional[str] = None
    stages: Dict = field(default_factory=dict)

    @property
    def overall_min(self) -> float:
        return self.minimum[self.rows[-1]]

    @property
    def overall_avg(self) -> float:
        return self.average[self.rows[-1]]

    def to_dict(self) -> dict:
        return {"feature_set": self.feature_set, "classes": self.classes, "rows": self.rows,
                "minimum_accuracy_pct": self.minimum, "average_accuracy_pct": self.average,
                "confusion": self.confusion, "fold_sizes": self.fold_sizes, "chosen": self.chosen,
                "grid": self.grid, "grid_average_accuracy_pct": self.grid_scores, "seed": self.seed,
                "folds": self.folds, "selection": self.selection, "config_hash": self.config_hash,
                "stages": self.stages}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"


def _rates(true: np.ndarray, pred: np.ndarray, folds: np.ndarray, k: int,
           rows: Dict[str, Tuple[Sequence[str], Sequence[str]]]) -> Tuple[Dict[str, float], Dict[str, float]]:
    """Per-row min/avg over folds of P(pred in accepted | true in members), in percent."""
    mins, avgs = {}, {}
    for name, (members, accepted) in rows.items():
        accs = []
        for f in range(k):
            sel = (folds == f) & np.isin(true, members)
            if sel.any():
                accs.append(100.0 * np.isin(pred[sel], accepted).mean())
        mins[name] = float(min(accs))
        avgs[name] = float(np.mean(accs))
    return mins, avgs


def _confusions(true, pred, folds, k, classes) -> List[List[List[int]]]:
    out = []
    for f in range(k):
        sel = folds == f
        out.append([[int(((true[sel] == a) & (pred[sel] == b)).sum()) for b in classes] for a in classes])
    return out


def kfold_cv(x, labels, k: int = 5, grid: Optional[Sequence[GridPoint]] = None, seed: int = 0,
             positive: Optional[str] = None, strata=None, folds: Optional[np.ndarray] = None,
             feature_set: str = "", tol: float = 1e-3, max_iter: int = 100_000, jobs: int = 1) -> CvReport:
    """Stratified k-fold evaluation of a binary SVM over a hyperparameter grid.

    ``strata`` (default: the labels) drives fold stratification so that several
    feature sets or tasks can share one fold assignment; ``folds`` overrides it.
    """
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    if x.ndim != 2 or len(x) != len(labels):
        raise CvError("feature matrix and labels disagree in length")
    if not np.isfinite(x).all():
        raise SvmError("non-finite feature")
    _check_counts(labels, k)
    grid = list(grid) if grid is not None else default_grid()
    y, classes = binary_targets(labels, positive)
    if folds is None:
        folds = stratified_folds(labels if strata is None else strata, k, seed)
    folds = np.asarray(folds)

    def one(f):
        train, test = np.nonzero(folds != f)[0], np.nonzero(folds == f)[0]
        return test, _grid_predictions(x, y, train, test, grid, tol, max_iter)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(one, range(k)))
    else:
        results = [one(f) for f in range(k)]
    signs = np.empty((len(grid), len(x)))
    for test, s in results:
        signs[:, test] = s
    fold_acc = np.array([[np.mean(signs[g, folds == f] == y[folds == f]) for f in range(k)]
                         for g in range(len(grid))])
    scores = fold_acc.mean(axis=1)
    best = int(np.argmax(scores))
    pred = np.where(signs[best] > 0, classes[1], classes[0])
    mins, avgs = _rates(labels, pred, folds, k, {c: ([c], [c]) for c in classes})
    total = 100.0 * fold_acc[best]
    mins["Total"], avgs["Total"] = float(total.min()), float(total.mean())
    return CvReport(feature_set, list(classes), list(classes) + ["Total"], mins, avgs,
                    _confusions(labels, pred, folds, k, list(classes)),
                    [int((folds == f).sum()) for f in range(k)], grid[best].to_dict(),
                    [p.to_dict() for p in grid], [float(100.0 * s) for s in scores], int(seed), int(k))


# --------------------------------------------------------------------------- two-stage pipeline


@dataclass
class TrainedPipeline:
    stage1: SvmModel  # c60: clutter vs intruder
    stage2: SvmModel  # e8: animal vs human
    config_hash: Optional[str] = None
    seed: Optional[int] = None

    def predict(self, c60, e8) -> np.ndarray:
        c60 = np.atleast_2d(c60)
        e8 = np.atleast_2d(e8)
        out = np.array(["clutter"] * len(c60), dtype=object)
        s1, _ = self.stage1.predict(c60)
        intr = s1 == "intruder"
        if intr.any():
            out[intr], _ = self.stage2.predict(e8[intr])
        return out.astype(str)

    def to_dict(self) -> dict:
        return {"stage1": self.stage1.to_dict(), "stage2": self.stage2.to_dict(),
                "stage1_features": "c60", "stage2_features": "e8",
                "config_hash": self.config_hash, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedPipeline":
        return cls(SvmModel.from_dict(d["stage1"]), SvmModel.from_dict(d["stage2"]), d.get("config_hash"),
                   d.get("seed"))

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n")


def stage1_labels(labels) -> np.ndarray:
    return np.where(np.isin(np.asarray(labels), INTRUDER_CLASSES), "intruder", "clutter")


def train_pipeline(table: FeatureTable, grid: Optional[Sequence[GridPoint]] = None, seed: int = 0, k: int = 5,
                   tol: float = 1e-3, max_iter: int = 100_000, jobs: int = 1) -> Tuple[TrainedPipeline, CvReport]:
    """Select and train both stages, then score their composition on held-out folds."""
    labels = np.asarray(table.labels)
    unknown = sorted(set(labels.tolist()) - set(PIPELINE_CLASSES))
    if unknown:
        raise CvError(f"unexpected labels {unknown}; expected {list(PIPELINE_CLASSES)}")
    _check_counts(labels, k)
    for c in PIPELINE_CLASSES:
        if (labels == c).sum() < k:
            raise CvError(f"class {c} has fewer than {k} examples")
    grid = list(grid) if grid is not None else default_grid()
    folds = stratified_folds(labels, k, seed)
    y1 = stage1_labels(labels)
    intr = y1 == "intruder"
    rep1 = kfold_cv(table.c60, y1, k, grid, seed, positive="intruder", folds=folds, feature_set="c60",
                    tol=tol, max_iter=max_iter, jobs=jobs)
    rep2 = kfold_cv(table.e8[intr], labels[intr], k, grid, seed, positive="human", folds=folds[intr],
                    feature_set="e8", tol=tol, max_iter=max_iter, jobs=jobs)
    p1, p2 = GridPoint.from_dict(rep1.chosen), GridPoint.from_dict(rep2.chosen)

    pred = np.empty(len(labels), dtype=object)
    for f in range(k):
        train, test = folds != f, folds == f
        m1 = fit_point(table.c60[train], y1[train], p1, "intruder", tol, max_iter)
        m2 = fit_point(table.e8[train & intr], labels[train & intr], p2, "human", tol, max_iter)
        pipe = TrainedPipeline(m1, m2)
        pred[test] = pipe.predict(table.c60[test], table.e8[test])
    pred = pred.astype(str)

    rows = {"Clutter": (["clutter"], ["clutter"]),
            "Intruder": (list(INTRUDER_CLASSES), list(INTRUDER_CLASSES)),
            "Human": (["human"], ["human"]),
            "Animal": (["animal"], ["animal"])}
    mins, avgs = _rates(labels, pred, folds, k, rows)
    overall = np.array([100.0 * np.mean(pred[folds == f] == labels[folds == f]) for f in range(k)])
    mins["Overall"], avgs["Overall"] = float(overall.min()), float(overall.mean())
    report = CvReport("pipeline", list(PIPELINE_CLASSES), list(rows) + ["Overall"], mins, avgs,
                      _confusions(labels, pred, folds, k, list(PIPELINE_CLASSES)),
                      [int((folds == f).sum()) for f in range(k)],
                      {"stage1": rep1.chosen, "stage2": rep2.chosen}, [p.to_dict() for p in grid], [],
                      int(seed), int(k), stages={"stage1": rep1.to_dict(), "stage2": rep2.to_dict()})
    final = TrainedPipeline(fit_point(table.c60, y1, p1, "intruder", tol, max_iter),
                            fit_point(table.e8[intr], labels[intr], p2, "human", tol, max_iter),
                            table.meta.get("config_hash"), int(seed))
    report.config_hash = table.meta.get("config_hash")
    return final, report


# --------------------------------------------------------------------------- text tables

_FEATURE_MARKS = {"e8": ("x", "", ""), "e8+rho": ("x", "x", ""), "c60": ("", "", "x")}


def render_feature_table(reports: Sequence[CvReport], title: str = "Intruder versus clutter") -> str:
    """Rows per feature set; minimum then average accuracy for clutter, intruder, total."""
    head1 = f"{'Features':<18}| {'Minimum Accuracy %':^26} | {'Average Accuracy %':^26}"
    head2 = (f"{'E8':<4}{'rho':<5}{'C60':<9}| " + " ".join(f"{c:>8}" for c in ("Clutter", "Intruder", "Total"))
             + " | " + " ".join(f"{c:>8}" for c in ("Clutter", "Intruder", "Total")))
    lines = [title, head1, head2, "-" * len(head2)]
    for r in reports:
        marks = _FEATURE_MARKS.get(r.feature_set, ("?", "?", "?"))
        cols = [c for c in ("clutter", "intruder", "Total") if c in r.minimum]
        lines.append(f"{marks[0]:<4}{marks[1]:<5}{marks[2]:<9}| " + " ".join(f"{r.minimum[c]:8.1f}" for c in cols)
                     + " | " + " ".join(f"{r.average[c]:8.1f}" for c in cols))
    return "\n".join(lines) + "\n"


def render_class_table(report: CvReport, title: str = "") -> str:
    """One row per class plus the overall row, with minimum and average accuracy."""
    title = title or f"Cross-validated accuracy ({report.feature_set}, {report.folds} folds, seed {report.seed})"
    head = f"{'':<10}| {'Minimum Accuracy %':>18} | {'Average Accuracy %':>18}"
    lines = [title, head, "-" * len(head)]
    for name in report.rows:
        lines.append(f"{name.capitalize() if name.islower() else name:<10}| "
                     f"{report.minimum[name]:18.1f} | {report.average[name]:18.1f}")
    lines.append(f"chosen: {json.dumps(report.chosen, sort_keys=True)}")
    return "\n".join(lines) + "\n"
