"""Regression trees and tree ensembles (gradient boosting, random forest, extra trees).

One boosted implementation with row subsampling (``subsample``,
``subsample_freq``) and three column-sampling levels (per tree, per depth
level, per node) spans the GB, LightGBM-style and XGBoost-style settings.
Loss is squared error with mean-valued leaves.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import DailySeries
from .emd import Decomposition
from .errors import EmptyInput, ShapeError
from .reframe import SplitSpec, SupervisedFrame, make_frame, train_size, ts_cv_folds

log = logging.getLogger(__name__)

EXHAUSTIVE = "exhaustive"
RANDOM = "random"
GB, RF, ETR = "GB", "RF", "ETR"


@dataclass(frozen=True)
class TreeSpec:
    max_depth: int = 3
    min_samples_leaf: int = 1
    colsample_bytree: float = 1.0
    colsample_bylevel: float = 1.0
    colsample_bynode: float = 1.0
    split_mode: str = EXHAUSTIVE

    def __post_init__(self):
        if self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValueError("max_depth and min_samples_leaf must be >= 1")
        for name in ("colsample_bytree", "colsample_bylevel", "colsample_bynode"):
            frac = getattr(self, name)
            if not 0 < frac <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {frac}")
        if self.split_mode not in (EXHAUSTIVE, RANDOM):
            raise ValueError(f"unknown split mode {self.split_mode!r}")


@dataclass(frozen=True)
class EnsembleSpec:
    method: str = GB
    n_estimators: int = 100
    learning_rate: float = 0.1
    subsample: float = 1.0
    subsample_freq: int = 0
    tree: TreeSpec = field(default_factory=TreeSpec)
    bootstrap: bool | None = None  # None: on for RF, off otherwise
    seed: int = 0

    def __post_init__(self):
        if self.method not in (GB, RF, ETR):
            raise ValueError(f"unknown method {self.method!r}")
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must lie in (0, 1]")

    @property
    def uses_bootstrap(self) -> bool:
        return self.method == RF if self.bootstrap is None else self.bootstrap

    @property
    def effective_tree(self) -> TreeSpec:
        return replace(self.tree, split_mode=RANDOM) if self.method == ETR else self.tree

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleSpec":
        d = dict(d)
        d["tree"] = TreeSpec(**d.get("tree", {}))
        return cls(**d)


# Tuned settings for window size 7, by method family.
WINDOW7_PRESETS = {
    "GB": EnsembleSpec(GB, 1000, subsample=0.8, tree=TreeSpec(max_depth=4)),
    "LGB": EnsembleSpec(GB, 250, subsample=0.8, subsample_freq=5, tree=TreeSpec(max_depth=8, colsample_bytree=0.8)),
    "XGB": EnsembleSpec(
        GB, 1000, subsample=1.0,
        tree=TreeSpec(max_depth=2, colsample_bytree=0.8, colsample_bylevel=0.8, colsample_bynode=0.8),
    ),
    "RF": EnsembleSpec(RF, 500, tree=TreeSpec(max_depth=6)),
    "ETR": EnsembleSpec(ETR, 500, tree=TreeSpec(max_depth=6)),
}


@dataclass(frozen=True)
class RegressionTree:
    """Array-encoded binary tree; ``feature[i] == -1`` marks a leaf.

    Samples with ``x[feature] <= threshold`` go left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):  # children always follow their parent
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            active = f >= 0
            if not active.any():
                return self.value[node]
            r = rows[active]
            n = node[active]
            go_left = X[r, f[active]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(
            np.array(d["feature"], dtype=np.int64),
            np.array(d["threshold"], dtype=float),
            np.array(d["left"], dtype=np.int64),
            np.array(d["right"], dtype=np.int64),
            np.array(d["value"], dtype=float),
        )


def _sample_columns(cols: np.ndarray, frac: float, rng) -> np.ndarray:
    if frac >= 1.0 or len(cols) <= 1:
        return cols
    k = max(1, int(frac * len(cols)))
    return np.sort(rng.choice(cols, size=k, replace=False))


def _pick(gain: np.ndarray, tol: float) -> int:
    """First index (row-major) whose gain is within ``tol`` of the best."""
    best = gain.max()
    return int(np.flatnonzero(gain >= best - tol)[0])


def _best_exhaustive(X, y, feats, msl, tol):
    """Best (feature, threshold, gain) among midpoints of sorted unique values."""
    m = len(y)
    xs = np.ascontiguousarray(X[:, feats].T)  # one row per candidate feature
    order = np.argsort(xs, axis=1)  # tie order does not affect gains at valid cuts
    xs = np.take_along_axis(xs, order, axis=1)
    cs = np.cumsum(y[order], axis=1)[:, :-1]
    tot = y.sum()
    k = np.arange(1, m, dtype=float)
    gain = cs * cs / k + (tot - cs) ** 2 / (m - k) - tot * tot / m
    valid = (xs[:, 1:] > xs[:, :-1]) & (k >= msl) & (m - k >= msl)
    if not valid.any():
        return None
    gain = np.where(valid, gain, -np.inf)
    flat = _pick(gain.ravel(), tol)  # lowest feature first, then lowest threshold
    j, pos = divmod(flat, m - 1)
    lo, hi = xs[j, pos], xs[j, pos + 1]
    thr = 0.5 * (lo + hi)
    if not lo <= thr < hi:
        thr = lo
    return feats[j], float(thr), float(gain[j, pos])


def _best_random(X, y, feats, msl, tol, rng):
    """Extra-trees split: one uniform threshold per candidate feature."""
    xs = X[:, feats]
    lo, hi = xs.min(axis=0), xs.max(axis=0)
    thr = lo + rng.random(len(feats)) * (hi - lo)
    left = xs <= thr
    nl = left.sum(axis=0).astype(float)
    m = len(y)
    nr = m - nl
    sl = y @ left
    tot = y.sum()
    valid = (hi > lo) & (nl >= msl) & (nr >= msl)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = sl * sl / nl + (tot - sl) ** 2 / nr - tot * tot / m
    gain = np.where(valid, gain, -np.inf)
    j = _pick(gain, tol)
    return feats[j], float(thr[j]), float(gain[j])


def fit_tree(X, y, spec: TreeSpec = TreeSpec(), rng=None) -> RegressionTree:
    """Greedy squared-error regression tree, grown level by level."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ShapeError(f"X {X.shape} and y {y.shape} do not align")
    if len(y) == 0:
        raise EmptyInput("no rows to fit")
    rng = np.random.default_rng(0) if rng is None else rng
    n, p = X.shape
    tree_cols = _sample_columns(np.arange(p), spec.colsample_bytree, rng)
    exhaustive = spec.split_mode == EXHAUSTIVE
    scale = float(np.sum((y - y.mean()) ** 2)) + float(np.sum(y * y)) * 1e-3

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        return len(feature) - 1

    level = [(new_node(np.arange(n)), np.arange(n))]
    for depth in range(spec.max_depth):
        if not level:
            break
        level_cols = _sample_columns(tree_cols, spec.colsample_bylevel, rng)
        nxt = []
        for node, idx in level:
            m = len(idx)
            if m < 2 * spec.min_samples_leaf:
                continue
            yi = y[idx]
            if np.all(yi == yi[0]):
                continue
            feats = _sample_columns(level_cols, spec.colsample_bynode, rng)
            tol = 1e-12 * scale
            if exhaustive:
                best = _best_exhaustive(X[idx], yi, feats, spec.min_samples_leaf, tol)
            else:
                best = _best_random(X[idx], yi, feats, spec.min_samples_leaf, tol, rng)
            if best is None or best[2] <= tol:
                continue
            f, thr, _ = best
            go_left = X[idx, f] <= thr
            li, ri = idx[go_left], idx[~go_left]
            feature[node] = int(f)
            threshold[node] = thr
            left[node] = new_node(li)
            right[node] = new_node(ri)
            nxt += [(left[node], li), (right[node], ri)]
        level = nxt

    return RegressionTree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=float),
    )


@dataclass(frozen=True)
class FittedEnsemble:
    trees: list[RegressionTree]
    base_prediction: float
    spec: EnsembleSpec
    n_features: int

    def predict(self, X) -> np.ndarray:
        return predict(self, X)

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": "sohcast.ensemble/1",
                "spec": self.spec.to_dict(),
                "base_prediction": self.base_prediction,
                "n_features": self.n_features,
                "trees": [t.to_dict() for t in self.trees],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "FittedEnsemble":
        d = json.loads(text)
        return cls(
            [RegressionTree.from_dict(t) for t in d["trees"]],
            float(d["base_prediction"]),
            EnsembleSpec.from_dict(d["spec"]),
            int(d["n_features"]),
        )


def fit(X, y, spec: EnsembleSpec = EnsembleSpec()) -> FittedEnsemble:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if len(y) == 0:
        raise EmptyInput("no rows to fit")
    if X.ndim != 2 or len(X) != len(y):
        raise ShapeError(f"X {X.shape} and y {y.shape} do not align")
    rng = np.random.default_rng(spec.seed)
    n = len(y)
    tspec = spec.effective_tree
    base = float(y.mean())
    trees = []
    if spec.method == GB:
        F = np.full(n, base)
        rows = np.arange(n)
        n_sub = max(1, int(spec.subsample * n))
        for m in range(spec.n_estimators):
            if spec.subsample < 1 and (spec.subsample_freq <= 0 or m % spec.subsample_freq == 0):
                rows = np.sort(rng.choice(n, size=n_sub, replace=False))
            tree = fit_tree(X[rows], (y - F)[rows], tspec, rng)
            F = F + spec.learning_rate * tree.predict(X)
            trees.append(tree)
    else:
        for _ in range(spec.n_estimators):
            rows = rng.integers(0, n, size=n) if spec.uses_bootstrap else np.arange(n)
            trees.append(fit_tree(X[rows], y[rows], tspec, rng))
    return FittedEnsemble(trees, base, spec, X.shape[1])


def predict(model: FittedEnsemble, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ShapeError(f"expected {model.n_features} columns, got shape {X.shape}")
    if model.spec.method == GB:
        out = np.full(len(X), model.base_prediction)
        for t in model.trees:
            out += model.spec.learning_rate * t.predict(X)
        return out
    if not model.trees:
        return np.full(len(X), model.base_prediction)
    return np.mean([t.predict(X) for t in model.trees], axis=0)


def fit_frame(frame: SupervisedFrame, spec: EnsembleSpec, rows=None) -> list[FittedEnsemble]:
    """One model per horizon step."""
    X = frame.X if rows is None else frame.X[rows]
    Y = frame.y if rows is None else frame.y[rows]
    return [fit(X, Y[:, h], spec) for h in range(frame.horizon)]


def predict_frame(models: Sequence[FittedEnsemble], X) -> np.ndarray:
    return np.column_stack([predict(m, X) for m in models])


def cv_mae(frame: SupervisedFrame, spec: EnsembleSpec, folds: int) -> list[float]:
    out = []
    for tr, va in ts_cv_folds(len(frame), folds):
        pred = predict_frame(fit_frame(frame, spec, tr), frame.X[va])
        out.append(float(np.mean(np.abs(pred - frame.y[va]))))
    return out


def grid_search(frame: SupervisedFrame, grid: Sequence[EnsembleSpec], folds: int = 10) -> tuple[EnsembleSpec, list[dict]]:
    """Pick the spec with the lowest mean CV MAE.

    Ties go to fewer estimators, then shallower trees. The returned table has
    one row per spec, in grid order.
    """
    if not grid:
        raise ValueError("empty grid")
    table = []
    for i, spec in enumerate(grid):
        maes = cv_mae(frame, spec, folds)
        table.append(
            {
                "index": i,
                "method": spec.method,
                "n_estimators": spec.n_estimators,
                "max_depth": spec.tree.max_depth,
                "learning_rate": spec.learning_rate,
                "subsample": spec.subsample,
                "fold_mae": maes,
                "mean_mae": float(np.mean(maes)),
            }
        )
    best = min(table, key=lambda r: (r["mean_mae"], r["n_estimators"], r["max_depth"], r["index"]))
    return grid[best["index"]], table


def _component_frame(component: np.ndarray, series: DailySeries, basic: Sequence[str], past: int) -> SupervisedFrame:
    """Frame predicting the one-step change of a component from its past changes."""
    step = np.diff(component, prepend=component[0])
    chans = {"step": step, **{b: series[b] for b in basic}}
    s = DailySeries(series.dates, chans)
    return make_frame(s, ["step", *basic], "step", past, 1)


def fit_imf_predictors(
    series: DailySeries,
    d: Decomposition,
    grid: Sequence[EnsembleSpec],
    *,
    past: int = 6,
    split: SplitSpec = SplitSpec(),
    basic: Sequence[str] = (),
) -> DailySeries:
    """Append out-of-sample forecasts of every IMF and the residue as channels.

    Each component model forecasts the next change of the component and adds
    it to the last observed value, so linear trends extrapolate. Models are
    tuned on the training prefix only. Training rows carry out-of-fold CV
    forecasts (persistence for the first CV block and the warm-up); test rows
    carry forecasts from the model fitted on the whole training prefix.
    """
    n = len(series)
    if d.source_len != n:
        raise ShapeError(f"decomposition length {d.source_len} != series length {n}")
    out = series
    components = [(f"imf_{k + 1}_pred", imf) for k, imf in enumerate(d.imfs)]
    components.append(("residue_pred", d.residue))
    for name, comp in components:
        comp = np.asarray(comp, dtype=float)
        frame = _component_frame(comp, series, basic, past)
        k = train_size(len(frame), split.train_fraction)
        train = frame.take(slice(0, k))
        folds = min(split.folds, k - 1)
        step_pred = np.zeros(len(frame))  # persistence unless overwritten
        if folds >= 2:
            best, _ = grid_search(train, grid, folds)
            for tr, va in ts_cv_folds(k, folds):
                step_pred[va] = predict(fit(train.X[tr], train.y[tr, 0], best), train.X[va])
            model = fit(train.X, train.y[:, 0], best)
            if k < len(frame):
                step_pred[k:] = predict(model, frame.X[k:])
        forecast = np.empty(n)
        forecast[0] = comp[0]
        forecast[1:] = comp[:-1]
        forecast[past:] = comp[past - 1 : -1] + step_pred
        out = out.with_channel(name, forecast)
    return out
