"""Deterministic random-forest classifier with two importance methods.

A forest is fully determined by (training data, config, seed): each
tree derives its own stream from the forest seed, bootstraps the
training rows, and grows greedily on Gini gain over a fresh random
feature subset per node. Ties in gain are broken toward the lower
feature index and lower threshold, so results are identical across
platforms and thread counts.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .data import Dataset
from .rng import mix_seed

MDI = "mdi"
OOB_PERMUTATION = "oob"
IMPORTANCE_METHODS = (MDI, OOB_PERMUTATION)

# Exact int64 split comparison needs n**5/16 < 2**63.
MAX_TRAIN_ROWS = 10_000


class ForestError(ValueError):
    pass


def gini_impurity(class_counts: tuple[int, int]) -> float:
    """Gini impurity of a two-class count pair, in [0, 0.5]."""
    c0, c1 = class_counts
    if c0 < 0 or c1 < 0:
        raise ForestError("class counts must be non-negative")
    n = c0 + c1
    if n == 0:
        raise ForestError("empty node has no impurity")
    p0 = c0 / n
    p1 = c1 / n
    return 1.0 - (p0 * p0 + p1 * p1)


@dataclass(frozen=True)
class ForestConfig:
    """Hyperparameters; defaults mirror the classic RF defaults
    (500 trees, sqrt(p) features per split, grow to purity)."""

    n_trees: int = 500
    mtry: Optional[int] = None  # None -> floor(sqrt(n_features))
    min_node_size: int = 1
    max_depth: Optional[int] = None  # None -> unlimited
    importance_method: str = OOB_PERMUTATION

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ForestError("n_trees must be >= 1")
        if self.min_node_size < 1:
            raise ForestError("min_node_size must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ForestError("mtry must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ForestError("max_depth must be >= 1")
        if self.importance_method not in IMPORTANCE_METHODS:
            raise ForestError(f"unknown importance method {self.importance_method!r}")

    def resolved_mtry(self, n_features: int) -> int:
        mtry = self.mtry if self.mtry is not None else int(np.sqrt(n_features))
        mtry = max(mtry, 1)
        if mtry > n_features:
            raise ForestError("mtry exceeds feature count")
        return mtry

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "mtry": self.mtry,
            "min_node_size": self.min_node_size,
            "max_depth": self.max_depth,
            "importance_method": self.importance_method,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestConfig":
        return cls(**d)


@dataclass(frozen=True)
class ImportanceVector:
    scores: np.ndarray  # float64, one per feature
    method: str

    def __post_init__(self) -> None:
        scores = np.ascontiguousarray(self.scores, dtype=np.float64)
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)
        if not np.isfinite(scores).all():
            raise ForestError("importance scores must be finite")


@dataclass(frozen=True)
class Forest:
    """Trained ensemble in padded per-tree node arrays.

    ``nav[t, i] = (split_feature, left, right, leaf_class)`` with
    feature == -1 at leaves and tree-local child ids; ``thresholds``
    holds the split values. Internal nodes route value <= threshold
    left. ``counts0/1`` carry the training class counts that reached
    each node; ``inbag`` counts each row's bootstrap occurrences per
    tree (0 = out of bag).
    """

    config: ForestConfig
    seed: int
    feature_names: tuple[str, ...]
    nav: np.ndarray  # int32 (n_trees, cap, 4)
    thresholds: np.ndarray  # float64 (n_trees, cap)
    counts0: np.ndarray  # int64 (n_trees, cap)
    counts1: np.ndarray  # int64 (n_trees, cap)
    n_nodes: np.ndarray  # int64 (n_trees,)
    inbag: Optional[np.ndarray]  # uint16 (n_trees, n_train); None if deserialized
    mdi_per_tree: Optional[np.ndarray]  # float64 (n_trees, p); None if deserialized

    @property
    def n_trees(self) -> int:
        return self.nav.shape[0]

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def total_nodes(self) -> int:
        return int(self.n_nodes.sum())

    @property
    def oob_indices(self) -> list[np.ndarray]:
        """Per-tree row indices absent from that tree's bootstrap."""
        if self.inbag is None:
            raise ForestError("deserialized forest has no bootstrap record")
        return [np.flatnonzero(self.inbag[t] == 0) for t in range(self.n_trees)]

    def tree_nodes(self, t: int) -> list[dict]:
        """Tree t as a list of node dicts (leaves carry class + counts)."""
        used = int(self.n_nodes[t])
        out = []
        for i in range(used):
            feature = int(self.nav[t, i, 0])
            if feature < 0:
                out.append(
                    {
                        "class": int(self.nav[t, i, 3]),
                        "class_counts": [int(self.counts0[t, i]), int(self.counts1[t, i])],
                    }
                )
            else:
                out.append(
                    {
                        "split_feature": feature,
                        "threshold": float.hex(float(self.thresholds[t, i])),
                        "left": int(self.nav[t, i, 1]),
                        "right": int(self.nav[t, i, 2]),
                    }
                )
        return out

    def to_json(self) -> str:
        doc = {
            "config": self.config.to_dict(),
            "seed": self.seed,
            "feature_names": list(self.feature_names),
            "trees": [self.tree_nodes(t) for t in range(self.n_trees)],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "Forest":
        doc = json.loads(text)
        trees = doc["trees"]
        n_trees = len(trees)
        cap = max(len(t) for t in trees)
        nav = np.full((n_trees, cap, 4), -1, dtype=np.int32)
        thresholds = np.zeros((n_trees, cap), dtype=np.float64)
        counts0 = np.zeros((n_trees, cap), dtype=np.int64)
        counts1 = np.zeros((n_trees, cap), dtype=np.int64)
        n_nodes = np.zeros(n_trees, dtype=np.int64)
        for t, nodes in enumerate(trees):
            n_nodes[t] = len(nodes)
            for i, node in enumerate(nodes):
                if "split_feature" in node:
                    nav[t, i, 0] = node["split_feature"]
                    nav[t, i, 1] = node["left"]
                    nav[t, i, 2] = node["right"]
                    thresholds[t, i] = float.fromhex(node["threshold"])
                else:
                    nav[t, i, 0] = -1
                    nav[t, i, 3] = node["class"]
                    counts0[t, i] = node["class_counts"][0]
                    counts1[t, i] = node["class_counts"][1]
        return cls(
            config=ForestConfig.from_dict(doc["config"]),
            seed=doc["seed"],
            feature_names=tuple(doc["feature_names"]),
            nav=nav,
            thresholds=thresholds,
            counts0=counts0,
            counts1=counts1,
            n_nodes=n_nodes,
            inbag=None,
            mdi_per_tree=None,
        )


_workspaces: dict[tuple, tuple] = {}


def _get_workspace(n_trees: int, n_rows: int, n_features: int, mtry: int, max_bins: int):
    """Reusable scratch arrays for the kernels, keyed by shape.

    Reuse is safe because every call fully overwrites what it reads and
    kernel calls are orchestrated from a single thread.
    """
    key = (n_trees, n_rows, n_features, mtry, max_bins)
    ws = _workspaces.get(key)
    if ws is None:
        cap = 2 * n_rows + 1
        ws = (
            np.empty((n_trees, n_rows), dtype=np.int32),  # bootstrap rows
            np.empty((n_trees, cap + 2, 7), dtype=np.int64),  # node stack
            np.empty((n_trees, n_features), dtype=np.int64),  # feature perm
            np.empty((n_trees, mtry * 2 * max_bins), dtype=np.int32),  # histograms
            np.empty((n_trees, n_rows), dtype=np.int64),  # sort keys
            np.empty((n_trees, n_rows), dtype=np.int64),  # oob row ids
            np.empty((n_trees, n_rows), dtype=np.int64),  # permutation scratch
            np.empty((n_trees, n_features), dtype=np.int32),  # changed features
            np.empty((n_trees, n_features), dtype=np.int8),  # changed classes
        )
        _workspaces.clear()  # keep at most one cached shape
        _workspaces[key] = ws
    return ws


def train_forest_with_holdout(
    train: Dataset,
    config: ForestConfig,
    seed: int,
    holdout_rows: Optional[np.ndarray] = None,
) -> tuple[Forest, np.ndarray]:
    """Grow a forest; deterministic given (train, config, seed).

    Per-tree predictions for ``holdout_rows`` are collected during
    training and returned as an (n_trees, n_holdout) int8 array.
    """
    n, p = train.features.shape
    if n > MAX_TRAIN_ROWS:
        raise ForestError(
            f"training sets beyond {MAX_TRAIN_ROWS} rows exceed the exact "
            "split-arithmetic range"
        )
    if len(np.unique(train.labels)) < 2:
        raise ForestError("degenerate single-class input")
    mtry = config.resolved_mtry(p)
    cc, bin_offsets, bin_values = train._encoded
    max_bins = int((bin_offsets[1:] - bin_offsets[:-1]).max())
    max_depth = config.max_depth if config.max_depth is not None else 1 << 30

    n_trees = config.n_trees
    cap = 2 * n + 1
    ws_rows, ws_stack, ws_perm, ws_hist, ws_keys, *_ = _get_workspace(
        n_trees, n, p, mtry, max_bins
    )

    nav = np.empty((n_trees, cap, 4), dtype=np.int32)
    thresholds = np.empty((n_trees, cap), dtype=np.float64)
    counts0 = np.empty((n_trees, cap), dtype=np.int64)
    counts1 = np.empty((n_trees, cap), dtype=np.int64)
    n_nodes = np.empty(n_trees, dtype=np.int64)
    mdi_per_tree = np.empty((n_trees, p), dtype=np.float64)
    inbag = np.empty((n_trees, n), dtype=np.uint16)

    if holdout_rows is None:
        holdout_X = np.empty((0, p), dtype=np.float64)
    else:
        holdout_X = np.ascontiguousarray(holdout_rows, dtype=np.float64)
    holdout_pred = np.empty((n_trees, holdout_X.shape[0]), dtype=np.int8)

    _kernels.train_forest_kernel(
        cc,
        np.ascontiguousarray(train.labels, dtype=np.int8),
        bin_offsets,
        bin_values,
        holdout_X,
        n_trees,
        mtry,
        config.min_node_size,
        max_depth,
        np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
        nav,
        thresholds,
        counts0,
        counts1,
        n_nodes,
        mdi_per_tree,
        inbag,
        holdout_pred,
        ws_rows,
        ws_stack,
        ws_perm,
        ws_hist,
        ws_keys,
    )

    forest = Forest(
        config=config,
        seed=int(seed),
        feature_names=train.feature_names,
        nav=nav,
        thresholds=thresholds,
        counts0=counts0,
        counts1=counts1,
        n_nodes=n_nodes,
        inbag=inbag,
        mdi_per_tree=mdi_per_tree,
    )
    return forest, holdout_pred


def train_forest(train: Dataset, config: ForestConfig, seed: int) -> Forest:
    """Grow a forest; deterministic given (train, config, seed)."""
    forest, _ = train_forest_with_holdout(train, config, seed, None)
    return forest


def predict(forest: Forest, rows: np.ndarray) -> np.ndarray:
    """Majority-vote class for each row (exact tie -> class 0)."""
    X = np.ascontiguousarray(rows, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != forest.n_features:
        raise ForestError(
            f"row length {X.shape[1]} does not match {forest.n_features} features"
        )
    out = np.empty(X.shape[0], dtype=np.int8)
    _kernels.predict_kernel(forest.nav, forest.thresholds, X, out)
    return int(out[0]) if single else out


def mdi_importance(forest: Forest) -> ImportanceVector:
    """Mean decrease in impurity, averaged over trees."""
    if forest.mdi_per_tree is None:
        raise ForestError("deserialized forest has no impurity record")
    scores = forest.mdi_per_tree.mean(axis=0)
    return ImportanceVector(scores=scores, method=MDI)


def oob_permutation_importance(
    forest: Forest, train: Dataset, seed: int
) -> ImportanceVector:
    """Mean over trees of (OOB accuracy - OOB accuracy with one column
    permuted within the tree's OOB rows). May be negative."""
    if forest.inbag is None:
        raise ForestError("deserialized forest has no bootstrap record")
    X = train.features
    n, p = X.shape
    if n != forest.inbag.shape[1] or p != forest.n_features:
        raise ForestError("dataset does not match the forest's training shape")
    covered = (forest.inbag == 0).any(axis=0)
    if not covered.all():
        warnings.warn(
            f"{int((~covered).sum())} rows are in-bag for every tree and are "
            "never evaluated",
            stacklevel=2,
        )
    mtry = forest.config.resolved_mtry(p)
    cc, bin_offsets, _ = train._encoded
    max_bins = int((bin_offsets[1:] - bin_offsets[:-1]).max())
    *_, ws_oob, ws_perm, ws_chg_f, ws_chg_cls = _get_workspace(
        forest.n_trees, n, p, mtry, max_bins
    )
    decreases = np.empty((forest.n_trees, p), dtype=np.float64)
    oob_counts = np.empty(forest.n_trees, dtype=np.int64)
    _kernels.oob_importance_kernel(
        forest.nav,
        forest.thresholds,
        cc,
        np.ascontiguousarray(train.labels, dtype=np.int8),
        forest.inbag,
        np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
        decreases,
        oob_counts,
        ws_oob,
        ws_perm,
        ws_chg_f,
        ws_chg_cls,
    )
    valid = oob_counts > 0
    if not valid.any():
        raise ForestError("no tree has out-of-bag rows")
    scores = decreases[valid].mean(axis=0)
    return ImportanceVector(scores=scores, method=OOB_PERMUTATION)


def importance_seed(forest_seed: int) -> int:
    """Permutation-importance stream seed derived from a forest's seed."""
    return mix_seed(forest_seed, 0, 1)


def compute_importance(
    forest: Forest, train: Dataset, method: Optional[str] = None
) -> ImportanceVector:
    """Importance under the configured (or given) method.

    The permutation seed is derived from the forest seed, so a forest's
    importance is as reproducible as the forest itself.
    """
    method = method or forest.config.importance_method
    if method == MDI:
        return mdi_importance(forest)
    if method == OOB_PERMUTATION:
        return oob_permutation_importance(forest, train, importance_seed(forest.seed))
    raise ForestError(f"unknown importance method {method!r}")


def oob_accuracy(forest: Forest, train: Dataset) -> float:
    """Accuracy of per-row majority votes over the trees where the row
    is out-of-bag; rows never out-of-bag are excluded."""
    if forest.inbag is None:
        raise ForestError("deserialized forest has no bootstrap record")
    n = train.n_rows
    cc, _, _ = train._encoded
    votes = np.zeros((n, 2), dtype=np.int64)
    _kernels.oob_votes_kernel(forest.nav, forest.thresholds, cc, forest.inbag, votes)
    evaluated = votes.sum(axis=1) > 0
    if not evaluated.any():
        raise ForestError("no row is out-of-bag for any tree")
    pred = (votes[:, 1] > votes[:, 0]).astype(np.int8)  # tie -> class 0
    return float((pred[evaluated] == train.labels[evaluated]).mean())


def training_accuracy(forest: Forest, train: Dataset) -> float:
    """Forest accuracy on the union of its bootstrap rows."""
    if forest.inbag is None:
        raise ForestError("deserialized forest has no bootstrap record")
    used = (forest.inbag > 0).any(axis=0)
    pred = predict(forest, train.features[used])
    return float((pred == train.labels[used]).mean())


class TrialRunner:
    """Repeated seeded train/score/importance trials on one fixed fold.

    Owns every result and scratch array, so running thousands of trials
    allocates nothing per call. Equivalent to train_forest_with_holdout
    followed by compute_importance with seed importance_seed(trial_seed)
    (an equality the test suite checks), but in one kernel call.
    """

    def __init__(self, train: Dataset, holdout: Dataset, config: ForestConfig):
        n, p = train.features.shape
        if n > MAX_TRAIN_ROWS:
            raise ForestError(
                f"training sets beyond {MAX_TRAIN_ROWS} rows exceed the exact "
                "split-arithmetic range"
            )
        if len(np.unique(train.labels)) < 2:
            raise ForestError("degenerate single-class input")
        self.config = config
        self.n_features = p
        self._mtry = config.resolved_mtry(p)
        self._cc, self._bin_offsets, self._bin_values = train._encoded
        self._max_depth = config.max_depth if config.max_depth is not None else 1 << 30
        self._y = np.ascontiguousarray(train.labels, dtype=np.int8)
        self._holdout_X = np.ascontiguousarray(holdout.features, dtype=np.float64)
        self._holdout_y = np.ascontiguousarray(holdout.labels, dtype=np.int8)
        self._want_oob = config.importance_method == OOB_PERMUTATION

        n_trees = config.n_trees
        cap = 2 * n + 1
        max_bins = int((self._bin_offsets[1:] - self._bin_offsets[:-1]).max())
        self._ws = _get_workspace(n_trees, n, p, self._mtry, max_bins)
        self._nav = np.empty((n_trees, cap, 4), dtype=np.int32)
        self._thr = np.empty((n_trees, cap), dtype=np.float64)
        self._c0 = np.empty((n_trees, cap), dtype=np.int64)
        self._c1 = np.empty((n_trees, cap), dtype=np.int64)
        self._n_nodes = np.empty(n_trees, dtype=np.int64)
        self._mdi = np.empty((n_trees, p), dtype=np.float64)
        self._inbag = np.empty((n_trees, n), dtype=np.uint16)
        self._holdout_pred = np.empty((n_trees, len(holdout.labels)), dtype=np.int8)
        self._decreases = np.empty((n_trees, p), dtype=np.float64)
        self._oob_counts = np.empty(n_trees, dtype=np.int64)
        self._flag = np.empty(1, dtype=np.int8)

    def run(self, seed: int) -> tuple[bool, np.ndarray, Optional[np.ndarray]]:
        """One trial. Returns (correct, holdout classes, importance scores).

        Importance is computed only for correct trials (None otherwise).
        """
        _kernels.trial_kernel(
            self._cc,
            self._y,
            self._bin_offsets,
            self._bin_values,
            self._holdout_X,
            self._holdout_y,
            self.config.n_trees,
            self._mtry,
            self.config.min_node_size,
            self._max_depth,
            np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
            np.uint64(importance_seed(seed)),
            self._want_oob,
            self._nav,
            self._thr,
            self._c0,
            self._c1,
            self._n_nodes,
            self._mdi,
            self._inbag,
            self._holdout_pred,
            self._decreases,
            self._oob_counts,
            *self._ws,
            self._flag,
        )
        correct = bool(self._flag[0])
        holdout_classes = self._holdout_pred[0, :].copy()
        if not correct:
            return correct, holdout_classes, None
        if self._want_oob:
            valid = self._oob_counts > 0
            if not valid.any():
                raise ForestError("no tree has out-of-bag rows")
            scores = self._decreases[valid].mean(axis=0)
        else:
            scores = self._mdi.mean(axis=0)
        return correct, holdout_classes, scores
