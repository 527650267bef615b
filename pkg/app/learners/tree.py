# app/learners/tree.py

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAF = -1
TIE_TOLERANCE = 1e-12


@dataclass
class Tree:
    """
    A binary decision tree stored as parallel node arrays (preorder).

    Rows go left when x[feature] <= threshold.

    Attributes:
        feature (np.ndarray): Split feature per node, LEAF for leaves.
        threshold (np.ndarray): Split threshold per node.
        left (np.ndarray): Left child per node.
        right (np.ndarray): Right child per node.
        value (np.ndarray): Leaf output per node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == LEAF))

    def depth(self, node: int = 0) -> int:
        """Return the depth of the subtree under node (a single leaf has depth 0)."""
        if self.feature[node] == LEAF:
            return 0
        return 1 + max(self.depth(self.left[node]), self.depth(self.right[node]))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Return the leaf index reached by every row."""
        node = np.zeros(X.shape[0], dtype=int)
        while True:
            feature = self.feature[node]
            active = np.flatnonzero(feature != LEAF)
            if active.size == 0:
                return node
            current = node[active]
            go_left = X[active, feature[active]] <= self.threshold[current]
            node[active] = np.where(go_left, self.left[current], self.right[current])

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Return the leaf value of every row."""
        return self.value[self.apply(np.asarray(X, dtype=float))]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Tree":
        return cls(
            feature=np.asarray(data["feature"], dtype=int),
            threshold=np.asarray(data["threshold"], dtype=float),
            left=np.asarray(data["left"], dtype=int),
            right=np.asarray(data["right"], dtype=int),
            value=np.asarray(data["value"], dtype=float),
        )


class _TreeBuilder:
    def __init__(self) -> None:
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def add_leaf(self, value: float) -> int:
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(float(value))
        return len(self.feature) - 1

    def make_split(self, node: int, feature: int, threshold: float, left: int, right: int) -> None:
        self.feature[node] = feature
        self.threshold[node] = threshold
        self.left[node] = left
        self.right[node] = right

    def build(self) -> Tree:
        return Tree(
            feature=np.array(self.feature, dtype=int),
            threshold=np.array(self.threshold, dtype=float),
            left=np.array(self.left, dtype=int),
            right=np.array(self.right, dtype=int),
            value=np.array(self.value, dtype=float),
        )


def _sorted_column(X: np.ndarray, rows: np.ndarray, feature: int):
    values = X[rows, feature]
    order = np.argsort(values, kind="stable")
    ordered = values[order]
    distinct = ordered[1:] > ordered[:-1]
    midpoints = (ordered[1:] + ordered[:-1]) / 2.0
    return order, distinct, midpoints


def _pick(scores: np.ndarray, valid: np.ndarray, best: float, maximize: bool):
    """Return (score, position) of the first best valid candidate, or None."""
    if not valid.any():
        return None
    candidates = np.where(valid, scores, -np.inf if maximize else np.inf)
    extreme = candidates.max() if maximize else candidates.min()
    if maximize:
        if extreme <= best + TIE_TOLERANCE:
            return None
        position = int(np.flatnonzero(valid & (candidates >= extreme - TIE_TOLERANCE))[0])
    else:
        if extreme >= best - TIE_TOLERANCE:
            return None
        position = int(np.flatnonzero(valid & (candidates <= extreme + TIE_TOLERANCE))[0])
    return float(scores[position]), position


def best_gini_split(
    X: np.ndarray, y: np.ndarray, rows: np.ndarray, features, min_leaf: int = 1
) -> tuple[int, float] | None:
    """
    Find the split of rows with the lowest weighted Gini impurity.

    Zero-gain splits are allowed. Ties go to the lowest feature index, then
    the lowest threshold; thresholds are midpoints of consecutive distinct values.

    Args:
        X (np.ndarray): (n, d) training rows.
        y (np.ndarray): 0/1 labels.
        rows (np.ndarray): Rows reaching the node.
        features: Candidate feature indices, ascending.
        min_leaf (int): Minimum rows per child.

    Returns:
        tuple[int, float] | None: (feature, threshold), or None if no valid split.
    """
    n = rows.shape[0]
    left_n = np.arange(1, n)
    right_n = n - left_n
    size_ok = (left_n >= min_leaf) & (right_n >= min_leaf)
    labels = y[rows]
    total_pos = labels.sum()

    best_score, best = np.inf, None
    for feature in features:
        order, distinct, midpoints = _sorted_column(X, rows, feature)
        left_pos = np.cumsum(labels[order])[:-1]
        p_left = left_pos / left_n
        p_right = (total_pos - left_pos) / right_n
        weighted = (left_n * 2 * p_left * (1 - p_left) + right_n * 2 * p_right * (1 - p_right)) / n
        picked = _pick(weighted, distinct & size_ok, best_score, maximize=False)
        if picked is not None:
            best_score, position = picked
            best = (int(feature), float(midpoints[position]))
    return best


def build_classification_tree(
    X: np.ndarray,
    y: np.ndarray,
    max_depth: int,
    min_leaf: int = 1,
    n_split_features: int | None = None,
    rng: np.random.Generator | None = None,
) -> Tree:
    """
    Grow a CART classification tree with greedy Gini splits.

    Leaves hold the fraction of positive rows. Nodes stop at max_depth, when
    pure, or when no split leaves min_leaf rows on both sides.

    Args:
        X (np.ndarray): (n, d) training rows.
        y (np.ndarray): 0/1 labels.
        max_depth (int): Maximum depth (>= 1).
        min_leaf (int): Minimum rows per leaf.
        n_split_features (int | None): Features drawn per node (all if None).
        rng (np.random.Generator | None): Draws the per-node feature subsets.

    Returns:
        Tree: The fitted tree.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n_features = X.shape[1]
    m = n_features if n_split_features is None else min(n_split_features, n_features)
    builder = _TreeBuilder()

    def grow(rows: np.ndarray, depth: int) -> int:
        positive = y[rows].mean()
        node = builder.add_leaf(positive)
        if depth >= max_depth or positive in (0.0, 1.0) or rows.shape[0] < 2 * min_leaf:
            return node
        if m < n_features:
            features = np.sort(rng.choice(n_features, size=m, replace=False))
        else:
            features = range(n_features)
        split = best_gini_split(X, y, rows, features, min_leaf)
        if split is None:
            return node
        feature, threshold = split
        go_left = X[rows, feature] <= threshold
        left = grow(rows[go_left], depth + 1)
        right = grow(rows[~go_left], depth + 1)
        builder.make_split(node, feature, threshold, left, right)
        return node

    grow(np.arange(X.shape[0]), 0)
    return builder.build()


def soft_threshold(value: np.ndarray | float, alpha: float) -> np.ndarray | float:
    """Shrink towards zero by alpha (L1 proximal operator)."""
    return np.sign(value) * np.maximum(np.abs(value) - alpha, 0.0)


def leaf_weight(G: float, H: float, reg_alpha: float, reg_lambda: float) -> float:
    """Optimal leaf weight -T(G, alpha) / (H + lambda); 0 when the denominator vanishes."""
    denominator = H + reg_lambda
    if denominator <= 0.0:
        return 0.0
    return float(-soft_threshold(G, reg_alpha) / denominator)


def _structure_score(G, H, reg_alpha: float, reg_lambda: float):
    denominator = H + reg_lambda
    with np.errstate(divide="ignore", invalid="ignore"):
        score = soft_threshold(G, reg_alpha) ** 2 / denominator
    return np.where(denominator > 0, score, 0.0)


def build_gradient_tree(
    X: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    max_depth: int,
    reg_alpha: float = 0.0,
    reg_lambda: float = 1.0,
    gamma: float = 0.0,
    min_child_weight: float = 1.0,
) -> Tree:
    """
    Grow a regression tree on first/second-order gradient statistics.

    A split is kept when its regularised gain is positive and both children
    carry at least min_child_weight hessian. Depth 0 gives a single leaf.

    Args:
        X (np.ndarray): (n, d) training rows.
        g (np.ndarray): First-order gradients.
        h (np.ndarray): Second-order gradients.
        max_depth (int): Maximum depth (>= 0).
        reg_alpha (float): L1 leaf penalty.
        reg_lambda (float): L2 leaf penalty.
        gamma (float): Minimum split gain.
        min_child_weight (float): Minimum hessian sum per child.

    Returns:
        Tree: Leaves hold unscaled optimal weights.
    """
    X = np.asarray(X, dtype=float)
    builder = _TreeBuilder()

    def grow(rows: np.ndarray, depth: int) -> int:
        G, H = g[rows].sum(), h[rows].sum()
        node = builder.add_leaf(leaf_weight(G, H, reg_alpha, reg_lambda))
        if depth >= max_depth or rows.shape[0] < 2:
            return node
        parent = float(_structure_score(G, H, reg_alpha, reg_lambda))
        best_gain, best = 0.0, None
        for feature in range(X.shape[1]):
            order, distinct, midpoints = _sorted_column(X, rows, feature)
            G_left = np.cumsum(g[rows][order])[:-1]
            H_left = np.cumsum(h[rows][order])[:-1]
            G_right, H_right = G - G_left, H - H_left
            gain = 0.5 * (
                _structure_score(G_left, H_left, reg_alpha, reg_lambda)
                + _structure_score(G_right, H_right, reg_alpha, reg_lambda)
                - parent
            ) - gamma
            valid = distinct & (H_left >= min_child_weight) & (H_right >= min_child_weight)
            picked = _pick(gain, valid, best_gain, maximize=True)
            if picked is not None:
                best_gain, position = picked
                best = (feature, float(midpoints[position]))
        if best is None:
            return node
        feature, threshold = best
        go_left = X[rows, feature] <= threshold
        left = grow(rows[go_left], depth + 1)
        right = grow(rows[~go_left], depth + 1)
        builder.make_split(node, feature, threshold, left, right)
        return node

    grow(np.arange(X.shape[0]), 0)
    return builder.build()
