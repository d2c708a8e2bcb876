"""Classification trees for scenario discovery.

Splits minimise the weighted misclassification count of the two children.
That criterion is flat whenever neither child flips its majority label,
which is the common case early in a tree, so equal-error candidates are
ranked by Gini impurity before the ``(dimension, threshold)`` order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .boxes import Box, BoxStats, LabeledSamples, box_stats
from .experiment import UncertaintySpace

__all__ = ["CartConfig", "TreeNode", "grow", "prune", "leaves", "leaves_to_boxes",
           "misclassification", "tree_to_dict", "tree_from_dict", "n_leaves"]


@dataclass(frozen=True)
class CartConfig:
    min_split: int = 20
    min_leaf: int = 10
    max_depth: int = 12

    def __post_init__(self):
        if self.min_split < 1 or self.min_leaf < 1 or self.max_depth < 1:
            raise ValueError("min_split, min_leaf and max_depth must be positive")
        if self.min_leaf > self.min_split:
            raise ValueError("min_leaf must be <= min_split")


@dataclass
class TreeNode:
    n: int
    n_vulnerable: int
    split_dim: int | None = None
    split_value: float | None = None
    left: TreeNode | None = None
    right: TreeNode | None = None
    leaf_label: bool | None = None
    leaf_stats: BoxStats | None = None

    @property
    def is_leaf(self) -> bool:
        return self.split_dim is None

    @property
    def majority(self) -> bool:
        # ties go to non-vulnerable
        return self.n_vulnerable * 2 > self.n

    @property
    def errors(self) -> int:
        return min(self.n_vulnerable, self.n - self.n_vulnerable)


def _leaf(labels: np.ndarray, stats: BoxStats | None = None) -> TreeNode:
    node = TreeNode(n=len(labels), n_vulnerable=int(labels.sum()))
    node.leaf_label = node.majority
    node.leaf_stats = stats
    return node


def _best_split(x: np.ndarray, y: np.ndarray, min_leaf: int):
    """Best ``(error, gini, dim, threshold)`` over all dims, or None."""
    n, k = x.shape
    best = None
    for d in range(k):
        order = np.argsort(x[:, d], kind="stable")
        xs, ys = x[order, d], y[order].astype(np.int64)
        left_v = np.cumsum(ys)[:-1]
        n_left = np.arange(1, n)
        total_v = int(ys.sum())
        right_v = total_v - left_v
        n_right = n - n_left
        valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        err = (np.minimum(left_v, n_left - left_v) + np.minimum(right_v, n_right - right_v))
        pl, pr = left_v / n_left, right_v / n_right
        gini = n_left * 2 * pl * (1 - pl) + n_right * 2 * pr * (1 - pr)
        cand = np.flatnonzero(valid)
        # lexsort: last key is primary
        pick = cand[np.lexsort((cand, np.round(gini[cand], 9), err[cand]))[0]]
        thr = 0.5 * (xs[pick] + xs[pick + 1])
        key = (int(err[pick]), round(float(gini[pick]), 9), d, thr)
        if best is None or key < best:
            best = key
    return best


def grow(data: LabeledSamples, cfg: CartConfig = CartConfig()) -> TreeNode:
    if len(data) == 0:
        raise ValueError("cannot grow a tree on empty data")

    def build(idx: np.ndarray, depth: int) -> TreeNode:
        y = data.labels[idx]
        n_v = int(y.sum())
        if n_v == 0 or n_v == len(idx) or len(idx) < cfg.min_split or depth >= cfg.max_depth:
            return _leaf(y)
        split = _best_split(data.points[idx], y, cfg.min_leaf)
        if split is None:
            return _leaf(y)
        _, _, d, thr = split
        go_left = data.points[idx, d] <= thr
        node = TreeNode(n=len(idx), n_vulnerable=n_v, split_dim=d, split_value=float(thr))
        node.left = build(idx[go_left], depth + 1)
        node.right = build(idx[~go_left], depth + 1)
        return node

    return build(np.arange(len(data)), 0)


def misclassification(tree: TreeNode) -> int:
    if tree.is_leaf:
        return tree.errors
    return misclassification(tree.left) + misclassification(tree.right)


def n_leaves(tree: TreeNode) -> int:
    return 1 if tree.is_leaf else n_leaves(tree.left) + n_leaves(tree.right)


def prune(tree: TreeNode, cfg: CartConfig | None = None) -> TreeNode:
    """Collapse sibling leaves whose merge keeps the misclassification count.

    Works bottom-up, so collapses cascade until no pair qualifies. Returns a
    new tree; the input is not modified.
    """

    def walk(node: TreeNode) -> TreeNode:
        if node.is_leaf:
            return TreeNode(node.n, node.n_vulnerable, leaf_label=node.leaf_label, leaf_stats=node.leaf_stats)
        left, right = walk(node.left), walk(node.right)
        if left.is_leaf and right.is_leaf and node.errors <= left.errors + right.errors:
            merged = TreeNode(node.n, node.n_vulnerable)
            merged.leaf_label = merged.majority
            return merged
        return TreeNode(node.n, node.n_vulnerable, node.split_dim, node.split_value, left, right)

    return walk(tree)


def leaves(tree: TreeNode, space: UncertaintySpace) -> list[tuple[TreeNode, Box]]:
    """Every leaf with the box of its root-to-leaf constraints."""
    out = []

    def walk(node: TreeNode, lows: np.ndarray, highs: np.ndarray):
        if node.is_leaf:
            limits = {d: (lows[d], highs[d]) for d in range(space.k)
                      if lows[d] > space.dims[d].low or highs[d] < space.dims[d].high}
            out.append((node, Box(limits)))
            return
        d, thr = node.split_dim, node.split_value
        lh = highs.copy()
        lh[d] = min(lh[d], thr)
        walk(node.left, lows, lh)
        rl = lows.copy()
        rl[d] = max(rl[d], thr)
        walk(node.right, rl, highs)

    walk(tree, space.lows, space.highs)
    return out


def leaves_to_boxes(tree: TreeNode, space: UncertaintySpace, data: LabeledSamples) -> list[tuple[Box, BoxStats]]:
    """Boxes of the vulnerable-labelled leaves, with stats on ``data``."""
    return [(box, box_stats(box, data)) for node, box in leaves(tree, space) if node.leaf_label]


def tree_to_dict(tree: TreeNode, names: Sequence[str]) -> dict:
    if tree.is_leaf:
        return {"leaf": True, "label": bool(tree.leaf_label), "n": tree.n, "n_vulnerable": tree.n_vulnerable}
    return {
        "leaf": False,
        "split_dim": names[tree.split_dim],
        "split_value": tree.split_value,
        "n": tree.n,
        "n_vulnerable": tree.n_vulnerable,
        "left": tree_to_dict(tree.left, names),
        "right": tree_to_dict(tree.right, names),
    }


def tree_from_dict(doc: dict, names: Sequence[str]) -> TreeNode:
    if doc["leaf"]:
        return TreeNode(doc["n"], doc["n_vulnerable"], leaf_label=doc["label"])
    return TreeNode(doc["n"], doc["n_vulnerable"], list(names).index(doc["split_dim"]), doc["split_value"],
                    tree_from_dict(doc["left"], names), tree_from_dict(doc["right"], names))
